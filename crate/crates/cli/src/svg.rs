//! Minimal self-contained SVG emitters: a grouped bar chart for benchmark
//! scores and a warehouse map with picking routes drawn as the rectilinear
//! paths the travel metric actually measures.

use batchforge_core::routing::Route;
use batchforge_core::warehouse::{BatchingInstance, Location, Warehouse};

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

/// Grouped bar chart: one group per method, one bar per score kind.
pub fn score_chart(title: &str, groups: &[(String, Vec<(String, f64)>)]) -> String {
    let (w, h) = (720.0, 360.0);
    let margin = 50.0;
    let plot_w = w - 2.0 * margin;
    let plot_h = h - 2.0 * margin;
    let max_val = groups
        .iter()
        .flat_map(|(_, bars)| bars.iter().map(|(_, v)| *v))
        .fold(1e-9_f64, f64::max);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n"
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"14\">{title}</text>\n",
        w / 2.0
    ));
    let group_w = plot_w / groups.len().max(1) as f64;
    for (gi, (name, bars)) in groups.iter().enumerate() {
        let bar_w = (group_w * 0.8) / bars.len().max(1) as f64;
        for (bi, (kind, v)) in bars.iter().enumerate() {
            let x = margin + gi as f64 * group_w + group_w * 0.1 + bi as f64 * bar_w;
            let bh = (v / max_val) * plot_h;
            let y = h - margin - bh;
            let color = PALETTE[bi % PALETTE.len()];
            s.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{bh:.1}\" \
                 fill=\"{color}\"><title>{name} {kind}: {v:.2}</title></rect>\n",
                bar_w * 0.9
            ));
        }
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" \
             font-family=\"sans-serif\" font-size=\"11\">{name}</text>\n",
            margin + gi as f64 * group_w + group_w / 2.0,
            h - margin + 16.0
        ));
    }
    if let Some((_, bars)) = groups.first() {
        for (bi, (kind, _)) in bars.iter().enumerate() {
            let color = PALETTE[bi % PALETTE.len()];
            let x = margin + bi as f64 * 70.0;
            s.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"28\" width=\"10\" height=\"10\" fill=\"{color}\"/>\
                 <text x=\"{:.1}\" y=\"37\" font-family=\"sans-serif\" font-size=\"11\">{kind}</text>\n",
                x + 14.0
            ));
        }
    }
    s.push_str("</svg>\n");
    s
}

/// The rectilinear walking path between two stops: straight within an
/// aisle, otherwise via the cross-aisle that minimizes the vertical detour
/// (the same choice the travel metric makes).
fn leg_points(w: &Warehouse, a: Location, b: Location) -> Vec<[f64; 2]> {
    let pa = w.xy(a);
    let pb = w.xy(b);
    if a.aisle == b.aisle {
        return vec![pa, pb];
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for k in 0..=w.blocks {
        let c = w.cross_aisle_y(k);
        let d = (a.y - c).abs() + (c - b.y).abs();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    let cy = w.cross_aisle_y(best);
    vec![pa, [pa[0], cy], [pb[0], cy], pb]
}

pub fn route_plot(instance: &BatchingInstance, routes: &[(String, Route)], title: &str) -> String {
    let w = &instance.warehouse;
    let (img_w, img_h) = (760.0, 560.0);
    let margin = 40.0;
    let sx = (img_w - 2.0 * margin) / w.width().max(1.0);
    let sy = (img_h - 2.0 * margin - 20.0) / w.height().max(1.0);
    let scale = sx.min(sy);
    let tx = |x: f64| margin + x * scale;
    let ty = |y: f64| img_h - margin - y * scale;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{img_w}\" height=\"{img_h}\" \
         viewBox=\"0 0 {img_w} {img_h}\">\n"
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"14\">{title}</text>\n",
        img_w / 2.0
    ));
    // Cross-aisle bands.
    for k in 0..=w.blocks {
        let yc = w.cross_aisle_y(k);
        let y0 = ty(yc + w.cross_aisle_width / 2.0);
        let band_h = w.cross_aisle_width * scale;
        s.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{y0:.1}\" width=\"{:.1}\" height=\"{band_h:.1}\" \
             fill=\"#f0f0f0\"/>\n",
            tx(0.0) - 6.0,
            w.width() * scale + 12.0
        ));
    }
    // Aisle columns.
    for aisle in 0..w.aisles {
        let x = tx(w.aisle_x(aisle));
        s.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" \
             stroke=\"#cccccc\" stroke-width=\"1\"/>\n",
            ty(0.0),
            ty(w.height())
        ));
    }
    // Items.
    for item in &instance.items {
        s.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"1.6\" fill=\"#999999\"/>\n",
            tx(item.coord[0]),
            ty(item.coord[1])
        ));
    }
    // Routes as rectilinear polylines.
    for (ri, (label, route)) in routes.iter().enumerate() {
        let color = PALETTE[ri % PALETTE.len()];
        let mut points = Vec::new();
        for pair in route.stops.windows(2) {
            let leg = leg_points(w, pair[0], pair[1]);
            if points.is_empty() {
                points.extend(leg);
            } else {
                points.extend(leg.into_iter().skip(1));
            }
        }
        let path: Vec<String> = points
            .iter()
            .map(|p| format!("{:.1},{:.1}", tx(p[0]), ty(p[1])))
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
             stroke-width=\"1.8\" stroke-opacity=\"0.85\"/>\n",
            path.join(" ")
        ));
        for stop in &route.stops[1..route.stops.len().saturating_sub(1)] {
            let p = w.xy(*stop);
            s.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.6\" fill=\"{color}\"/>\n",
                tx(p[0]),
                ty(p[1])
            ));
        }
        s.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\
             <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{label}</text>\n",
            img_w - 220.0,
            26.0 + ri as f64 * 16.0,
            img_w - 204.0,
            35.0 + ri as f64 * 16.0
        ));
    }
    // Depot marker.
    let depot = w.xy(w.depot_location());
    s.push_str(&format!(
        "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"8\" height=\"8\" fill=\"#000000\"/>\n",
        tx(depot[0]) - 4.0,
        ty(depot[1]) - 4.0
    ));
    s.push_str("</svg>\n");
    s
}
