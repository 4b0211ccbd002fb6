//! Picker-route construction and batch/solution distance evaluation.
//!
//! A picking route is a depot-anchored closed tour over the distinct item
//! locations of a batch. The default solver chains nearest-neighbor
//! construction with first-improvement 2-opt; an exact Held-Karp solver
//! covers small location sets and doubles as the oracle for everything else.

use crate::cluster::HardAssignment;
use crate::error::{Error, Result};
use crate::heuristics::validate_solution;
use crate::warehouse::{travel_distance, BatchingInstance, Location, OrderId, Warehouse};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

pub const SOLUTION_SCHEMA_VERSION: u32 = 1;
/// Hard cap for the exact dynamic program (14 locations = 229k subsets).
pub const EXACT_TSP_CAP: usize = 14;

/// Closed picker tour. `order` lists indices into the location slice the
/// route was built from; `stops` starts and ends at the depot.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub order: Vec<usize>,
    pub stops: Vec<Location>,
    pub length: f64,
}

/// Distance matrix over depot (index 0) + locations (index i+1).
struct DistMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistMatrix {
    fn build(locations: &[Location], depot: Location, w: &Warehouse) -> Result<Self> {
        let n = locations.len() + 1;
        let mut pts = Vec::with_capacity(n);
        pts.push(depot);
        pts.extend_from_slice(locations);
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let dist = travel_distance(pts[i], pts[j], w)?;
                d[i * n + j] = dist;
                d[j * n + i] = dist;
            }
        }
        Ok(DistMatrix { n, d })
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    /// Tour length of depot -> order -> depot, where order holds location
    /// indices (0-based into the location slice).
    fn tour_length(&self, order: &[usize]) -> f64 {
        let mut len = 0.0;
        let mut prev = 0;
        for &i in order {
            len += self.at(prev, i + 1);
            prev = i + 1;
        }
        len + self.at(prev, 0)
    }
}

fn finish_route(
    order: Vec<usize>,
    locations: &[Location],
    depot: Location,
    m: &DistMatrix,
) -> Route {
    let mut stops = Vec::with_capacity(order.len() + 2);
    stops.push(depot);
    stops.extend(order.iter().map(|&i| locations[i]));
    stops.push(depot);
    let length = m.tour_length(&order);
    Route {
        order,
        stops,
        length,
    }
}

/// Greedy construction: repeatedly visit the nearest unvisited location,
/// ties broken by lower index.
pub fn tsp_nearest_neighbor(
    locations: &[Location],
    depot: Location,
    w: &Warehouse,
) -> Result<Route> {
    let m = DistMatrix::build(locations, depot, w)?;
    let mut remaining: Vec<usize> = (0..locations.len()).collect();
    let mut order = Vec::with_capacity(locations.len());
    let mut cur = 0usize;
    while !remaining.is_empty() {
        let (pos, &next) = remaining
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| {
                m.at(cur, a + 1)
                    .partial_cmp(&m.at(cur, b + 1))
                    .unwrap()
                    .then(a.cmp(&b))
            })
            .unwrap();
        remaining.remove(pos);
        order.push(next);
        cur = next + 1;
    }
    Ok(finish_route(order, locations, depot, &m))
}

/// First-improvement 2-opt until no improving edge-pair exchange remains.
/// The scan order is deterministic, so so is the local optimum.
pub fn tsp_two_opt(
    route: &Route,
    locations: &[Location],
    depot: Location,
    w: &Warehouse,
) -> Result<Route> {
    let m = DistMatrix::build(locations, depot, w)?;
    // tour[0] = depot (matrix index 0), tour[i>0] = location index + 1.
    let mut tour: Vec<usize> = Vec::with_capacity(route.order.len() + 1);
    tour.push(0);
    tour.extend(route.order.iter().map(|&i| i + 1));
    let n = tour.len();
    if n > 3 {
        let mut improved = true;
        while improved {
            improved = false;
            'scan: for i in 0..n - 1 {
                for j in i + 1..n {
                    let a = tour[i];
                    let b = tour[(i + 1) % n];
                    let c = tour[j];
                    let d = tour[(j + 1) % n];
                    let delta = m.at(a, c) + m.at(b, d) - m.at(a, b) - m.at(c, d);
                    if delta < -1e-9 {
                        tour[i + 1..=j].reverse();
                        improved = true;
                        break 'scan;
                    }
                }
            }
        }
    }
    let order: Vec<usize> = tour[1..].iter().map(|&i| i - 1).collect();
    Ok(finish_route(order, locations, depot, &m))
}

/// Exact closed tour by Held-Karp dynamic programming over subsets.
pub fn tsp_exact(locations: &[Location], depot: Location, w: &Warehouse) -> Result<Route> {
    let n = locations.len();
    if n > EXACT_TSP_CAP {
        return Err(Error::TooManyLocations {
            cap: EXACT_TSP_CAP,
            got: n,
        });
    }
    let m = DistMatrix::build(locations, depot, w)?;
    if n == 0 {
        return Ok(finish_route(Vec::new(), locations, depot, &m));
    }
    let full = 1usize << n;
    let mut dp = vec![f64::INFINITY; full * n];
    let mut parent = vec![usize::MAX; full * n];
    for i in 0..n {
        dp[(1 << i) * n + i] = m.at(0, i + 1);
    }
    for mask in 1..full {
        for last in 0..n {
            if mask & (1 << last) == 0 {
                continue;
            }
            let cur = dp[mask * n + last];
            if !cur.is_finite() {
                continue;
            }
            for next in 0..n {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let nmask = mask | (1 << next);
                let cand = cur + m.at(last + 1, next + 1);
                if cand < dp[nmask * n + next] {
                    dp[nmask * n + next] = cand;
                    parent[nmask * n + next] = last;
                }
            }
        }
    }
    let mut best = f64::INFINITY;
    let mut best_last = 0;
    for last in 0..n {
        let cand = dp[(full - 1) * n + last] + m.at(last + 1, 0);
        if cand < best {
            best = cand;
            best_last = last;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut mask = full - 1;
    let mut last = best_last;
    loop {
        order.push(last);
        let p = parent[mask * n + last];
        mask &= !(1 << last);
        if p == usize::MAX {
            break;
        }
        last = p;
    }
    order.reverse();
    Ok(finish_route(order, locations, depot, &m))
}

/// Which solver evaluates batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TspMode {
    /// Nearest-neighbor construction + 2-opt polish (default).
    Heuristic,
    /// Exact solve whenever the distinct location count is at most `max`;
    /// heuristic otherwise.
    ExactSmall { max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingConfig {
    pub mode: TspMode,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            mode: TspMode::Heuristic,
        }
    }
}

impl RoutingConfig {
    pub fn exact_small() -> Self {
        RoutingConfig {
            mode: TspMode::ExactSmall { max: 12 },
        }
    }
}

/// Route over an explicit location set using the configured solver.
pub fn solve_route(
    locations: &[Location],
    depot: Location,
    w: &Warehouse,
    cfg: &RoutingConfig,
) -> Result<Route> {
    match cfg.mode {
        TspMode::ExactSmall { max } if locations.len() <= max => tsp_exact(locations, depot, w),
        _ => {
            let nn = tsp_nearest_neighbor(locations, depot, w)?;
            tsp_two_opt(&nn, locations, depot, w)
        }
    }
}

/// Distinct item locations of a batch: the deduplicated union of the item
/// sets of its orders, in ascending item-id order.
pub fn batch_locations(
    instance: &BatchingInstance,
    batch: &[OrderId],
) -> Result<Vec<Location>> {
    let mut item_ids = BTreeSet::new();
    for &oid in batch {
        let order = instance.order(oid)?;
        item_ids.extend(order.items.iter().copied());
    }
    let mut seen = std::collections::HashSet::new();
    let mut locations = Vec::new();
    for id in item_ids {
        let loc = instance.item_location(id)?;
        if seen.insert(loc) {
            locations.push(loc);
        }
    }
    Ok(locations)
}

/// Picking distance of one batch: TSP route length over the deduplicated
/// union of the batch's item locations.
pub fn batch_distance(
    instance: &BatchingInstance,
    batch: &[OrderId],
    cfg: &RoutingConfig,
) -> Result<f64> {
    Ok(batch_route(instance, batch, cfg)?.length)
}

pub fn batch_route(
    instance: &BatchingInstance,
    batch: &[OrderId],
    cfg: &RoutingConfig,
) -> Result<Route> {
    let locations = batch_locations(instance, batch)?;
    solve_route(
        &locations,
        instance.warehouse.depot_location(),
        &instance.warehouse,
        cfg,
    )
}

/// A feasible assignment scored by per-batch picking distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub assignment: HardAssignment,
    pub batch_distances: Vec<f64>,
    pub total: f64,
}

/// Evaluate a full assignment: validates feasibility, then scores the K
/// batches (in parallel) and reduces in batch-index order so the total is
/// bitwise deterministic.
pub fn solution_distance(
    instance: &BatchingInstance,
    assignment: &HardAssignment,
    cfg: &RoutingConfig,
) -> Result<Solution> {
    let violations = validate_solution(instance, assignment)?;
    if !violations.is_empty() {
        return Err(Error::Infeasible(violations));
    }
    let batch_distances: Vec<f64> = assignment
        .batches
        .par_iter()
        .map(|batch| batch_distance(instance, batch, cfg))
        .collect::<Result<Vec<_>>>()?;
    let total = batch_distances.iter().sum();
    Ok(Solution {
        assignment: assignment.clone(),
        batch_distances,
        total,
    })
}

#[derive(Serialize, Deserialize)]
struct SolutionFile {
    schema_version: u32,
    /// order id -> batch index
    assignment: std::collections::BTreeMap<u32, u32>,
    batch_distances: Vec<f64>,
    total: f64,
}

pub fn save_solution(solution: &Solution, path: &Path) -> Result<()> {
    let mut assignment = std::collections::BTreeMap::new();
    for (k, batch) in solution.assignment.batches.iter().enumerate() {
        for &oid in batch {
            assignment.insert(oid.0, k as u32);
        }
    }
    let file = SolutionFile {
        schema_version: SOLUTION_SCHEMA_VERSION,
        assignment,
        batch_distances: solution.batch_distances.clone(),
        total: solution.total,
    };
    let text = serde_json::to_string_pretty(&file).expect("solution serializes");
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Read a solution file back. The stored distances are returned as-is; use
/// [`solution_distance`] to re-score the assignment.
pub fn load_solution(path: &Path) -> Result<Solution> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    if version != SOLUTION_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: version,
            expected: SOLUTION_SCHEMA_VERSION,
        });
    }
    let file: SolutionFile = serde_json::from_value(value).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let n_batches = file
        .assignment
        .values()
        .map(|&b| b as usize + 1)
        .max()
        .unwrap_or(0);
    let mut batches = vec![Vec::new(); n_batches];
    for (&oid, &b) in &file.assignment {
        batches[b as usize].push(OrderId(oid));
    }
    Ok(Solution {
        assignment: HardAssignment { batches },
        batch_distances: file.batch_distances,
        total: file.total,
    })
}
