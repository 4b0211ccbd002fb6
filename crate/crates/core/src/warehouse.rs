//! Warehouse geometry, travel distances, synthetic instance generation and
//! instance persistence.
//!
//! The layout is a rectangular multi-block grid: vertical picking aisles
//! crossed by horizontal cross-aisles (front, rear and one between every
//! pair of adjacent blocks). Pickers walk along aisle columns and along
//! cross-aisle centerlines, never through shelving, so the travel metric is
//! rectilinear with a vertical detour to the best cross-aisle.

use crate::error::{Error, Result};
use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const INSTANCE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrderId(pub u32);

impl ItemId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl OrderId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Storage slot in grid coordinates: aisle column, block band, slot within
/// the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotCoord {
    pub aisle: u32,
    pub block: u32,
    pub slot: u32,
}

/// A walkable point on an aisle column: the column index plus the vertical
/// position in meters. Slots and the depot both resolve to this.
#[derive(Debug, Clone, Copy)]
pub struct Location {
    pub aisle: u32,
    pub y: f64,
}

impl PartialEq for Location {
    fn eq(&self, other: &Self) -> bool {
        self.aisle == other.aisle && self.y.to_bits() == other.y.to_bits()
    }
}

impl Eq for Location {}

impl std::hash::Hash for Location {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.aisle.hash(state);
        self.y.to_bits().hash(state);
    }
}

/// Depot anchor: the intersection of an aisle column with a cross-aisle
/// centerline. Front-left corner is `(0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepotPos {
    pub aisle: u32,
    pub cross_aisle: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warehouse {
    pub blocks: u32,
    /// Aisle count; every aisle spans all blocks.
    pub aisles: u32,
    /// Slots per aisle within one block.
    pub slots_per_aisle: u32,
    /// Horizontal spacing between adjacent aisle columns, meters.
    pub aisle_pitch: f64,
    /// Vertical spacing between adjacent slots, meters.
    pub slot_pitch: f64,
    /// Height of each cross-aisle band, meters.
    pub cross_aisle_width: f64,
    pub depot: DepotPos,
}

impl Warehouse {
    pub fn new(
        blocks: u32,
        aisles: u32,
        slots_per_aisle: u32,
        aisle_pitch: f64,
        slot_pitch: f64,
        cross_aisle_width: f64,
    ) -> Result<Self> {
        let w = Warehouse {
            blocks,
            aisles,
            slots_per_aisle,
            aisle_pitch,
            slot_pitch,
            cross_aisle_width,
            depot: DepotPos {
                aisle: 0,
                cross_aisle: 0,
            },
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks < 1 || self.aisles < 1 || self.slots_per_aisle < 1 {
            return Err(Error::InvalidWarehouse(format!(
                "all dimensions must be >= 1, got blocks={} aisles={} slots={}",
                self.blocks, self.aisles, self.slots_per_aisle
            )));
        }
        if self.aisle_pitch <= 0.0 || self.slot_pitch <= 0.0 || self.cross_aisle_width <= 0.0 {
            return Err(Error::InvalidWarehouse(format!(
                "all pitches must be > 0, got aisle={} slot={} cross={}",
                self.aisle_pitch, self.slot_pitch, self.cross_aisle_width
            )));
        }
        if self.depot.aisle >= self.aisles || self.depot.cross_aisle > self.blocks {
            return Err(Error::InvalidWarehouse(format!(
                "depot ({}, {}) outside the grid",
                self.depot.aisle, self.depot.cross_aisle
            )));
        }
        Ok(())
    }

    pub fn total_slots(&self) -> usize {
        self.blocks as usize * self.aisles as usize * self.slots_per_aisle as usize
    }

    /// Vertical span of one block band (slots only).
    fn block_height(&self) -> f64 {
        self.slots_per_aisle as f64 * self.slot_pitch
    }

    /// Overall height: blocks interleaved with blocks+1 cross-aisles.
    pub fn height(&self) -> f64 {
        self.blocks as f64 * (self.block_height() + self.cross_aisle_width)
            + self.cross_aisle_width
    }

    pub fn width(&self) -> f64 {
        (self.aisles.saturating_sub(1)) as f64 * self.aisle_pitch
    }

    pub fn aisle_x(&self, aisle: u32) -> f64 {
        aisle as f64 * self.aisle_pitch
    }

    /// Centerline height of cross-aisle `k` (0 = front, `blocks` = rear).
    pub fn cross_aisle_y(&self, k: u32) -> f64 {
        k as f64 * (self.cross_aisle_width + self.block_height()) + self.cross_aisle_width / 2.0
    }

    pub fn slot_location(&self, slot: SlotCoord) -> Result<Location> {
        if slot.aisle >= self.aisles
            || slot.block >= self.blocks
            || slot.slot >= self.slots_per_aisle
        {
            return Err(Error::InvalidLocation(format!(
                "slot ({}, {}, {}) outside warehouse",
                slot.aisle, slot.block, slot.slot
            )));
        }
        let y = self.cross_aisle_width
            + slot.block as f64 * (self.block_height() + self.cross_aisle_width)
            + (slot.slot as f64 + 0.5) * self.slot_pitch;
        Ok(Location {
            aisle: slot.aisle,
            y,
        })
    }

    pub fn depot_location(&self) -> Location {
        Location {
            aisle: self.depot.aisle,
            y: self.cross_aisle_y(self.depot.cross_aisle),
        }
    }

    pub fn xy(&self, loc: Location) -> [f64; 2] {
        [self.aisle_x(loc.aisle), loc.y]
    }

    fn check_location(&self, loc: Location) -> Result<()> {
        if loc.aisle >= self.aisles || loc.y < 0.0 || loc.y > self.height() {
            return Err(Error::InvalidLocation(format!(
                "(aisle {}, y {}) outside warehouse",
                loc.aisle, loc.y
            )));
        }
        Ok(())
    }
}

/// Shortest aisle-respecting walking distance between two locations.
///
/// Within one aisle column the path is the straight vertical segment; across
/// columns it is the horizontal gap plus the smallest vertical detour through
/// any cross-aisle centerline. This is exactly the shortest path in the
/// corridor network, so the result is a metric.
pub fn travel_distance(a: Location, b: Location, w: &Warehouse) -> Result<f64> {
    w.check_location(a)?;
    w.check_location(b)?;
    if a.aisle == b.aisle {
        return Ok((a.y - b.y).abs());
    }
    let dx = (w.aisle_x(a.aisle) - w.aisle_x(b.aisle)).abs();
    let mut dy = f64::INFINITY;
    for k in 0..=w.blocks {
        let c = w.cross_aisle_y(k);
        dy = dy.min((a.y - c).abs() + (c - b.y).abs());
    }
    Ok(dx + dy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    pub slot: SlotCoord,
    /// Planar position in meters; always the deterministic image of `slot`.
    pub coord: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub id: OrderId,
    pub items: Vec<ItemId>,
}

/// One solvable problem: a warehouse, `N = K*c` orders over an item pool,
/// and the batch shape `(K, c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchingInstance {
    pub warehouse: Warehouse,
    pub items: Vec<Item>,
    pub orders: Vec<Order>,
    /// Batch count K.
    pub k_batches: usize,
    /// Orders per batch c.
    pub orders_per_batch: usize,
    pub seed: u64,
}

impl BatchingInstance {
    pub fn n_orders(&self) -> usize {
        self.orders.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn item(&self, id: ItemId) -> Result<&Item> {
        self.items.get(id.idx()).ok_or(Error::UnknownItem(id.0))
    }

    pub fn order(&self, id: OrderId) -> Result<&Order> {
        self.orders.get(id.idx()).ok_or(Error::UnknownOrder(id.0))
    }

    pub fn item_location(&self, id: ItemId) -> Result<Location> {
        let item = self.item(id)?;
        self.warehouse.slot_location(item.slot)
    }

    /// Distinct item locations of one order, in item-id order.
    pub fn order_locations(&self, id: OrderId) -> Result<Vec<Location>> {
        let order = self.order(id)?;
        order
            .items
            .iter()
            .map(|&i| self.item_location(i))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.warehouse.validate()?;
        let n = self.orders.len();
        if n != self.k_batches * self.orders_per_batch {
            return Err(Error::InfeasibleShape(format!(
                "N = {} but K*c = {}*{} = {}",
                n,
                self.k_batches,
                self.orders_per_batch,
                self.k_batches * self.orders_per_batch
            )));
        }
        for (i, item) in self.items.iter().enumerate() {
            if item.id.idx() != i {
                return Err(Error::InfeasibleShape(format!(
                    "item ids must be contiguous from 0; found {} at position {i}",
                    item.id.0
                )));
            }
            let loc = self.warehouse.slot_location(item.slot)?;
            if self.warehouse.xy(loc) != item.coord {
                return Err(Error::InfeasibleShape(format!(
                    "item {} coord {:?} does not match its slot",
                    item.id.0, item.coord
                )));
            }
        }
        for (j, order) in self.orders.iter().enumerate() {
            if order.id.idx() != j {
                return Err(Error::InfeasibleShape(format!(
                    "order ids must be contiguous from 0; found {} at position {j}",
                    order.id.0
                )));
            }
            if order.items.is_empty() {
                return Err(Error::InfeasibleShape(format!("order {} is empty", j)));
            }
            let mut seen = std::collections::HashSet::new();
            for &it in &order.items {
                self.item(it)?;
                if !seen.insert(it) {
                    return Err(Error::InfeasibleShape(format!(
                        "order {} lists item {} twice",
                        j, it.0
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generator parameters. `n_orders` must equal `k_batches * orders_per_batch`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenParams {
    pub n_orders: usize,
    pub k_batches: usize,
    pub orders_per_batch: usize,
    pub n_items: usize,
    pub order_size_min: usize,
    pub order_size_max: usize,
    /// Probability that each additional item of an order is drawn from the
    /// neighborhood of the order's first item instead of uniformly. Zero
    /// gives fully uniform orders; near one gives tightly zoned orders.
    pub zone_affinity: f64,
    pub warehouse: Warehouse,
}

impl GenParams {
    /// Small instance family used throughout the test and benchmark suites.
    pub fn desk(n_orders: usize, k_batches: usize) -> Self {
        GenParams {
            n_orders,
            k_batches,
            orders_per_batch: n_orders / k_batches.max(1),
            n_items: (n_orders * 2).max(8),
            order_size_min: 1,
            order_size_max: 5,
            zone_affinity: 0.8,
            warehouse: Warehouse::new(2, 8, 16, 3.0, 1.0, 2.0).expect("valid desk layout"),
        }
    }

    /// Paper-scale shape: 500 orders, 20 batches of 25, 1000 items.
    pub fn paper_scale() -> Self {
        GenParams {
            n_orders: 500,
            k_batches: 20,
            orders_per_batch: 25,
            n_items: 1000,
            order_size_min: 1,
            order_size_max: 5,
            zone_affinity: 0.8,
            warehouse: Warehouse::new(2, 10, 50, 3.0, 1.0, 2.0).expect("valid paper layout"),
        }
    }
}

/// Number of same-zone candidates considered when an item is drawn locally.
const AFFINITY_WINDOW: usize = 12;

/// Deterministically generate a synthetic instance. Items land on distinct
/// slots; order item sets are drawn with a locality skew controlled by
/// `zone_affinity` so that batching decisions actually matter.
pub fn generate_instance(params: &GenParams, seed: u64) -> Result<BatchingInstance> {
    params.warehouse.validate()?;
    if params.n_orders != params.k_batches * params.orders_per_batch {
        return Err(Error::InfeasibleShape(format!(
            "N = {} but K*c = {}*{} = {}",
            params.n_orders,
            params.k_batches,
            params.orders_per_batch,
            params.k_batches * params.orders_per_batch
        )));
    }
    if params.order_size_min < 1 || params.order_size_min > params.order_size_max {
        return Err(Error::InfeasibleShape(format!(
            "bad order size range [{}, {}]",
            params.order_size_min, params.order_size_max
        )));
    }
    if params.n_items < params.order_size_max {
        return Err(Error::InfeasibleShape(format!(
            "item pool {} smaller than max order size {}",
            params.n_items, params.order_size_max
        )));
    }
    if params.n_items > params.warehouse.total_slots() {
        return Err(Error::InfeasibleShape(format!(
            "item pool {} exceeds {} slots",
            params.n_items,
            params.warehouse.total_slots()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = &params.warehouse;
    let per_aisle = w.blocks as usize * w.slots_per_aisle as usize;

    let slot_indices = index_sample(&mut rng, w.total_slots(), params.n_items);
    let items: Vec<Item> = slot_indices
        .iter()
        .enumerate()
        .map(|(i, si)| {
            let aisle = (si / per_aisle) as u32;
            let rem = si % per_aisle;
            let slot = SlotCoord {
                aisle,
                block: (rem / w.slots_per_aisle as usize) as u32,
                slot: (rem % w.slots_per_aisle as usize) as u32,
            };
            let loc = w.slot_location(slot).expect("sampled slot in bounds");
            Item {
                id: ItemId(i as u32),
                slot,
                coord: w.xy(loc),
            }
        })
        .collect();

    let locations: Vec<Location> = items
        .iter()
        .map(|it| w.slot_location(it.slot).unwrap())
        .collect();
    let mut nearest_cache: HashMap<usize, Vec<usize>> = HashMap::new();

    let mut orders = Vec::with_capacity(params.n_orders);
    for j in 0..params.n_orders {
        let size = rng.gen_range(params.order_size_min..=params.order_size_max);
        let anchor = rng.gen_range(0..params.n_items);
        let mut chosen = vec![anchor];
        while chosen.len() < size {
            let pick = if rng.gen_bool(params.zone_affinity.clamp(0.0, 1.0)) {
                let ranked = nearest_cache.entry(anchor).or_insert_with(|| {
                    let mut order: Vec<usize> = (0..params.n_items).collect();
                    order.sort_by(|&a, &b| {
                        let da = travel_distance(locations[anchor], locations[a], w).unwrap();
                        let db = travel_distance(locations[anchor], locations[b], w).unwrap();
                        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                    });
                    order
                });
                let candidates: Vec<usize> = ranked
                    .iter()
                    .copied()
                    .filter(|i| !chosen.contains(i))
                    .take(AFFINITY_WINDOW)
                    .collect();
                candidates[rng.gen_range(0..candidates.len())]
            } else {
                let free: Vec<usize> = (0..params.n_items)
                    .filter(|i| !chosen.contains(i))
                    .collect();
                free[rng.gen_range(0..free.len())]
            };
            chosen.push(pick);
        }
        chosen.sort_unstable();
        orders.push(Order {
            id: OrderId(j as u32),
            items: chosen.into_iter().map(|i| ItemId(i as u32)).collect(),
        });
    }

    let instance = BatchingInstance {
        warehouse: params.warehouse.clone(),
        items,
        orders,
        k_batches: params.k_batches,
        orders_per_batch: params.orders_per_batch,
        seed,
    };
    instance.validate()?;
    Ok(instance)
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    schema_version: u32,
    #[serde(flatten)]
    instance: BatchingInstance,
}

pub fn save_instance(instance: &BatchingInstance, path: &Path) -> Result<()> {
    let file = InstanceFile {
        schema_version: INSTANCE_SCHEMA_VERSION,
        instance: instance.clone(),
    };
    let text = serde_json::to_string_pretty(&file).expect("instance serializes");
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_instance(path: &Path) -> Result<BatchingInstance> {
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
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            detail: "missing schema_version".into(),
        })?;
    if version != INSTANCE_SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion {
            found: version as u32,
            expected: INSTANCE_SCHEMA_VERSION,
        });
    }
    let file: InstanceFile = serde_json::from_value(value).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    file.instance.validate()?;
    Ok(file.instance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn unit_warehouse() -> Warehouse {
        // Integer geometry: slot pitch 2, cross width 2, ailse pitch 3 make
        // every slot and centerline land on integer coordinates.
        Warehouse::new(2, 4, 5, 3.0, 2.0, 2.0).unwrap()
    }

    /// Breadth-first shortest path on the unit grid graph of walkable cells.
    /// Cells: integer (x, y) with x on an aisle column (any y), or y on a
    /// cross-aisle centerline (any x within the rack span).
    fn bfs_oracle(w: &Warehouse, a: Location, b: Location) -> f64 {
        let width = w.width() as i64;
        let height = w.height() as i64;
        let columns: Vec<i64> = (0..w.aisles).map(|i| w.aisle_x(i) as i64).collect();
        let centerlines: Vec<i64> = (0..=w.blocks).map(|k| w.cross_aisle_y(k) as i64).collect();
        let walkable = |x: i64, y: i64| -> bool {
            if x < 0 || x > width || y < 0 || y > height {
                return false;
            }
            columns.contains(&x) || centerlines.contains(&y)
        };
        let start = (w.aisle_x(a.aisle) as i64, a.y as i64);
        let goal = (w.aisle_x(b.aisle) as i64, b.y as i64);
        let mut dist = HashMap::new();
        let mut queue = VecDeque::new();
        dist.insert(start, 0i64);
        queue.push_back(start);
        while let Some((x, y)) = queue.pop_front() {
            let d = dist[&(x, y)];
            if (x, y) == goal {
                return d as f64;
            }
            for (nx, ny) in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
                if walkable(nx, ny) && !dist.contains_key(&(nx, ny)) {
                    dist.insert((nx, ny), d + 1);
                    queue.push_back((nx, ny));
                }
            }
        }
        panic!("no path between walkable cells");
    }

    #[test]
    fn distance_to_self_is_zero() {
        let w = unit_warehouse();
        let a = w
            .slot_location(SlotCoord {
                aisle: 1,
                block: 0,
                slot: 2,
            })
            .unwrap();
        assert_eq!(travel_distance(a, a, &w).unwrap(), 0.0);
    }

    #[test]
    fn same_aisle_distance_is_slot_gap_times_pitch() {
        let w = Warehouse::new(1, 2, 10, 3.0, 1.0, 2.0).unwrap();
        let a = w
            .slot_location(SlotCoord {
                aisle: 0,
                block: 0,
                slot: 3,
            })
            .unwrap();
        let b = w
            .slot_location(SlotCoord {
                aisle: 0,
                block: 0,
                slot: 7,
            })
            .unwrap();
        assert_eq!(travel_distance(a, b, &w).unwrap(), 4.0);
    }

    #[test]
    fn cross_aisle_distances_match_grid_bfs() {
        let w = unit_warehouse();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let pick = |rng: &mut ChaCha8Rng| SlotCoord {
                aisle: rng.gen_range(0..w.aisles),
                block: rng.gen_range(0..w.blocks),
                slot: rng.gen_range(0..w.slots_per_aisle),
            };
            let a = w.slot_location(pick(&mut rng)).unwrap();
            let b = w.slot_location(pick(&mut rng)).unwrap();
            let fast = travel_distance(a, b, &w).unwrap();
            let slow = bfs_oracle(&w, a, b);
            assert!(
                (fast - slow).abs() < 1e-9,
                "a={a:?} b={b:?}: formula {fast} vs bfs {slow}"
            );
        }
    }

    #[test]
    fn depot_to_slot_matches_grid_bfs() {
        let w = unit_warehouse();
        let depot = w.depot_location();
        for aisle in 0..w.aisles {
            for block in 0..w.blocks {
                let s = w
                    .slot_location(SlotCoord {
                        aisle,
                        block,
                        slot: 3,
                    })
                    .unwrap();
                let fast = travel_distance(depot, s, &w).unwrap();
                let slow = bfs_oracle(&w, depot, s);
                assert!((fast - slow).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn metric_properties_hold_on_random_triples() {
        let w = Warehouse::new(3, 6, 9, 2.5, 1.25, 1.75).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let pick = |rng: &mut ChaCha8Rng| {
                w.slot_location(SlotCoord {
                    aisle: rng.gen_range(0..w.aisles),
                    block: rng.gen_range(0..w.blocks),
                    slot: rng.gen_range(0..w.slots_per_aisle),
                })
                .unwrap()
            };
            let (a, b, c) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
            let dab = travel_distance(a, b, &w).unwrap();
            let dba = travel_distance(b, a, &w).unwrap();
            let dac = travel_distance(a, c, &w).unwrap();
            let dcb = travel_distance(c, b, &w).unwrap();
            assert_eq!(dab, dba);
            assert!(dab >= 0.0);
            assert_eq!(dab == 0.0, a == b);
            assert!(dab <= dac + dcb + 1e-9, "triangle inequality violated");
        }
    }

    #[test]
    fn location_outside_warehouse_is_an_error() {
        let w = unit_warehouse();
        let inside = w.depot_location();
        let outside = Location { aisle: 99, y: 1.0 };
        assert!(matches!(
            travel_distance(inside, outside, &w),
            Err(Error::InvalidLocation(_))
        ));
    }

    #[test]
    fn paper_scale_generation_succeeds() {
        let inst = generate_instance(&GenParams::paper_scale(), 1).unwrap();
        assert_eq!(inst.n_orders(), 500);
        assert_eq!(inst.k_batches, 20);
        assert_eq!(inst.orders_per_batch, 25);
        assert_eq!(inst.n_items(), 1000);
        inst.validate().unwrap();
    }

    #[test]
    fn toy_generation_has_expected_relations() {
        let mut p = GenParams::desk(4, 2);
        p.order_size_min = 1;
        p.order_size_max = 1;
        let inst = generate_instance(&p, 3).unwrap();
        assert_eq!(inst.n_orders(), 4);
        let oi_count: usize = inst.orders.iter().map(|o| o.items.len()).sum();
        assert_eq!(oi_count, 4);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let p = GenParams::desk(20, 4);
        let a = generate_instance(&p, 42).unwrap();
        let b = generate_instance(&p, 42).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = generate_instance(&p, 43).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn mismatched_shape_is_rejected() {
        let mut p = GenParams::desk(10, 2);
        p.orders_per_batch = 3; // 2*3 != 10
        assert!(matches!(
            generate_instance(&p, 1),
            Err(Error::InfeasibleShape(_))
        ));
    }

    #[test]
    fn generated_instances_stay_valid_over_many_seeds() {
        let p = GenParams::desk(12, 3);
        for seed in 0..100 {
            let inst = generate_instance(&p, seed).unwrap();
            inst.validate().unwrap();
        }
    }

    #[test]
    fn save_load_roundtrip_is_lossless() {
        let inst = generate_instance(&GenParams::desk(8, 2), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        save_instance(&inst, &path).unwrap();
        let loaded = load_instance(&path).unwrap();
        assert_eq!(inst, loaded);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let inst = generate_instance(&GenParams::desk(8, 2), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        save_instance(&inst, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_instance(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn unknown_schema_version_is_reported() {
        let inst = generate_instance(&GenParams::desk(8, 2), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        save_instance(&inst, &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 9");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_instance(&path),
            Err(Error::SchemaVersion { found: 9, .. })
        ));
    }
}
