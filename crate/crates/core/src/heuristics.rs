//! Non-learned solvers: the feasibility validator, the seed-and-savings
//! batching heuristic that generates training labels, and the uniform random
//! baseline used as a control.

use crate::cluster::HardAssignment;
use crate::error::{Error, Result};
use crate::routing::{
    batch_locations, solution_distance, tsp_nearest_neighbor, RoutingConfig, Solution,
};
use crate::warehouse::{travel_distance, BatchingInstance, OrderId};
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One broken feasibility constraint (each order exactly once, K batches,
/// exactly c orders per batch).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    OrderUnassigned { order: OrderId },
    OrderMultiplyAssigned { order: OrderId, batches: Vec<usize> },
    WrongBatchCount { expected: usize, actual: usize },
    WrongBatchSize { batch: usize, expected: usize, actual: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::OrderUnassigned { order } => {
                write!(f, "order {} is unassigned", order.0)
            }
            Violation::OrderMultiplyAssigned { order, batches } => {
                write!(f, "order {} appears in batches {:?}", order.0, batches)
            }
            Violation::WrongBatchCount { expected, actual } => {
                write!(f, "expected {expected} batches, found {actual}")
            }
            Violation::WrongBatchSize {
                batch,
                expected,
                actual,
            } => write!(
                f,
                "batch {batch} holds {actual} orders, expected {expected}"
            ),
        }
    }
}

/// Check an assignment against the feasibility constraints. An empty list
/// means the assignment is a feasible balanced batching.
pub fn validate_solution(
    instance: &BatchingInstance,
    assignment: &HardAssignment,
) -> Result<Vec<Violation>> {
    let n = instance.n_orders();
    let mut violations = Vec::new();
    let mut seen: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, batch) in assignment.batches.iter().enumerate() {
        for &oid in batch {
            if oid.idx() >= n {
                return Err(Error::UnknownOrder(oid.0));
            }
            seen[oid.idx()].push(k);
        }
    }
    for (j, batches) in seen.iter().enumerate() {
        match batches.len() {
            0 => violations.push(Violation::OrderUnassigned {
                order: OrderId(j as u32),
            }),
            1 => {}
            _ => violations.push(Violation::OrderMultiplyAssigned {
                order: OrderId(j as u32),
                batches: batches.clone(),
            }),
        }
    }
    if assignment.batches.len() != instance.k_batches {
        violations.push(Violation::WrongBatchCount {
            expected: instance.k_batches,
            actual: assignment.batches.len(),
        });
    }
    for (k, batch) in assignment.batches.iter().enumerate() {
        if batch.len() != instance.orders_per_batch {
            violations.push(Violation::WrongBatchSize {
                batch: k,
                expected: instance.orders_per_batch,
                actual: batch.len(),
            });
        }
    }
    Ok(violations)
}

/// Cheap proxy for a batch's picking distance during construction: the
/// nearest-neighbor route over the union of item locations, no 2-opt.
fn proxy_distance(instance: &BatchingInstance, batch: &[OrderId]) -> Result<f64> {
    let locations = batch_locations(instance, batch)?;
    let route = tsp_nearest_neighbor(
        &locations,
        instance.warehouse.depot_location(),
        &instance.warehouse,
    )?;
    Ok(route.length)
}

/// Seed-and-savings batching. K times: seed a batch with the unbatched order
/// reaching farthest from the depot, then repeatedly add the unbatched order
/// with the smallest incremental proxy distance until the batch holds c
/// orders. Final distances are re-scored with the configured solver.
pub fn seed_savings_batching(
    instance: &BatchingInstance,
    cfg: &RoutingConfig,
) -> Result<Solution> {
    let n = instance.n_orders();
    let depot = instance.warehouse.depot_location();
    // Farthest item of each order from the depot (the seed rule key).
    let mut reach = Vec::with_capacity(n);
    for order in &instance.orders {
        let mut r: f64 = 0.0;
        for &item in &order.items {
            let loc = instance.item_location(item)?;
            r = r.max(travel_distance(depot, loc, &instance.warehouse)?);
        }
        reach.push(r);
    }

    let mut unbatched: Vec<OrderId> = instance.orders.iter().map(|o| o.id).collect();
    let mut batches = Vec::with_capacity(instance.k_batches);
    for _ in 0..instance.k_batches {
        let seed_pos = (0..unbatched.len())
            .max_by(|&a, &b| {
                reach[unbatched[a].idx()]
                    .total_cmp(&reach[unbatched[b].idx()])
                    .then(unbatched[b].cmp(&unbatched[a]))
            })
            .expect("orders remain while batches are open");
        let mut batch = vec![unbatched.swap_remove(seed_pos)];
        let mut batch_proxy = proxy_distance(instance, &batch)?;
        while batch.len() < instance.orders_per_batch {
            let mut best: Option<(usize, f64)> = None;
            for (pos, &cand) in unbatched.iter().enumerate() {
                batch.push(cand);
                let increment = proxy_distance(instance, &batch)? - batch_proxy;
                batch.pop();
                let better = match best {
                    None => true,
                    Some((bpos, binc)) => {
                        increment < binc - 1e-12
                            || ((increment - binc).abs() <= 1e-12
                                && unbatched[pos] < unbatched[bpos])
                    }
                };
                if better {
                    best = Some((pos, increment));
                }
            }
            let (pos, increment) = best.expect("unbatched orders remain");
            batch.push(unbatched.swap_remove(pos));
            batch_proxy += increment;
        }
        batch.sort_unstable();
        batches.push(batch);
    }
    let assignment = HardAssignment { batches };
    solution_distance(instance, &assignment, cfg)
}

/// Uniformly random feasible partition: a seeded shuffle chopped into K
/// consecutive chunks of c.
pub fn random_balanced_assignment(
    instance: &BatchingInstance,
    seed: u64,
) -> Result<HardAssignment> {
    let n = instance.n_orders();
    if n != instance.k_batches * instance.orders_per_batch {
        return Err(Error::InfeasibleShape(format!(
            "N = {} but K*c = {}",
            n,
            instance.k_batches * instance.orders_per_batch
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<OrderId> = instance.orders.iter().map(|o| o.id).collect();
    ids.shuffle(&mut rng);
    let batches = ids
        .chunks(instance.orders_per_batch)
        .map(|chunk| {
            let mut b = chunk.to_vec();
            b.sort_unstable();
            b
        })
        .collect();
    Ok(HardAssignment { batches })
}
