//! Differentiable balanced k-means, the global size-constraint loss, greedy
//! balanced rounding, label alignment, and the balanced-k-means baseline.

use crate::error::{Error, Result};
use crate::warehouse::OrderId;
use batchforge_autodiff::{Graph, Tensor, VarId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Discrete balanced partition: `batches[k]` holds the order ids of batch k.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardAssignment {
    pub batches: Vec<Vec<OrderId>>,
}

impl HardAssignment {
    pub fn k(&self) -> usize {
        self.batches.len()
    }

    pub fn n_assigned(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    /// Cluster index per order; `None` for orders missing from every batch.
    pub fn cluster_of(&self, n_orders: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_orders];
        for (k, batch) in self.batches.iter().enumerate() {
            for &oid in batch {
                if oid.idx() < n_orders {
                    out[oid.idx()] = Some(k);
                }
            }
        }
        out
    }

    pub fn from_cluster_of(cluster_of: &[usize], k: usize) -> Self {
        let mut batches = vec![Vec::new(); k];
        for (j, &c) in cluster_of.iter().enumerate() {
            batches[c].push(OrderId(j as u32));
        }
        HardAssignment { batches }
    }
}

/// One-hot reference partition used as training labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub cluster_of: Vec<usize>,
    pub k: usize,
}

impl Labels {
    pub fn from_assignment(assignment: &HardAssignment, n_orders: usize) -> Result<Self> {
        let clusters = assignment.cluster_of(n_orders);
        let mut cluster_of = Vec::with_capacity(n_orders);
        for (j, c) in clusters.into_iter().enumerate() {
            cluster_of.push(c.ok_or_else(|| {
                Error::Contract(format!("labels require every order assigned; {j} is not"))
            })?);
        }
        Ok(Labels {
            cluster_of,
            k: assignment.k(),
        })
    }

    pub fn to_assignment(&self) -> HardAssignment {
        HardAssignment::from_cluster_of(&self.cluster_of, self.k)
    }

    /// Dense one-hot N x K matrix.
    pub fn onehot(&self) -> Tensor {
        let n = self.cluster_of.len();
        let mut t = Tensor::zeros(&[n, self.k]);
        for (j, &c) in self.cluster_of.iter().enumerate() {
            t.set2(j, c, 1.0);
        }
        t
    }
}

/// Soft cluster assignment: row-stochastic N x K matrix plus the centers it
/// was produced with.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    pub yhat: Tensor,
    pub centers: Tensor,
}

/// Graph-resident result of the differentiable k-means layer.
#[derive(Debug, Clone, Copy)]
pub struct SoftKmeansVars {
    pub yhat: VarId,
    pub centers: VarId,
}

/// k-means++-style farthest-point seeding: the first center is drawn
/// uniformly, each further center is the point maximizing the distance to
/// its nearest chosen center (ties to the lower index).
pub fn farthest_point_seeds(points: &Tensor, k: usize, seed: u64) -> Vec<usize> {
    let n = points.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.gen_range(0..n)];
    while chosen.len() < k {
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for j in 0..n {
            if chosen.contains(&j) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&c| sqdist(points.row(j), points.row(c)))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = j;
            }
        }
        chosen.push(best);
    }
    chosen
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Differentiably rescale embedding rows to unit scale: subtract the
/// per-dimension mean and divide by the root mean squared row norm. An
/// affine map, so cluster structure is untouched, but the temperature knob
/// means the same thing no matter how much upstream layers shrank or grew
/// the embedding spread.
pub fn standardize_rows(g: &mut Graph, z: VarId) -> Result<VarId> {
    let n = g.value(z).rows();
    let colsum = g.sum_axis(z, 0)?;
    let neg_mean = g.scale(colsum, -1.0 / n as f64)?;
    let centered = g.add_row(z, neg_mean)?;
    let sq = g.square(centered)?;
    let total = g.sum(sq)?;
    let msn = g.scale(total, 1.0 / n as f64)?;
    let msn = g.add_scalar(msn, 1e-8)?;
    let inv = g.powf(msn, -0.5)?;
    Ok(g.mul_bcast(centered, inv)?)
}

/// Differentiable soft k-means, unrolled for `iters` rounds inside the given
/// graph. Each round: `yhat = softmax(-||z - mu||^2 / tau)` row-wise, then
/// `mu_k = sum_j yhat_jk z_j / sum_j yhat_jk`. Gradients flow through the
/// whole unroll into `z`.
///
/// Inputs are standardized to unit scale first (see [`standardize_rows`]),
/// which is the scale the default temperature is calibrated against.
pub fn soft_kmeans(
    g: &mut Graph,
    z: VarId,
    k: usize,
    iters: usize,
    tau: f64,
    seed: u64,
) -> Result<SoftKmeansVars> {
    let n = g.value(z).rows();
    if k > n {
        return Err(Error::Contract(format!(
            "soft_kmeans needs K <= N, got K={k} N={n}"
        )));
    }
    if k == 0 || iters == 0 {
        return Err(Error::Contract("soft_kmeans needs K >= 1 and iters >= 1".into()));
    }
    if tau <= 0.0 {
        return Err(Error::Contract(format!(
            "soft_kmeans temperature must be > 0, got {tau}"
        )));
    }
    let z = standardize_rows(g, z)?;
    let seeds = farthest_point_seeds(g.value(z), k, seed);
    let mut centers = g.gather_rows(z, &seeds)?;
    let mut yhat = None;
    for _ in 0..iters {
        let d2 = g.pairwise_sqdist(z, centers)?;
        let logits = g.scale(d2, -1.0 / tau)?;
        let y = g.softmax(logits)?;
        let mass = g.sum_axis(y, 0)?;
        // Tiny floor keeps a starved cluster from dividing by zero.
        let mass = g.add_scalar(mass, 1e-12)?;
        let yt = g.transpose(y)?;
        let weighted = g.matmul(yt, z)?;
        centers = g.div_rows(weighted, mass)?;
        yhat = Some(y);
    }
    Ok(SoftKmeansVars {
        yhat: yhat.expect("iters >= 1"),
        centers,
    })
}

/// Value-level wrapper for inference and tests: runs the layer in a private
/// graph and returns plain tensors.
pub fn soft_kmeans_values(
    embeddings: &Tensor,
    k: usize,
    iters: usize,
    tau: f64,
    seed: u64,
) -> Result<SoftAssignment> {
    let mut g = Graph::new();
    let z = g.constant(embeddings.clone())?;
    let out = soft_kmeans(&mut g, z, k, iters, tau, seed)?;
    Ok(SoftAssignment {
        yhat: g.value(out.yhat).clone(),
        centers: g.value(out.centers).clone(),
    })
}

/// Global size-constraint loss: `sum_k (colmass_k / N - 1/K)^2`. Zero exactly
/// when every cluster carries mass N/K.
pub fn global_size_loss(g: &mut Graph, yhat: VarId) -> Result<VarId> {
    let shape = g.value(yhat).shape().to_vec();
    let (n, k) = (shape[0], shape[1]);
    let mass = g.sum_axis(yhat, 0)?;
    let frac = g.scale(mass, 1.0 / n as f64)?;
    let centered = g.add_scalar(frac, -1.0 / k as f64)?;
    let sq = g.square(centered)?;
    Ok(g.sum(sq)?)
}

pub fn global_size_loss_value(yhat: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let y = g.constant(yhat.clone())?;
    let l = global_size_loss(&mut g, y)?;
    Ok(g.value(l).item())
}

/// Round a soft assignment into an exact balanced partition: scan all (row,
/// column) cells in descending probability order (ties: lower order index,
/// then lower cluster index) and assign each still-free order to the first
/// cluster with spare capacity.
pub fn greedy_assign(yhat: &Tensor, c: usize) -> Result<HardAssignment> {
    let (n, k) = (yhat.rows(), yhat.cols());
    if n != k * c {
        return Err(Error::Contract(format!(
            "greedy_assign needs N = K*c, got N={n} K={k} c={c}"
        )));
    }
    let mut cells: Vec<(usize, usize)> = (0..n)
        .flat_map(|j| (0..k).map(move |q| (j, q)))
        .collect();
    cells.sort_by(|&(j1, k1), &(j2, k2)| {
        yhat.get2(j2, k2)
            .total_cmp(&yhat.get2(j1, k1))
            .then(j1.cmp(&j2))
            .then(k1.cmp(&k2))
    });
    let mut batches = vec![Vec::new(); k];
    let mut assigned = vec![false; n];
    let mut placed = 0;
    for (j, q) in cells {
        if placed == n {
            break;
        }
        if assigned[j] || batches[q].len() >= c {
            continue;
        }
        assigned[j] = true;
        batches[q].push(OrderId(j as u32));
        placed += 1;
    }
    for b in &mut batches {
        b.sort_unstable();
    }
    Ok(HardAssignment { batches })
}

/// Minimum-cost perfect matching on a square cost matrix (shortest
/// augmenting paths with potentials, O(n^3)). Returns the column matched to
/// each row.
pub fn min_cost_matching(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    for row in cost {
        if row.len() != n {
            return Err(Error::Contract(format!(
                "matching needs a square matrix, got row of {} in {}x{}",
                row.len(),
                n,
                n
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(
                "matching cost matrix must be finite".into(),
            ));
        }
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based potentials; p[j] is the row matched to column j, 0 = free.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut ans = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            ans[p[j] - 1] = j - 1;
        }
    }
    Ok(ans)
}

/// Permute label columns so they line up with the clusters of `yhat`
/// (maximum-overlap matching against the greedy rounding of `yhat`).
/// Cluster indices are arbitrary, so cross-entropy against unaligned labels
/// would be meaningless.
pub fn align_labels(labels: &Labels, yhat: &Tensor, c: usize) -> Result<Labels> {
    let hard = greedy_assign(yhat, c)?;
    let k = labels.k;
    let n = labels.cluster_of.len();
    let hard_of = hard.cluster_of(n);
    let mut overlap = vec![vec![0.0; k]; k];
    for j in 0..n {
        if let Some(h) = hard_of[j] {
            overlap[labels.cluster_of[j]][h] += 1.0;
        }
    }
    let cost: Vec<Vec<f64>> = overlap
        .iter()
        .map(|row| row.iter().map(|&o| -o).collect())
        .collect();
    let perm = min_cost_matching(&cost)?;
    Ok(Labels {
        cluster_of: labels.cluster_of.iter().map(|&a| perm[a]).collect(),
        k,
    })
}

/// Lloyd iterations with an exact balanced assignment step: each round
/// matches the N points to K*c replicated center slots at squared-distance
/// cost, then recenters. The per-round total cost never increases.
pub fn balanced_kmeans_baseline(
    features: &Tensor,
    k: usize,
    c: usize,
    iters: usize,
    seed: u64,
) -> Result<HardAssignment> {
    let n = features.rows();
    let d = features.cols();
    if n != k * c {
        return Err(Error::Contract(format!(
            "balanced k-means needs N = K*c, got N={n} K={k} c={c}"
        )));
    }
    let seeds = farthest_point_seeds(features, k, seed);
    let mut centers: Vec<Vec<f64>> = seeds
        .iter()
        .map(|&i| features.row(i).to_vec())
        .collect();
    let mut cluster_of = vec![0usize; n];
    for _ in 0..iters.max(1) {
        let mut cost = vec![vec![0.0; n]; n];
        for (j, row) in cost.iter_mut().enumerate() {
            for (slot, cell) in row.iter_mut().enumerate() {
                *cell = sqdist(features.row(j), &centers[slot / c]);
            }
        }
        let matching = min_cost_matching(&cost)?;
        let new_cluster_of: Vec<usize> = matching.iter().map(|&slot| slot / c).collect();
        let changed = new_cluster_of != cluster_of;
        cluster_of = new_cluster_of;
        for (q, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&j| cluster_of[j] == q).collect();
            for dim in 0..d {
                center[dim] = members.iter().map(|&j| features.row(j)[dim]).sum::<f64>()
                    / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(HardAssignment::from_cluster_of(&cluster_of, k))
}

/// Within-cluster squared-distance cost of a partition (used by the
/// monotonicity property and the baseline's stopping analysis).
pub fn partition_cost(features: &Tensor, assignment: &HardAssignment) -> f64 {
    let d = features.cols();
    let mut total = 0.0;
    for batch in &assignment.batches {
        if batch.is_empty() {
            continue;
        }
        let mut center = vec![0.0; d];
        for &oid in batch {
            for (dim, c) in center.iter_mut().enumerate() {
                *c += features.row(oid.idx())[dim];
            }
        }
        for c in &mut center {
            *c /= batch.len() as f64;
        }
        for &oid in batch {
            total += sqdist(features.row(oid.idx()), &center);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use batchforge_autodiff::grad_check;
    use rand::Rng;

    fn tensor2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Plain Lloyd k-means sharing the farthest-point seeding, as the
    /// classical oracle for the soft layer at low temperature.
    fn classical_kmeans(points: &Tensor, k: usize, iters: usize, seed: u64) -> Vec<usize> {
        let n = points.rows();
        let d = points.cols();
        let seeds = farthest_point_seeds(points, k, seed);
        let mut centers: Vec<Vec<f64>> = seeds.iter().map(|&i| points.row(i).to_vec()).collect();
        let mut assign = vec![0usize; n];
        for _ in 0..iters {
            for j in 0..n {
                assign[j] = (0..k)
                    .min_by(|&a, &b| {
                        sqdist(points.row(j), &centers[a])
                            .total_cmp(&sqdist(points.row(j), &centers[b]))
                    })
                    .unwrap();
            }
            for (q, center) in centers.iter_mut().enumerate() {
                let members: Vec<usize> = (0..n).filter(|&j| assign[j] == q).collect();
                if members.is_empty() {
                    continue;
                }
                for dim in 0..d {
                    center[dim] = members.iter().map(|&j| points.row(j)[dim]).sum::<f64>()
                        / members.len() as f64;
                }
            }
        }
        assign
    }

    #[test]
    fn low_temperature_soft_kmeans_matches_classical_oracle() {
        let points = tensor2(&[
            &[0.0, 0.0],
            &[4.0, 4.1],
            &[-3.0, 2.0],
            &[7.0, -1.0],
        ]);
        let soft = soft_kmeans_values(&points, 4, 30, 0.01, 3).unwrap();
        let oracle = classical_kmeans(&points, 4, 30, 3);
        for j in 0..4 {
            let row = soft.yhat.row(j);
            let (argmax, &mx) = row
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.total_cmp(b))
                .unwrap();
            assert!(mx > 0.99, "row {j} not crisp: {row:?}");
            assert_eq!(argmax, oracle[j]);
        }
    }

    #[test]
    fn separated_groups_cluster_purely() {
        let points = tensor2(&[
            &[0.0, 0.0],
            &[0.3, 0.1],
            &[10.0, 10.0],
            &[10.2, 9.9],
        ]);
        let soft = soft_kmeans_values(&points, 2, 20, 0.1, 1).unwrap();
        let hard = greedy_assign(&soft.yhat, 2).unwrap();
        let of = hard.cluster_of(4);
        assert_eq!(of[0], of[1]);
        assert_eq!(of[2], of[3]);
        assert_ne!(of[0], of[2]);
    }

    #[test]
    fn identical_points_get_uniform_assignment() {
        let points = Tensor::from_rows(&vec![vec![1.0, 2.0]; 6]).unwrap();
        let soft = soft_kmeans_values(&points, 3, 10, 0.1, 5).unwrap();
        for v in soft.yhat.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_assignment_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..60).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let points = Tensor::from_vec(&[20, 3], data).unwrap();
        let soft = soft_kmeans_values(&points, 4, 10, 0.1, 2).unwrap();
        for j in 0..20 {
            let s: f64 = soft.yhat.row(j).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kmeans_rejects_more_clusters_than_points() {
        let points = tensor2(&[&[0.0], &[1.0]]);
        assert!(matches!(
            soft_kmeans_values(&points, 3, 5, 0.1, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn unrolled_kmeans_passes_grad_check() {
        let z0 = tensor2(&[
            &[0.1, 0.9],
            &[1.2, -0.3],
            &[-0.8, 0.4],
            &[0.6, 1.5],
        ]);
        let err = grad_check(
            |g, ids| {
                let out = soft_kmeans(g, ids[0], 2, 10, 0.5, 7).map_err(|_| {
                    batchforge_autodiff::AdError::NonFinite { op: "soft_kmeans" }
                })?;
                let sq = g.square(out.yhat)?;
                g.sum(sq)
            },
            &[z0],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-3, "err = {err}");
    }

    #[test]
    fn size_loss_is_zero_for_uniform_and_balanced() {
        let uniform = Tensor::filled(&[4, 2], 0.5);
        assert_eq!(global_size_loss_value(&uniform).unwrap(), 0.0);
        let balanced = Labels {
            cluster_of: vec![0, 1, 0, 1],
            k: 2,
        };
        assert_eq!(global_size_loss_value(&balanced.onehot()).unwrap(), 0.0);
    }

    #[test]
    fn size_loss_of_collapsed_assignment_is_half() {
        // N=4, K=2, all mass on cluster 0: (1 - 1/2)^2 + (0 - 1/2)^2 = 0.5.
        let collapsed = Labels {
            cluster_of: vec![0, 0, 0, 0],
            k: 2,
        };
        assert_eq!(global_size_loss_value(&collapsed.onehot()).unwrap(), 0.5);
    }

    #[test]
    fn size_loss_is_positive_for_any_unbalanced_columns() {
        let y = tensor2(&[
            &[0.9, 0.1],
            &[0.9, 0.1],
            &[0.6, 0.4],
            &[0.4, 0.6],
        ]);
        assert!(global_size_loss_value(&y).unwrap() > 0.0);
    }

    #[test]
    fn greedy_assign_keeps_balanced_one_hot_partitions() {
        let labels = Labels {
            cluster_of: vec![1, 0, 0, 1],
            k: 2,
        };
        let hard = greedy_assign(&labels.onehot(), 2).unwrap();
        assert_eq!(hard.cluster_of(4), vec![Some(1), Some(0), Some(0), Some(1)]);
    }

    #[test]
    fn greedy_assign_displaces_the_lowest_ranked_overflow() {
        let yhat = tensor2(&[
            &[0.9, 0.1],
            &[0.8, 0.2],
            &[0.7, 0.3],
            &[0.6, 0.4],
        ]);
        let hard = greedy_assign(&yhat, 2).unwrap();
        assert_eq!(
            hard.batches,
            vec![
                vec![OrderId(0), OrderId(1)],
                vec![OrderId(2), OrderId(3)]
            ]
        );
        // Oracle: of the three feasible partitions, greedy picked the one
        // maximizing the probability mass it assigned.
        let mass = |b: &[[u32; 2]; 2]| -> f64 {
            b.iter()
                .enumerate()
                .map(|(k, batch)| {
                    batch.iter().map(|&j| yhat.get2(j as usize, k)).sum::<f64>()
                })
                .sum()
        };
        let all = [[[0, 1], [2, 3]], [[0, 2], [1, 3]], [[0, 3], [1, 2]]];
        let best = all
            .iter()
            .map(mass)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(mass(&all[0]), best);
    }

    #[test]
    fn greedy_assign_breaks_ties_by_order_then_cluster() {
        let yhat = Tensor::filled(&[4, 2], 0.25);
        let hard = greedy_assign(&yhat, 2).unwrap();
        assert_eq!(
            hard.batches,
            vec![
                vec![OrderId(0), OrderId(1)],
                vec![OrderId(2), OrderId(3)]
            ]
        );
    }

    #[test]
    fn matching_prefers_zero_diagonal() {
        let cost = vec![
            vec![0.0, 5.0, 5.0],
            vec![5.0, 0.0, 5.0],
            vec![5.0, 5.0, 0.0],
        ];
        assert_eq!(min_cost_matching(&cost).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn matching_equals_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let n = 6;
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(0.0..10.0)).collect())
                .collect();
            let fast = min_cost_matching(&cost).unwrap();
            let fast_total: f64 = fast.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();

            let mut perm: Vec<usize> = (0..n).collect();
            let mut best = f64::INFINITY;
            permute_all(&mut perm, 0, &mut |p| {
                let total: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
                if total < best {
                    best = total;
                }
            });
            assert!((fast_total - best).abs() < 1e-9);
        }
    }

    fn permute_all(perm: &mut Vec<usize>, at: usize, f: &mut impl FnMut(&[usize])) {
        if at == perm.len() {
            f(perm);
            return;
        }
        for i in at..perm.len() {
            perm.swap(at, i);
            permute_all(perm, at + 1, f);
            perm.swap(at, i);
        }
    }

    #[test]
    fn matching_is_invariant_to_row_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 6;
        let mut cost: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(0.0..10.0)).collect())
            .collect();
        let before = min_cost_matching(&cost).unwrap();
        for v in cost[2].iter_mut() {
            *v += 100.0;
        }
        assert_eq!(min_cost_matching(&cost).unwrap(), before);
    }

    #[test]
    fn matching_rejects_non_finite_costs() {
        let cost = vec![vec![0.0, f64::NAN], vec![1.0, 2.0]];
        assert!(matches!(
            min_cost_matching(&cost),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn aligned_labels_stay_fixed() {
        let labels = Labels {
            cluster_of: vec![0, 0, 1, 1],
            k: 2,
        };
        let yhat = labels.onehot();
        let aligned = align_labels(&labels, &yhat, 2).unwrap();
        assert_eq!(aligned, labels);
    }

    #[test]
    fn swapped_label_columns_are_swapped_back() {
        let yhat = Labels {
            cluster_of: vec![0, 0, 1, 1],
            k: 2,
        }
        .onehot();
        let swapped = Labels {
            cluster_of: vec![1, 1, 0, 0],
            k: 2,
        };
        let aligned = align_labels(&swapped, &yhat, 2).unwrap();
        assert_eq!(aligned.cluster_of, vec![0, 0, 1, 1]);
    }

    #[test]
    fn random_permutations_align_to_full_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let k = 4;
        let c = 3;
        let n = k * c;
        let base: Vec<usize> = (0..n).map(|j| j % k).collect();
        for _ in 0..10 {
            let mut perm: Vec<usize> = (0..k).collect();
            for i in (1..k).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let shuffled = Labels {
                cluster_of: base.iter().map(|&c| perm[c]).collect(),
                k,
            };
            let reference = Labels {
                cluster_of: base.clone(),
                k,
            };
            let aligned = align_labels(&shuffled, &reference.onehot(), c).unwrap();
            let overlap = aligned
                .cluster_of
                .iter()
                .zip(&base)
                .filter(|(a, b)| a == b)
                .count();
            assert_eq!(overlap, n);
        }
    }

    #[test]
    fn balanced_kmeans_pairs_square_corners_along_short_sides() {
        let points = tensor2(&[
            &[0.0, 0.0],
            &[0.0, 1.0],
            &[10.0, 0.0],
            &[10.0, 1.0],
        ]);
        let hard = balanced_kmeans_baseline(&points, 2, 2, 10, 4).unwrap();
        let of = hard.cluster_of(4);
        assert_eq!(of[0], of[1]);
        assert_eq!(of[2], of[3]);
        // Oracle: the short-side pairing has the minimal within-cluster cost
        // of the three balanced partitions.
        let partitions = [[0, 0, 1, 1], [0, 1, 0, 1], [0, 1, 1, 0]];
        let best = partitions
            .iter()
            .map(|p| partition_cost(&points, &HardAssignment::from_cluster_of(p, 2)))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(partition_cost(&points, &hard), best);
    }

    #[test]
    fn single_cluster_baseline_is_trivially_balanced() {
        let points = tensor2(&[&[1.0], &[2.0], &[3.0]]);
        let hard = balanced_kmeans_baseline(&points, 1, 3, 5, 0).unwrap();
        assert_eq!(hard.batches.len(), 1);
        assert_eq!(hard.batches[0].len(), 3);
    }

    #[test]
    fn baseline_cost_never_increases_across_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data: Vec<f64> = (0..24).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let points = Tensor::from_vec(&[12, 2], data).unwrap();
        let mut last = f64::INFINITY;
        for iters in 1..6 {
            let hard = balanced_kmeans_baseline(&points, 3, 4, iters, 8).unwrap();
            let cost = partition_cost(&points, &hard);
            assert!(cost <= last + 1e-9, "iteration {iters} regressed");
            last = cost;
        }
    }
}
