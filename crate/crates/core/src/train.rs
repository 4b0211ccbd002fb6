//! Losses and the training loop: warm-up on surrogate cross-entropy against
//! heuristic labels, estimator training on the true per-batch distances,
//! loss switching once the estimation error falls below the threshold, and
//! dynamic label replacement gated by a one-sided paired t-test.
//!
//! Two optimizers with disjoint parameter sets run per step: the clustering
//! side (`e1.*`) under the hybrid clustering loss, and the estimator side
//! (`e2.*`, `est.*`) under the estimation error. When the clustering loss
//! consumes the estimator, those parameters enter the graph frozen so
//! gradients flow through them into the soft assignment without updating
//! them.

use crate::cluster::{
    align_labels, greedy_assign, soft_kmeans, HardAssignment, Labels, SoftKmeansVars,
};
use crate::error::{Error, Result};
use crate::heuristics::seed_savings_batching;
use crate::nets::{estimated_total, Estimator, HetGnn, NetConfig};
use crate::obgraph::{build_graph, sample_graph, HetGraph, SamplingConfig};
use crate::routing::{solution_distance, RoutingConfig, Solution};
use crate::warehouse::BatchingInstance;
use batchforge_autodiff::{Graph, ParamStore, Tensor, VarId};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Warm-up objective only: the estimator term never engages.
    SupervisedOnly,
    /// Full loss switching between surrogate and estimated task loss.
    TaskOriented,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning-rate multiplier applied once per epoch.
    pub decay_factor: f64,
    pub epochs: usize,
    /// Absolute estimation-error switch threshold; when absent the threshold
    /// is `epsilon_rel` times the variance of the current label's per-batch
    /// distances.
    pub epsilon: Option<f64>,
    pub epsilon_rel: f64,
    /// Significance level of the one-sided paired t-test gating label
    /// replacement.
    pub ttest_alpha: f64,
    pub kmeans_iters: usize,
    pub kmeans_tau: f64,
    /// Weight of the global size-constraint penalty inside the clustering
    /// loss.
    pub lambda_g: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub hidden: usize,
    pub layers: usize,
    pub rnn_layers: usize,
    /// Type-aware sampling parameters for the training graph.
    pub sample_m: usize,
    pub sample_p: usize,
    /// Let the second encoder reuse the first one's route encoder weights
    /// (they then train only through the clustering loss).
    pub share_route_encoder: bool,
    /// Score batches with the exact solver when they are small enough.
    pub exact_small: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            decay_factor: 0.96,
            epochs: 200,
            epsilon: None,
            epsilon_rel: 0.05,
            ttest_alpha: 0.05,
            kmeans_iters: 10,
            kmeans_tau: 0.1,
            lambda_g: 1.0,
            seed: 0,
            mode: TrainMode::TaskOriented,
            hidden: 32,
            layers: 2,
            rnn_layers: 2,
            sample_m: 4,
            sample_p: 4,
            share_route_encoder: false,
            exact_small: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.epsilon {
            if e <= 0.0 {
                return Err(Error::Contract(format!("epsilon must be > 0, got {e}")));
            }
        }
        if !(self.ttest_alpha > 0.0 && self.ttest_alpha < 1.0) {
            return Err(Error::Contract(format!(
                "t-test alpha must lie in (0, 1), got {}",
                self.ttest_alpha
            )));
        }
        if self.epochs == 0 || self.kmeans_iters == 0 {
            return Err(Error::Contract("epochs and kmeans_iters must be >= 1".into()));
        }
        Ok(())
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            hidden: self.hidden,
            layers: self.layers,
            rnn_layers: self.rnn_layers,
        }
    }

    pub fn routing(&self) -> RoutingConfig {
        if self.exact_small {
            RoutingConfig::exact_small()
        } else {
            RoutingConfig::default()
        }
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi(epoch as i32)
    }
}

// ---- losses -----------------------------------------------------------------

/// True task loss of a discrete assignment: the total picking distance.
pub fn task_loss(
    instance: &BatchingInstance,
    assignment: &HardAssignment,
    cfg: &RoutingConfig,
) -> Result<Solution> {
    solution_distance(instance, assignment, cfg)
}

/// Mean squared error between true per-batch distances and the estimator's
/// soft per-batch scores: `(1/K) sum_k (d_k - sum_j T_jk yhat_jk)^2`.
pub fn estimation_error(
    g: &mut Graph,
    t: VarId,
    yhat: VarId,
    batch_distances: &[f64],
) -> Result<VarId> {
    let shape = g.value(t).shape().to_vec();
    if shape != g.value(yhat).shape() || shape.len() != 2 || shape[1] != batch_distances.len() {
        return Err(Error::Contract(format!(
            "estimation_error needs T and yhat of shape [N, K={}], got {:?}",
            batch_distances.len(),
            shape
        )));
    }
    let est = crate::nets::estimated_batch_distances(g, t, yhat)?;
    let target = g.constant(Tensor::from_vec(
        &[batch_distances.len()],
        batch_distances.to_vec(),
    )?)?;
    let diff = g.sub(est, target)?;
    let sq = g.square(diff)?;
    Ok(g.mean(sq)?)
}

/// Cross-entropy of the soft assignment against aligned one-hot labels:
/// `-(1/N) sum_j sum_k y_jk ln(yhat_jk)`, with probabilities clamped at
/// 1e-12. Returns the loss node and the number of clamped label cells.
pub fn surrogate_loss(g: &mut Graph, yhat: VarId, aligned: &Labels) -> Result<(VarId, u64)> {
    let n = aligned.cluster_of.len();
    let onehot = aligned.onehot();
    let clamped = aligned
        .cluster_of
        .iter()
        .enumerate()
        .filter(|(j, &c)| g.value(yhat).get2(*j, c) < 1e-12)
        .count() as u64;
    let y = g.constant(onehot)?;
    let logp = g.ln_clamped(yhat, 1e-12)?;
    let prod = g.mul(y, logp)?;
    let s = g.sum(prod)?;
    Ok((g.scale(s, -1.0 / n as f64)?, clamped))
}

/// Hybrid clustering loss `gamma * L_s + beta * estimated_total +
/// lambda_G * L_G`, with `(gamma, beta)` a 0/1 pair.
pub fn clustering_loss(
    g: &mut Graph,
    l_s: VarId,
    est_total: Option<VarId>,
    gamma: f64,
    beta: f64,
    lambda_g: f64,
    l_g: VarId,
) -> Result<VarId> {
    if (gamma + beta - 1.0).abs() > 1e-12 || !(gamma == 0.0 || gamma == 1.0) {
        return Err(Error::Contract(format!(
            "gamma and beta must be a 0/1 pair summing to 1, got ({gamma}, {beta})"
        )));
    }
    let mut acc = g.scale(l_s, gamma)?;
    if beta != 0.0 {
        let t = est_total.ok_or_else(|| {
            Error::Contract("beta = 1 requires an estimated total term".into())
        })?;
        let bt = g.scale(t, beta)?;
        acc = g.add(acc, bt)?;
    }
    let penalty = g.scale(l_g, lambda_g)?;
    Ok(g.add(acc, penalty)?)
}

/// One-sided paired t-test p-value for H1: `mean(old - new) > 0`, with K-1
/// degrees of freedom. Zero-variance differences degenerate to p = 0 when
/// the mean difference is positive and p = 1 otherwise.
pub fn paired_t_test_one_sided(old: &[f64], new: &[f64]) -> Result<f64> {
    if old.len() != new.len() || old.len() < 2 {
        return Err(Error::Contract(format!(
            "paired t-test needs two equal-length samples of size >= 2, got {} and {}",
            old.len(),
            new.len()
        )));
    }
    let n = old.len() as f64;
    let diffs: Vec<f64> = old.iter().zip(new).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(if mean > 0.0 { 0.0 } else { 1.0 });
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::Contract(format!("t distribution: {e}")))?;
    Ok(1.0 - dist.cdf(t))
}

// ---- optimizer ----------------------------------------------------------------

/// Adam moment/bias-correction state for one parameter group.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update over every parameter matching `filter`, reading the
/// accumulated gradients and the per-parameter moment slots in the store.
pub fn adam_step(
    store: &mut ParamStore,
    filter: impl Fn(&str) -> bool,
    state: &mut AdamState,
    lr: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, p) in store.iter_mut() {
        if !filter(name) {
            continue;
        }
        for i in 0..p.value.numel() {
            let g = p.grad.data()[i];
            let m = state.beta1 * p.adam_m.data()[i] + (1.0 - state.beta1) * g;
            let v = state.beta2 * p.adam_v.data()[i] + (1.0 - state.beta2) * g * g;
            p.adam_m.data_mut()[i] = m;
            p.adam_v.data_mut()[i] = v;
            let update = lr * (m / bc1) / ((v / bc2).sqrt() + state.eps);
            p.value.data_mut()[i] -= update;
        }
    }
}

// ---- training engine ----------------------------------------------------------

/// Index split over an instance list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn single() -> Self {
        Split {
            train: vec![0],
            val: vec![],
            test: vec![],
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Contract("split needs at least one training graph".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(Error::Contract(format!(
                    "split references instance {i} but only {n} exist"
                )));
            }
            if !seen.insert(i) {
                return Err(Error::Contract(format!(
                    "split assigns instance {i} to more than one side"
                )));
            }
        }
        Ok(())
    }
}

/// One metrics row, logged per (epoch, training graph).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub graph: usize,
    pub l_s: f64,
    pub l_e: f64,
    pub l_c: f64,
    /// True task loss of this epoch's greedy rounding.
    pub l_t: f64,
    pub gamma: u8,
    /// Cumulative label replacements on this graph.
    pub label_updates: u64,
    /// Task loss of the current labels (non-increasing over epochs).
    pub label_score: f64,
    /// t-test p-value when a replacement was attempted this epoch.
    pub p_value: Option<f64>,
    /// Clamped label cells in the surrogate loss this epoch.
    pub clamped: u64,
}

/// Final evaluation of one instance: the inference solution.
#[derive(Debug, Clone)]
pub struct GraphEval {
    pub instance: usize,
    pub solution: Solution,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<EpochRow>,
    /// Best model-emitted solution per training graph (never the heuristic
    /// label itself).
    pub train_best: Vec<GraphEval>,
    /// Final label solutions per training graph.
    pub train_labels: Vec<GraphEval>,
    pub val_eval: Vec<GraphEval>,
    pub test_eval: Vec<GraphEval>,
}

/// Everything needed to run the model after training.
pub struct TrainedModel {
    pub store: ParamStore,
    pub config: TrainConfig,
}

pub const CHECKPOINT_META_VERSION: u32 = 1;

/// Sidecar metadata embedded in the checkpoint container.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub config: TrainConfig,
    /// Item feature width the encoders were built for; instances with a
    /// different warehouse shape cannot run against this checkpoint.
    pub item_feat_dim: usize,
    pub k_batches: usize,
    pub trained_epochs: usize,
}

impl TrainedModel {
    pub fn save(&self, meta: &CheckpointMeta, path: &std::path::Path) -> Result<()> {
        let meta_json = serde_json::to_string(meta).expect("meta serializes");
        batchforge_autodiff::save_checkpoint(&self.store, &meta_json, path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<(TrainedModel, CheckpointMeta)> {
        let (store, meta_json) = batchforge_autodiff::load_checkpoint(path)?;
        let meta: CheckpointMeta =
            serde_json::from_str(&meta_json).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                detail: format!("checkpoint metadata: {e}"),
            })?;
        if meta.schema_version != CHECKPOINT_META_VERSION {
            return Err(Error::SchemaVersion {
                found: meta.schema_version,
                expected: CHECKPOINT_META_VERSION,
            });
        }
        Ok((
            TrainedModel {
                store,
                config: meta.config.clone(),
            },
            meta,
        ))
    }
}

struct GraphState {
    instance: usize,
    het: HetGraph,
    labels: Labels,
    label_solution: Solution,
    epsilon: f64,
    last_le: Option<f64>,
    best: Option<Solution>,
    label_updates: u64,
    kmeans_seed: u64,
    /// Mean per-order distance of the initial labels; calibrates the
    /// estimator's output range to this graph's meter scale.
    est_scale: f64,
}

fn graph_seed(base: u64, idx: usize) -> u64 {
    base.wrapping_add((idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn switch_threshold(cfg: &TrainConfig, label_solution: &Solution) -> f64 {
    cfg.epsilon.unwrap_or_else(|| {
        let d = &label_solution.batch_distances;
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d.len() as f64;
        cfg.epsilon_rel * var
    })
}

fn check_compatible(instances: &[BatchingInstance]) -> Result<()> {
    let first = &instances[0];
    let dims = crate::nets::feature_dims(&first.warehouse);
    for inst in instances.iter().skip(1) {
        if crate::nets::feature_dims(&inst.warehouse) != dims {
            return Err(Error::Contract(
                "all instances must share the warehouse shape (feature widths differ)".into(),
            ));
        }
        if inst.k_batches != first.k_batches {
            return Err(Error::Contract(
                "all instances must share the batch count K".into(),
            ));
        }
    }
    Ok(())
}

/// Sample the training graph for one instance under the run's seed scheme.
pub fn prepare_graph(
    instance: &BatchingInstance,
    cfg: &TrainConfig,
    idx: usize,
) -> Result<HetGraph> {
    let full = build_graph(instance)?;
    let sampling = SamplingConfig::new(cfg.sample_m, cfg.sample_p, graph_seed(cfg.seed, idx))?;
    sample_graph(&full, &sampling)
}

/// Inference on one instance: encoder forward, soft k-means, greedy
/// rounding, TSP scoring. No labels are consumed.
pub fn infer_solution(
    store: &ParamStore,
    cfg: &TrainConfig,
    instance: &BatchingInstance,
    het: &HetGraph,
    kmeans_seed: u64,
) -> Result<Solution> {
    let e1 = HetGnn::new("e1", cfg.net_config(), &instance.warehouse);
    let mut g = Graph::new();
    let out = e1.forward(&mut g, store, true, instance, het)?;
    let sk = soft_kmeans(
        &mut g,
        out.order_states,
        instance.k_batches,
        cfg.kmeans_iters,
        cfg.kmeans_tau,
        kmeans_seed,
    )?;
    let yhat = g.value(sk.yhat).clone();
    let hard = greedy_assign(&yhat, instance.orders_per_batch)?;
    solution_distance(instance, &hard, &cfg.routing())
}

/// Train on one instance (the single-graph protocol is the one-graph split
/// of the multi-graph engine).
pub fn train_single_graph(
    instance: &BatchingInstance,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, TrainOutcome)> {
    train_multi_graph(std::slice::from_ref(instance), &Split::single(), cfg)
}

/// Multi-graph training: shared parameters, per-graph labels and switching
/// state, evaluation on held-out graphs by inference only.
pub fn train_multi_graph(
    instances: &[BatchingInstance],
    split: &Split,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, TrainOutcome)> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::Contract("no instances given".into()));
    }
    split.validate(instances.len())?;
    check_compatible(instances)?;
    let routing = cfg.routing();
    let first = &instances[split.train[0]];
    let k = first.k_batches;

    let e1 = HetGnn::new("e1", cfg.net_config(), &first.warehouse);
    let mut e2 = HetGnn::new("e2", cfg.net_config(), &first.warehouse);
    if cfg.share_route_encoder {
        e2.rnn_prefix = "e1".to_string();
    }
    let est = Estimator::new("est", cfg.hidden, cfg.hidden, k);
    let mut store = ParamStore::new();
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
    e1.register_params(&mut store, &mut rng)?;
    e2.register_params(&mut store, &mut rng)?;
    est.register_params(&mut store, &mut rng)?;

    let mut states = Vec::with_capacity(split.train.len());
    for &gi in &split.train {
        let inst = &instances[gi];
        let het = prepare_graph(inst, cfg, gi)?;
        let label_solution = seed_savings_batching(inst, &routing)?;
        let labels = Labels::from_assignment(&label_solution.assignment, inst.n_orders())?;
        let epsilon = switch_threshold(cfg, &label_solution);
        let est_scale = label_solution.total / inst.n_orders() as f64;
        states.push(GraphState {
            instance: gi,
            het,
            labels,
            label_solution,
            epsilon,
            last_le: None,
            best: None,
            label_updates: 0,
            kmeans_seed: graph_seed(cfg.seed, gi),
            est_scale,
        });
    }

    let mut adam_cluster = AdamState::default();
    let mut adam_estimator = AdamState::default();
    let mut rows = Vec::with_capacity(cfg.epochs * states.len());

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        for state in states.iter_mut() {
            let inst = &instances[state.instance];
            let c = inst.orders_per_batch;
            let gamma: u8 = match (cfg.mode, state.last_le) {
                (TrainMode::SupervisedOnly, _) => 1,
                (TrainMode::TaskOriented, Some(le)) if le < state.epsilon => 0,
                _ => 1,
            };
            let beta = 1 - gamma;

            // Clustering side.
            let mut g = Graph::new();
            let out = e1.forward(&mut g, &store, false, inst, &state.het)?;
            let SoftKmeansVars { yhat, .. } = soft_kmeans(
                &mut g,
                out.order_states,
                k,
                cfg.kmeans_iters,
                cfg.kmeans_tau,
                state.kmeans_seed,
            )?;
            let yhat_val = g.value(yhat).clone();
            let hard = greedy_assign(&yhat_val, c)?;
            let current = task_loss(inst, &hard, &routing)?;

            // Dynamic label replacement, gated on improvement + significance.
            let mut p_value = None;
            if k >= 2 && current.total < state.label_solution.total {
                let mut old_d = state.label_solution.batch_distances.clone();
                let mut new_d = current.batch_distances.clone();
                old_d.sort_by(f64::total_cmp);
                new_d.sort_by(f64::total_cmp);
                let p = paired_t_test_one_sided(&old_d, &new_d)?;
                p_value = Some(p);
                if p < cfg.ttest_alpha {
                    state.labels = Labels::from_assignment(&current.assignment, inst.n_orders())?;
                    state.label_solution = current.clone();
                    state.label_updates += 1;
                    state.epsilon = switch_threshold(cfg, &state.label_solution);
                }
            }

            let aligned = align_labels(&state.labels, &yhat_val, c)?;
            let (l_s, clamped) = surrogate_loss(&mut g, yhat, &aligned)?;
            let l_g = crate::cluster::global_size_loss(&mut g, yhat)?;
            let est_term = if beta == 1 {
                let e2_out = e2.forward(&mut g, &store, true, inst, &state.het)?;
                let y_const = g.constant(aligned.onehot())?;
                let t = est.forward(
                    &mut g,
                    &store,
                    true,
                    e2_out.order_states,
                    yhat,
                    y_const,
                    state.est_scale,
                )?;
                Some(estimated_total(&mut g, t, yhat)?)
            } else {
                None
            };
            let l_c = clustering_loss(
                &mut g,
                l_s,
                est_term,
                gamma as f64,
                beta as f64,
                cfg.lambda_g,
                l_g,
            )?;
            let l_s_val = g.value(l_s).item();
            let l_c_val = g.value(l_c).item();
            store.zero_grads();
            g.backward(l_c)?;
            g.apply_grads(&mut store);
            adam_step(&mut store, |n| n.starts_with("e1."), &mut adam_cluster, lr);

            // Estimator side.
            let mut g2 = Graph::new();
            let e2_out = e2.forward(&mut g2, &store, false, inst, &state.het)?;
            let yhat_const = g2.constant(yhat_val)?;
            let y_const = g2.constant(aligned.onehot())?;
            let t = est.forward(
                &mut g2,
                &store,
                false,
                e2_out.order_states,
                yhat_const,
                y_const,
                state.est_scale,
            )?;
            let l_e = estimation_error(&mut g2, t, yhat_const, &current.batch_distances)?;
            let l_e_val = g2.value(l_e).item();
            store.zero_grads();
            g2.backward(l_e)?;
            g2.apply_grads(&mut store);
            adam_step(
                &mut store,
                |n| n.starts_with("e2.") || n.starts_with("est."),
                &mut adam_estimator,
                lr,
            );
            state.last_le = Some(l_e_val);

            if state.best.as_ref().map_or(true, |b| current.total < b.total) {
                state.best = Some(current.clone());
            }
            rows.push(EpochRow {
                epoch,
                graph: state.instance,
                l_s: l_s_val,
                l_e: l_e_val,
                l_c: l_c_val,
                l_t: current.total,
                gamma,
                label_updates: state.label_updates,
                label_score: state.label_solution.total,
                p_value,
                clamped,
            });
        }
    }

    let train_best = states
        .iter()
        .map(|s| GraphEval {
            instance: s.instance,
            solution: s.best.clone().expect("epochs >= 1"),
        })
        .collect();
    let train_labels = states
        .iter()
        .map(|s| GraphEval {
            instance: s.instance,
            solution: s.label_solution.clone(),
        })
        .collect();

    let eval_side = |idxs: &[usize]| -> Result<Vec<GraphEval>> {
        idxs.iter()
            .map(|&gi| {
                let inst = &instances[gi];
                let het = prepare_graph(inst, cfg, gi)?;
                let solution =
                    infer_solution(&store, cfg, inst, &het, graph_seed(cfg.seed, gi))?;
                Ok(GraphEval {
                    instance: gi,
                    solution,
                })
            })
            .collect()
    };
    let val_eval = eval_side(&split.val)?;
    let test_eval = eval_side(&split.test)?;

    Ok((
        TrainedModel {
            store,
            config: cfg.clone(),
        },
        TrainOutcome {
            rows,
            train_best,
            train_labels,
            val_eval,
            test_eval,
        },
    ))
}

/// Metrics CSV in the stable column layout. With `with_graph` a graph column
/// is inserted for multi-graph runs.
pub fn metrics_csv(rows: &[EpochRow], with_graph: bool) -> String {
    let mut out = String::new();
    if with_graph {
        out.push_str("epoch,graph,l_s,l_e,l_c,l_t,gamma,label_updates\n");
    } else {
        out.push_str("epoch,l_s,l_e,l_c,l_t,gamma,label_updates\n");
    }
    for r in rows {
        if with_graph {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.epoch, r.graph, r.l_s, r.l_e, r.l_c, r.l_t, r.gamma, r.label_updates
            ));
        } else {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.l_s, r.l_e, r.l_c, r.l_t, r.gamma, r.label_updates
            ));
        }
    }
    out
}
