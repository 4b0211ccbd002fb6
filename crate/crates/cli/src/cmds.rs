use crate::UsageError;
use anyhow::{Context, Result};
use batchforge_core::cluster::balanced_kmeans_baseline;
use batchforge_core::heuristics::{
    random_balanced_assignment, seed_savings_batching, validate_solution,
};
use batchforge_core::nets::{feature_dims, order_raw_features};
use batchforge_core::obgraph::{build_graph, sample_graph, SamplingConfig};
use batchforge_core::routing::{
    load_solution, save_solution, solution_distance, RoutingConfig, Solution,
};
use batchforge_core::train::{
    metrics_csv, train_multi_graph, CheckpointMeta, Split, TrainConfig, TrainedModel,
    CHECKPOINT_META_VERSION,
};
use batchforge_core::warehouse::{
    generate_instance, load_instance, save_instance, BatchingInstance, GenParams, Warehouse,
};
use clap::{Args, ValueEnum};
use std::path::{Path, PathBuf};

#[derive(Args)]
pub struct GenerateArgs {
    /// Output file (single instance) or directory (with --count > 1).
    #[arg(long)]
    pub out: PathBuf,
    /// Number of instances to generate (seeds are consecutive from --seed).
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Order count N.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// Batch count K.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Orders per batch c (defaults to N / K).
    #[arg(long)]
    pub c: Option<usize>,
    /// Item pool size (defaults to 2 * N).
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub order_size_min: usize,
    #[arg(long, default_value_t = 5)]
    pub order_size_max: usize,
    /// Locality skew of order item draws in [0, 1].
    #[arg(long, default_value_t = 0.8)]
    pub zone_affinity: f64,
    #[arg(long, default_value_t = 2)]
    pub blocks: u32,
    #[arg(long, default_value_t = 8)]
    pub aisles: u32,
    /// Slots per aisle per block.
    #[arg(long, default_value_t = 16)]
    pub slots: u32,
    #[arg(long, default_value_t = 3.0)]
    pub aisle_pitch: f64,
    #[arg(long, default_value_t = 1.0)]
    pub slot_pitch: f64,
    #[arg(long, default_value_t = 2.0)]
    pub cross_width: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl GenerateArgs {
    fn params(&self) -> Result<GenParams> {
        let warehouse = Warehouse::new(
            self.blocks,
            self.aisles,
            self.slots,
            self.aisle_pitch,
            self.slot_pitch,
            self.cross_width,
        )?;
        Ok(GenParams {
            n_orders: self.n,
            k_batches: self.k,
            orders_per_batch: self.c.unwrap_or(self.n / self.k.max(1)),
            n_items: self.items.unwrap_or(self.n * 2),
            order_size_min: self.order_size_min,
            order_size_max: self.order_size_max,
            zone_affinity: self.zone_affinity,
            warehouse,
        })
    }
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let params = args.params()?;
    if args.count == 1 && args.out.extension().is_some() {
        let inst = generate_instance(&params, args.seed)?;
        save_instance(&inst, &args.out)?;
        println!(
            "wrote {} (N={} K={} c={} items={})",
            args.out.display(),
            inst.n_orders(),
            inst.k_batches,
            inst.orders_per_batch,
            inst.n_items()
        );
        return Ok(());
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    for i in 0..args.count {
        let seed = args.seed + i as u64;
        let inst = generate_instance(&params, seed)?;
        let path = args.out.join(format!("instance_{i:03}.json"));
        save_instance(&inst, &path)?;
        println!("wrote {} (seed {seed})", path.display());
    }
    Ok(())
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Seed-and-savings construction heuristic.
    Heuristic,
    /// Balanced k-means on raw order features.
    Bkm,
    /// Uniform random balanced partition.
    Random,
    /// Trained task-oriented model (inference; needs --ckpt).
    Btogcn,
    /// Trained supervised-only model (inference; needs --ckpt).
    Supervised,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Heuristic => "heuristic",
            Method::Bkm => "bkm",
            Method::Random => "random",
            Method::Btogcn => "btogcn",
            Method::Supervised => "supervised",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Method::Btogcn | Method::Supervised)
    }
}

#[derive(Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Checkpoint for learned methods.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the solution file here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use the exact solver for batches with at most 12 distinct locations.
    #[arg(long)]
    pub exact_small: bool,
    /// Lloyd iterations of the balanced k-means baseline.
    #[arg(long, default_value_t = 15)]
    pub bkm_iters: usize,
}

fn routing_config(exact_small: bool) -> RoutingConfig {
    if exact_small {
        RoutingConfig::exact_small()
    } else {
        RoutingConfig::default()
    }
}

/// Solve one loaded instance. Shared by `solve` and the benchmark harness.
pub fn solve_instance(
    instance: &BatchingInstance,
    method: Method,
    seed: u64,
    ckpt: Option<&Path>,
    cfg: &RoutingConfig,
    bkm_iters: usize,
) -> Result<Solution> {
    let solution = match method {
        Method::Heuristic => seed_savings_batching(instance, cfg)?,
        Method::Bkm => {
            let feats = order_raw_features(instance)?;
            let hard = balanced_kmeans_baseline(
                &feats,
                instance.k_batches,
                instance.orders_per_batch,
                bkm_iters,
                seed,
            )?;
            solution_distance(instance, &hard, cfg)?
        }
        Method::Random => {
            let hard = random_balanced_assignment(instance, seed)?;
            solution_distance(instance, &hard, cfg)?
        }
        Method::Btogcn | Method::Supervised => {
            let path = ckpt.ok_or_else(|| {
                UsageError(format!(
                    "--method {} needs --ckpt with a trained checkpoint",
                    method.name()
                ))
            })?;
            let (model, meta) = TrainedModel::load(path)?;
            let dims = feature_dims(&instance.warehouse);
            if dims.item != meta.item_feat_dim {
                anyhow::bail!(
                    "checkpoint was trained for item feature width {}, instance has {}",
                    meta.item_feat_dim,
                    dims.item
                );
            }
            let het = batchforge_core::train::prepare_graph(instance, &model.config, 0)?;
            batchforge_core::train::infer_solution(
                &model.store,
                &model.config,
                instance,
                &het,
                model.config.seed,
            )?
        }
    };
    Ok(solution)
}

pub fn solve(args: SolveArgs) -> Result<()> {
    let instance = load_instance(&args.instance)?;
    let cfg = routing_config(args.exact_small);
    let solution = solve_instance(
        &instance,
        args.method,
        args.seed,
        args.ckpt.as_deref(),
        &cfg,
        args.bkm_iters,
    )?;
    println!("method: {}", args.method.name());
    println!("total_distance_m: {}", solution.total);
    for (k, d) in solution.batch_distances.iter().enumerate() {
        println!("batch_{k}_distance_m: {d}");
    }
    if let Some(out) = &args.out {
        save_solution(&solution, out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

#[derive(Args)]
pub struct RouteArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Solution file to validate and re-score.
    #[arg(long)]
    pub assignment: PathBuf,
    #[arg(long)]
    pub exact_small: bool,
}

pub fn route(args: RouteArgs) -> Result<()> {
    let instance = load_instance(&args.instance)?;
    let stored = load_solution(&args.assignment)?;
    let violations = validate_solution(&instance, &stored.assignment)?;
    if !violations.is_empty() {
        return Err(batchforge_core::Error::Infeasible(violations).into());
    }
    let cfg = routing_config(args.exact_small);
    let fresh = solution_distance(&instance, &stored.assignment, &cfg)?;
    println!("total_distance_m: {}", fresh.total);
    for (k, d) in fresh.batch_distances.iter().enumerate() {
        println!("batch_{k}_distance_m: {d}");
    }
    if (fresh.total - stored.total).abs() > 1e-9 {
        println!(
            "note: stored total {} differs from recomputed {}",
            stored.total, fresh.total
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training config JSON (defaults when omitted).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Instance file or directory of instance files.
    #[arg(long)]
    pub instances: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics CSV path (defaults to the checkpoint path with .csv).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Train/val/test counts over the sorted instance list, e.g. "8,1,2".
    /// Defaults to all-train.
    #[arg(long)]
    pub split: Option<String>,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the config mode.
    #[arg(long)]
    pub mode: Option<String>,
    /// Override the config epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
}

pub fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?;
            let cfg: TrainConfig = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", p.display()))?;
            Ok(cfg)
        }
    }
}

/// Instance file list: a single file, or the sorted *.json files of a
/// directory.
pub fn collect_instances(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |e| e == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        anyhow::bail!("no instance files under {}", path.display());
    }
    Ok(files)
}

fn parse_split(spec: &str, total: usize) -> Result<Split> {
    let parts: Vec<usize> = spec
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| UsageError(format!("bad --split {spec:?}, expected e.g. 8,1,2")))?;
    if parts.len() != 3 || parts.iter().sum::<usize>() != total {
        return Err(UsageError(format!(
            "--split {spec:?} must name three counts summing to {total}"
        ))
        .into());
    }
    let (t, v) = (parts[0], parts[1]);
    Ok(Split {
        train: (0..t).collect(),
        val: (t..t + v).collect(),
        test: (t + v..total).collect(),
    })
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_train_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if let Some(mode) = &args.mode {
        cfg.mode = serde_json::from_value(serde_json::Value::String(mode.clone()))
            .map_err(|_| UsageError(format!("unknown mode {mode:?}")))?;
    }
    let files = collect_instances(&args.instances)?;
    let instances: Vec<BatchingInstance> = files
        .iter()
        .map(|p| load_instance(p).map_err(anyhow::Error::from))
        .collect::<Result<_>>()?;
    let split = match &args.split {
        Some(s) => parse_split(s, instances.len())?,
        None => Split {
            train: (0..instances.len()).collect(),
            val: vec![],
            test: vec![],
        },
    };

    let (model, outcome) = train_multi_graph(&instances, &split, &cfg)?;
    let meta = CheckpointMeta {
        schema_version: CHECKPOINT_META_VERSION,
        config: cfg.clone(),
        item_feat_dim: feature_dims(&instances[0].warehouse).item,
        k_batches: instances[0].k_batches,
        trained_epochs: cfg.epochs,
    };
    model.save(&meta, &args.out)?;
    let csv_path = args
        .metrics
        .unwrap_or_else(|| args.out.with_extension("csv"));
    std::fs::write(&csv_path, metrics_csv(&outcome.rows, instances.len() > 1))
        .with_context(|| format!("writing {}", csv_path.display()))?;

    println!("wrote {} and {}", args.out.display(), csv_path.display());
    for eval in &outcome.train_best {
        println!(
            "train[{}] best_model_total_m: {}",
            eval.instance, eval.solution.total
        );
    }
    for eval in &outcome.train_labels {
        println!(
            "train[{}] final_label_total_m: {}",
            eval.instance, eval.solution.total
        );
    }
    for eval in &outcome.val_eval {
        println!("val[{}] total_m: {}", eval.instance, eval.solution.total);
    }
    for eval in &outcome.test_eval {
        println!("test[{}] total_m: {}", eval.instance, eval.solution.total);
    }
    Ok(())
}

#[derive(Args)]
pub struct DumpGraphArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep only the M nearest oo/ii neighbors per node.
    #[arg(long)]
    pub sample_m: Option<usize>,
    /// Force exactly P oi incidences per node.
    #[arg(long)]
    pub sample_p: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub sample_seed: u64,
}

pub fn dump_graph(args: DumpGraphArgs) -> Result<()> {
    let instance = load_instance(&args.instance)?;
    let mut graph = build_graph(&instance)?;
    if let (Some(m), Some(p)) = (args.sample_m, args.sample_p) {
        let cfg = SamplingConfig::new(m, p, args.sample_seed)?;
        graph = sample_graph(&graph, &cfg)?;
    }
    let text = serde_json::to_string_pretty(&graph)?;
    std::fs::write(&args.out, text)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} ({} oo, {} ii, {} oi edges)",
        args.out.display(),
        graph.oo_edges.len(),
        graph.ii_edges.len(),
        graph.oi_edges.len()
    );
    Ok(())
}
