use crate::cmds::{collect_instances, load_train_config, solve_instance, Method};
use crate::svg;
use crate::UsageError;
use anyhow::{Context, Result};
use batchforge_core::routing::{batch_route, RoutingConfig, Solution};
use batchforge_core::train::{train_single_graph, TrainMode};
use batchforge_core::warehouse::{load_instance, BatchingInstance};
use clap::Args;
use serde::Serialize;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Args)]
pub struct BenchArgs {
    /// Instance file or directory.
    #[arg(long)]
    pub instances: PathBuf,
    /// Comma-separated method list (heuristic, bkm, random, btogcn,
    /// supervised); duplicates are allowed and reported separately.
    #[arg(long)]
    pub methods: String,
    /// Comma-separated seeds; every method sees the same instances and seeds.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// Report output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint for learned methods (inference protocol).
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Train config for learned methods (single-graph protocol: train per
    /// instance and seed, report the best model-emitted solution).
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Suppress timestamps so report files are byte-reproducible.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub exact_small: bool,
    #[arg(long, default_value_t = 15)]
    pub bkm_iters: usize,
}

#[derive(Serialize)]
struct MethodReport {
    method: String,
    /// Mean over graphs of the per-graph mean batch distance (meters).
    avg_batch_score: f64,
    /// Mean over graphs of the per-graph maximum batch distance.
    max_batch_score: f64,
    /// Mean over graphs of the per-graph minimum batch distance.
    min_batch_score: f64,
    /// Per-graph total distance, averaged over seeds.
    per_graph_totals: Vec<f64>,
    runtime_s: f64,
    failures: Vec<String>,
}

#[derive(Serialize)]
struct BenchReport {
    schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at: Option<String>,
    instances: Vec<String>,
    seeds: Vec<u64>,
    methods: Vec<MethodReport>,
}

fn parse_methods(spec: &str) -> Result<Vec<Method>> {
    spec.split(',')
        .map(|s| match s.trim() {
            "heuristic" => Ok(Method::Heuristic),
            "bkm" => Ok(Method::Bkm),
            "random" => Ok(Method::Random),
            "btogcn" => Ok(Method::Btogcn),
            "supervised" => Ok(Method::Supervised),
            other => Err(UsageError(format!("unknown method {other:?}")).into()),
        })
        .collect()
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| UsageError(format!("bad seed {s:?}")).into())
        })
        .collect()
}

/// One method evaluation on one instance and seed.
fn run_method(
    args: &BenchArgs,
    method: Method,
    instance: &BatchingInstance,
    seed: u64,
    routing: &RoutingConfig,
) -> Result<Solution> {
    if method.is_learned() && args.train_config.is_some() {
        // Single-graph protocol: train on this instance with this seed and
        // report the best solution the model emitted during the run.
        let mut cfg = load_train_config(args.train_config.as_deref())?;
        cfg.seed = seed;
        cfg.mode = match method {
            Method::Supervised => TrainMode::SupervisedOnly,
            _ => TrainMode::TaskOriented,
        };
        cfg.exact_small = args.exact_small;
        let (_, outcome) = train_single_graph(instance, &cfg)?;
        return Ok(outcome.train_best[0].solution.clone());
    }
    if method.is_learned() && args.ckpt.is_none() {
        return Err(UsageError(format!(
            "method {} needs --ckpt or --train-config",
            method.name()
        ))
        .into());
    }
    solve_instance(
        instance,
        method,
        seed,
        args.ckpt.as_deref(),
        routing,
        args.bkm_iters,
    )
}

pub fn run(args: BenchArgs) -> Result<()> {
    let methods = parse_methods(&args.methods)?;
    let seeds = parse_seeds(&args.seeds)?;
    if methods.is_empty() || seeds.is_empty() {
        return Err(UsageError("need at least one method and one seed".into()).into());
    }
    let files = collect_instances(&args.instances)?;
    let instances: Vec<BatchingInstance> = files
        .iter()
        .map(|p| load_instance(p).map_err(anyhow::Error::from))
        .collect::<Result<_>>()?;
    let routing = if args.exact_small {
        RoutingConfig::exact_small()
    } else {
        RoutingConfig::default()
    };
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let mut reports = Vec::new();
    for &method in &methods {
        let start = Instant::now();
        let mut failures = Vec::new();
        let mut per_graph_mean = Vec::new();
        let mut per_graph_max = Vec::new();
        let mut per_graph_min = Vec::new();
        let mut per_graph_totals = Vec::new();
        let mut first_solution: Option<Solution> = None;
        for (gi, instance) in instances.iter().enumerate() {
            let mut means = Vec::new();
            let mut maxs = Vec::new();
            let mut mins = Vec::new();
            let mut totals = Vec::new();
            for &seed in &seeds {
                match run_method(&args, method, instance, seed, &routing) {
                    Ok(sol) => {
                        let k = sol.batch_distances.len() as f64;
                        means.push(sol.total / k);
                        maxs.push(sol.batch_distances.iter().copied().fold(0.0, f64::max));
                        mins.push(
                            sol.batch_distances
                                .iter()
                                .copied()
                                .fold(f64::INFINITY, f64::min),
                        );
                        totals.push(sol.total);
                        if gi == 0 && first_solution.is_none() {
                            first_solution = Some(sol);
                        }
                    }
                    Err(e) => {
                        if e.downcast_ref::<UsageError>().is_some() {
                            return Err(e);
                        }
                        failures.push(format!(
                            "{} on {} seed {}: {:#}",
                            method.name(),
                            files[gi].display(),
                            seed,
                            e
                        ));
                    }
                }
            }
            if !totals.is_empty() {
                let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                per_graph_mean.push(avg(&means));
                per_graph_max.push(avg(&maxs));
                per_graph_min.push(avg(&mins));
                per_graph_totals.push(avg(&totals));
            }
        }
        let avg = |v: &[f64]| {
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        reports.push(MethodReport {
            method: method.name().to_string(),
            avg_batch_score: avg(&per_graph_mean),
            max_batch_score: avg(&per_graph_max),
            min_batch_score: avg(&per_graph_min),
            per_graph_totals,
            runtime_s: start.elapsed().as_secs_f64(),
            failures,
        });

        // Route plot: the first instance's three longest pick lists.
        if let Some(sol) = first_solution {
            let mut idx: Vec<usize> = (0..sol.batch_distances.len()).collect();
            idx.sort_by(|&a, &b| sol.batch_distances[b].total_cmp(&sol.batch_distances[a]));
            let mut routes = Vec::new();
            for &k in idx.iter().take(3) {
                let route = batch_route(&instances[0], &sol.assignment.batches[k], &routing)?;
                routes.push((format!("batch {k} ({:.1} m)", sol.batch_distances[k]), route));
            }
            let svg = svg::route_plot(
                &instances[0],
                &routes,
                &format!("{}: top-3 pick lists", method.name()),
            );
            let path = args.out.join(format!("routes_{}.svg", method.name()));
            std::fs::write(&path, svg)
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }

    let report = BenchReport {
        schema_version: 1,
        generated_at: if args.deterministic {
            None
        } else {
            Some(now_utc())
        },
        instances: files.iter().map(|p| p.display().to_string()).collect(),
        seeds,
        methods: reports,
    };
    let json_path = args.out.join("report.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", json_path.display()))?;

    let table = render_table(&report);
    print!("{table}");
    std::fs::write(args.out.join("report.txt"), &table)?;

    let chart = svg::score_chart(
        "avg / max / min batch score (m)",
        &report
            .methods
            .iter()
            .map(|m| {
                (
                    m.method.clone(),
                    vec![
                        ("avg".to_string(), m.avg_batch_score),
                        ("max".to_string(), m.max_batch_score),
                        ("min".to_string(), m.min_batch_score),
                    ],
                )
            })
            .collect::<Vec<_>>(),
    );
    std::fs::write(args.out.join("scores.svg"), chart)?;
    println!("report written to {}", args.out.display());
    Ok(())
}

fn render_table(report: &BenchReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>16} {:>16} {:>16} {:>10}\n",
        "method", "avg batch (m)", "max batch (m)", "min batch (m)", "time (s)"
    ));
    for m in &report.methods {
        out.push_str(&format!(
            "{:<12} {:>16.2} {:>16.2} {:>16.2} {:>10.2}\n",
            m.method, m.avg_batch_score, m.max_batch_score, m.min_batch_score, m.runtime_s
        ));
        for f in &m.failures {
            out.push_str(&format!("  failure: {f}\n"));
        }
    }
    out
}

/// UTC timestamp without pulling in a clock-formatting dependency.
fn now_utc() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("{secs} (unix epoch seconds)")
}
