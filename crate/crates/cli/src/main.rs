mod artifacts;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use customgnn::analysis::{
    category_relevance, config_hash, dimension_sweep, gap_csv, generalization_gap,
    oversmoothing_sweep, robustness_sweep, sweep_csv, sweep_means, weight_vs_diversity,
    weight_vs_length, PathSampling, SweepPoint,
};
use customgnn::autodiff::checkpoint;
use customgnn::trainer::{build_model, metrics_csv, Precision};
use customgnn::{fit, load_graph, FitResult, Graph, Model, Scalar, TrainConfig};
use serde_json::{json, Value};

use artifacts::Staging;

/// Path-reweighting GNN for semi-supervised node classification.
///
/// Dataset names in configs are resolved as paths first and then under
/// `$CUSTOMGNN_DATA`.
#[derive(Parser)]
#[command(name = "customgnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics.csv, params.ckpt and manifest.json.
    Train(Common),
    /// Train with one component removed and compare against a baseline run.
    Ablate {
        mode: AblationMode,
        /// manifest.json (or its run directory) of the full-model baseline.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run one of the analyses and write its CSV.
    Analyze {
        which: Analysis,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: AnalyzeOpts,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config with flat TrainConfig keys, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable, applied after --config.
    #[arg(long = "set", value_name = "K=V")]
    overrides: Vec<String>,
    /// Output directory (default: runs/<run id>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override, applied last.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Training is single-threaded; values above 1 are
    /// accepted but have no effect, and would void the bitwise
    /// reproducibility guarantee if they ever did.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct AnalyzeOpts {
    /// Trained params.ckpt or run directory (relevance, weight_length, weight_diversity).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Edge perturbation rates for `robustness`.
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.1, 0.5, 1.0])]
    rates: Vec<f64>,
    /// Propagation depths for `oversmoothing`.
    #[arg(long, value_delimiter = ',', default_values_t = [2, 4, 8, 16])]
    hops: Vec<usize>,
    /// Path windows paired with --hops; defaults to the config window for every depth.
    #[arg(long, value_delimiter = ',')]
    windows: Vec<usize>,
    /// Embedding dimensions for `dimension`.
    #[arg(long, value_delimiter = ',', default_values_t = [64, 128, 256, 512])]
    dims: Vec<usize>,
    /// Seeds for sweeps (default: the config seed).
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Path length for `weight_diversity`.
    #[arg(long, default_value_t = 10)]
    fixed_length: usize,
    /// Drop scored paths below this weight before aggregating.
    #[arg(long)]
    min_weight: Option<f64>,
    /// Minimum number of paths for a relevance cell to be reported.
    #[arg(long, default_value_t = 1)]
    min_count: usize,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
#[allow(clippy::enum_variant_names)]
enum AblationMode {
    NoReweighting,
    NoMultihop,
    NoTriplet,
    NoMultiperspective,
}

impl AblationMode {
    fn name(self) -> &'static str {
        match self {
            Self::NoReweighting => "no_reweighting",
            Self::NoMultihop => "no_multihop",
            Self::NoTriplet => "no_triplet",
            Self::NoMultiperspective => "no_multiperspective",
        }
    }

    fn apply(self, cfg: &mut TrainConfig) {
        match self {
            Self::NoReweighting => cfg.no_reweighting = true,
            Self::NoMultihop => cfg.no_multihop = true,
            Self::NoTriplet => cfg.no_triplet = true,
            Self::NoMultiperspective => cfg.no_multiperspective = true,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Analysis {
    Relevance,
    WeightLength,
    WeightDiversity,
    Gap,
    Robustness,
    Oversmoothing,
    Dimension,
}

impl Analysis {
    fn name(self) -> &'static str {
        match self {
            Self::Relevance => "relevance",
            Self::WeightLength => "weight_length",
            Self::WeightDiversity => "weight_diversity",
            Self::Gap => "gap",
            Self::Robustness => "robustness",
            Self::Oversmoothing => "oversmoothing",
            Self::Dimension => "dimension",
        }
    }

    fn needs_checkpoint(self) -> bool {
        matches!(
            self,
            Self::Relevance | Self::WeightLength | Self::WeightDiversity
        )
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(common) => cmd_train(&common, None),
        Command::Ablate {
            mode,
            baseline,
            common,
        } => cmd_train(&common, Some((mode, baseline))),
        Command::Analyze {
            which,
            common,
            opts,
        } => cmd_analyze(which, &common, &opts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Reads a config file; a run manifest contributes its config snapshot.
fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let text = match value.get("run_id").and(value.get("config")) {
        Some(snapshot) => snapshot.to_string(),
        None => text,
    };
    TrainConfig::from_json(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn resolve_config(common: &Common, fallback: Option<&Path>) -> Result<TrainConfig> {
    let mut cfg = match (&common.config, fallback) {
        (Some(path), _) => read_config(path)?,
        (None, Some(manifest)) => read_config(manifest)?,
        (None, None) => bail!("no --config given"),
    };
    for assignment in &common.overrides {
        cfg.set(assignment)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    if common.threads > 1 {
        eprintln!(
            "note: --threads {} has no effect; training runs on one thread",
            common.threads
        );
    }
    Ok(cfg)
}

fn dataset_dir(name: &str) -> Result<PathBuf> {
    let direct = PathBuf::from(name);
    if direct.join("manifest.json").is_file() {
        return Ok(direct);
    }
    match std::env::var_os("CUSTOMGNN_DATA") {
        Some(root) => {
            let dir = PathBuf::from(root).join(name);
            if dir.join("manifest.json").is_file() {
                Ok(dir)
            } else {
                Err(anyhow!(
                    "dataset `{name}` not found as a path or under CUSTOMGNN_DATA ({})",
                    dir.display()
                ))
            }
        }
        None => Err(anyhow!(
            "dataset `{name}` not found as a path and CUSTOMGNN_DATA is not set"
        )),
    }
}

fn load_dataset(cfg: &TrainConfig) -> Result<(Graph, PathBuf)> {
    let dir = dataset_dir(&cfg.dataset)?;
    let g = load_graph(&dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    Ok((g, dir))
}

fn run_id(g: &Graph, cfg: &TrainConfig) -> String {
    format!("{}-{}", g.name(), config_hash(cfg))
}

fn baseline_accuracy(path: &Path) -> Result<f64> {
    let path = if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading baseline {}", path.display()))?;
    let value: Value = serde_json::from_str(&text)?;
    value
        .pointer("/final_metrics/test_acc")
        .and_then(Value::as_f64)
        .ok_or_else(|| anyhow!("{} has no final_metrics.test_acc", path.display()))
}

fn cmd_train(common: &Common, ablation: Option<(AblationMode, Option<PathBuf>)>) -> Result<()> {
    let mut cfg = resolve_config(common, None)?;
    if let Some((mode, _)) = &ablation {
        mode.apply(&mut cfg);
    }
    let baseline = match ablation.as_ref().and_then(|(_, b)| b.as_deref()) {
        Some(path) => Some(baseline_accuracy(path)?),
        None => None,
    };
    let (g, data_dir) = load_dataset(&cfg)?;
    let id = run_id(&g, &cfg);
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&id));
    let staging = Staging::new(&out)?;

    let started = Instant::now();
    let summary = match cfg.precision {
        Precision::F64 => train_into::<f64>(&g, &cfg, &staging)?,
        Precision::F32 => train_into::<f32>(&g, &cfg, &staging)?,
    };
    let wall_clock = started.elapsed().as_secs_f64();

    let mut manifest = json!({
        "run_id": id,
        "command": if ablation.is_some() { "ablate" } else { "train" },
        "config": serde_json::from_str::<Value>(&cfg.to_json())?,
        "config_hash": config_hash(&cfg),
        "dataset": { "name": g.name(), "path": data_dir, "checksum": g.checksum() },
        "seed": cfg.seed,
        "outputs": { "metrics": "metrics.csv", "checkpoint": "params.ckpt", "manifest": "manifest.json" },
        "wall_clock_seconds": wall_clock,
        "final_metrics": summary,
    });
    let test_acc = summary["test_acc"].as_f64();
    if let Some((mode, _)) = &ablation {
        manifest["ablation"] = json!({
            "mode": mode.name(),
            "baseline_test_acc": baseline,
            "delta": baseline.zip(test_acc).map(|(b, t)| t - b),
        });
    }
    staging.write(
        "manifest.json",
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    let out = staging.commit()?;

    match test_acc {
        Some(acc) => println!("test accuracy: {acc:.4}"),
        None => println!("test accuracy: n/a (empty test mask)"),
    }
    if let (Some(b), Some(t)) = (baseline, test_acc) {
        println!("delta vs baseline: {:+.4}", t - b);
    }
    println!("artifacts: {}", out.display());
    Ok(())
}

fn train_into<T: Scalar>(g: &Graph, cfg: &TrainConfig, staging: &Staging) -> Result<Value> {
    let r: FitResult<T> = fit(g, cfg)?;
    let last = r.history.last().expect("fit runs at least one epoch");
    let finite = r.history.iter().all(|h| {
        [
            h.loss,
            h.sup,
            h.con,
            h.tri,
            h.train_ce,
            h.val_ce,
            h.train_acc,
            h.val_acc,
        ]
        .iter()
        .all(|v| v.is_finite())
    });
    if !finite {
        bail!("training produced non-finite metrics");
    }
    staging.write("metrics.csv", metrics_csv(&r.history))?;
    checkpoint::save(&r.model.params, &staging.path("params.ckpt"))?;
    Ok(json!({
        "epochs": r.history.len(),
        "best_epoch": r.best_epoch,
        "best_val_acc": r.best_val,
        "test_acc": if r.test_acc.is_finite() { Some(r.test_acc) } else { None },
        "final_loss": last.loss,
        "final_train_acc": last.train_acc,
    }))
}

fn load_trained<T: Scalar>(g: &Graph, cfg: &TrainConfig, ckpt: &Path) -> Result<Model<T>> {
    let mut model = build_model::<T>(g, cfg)?;
    let stored = checkpoint::load::<T>(ckpt)
        .with_context(|| format!("reading checkpoint {}", ckpt.display()))?;
    model
        .params
        .load_from(&stored)
        .context("checkpoint does not match the configured model")?;
    Ok(model)
}

fn cmd_analyze(which: Analysis, common: &Common, opts: &AnalyzeOpts) -> Result<()> {
    let (ckpt, manifest) = match &opts.checkpoint {
        Some(p) if p.is_dir() => (Some(p.join("params.ckpt")), Some(p.join("manifest.json"))),
        Some(p) => (Some(p.clone()), p.parent().map(|d| d.join("manifest.json"))),
        None => (None, None),
    };
    if which.needs_checkpoint() && ckpt.is_none() {
        bail!(
            "`analyze {}` needs a trained model: pass --checkpoint",
            which.name()
        );
    }
    let manifest = manifest.filter(|m| m.is_file());
    let cfg = resolve_config(common, manifest.as_deref())?;
    let (g, _) = load_dataset(&cfg)?;
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-analysis", run_id(&g, &cfg))));
    let staging = Staging::new(&out)?;
    let file = format!("{}.csv", which.name());

    let csv = match cfg.precision {
        Precision::F64 => analyze::<f64>(which, &g, &cfg, ckpt.as_deref(), opts)?,
        Precision::F32 => analyze::<f32>(which, &g, &cfg, ckpt.as_deref(), opts)?,
    };
    staging.write(&file, csv)?;
    let out = staging.commit()?;
    println!("wrote {}", out.join(file).display());
    Ok(())
}

fn analyze<T: Scalar>(
    which: Analysis,
    g: &Graph,
    cfg: &TrainConfig,
    ckpt: Option<&Path>,
    opts: &AnalyzeOpts,
) -> Result<String> {
    let sampling = PathSampling {
        min_weight: opts.min_weight,
        ..PathSampling::from_config(cfg)
    };
    let seeds = if opts.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        opts.seeds.clone()
    };
    let mut progress = |p: &SweepPoint| {
        eprintln!(
            "  {} {}={} seed {}: test {:.4}",
            p.variant, p.parameter, p.value, p.seed, p.test_acc
        )
    };
    let full = ("full", cfg.clone());
    let ablated = (
        "no_reweighting",
        TrainConfig {
            no_reweighting: true,
            ..cfg.clone()
        },
    );

    let sweep = match which {
        Analysis::Relevance | Analysis::WeightLength | Analysis::WeightDiversity => {
            let model = load_trained::<T>(g, cfg, ckpt.expect("checked by caller"))?;
            return Ok(match which {
                Analysis::Relevance => {
                    category_relevance(g, &model, &sampling, opts.min_count)?.to_csv()
                }
                Analysis::WeightLength => weight_vs_length(g, &model, &sampling)?.to_csv("length"),
                _ => weight_vs_diversity(g, &model, &sampling, opts.fixed_length)?
                    .to_csv("diversity"),
            });
        }
        Analysis::Gap => {
            let a: FitResult<T> = fit(g, &full.1)?;
            let b: FitResult<T> = fit(g, &ablated.1)?;
            return Ok(gap_csv(&[
                ("full", generalization_gap(&a.history)),
                ("no_reweighting", generalization_gap(&b.history)),
            ]));
        }
        Analysis::Robustness => {
            robustness_sweep::<T>(g, &[full, ablated], &opts.rates, &seeds, &mut progress)?
        }
        Analysis::Oversmoothing => {
            let windows = if opts.windows.is_empty() {
                vec![cfg.window; opts.hops.len()]
            } else {
                opts.windows.clone()
            };
            if windows.len() != opts.hops.len() {
                bail!(
                    "--windows has {} values for {} --hops values",
                    windows.len(),
                    opts.hops.len()
                );
            }
            let depths: Vec<(usize, usize)> = opts.hops.iter().copied().zip(windows).collect();
            oversmoothing_sweep::<T>(g, &[full], &depths, &seeds, &mut progress)?
        }
        Analysis::Dimension => dimension_sweep::<T>(g, &[full], &opts.dims, &seeds, &mut progress)?,
    };
    for (variant, value, acc) in sweep_means(&sweep) {
        println!("{variant} {value}: mean test accuracy {acc:.4}");
    }
    Ok(sweep_csv(&sweep))
}
