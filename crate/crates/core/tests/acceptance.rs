//! Acceptance report: one PASS/FAIL line per primary criterion.
//!
//! Criteria that need the Planetoid datasets read them from
//! `$CUSTOMGNN_DATA/{cora,citeseer,pubmed}` in the neutral format. Without
//! that directory they are reported as `FAIL (not evaluated ...)` and do not
//! affect the exit status; every evaluated criterion that fails does.
//!
//! ```text
//! cargo test -p customgnn --test acceptance
//! CUSTOMGNN_DATA=/data cargo test --release -p customgnn --test acceptance
//! ```
//!
//! `CUSTOMGNN_ACCEPTANCE_SEEDS` overrides the 5-seed protocol (for smoke runs).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use customgnn::analysis::{category_relevance, PathSampling, RelevanceMatrix};
use customgnn::autodiff::{grad_check, GradCheckConfig, Tape};
use customgnn::graph::{perturb_edges, Graph};
use customgnn::losses::{
    consistency_loss, mean_prediction, sharpen, sharpened_target, triplet_loss, TripletBatch,
};
use customgnn::sampler::{extract_subpaths, Walk};
use customgnn::trainer::{build_model, fit, training_loss, Context, EpochInputs};
use customgnn::{load_graph, Matrix, TrainConfig};

enum Outcome {
    Pass(String),
    Fail(String),
    Unevaluated(String),
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> Graph {
    load_graph(&repo().join("fixtures").join(name)).expect("committed fixture loads")
}

fn config(name: &str) -> TrainConfig {
    let text = std::fs::read_to_string(repo().join("configs").join(format!("{name}.json")))
        .expect("committed config");
    TrainConfig::from_json(&text).expect("committed config parses")
}

fn seeds() -> Vec<u64> {
    let n = std::env::var("CUSTOMGNN_ACCEPTANCE_SEEDS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    (0..n).collect()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let g = fixture("tiny12");
    let cfg = TrainConfig {
        embed_dim: 8,
        lstm_hidden: 8,
        perspectives: 2,
        hops: 2,
        batch_size: 4,
        walks_per_start: 2,
        walk_length: 4,
        window: 3,
        n_pos: 12,
        n_neg: 12,
        margin: 1.0,
        dropout_mlp: 0.0,
        dropout_encoder: 0.0,
        dropout_path: 0.0,
        dropout_adjacency: 0.0,
        seed: 21,
        ..TrainConfig::cora()
    };
    let plan = cfg.plan(g.num_nodes()).unwrap();
    let model = build_model::<f64>(&g, &cfg).unwrap();
    let ctx = Context::<f64>::new(&g).unwrap();
    let pseudo: Vec<usize> = (0..g.num_nodes()).map(|i| g.label(i).unwrap()).collect();

    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let inputs = EpochInputs {
        seed: cfg.seed,
        epoch: 2,
        pseudo: Some(&pseudo),
        consistency_target: None,
    };
    let parts = training_loss(&mut tape, &bound, &model.net, &g, &ctx, &plan, inputs).unwrap();
    let zs: Vec<&Matrix<f64>> = parts.predictions.iter().map(|&z| tape.value(z)).collect();
    let target = sharpened_target(&mean_prediction(&zs).unwrap(), cfg.temperature).unwrap();
    if parts.con.is_none() || parts.tri.is_none() {
        return Outcome::Fail("fixture loss is missing a component".into());
    }

    let report = grad_check(
        &model.params,
        |tape, bound| {
            let inputs = EpochInputs {
                seed: cfg.seed,
                epoch: 2,
                pseudo: Some(&pseudo),
                consistency_target: Some(&target),
            };
            Ok(training_loss(tape, bound, &model.net, &g, &ctx, &plan, inputs)?.total)
        },
        &GradCheckConfig {
            step: 1e-5,
            ..Default::default()
        },
    );
    let secs = start.elapsed().as_secs_f64();
    match report {
        Ok(r) => {
            let worst = r.max_rel_error();
            let entries: usize = r.params.iter().map(|p| p.checked).sum();
            check(
                worst < 1e-4 && secs < 30.0,
                format!(
                    "max rel err {worst:.3e} over {entries} entries in {} params, {secs:.1}s",
                    r.params.len()
                ),
            )
        }
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn unit_numerics() -> Outcome {
    let walk = Walk {
        nodes: vec![1, 2, 3, 4],
        nominal_length: 4,
    };
    let subs: Vec<Vec<usize>> = extract_subpaths(&walk, 3)
        .into_iter()
        .map(|s| s.nodes)
        .collect();
    let subs_ok = subs
        == vec![
            vec![1, 2],
            vec![2, 3],
            vec![3, 4],
            vec![1, 2, 3],
            vec![2, 3, 4],
        ];

    let s = sharpen(&[0.6, 0.4], 0.5).unwrap();
    let sharpen_ok = (s[0] - 0.6923).abs() <= 1e-4 && (s[1] - 0.3077).abs() <= 1e-4;

    let mut tape = Tape::<f64>::new();
    let z1 = tape.constant(Matrix::from_f64_rows(&[&[1.0, 0.0]]));
    let z2 = tape.constant(Matrix::from_f64_rows(&[&[0.0, 1.0]]));
    let con = consistency_loss(&mut tape, &[z1, z2], 1.0).unwrap();
    let con = tape.value(con).item();

    let x = tape.constant(Matrix::from_f64_rows(&[
        &[0.0, 0.0],
        &[1.0, 0.0],
        &[0.0, 0.4],
    ]));
    let batch = TripletBatch {
        positives: vec![(0, 1)],
        negatives: vec![(0, 2)],
        ..Default::default()
    };
    let tri = triplet_loss(&mut tape, &batch, x, 1.0).unwrap();
    let tri = tape.value(tri).item();

    check(
        subs_ok && sharpen_ok && (con - 0.5).abs() <= 1e-9 && (tri - 1.6).abs() <= 1e-9,
        format!(
            "{} sub-paths, sharpen [{:.4}, {:.4}], consistency {con}, triplet {tri}",
            subs.len(),
            s[0],
            s[1]
        ),
    )
}

fn determinism() -> Outcome {
    let g = fixture("synth-cora");
    let cfg = TrainConfig {
        embed_dim: 16,
        lstm_hidden: 8,
        hops: 3,
        batch_size: 60,
        walk_length: 5,
        window: 4,
        n_pos: 500,
        n_neg: 500,
        margin: 1.0,
        max_epochs: 8,
        seed: 5,
        ..config("cora")
    };
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for run in 0..2 {
        let r = fit::<f64>(&g, &cfg).unwrap();
        let path = dir.path().join(format!("metrics{run}.csv"));
        customgnn::trainer::write_metrics_csv(&r.history, &path).unwrap();
        bytes.push(std::fs::read(path).unwrap());
    }
    let lines = bytes[0].iter().filter(|&&b| b == b'\n').count();
    check(
        bytes[0] == bytes[1],
        format!(
            "two synth-cora runs, {lines} CSV lines each, identical={}",
            bytes[0] == bytes[1]
        ),
    )
}

/// Cached real-dataset runs shared by several criteria.
struct Datasets {
    root: Option<PathBuf>,
    graphs: BTreeMap<String, Result<Graph, String>>,
    runs: BTreeMap<(String, String, u64), customgnn::FitResult64>,
}

impl Datasets {
    fn new() -> Self {
        Self {
            root: std::env::var_os("CUSTOMGNN_DATA").map(PathBuf::from),
            graphs: BTreeMap::new(),
            runs: BTreeMap::new(),
        }
    }

    fn graph(&mut self, name: &str) -> Result<Graph, String> {
        let root = self.root.clone();
        self.graphs
            .entry(name.to_owned())
            .or_insert_with(|| {
                let root = root.ok_or_else(|| "CUSTOMGNN_DATA is not set".to_string())?;
                let dir = root.join(name);
                load_graph(&dir).map_err(|e| format!("{} unavailable: {e}", dir.display()))
            })
            .clone()
    }

    fn run(
        &mut self,
        dataset: &str,
        variant: &str,
        cfg: &TrainConfig,
        g: &Graph,
    ) -> &customgnn::FitResult64 {
        let key = (dataset.to_owned(), variant.to_owned(), cfg.seed);
        self.runs.entry(key).or_insert_with(|| {
            let t = Instant::now();
            let r = fit::<f64>(g, cfg).expect("training run");
            eprintln!(
                "  {dataset}/{variant} seed {}: test {:.4} in {:.0}s",
                cfg.seed,
                r.test_acc,
                t.elapsed().as_secs_f64()
            );
            r
        })
    }

    fn mean_acc(&mut self, dataset: &str, variant: &str, cfg: &TrainConfig, g: &Graph) -> f64 {
        let s = seeds();
        let total: f64 = s
            .iter()
            .map(|&seed| {
                self.run(
                    dataset,
                    variant,
                    &TrainConfig {
                        seed,
                        ..cfg.clone()
                    },
                    g,
                )
                .test_acc
            })
            .sum();
        total / s.len() as f64
    }
}

fn ablation_config(base: &TrainConfig, mode: &str) -> TrainConfig {
    let mut cfg = base.clone();
    match mode {
        "no_reweighting" => cfg.no_reweighting = true,
        "no_multihop" => cfg.no_multihop = true,
        "no_triplet" => cfg.no_triplet = true,
        "no_multiperspective" => cfg.no_multiperspective = true,
        _ => {}
    }
    cfg
}

fn cora_accuracy(d: &mut Datasets) -> Outcome {
    let g = match d.graph("cora") {
        Ok(g) => g,
        Err(e) => return Outcome::Unevaluated(e),
    };
    let t = Instant::now();
    let acc = d.mean_acc("cora", "full", &config("cora"), &g);
    let per_run = t.elapsed().as_secs_f64() / seeds().len() as f64 / 60.0;
    check(
        acc >= 0.82 && per_run <= 60.0,
        format!(
            "mean test {:.2}% (need >= 82.0), {per_run:.1} min/run",
            acc * 100.0
        ),
    )
}

fn citeseer_pubmed_accuracy(d: &mut Datasets) -> Outcome {
    let (c, p) = match (d.graph("citeseer"), d.graph("pubmed")) {
        (Ok(c), Ok(p)) => (c, p),
        (Err(e), _) | (_, Err(e)) => return Outcome::Unevaluated(e),
    };
    let ca = d.mean_acc("citeseer", "full", &config("citeseer"), &c);
    let t = Instant::now();
    let pa = d.mean_acc("pubmed", "full", &config("pubmed"), &p);
    let per_run = t.elapsed().as_secs_f64() / seeds().len() as f64 / 3600.0;
    check(
        ca >= 0.72 && pa >= 0.78 && per_run <= 3.0,
        format!(
            "citeseer {:.2}% (>= 72.0), pubmed {:.2}% (>= 78.0), pubmed {per_run:.2} h/run",
            ca * 100.0,
            pa * 100.0
        ),
    )
}

fn ablation_ordering(d: &mut Datasets) -> Outcome {
    let g = match d.graph("cora") {
        Ok(g) => g,
        Err(e) => return Outcome::Unevaluated(e),
    };
    let base = config("cora");
    let full = d.mean_acc("cora", "full", &base, &g);
    let mut ok = true;
    let mut detail = format!("full {:.2}%", full * 100.0);
    for mode in [
        "no_reweighting",
        "no_multihop",
        "no_triplet",
        "no_multiperspective",
    ] {
        let acc = d.mean_acc("cora", mode, &ablation_config(&base, mode), &g);
        ok &= full >= acc;
        if mode == "no_reweighting" {
            ok &= (0.772..=0.812).contains(&acc);
        }
        detail.push_str(&format!(", {mode} {:.2}%", acc * 100.0));
    }
    check(ok, detail)
}

fn robustness_trend(d: &mut Datasets) -> Outcome {
    let g = match d.graph("citeseer") {
        Ok(g) => g,
        Err(e) => return Outcome::Unevaluated(e),
    };
    let base = config("citeseer");
    let mut drops = Vec::new();
    for mode in ["full", "no_reweighting"] {
        let cfg = ablation_config(&base, mode);
        let clean = d.mean_acc("citeseer", mode, &cfg, &g);
        let mut noisy = 0.0;
        for &seed in &seeds() {
            let pg = perturb_edges(&g, 0.5, seed).expect("perturbation");
            let r = fit::<f64>(
                &pg,
                &TrainConfig {
                    seed,
                    ..cfg.clone()
                },
            )
            .expect("training run");
            noisy += r.test_acc;
        }
        noisy /= seeds().len() as f64;
        drops.push(clean - noisy);
    }
    check(
        drops[0] < drops[1],
        format!(
            "drop at 50% fake edges: full {:.2} pts, no_reweighting {:.2} pts",
            drops[0] * 100.0,
            drops[1] * 100.0
        ),
    )
}

fn oversmoothing_trend(d: &mut Datasets) -> Outcome {
    let g = match d.graph("citeseer") {
        Ok(g) => g,
        Err(e) => return Outcome::Unevaluated(e),
    };
    let base = config("citeseer");
    let h4 = d.mean_acc(
        "citeseer",
        "full-h4",
        &TrainConfig {
            hops: 4,
            ..base.clone()
        },
        &g,
    );
    let h16 = d.mean_acc(
        "citeseer",
        "full-h16",
        &TrainConfig { hops: 16, ..base },
        &g,
    );
    check(
        (h16 - h4).abs() <= 0.05,
        format!(
            "H=4 {:.2}%, H=16 {:.2}% (gap must be <= 5 pts)",
            h4 * 100.0,
            h16 * 100.0
        ),
    )
}

fn relevance_trend(d: &mut Datasets) -> Outcome {
    let g = match d.graph("citeseer") {
        Ok(g) => g,
        Err(e) => return Outcome::Unevaluated(e),
    };
    let base = config("citeseer");
    let mut mats = Vec::new();
    for &seed in &seeds() {
        let cfg = TrainConfig {
            seed,
            ..base.clone()
        };
        let model = d.run("citeseer", "full", &cfg, &g).model.clone();
        mats.push(
            category_relevance(&g, &model, &PathSampling::from_config(&cfg), 1).expect("relevance"),
        );
    }
    let mean = RelevanceMatrix::mean(&mats).unwrap();
    let dom = mean.diagonal_dominance();
    let ok = dom.iter().all(|d| *d == Some(true));
    check(ok, format!("diagonal dominance per category: {dom:?}"))
}

fn committed_fixtures(data_needed: bool) -> Outcome {
    let fixtures = ["tiny12", "synth-cora", "synth-citeseer"];
    let all_load = fixtures
        .iter()
        .all(|f| load_graph(&repo().join("fixtures").join(f)).is_ok());
    let detail = format!(
        "committed fixtures {fixtures:?} load={all_load}; Planetoid data is not among them{}",
        if data_needed {
            " (dataset criteria need CUSTOMGNN_DATA)"
        } else {
            ""
        }
    );
    check(all_load && !data_needed, detail)
}

fn main() {
    let only: Option<Vec<String>> = std::env::var("CUSTOMGNN_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(str::to_owned).collect());
    let wanted = |name: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == name));
    let mut data = Datasets::new();
    type Criterion<'a> = (&'a str, Box<dyn FnOnce(&mut Datasets) -> Outcome>);
    let criteria: Vec<Criterion> = vec![
        ("gradient_oracle", Box::new(|_| gradient_oracle())),
        ("cora_accuracy", Box::new(cora_accuracy)),
        (
            "citeseer_pubmed_accuracy",
            Box::new(citeseer_pubmed_accuracy),
        ),
        ("ablation_ordering", Box::new(ablation_ordering)),
        ("unit_numerics", Box::new(|_| unit_numerics())),
        ("robustness_trend", Box::new(robustness_trend)),
        ("oversmoothing_trend", Box::new(oversmoothing_trend)),
        ("relevance_trend", Box::new(relevance_trend)),
        ("determinism", Box::new(|_| determinism())),
    ];
    let mut failed = 0;
    let mut unevaluated = 0;
    for (name, run) in criteria {
        if !wanted(name) {
            continue;
        }
        match run(&mut data) {
            Outcome::Pass(d) => println!("[acceptance] {name}: PASS ({d})"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("[acceptance] {name}: FAIL ({d})");
            }
            Outcome::Unevaluated(d) => {
                unevaluated += 1;
                println!("[acceptance] {name}: FAIL (not evaluated: {d})");
            }
        }
    }
    if wanted("committed_fixtures") {
        match committed_fixtures(true) {
            Outcome::Pass(d) => println!("[acceptance] committed_fixtures: PASS ({d})"),
            Outcome::Fail(d) | Outcome::Unevaluated(d) => {
                unevaluated += 1;
                println!("[acceptance] committed_fixtures: FAIL ({d})");
            }
        }
    }
    println!("[acceptance] summary: {failed} failed, {unevaluated} not satisfiable without external data");
    if failed > 0 {
        std::process::exit(1);
    }
}
