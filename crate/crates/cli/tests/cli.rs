use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

/// Writes a small tiny12 config into `dir` and returns its path.
fn tiny_config(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(repo().join("configs/cora.json")).unwrap();
    let mut cfg: Value = serde_json::from_str(&text).unwrap();
    let overrides = serde_json::json!({
        "dataset": repo().join("fixtures/tiny12"),
        "embed_dim": 8, "lstm_hidden": 8, "hops": 2, "batch_size": 6,
        "walk_length": 4, "window": 3, "n_pos": 20, "n_neg": 20, "margin": 1.0,
        "max_epochs": 6, "patience": 100, "seed": 3
    });
    for (k, v) in overrides.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_customgnn"))
        .args(args)
        .env_remove("CUSTOMGNN_DATA")
        .output()
        .unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn train_writes_artifacts_and_prints_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("run");
    let o = run(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("test accuracy: "));
    for f in ["metrics.csv", "params.ckpt", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let m = manifest(&out);
    assert_eq!(m["config"]["seed"], 3);
    assert_eq!(m["dataset"]["name"], "tiny12");
    assert_eq!(m["final_metrics"]["epochs"], 6);
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn runs_are_reproducible_from_config_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    assert!(run(&["train", "--config", p(&cfg), "--out", p(&a)])
        .status
        .success());
    assert!(run(&["train", "--config", p(&cfg), "--out", p(&b)])
        .status
        .success());
    let replay = a.join("manifest.json");
    assert!(run(&["train", "--config", p(&replay), "--out", p(&c)])
        .status
        .success());
    let first = std::fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(first, std::fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(first, std::fs::read(c.join("metrics.csv")).unwrap());
    assert_eq!(
        std::fs::read(a.join("params.ckpt")).unwrap(),
        std::fs::read(c.join("params.ckpt")).unwrap()
    );
}

#[test]
fn overrides_apply_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("run");
    let o = run(&[
        "train",
        "--config",
        p(&cfg),
        "--set",
        "seed=7",
        "--set",
        "max_epochs=2",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let m = manifest(&out);
    assert_eq!(
        (m["seed"].as_u64(), m["final_metrics"]["epochs"].as_u64()),
        (Some(7), Some(2))
    );

    let o = run(&[
        "train",
        "--config",
        p(&cfg),
        "--set",
        "seed=7",
        "--seed",
        "11",
        "--set",
        "max_epochs=1",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success());
    assert_eq!(manifest(&out)["seed"], 11);
}

#[test]
fn bad_key_lists_valid_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("run");
    let o = run(&[
        "train",
        "--config",
        p(&cfg),
        "--set",
        "learning_rat=0.1",
        "--out",
        p(&out),
    ]);
    assert!(!o.status.success());
    let err = text(&o.stderr);
    assert!(
        err.contains("learning_rat")
            && err.contains("learning_rate")
            && err.contains("walk_length"),
        "{err}"
    );
    assert!(!out.exists());
}

#[test]
fn unknown_dataset_fails_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("run");
    let o = run(&[
        "train",
        "--config",
        p(&cfg),
        "--set",
        "dataset=no-such-dataset",
        "--out",
        p(&out),
    ]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("no-such-dataset"));
    assert!(!out.exists());
    let leftovers: Vec<_> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(leftovers, vec![std::ffi::OsString::from("tiny.json")]);
}

#[test]
fn f32_precision_trains() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("run");
    let o = run(&[
        "train",
        "--config",
        p(&cfg),
        "--set",
        "precision=f32",
        "--set",
        "max_epochs=2",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_eq!(manifest(&out)["config"]["precision"], "f32");
}

#[test]
fn ablation_delta_against_itself_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = run(&["ablate", "no_triplet", "--config", p(&cfg), "--out", p(&a)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_eq!(manifest(&a)["config"]["no_triplet"], true);

    let o = run(&[
        "ablate",
        "no_triplet",
        "--baseline",
        p(&a),
        "--config",
        p(&cfg),
        "--out",
        p(&b),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(
        text(&o.stdout).contains("delta vs baseline: +0.0000"),
        "{}",
        text(&o.stdout)
    );
    assert_eq!(manifest(&b)["ablation"]["delta"], 0.0);
}

#[test]
fn unknown_ablation_mode_is_a_usage_error() {
    let o = run(&["ablate", "no_everything"]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("no_reweighting"));
}

#[test]
fn invalid_analysis_is_a_usage_error() {
    let o = run(&["analyze", "histogram"]);
    assert!(!o.status.success());
    let err = text(&o.stderr);
    assert!(
        err.contains("possible values") && err.contains("weight_diversity"),
        "{err}"
    );
}

#[test]
fn checkpoint_analyses_require_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let o = run(&[
        "analyze",
        "relevance",
        "--config",
        p(&cfg),
        "--out",
        p(&tmp.path().join("an")),
    ]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("--checkpoint"));
}

#[test]
fn analyses_write_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let run_dir = tmp.path().join("run");
    assert!(run(&["train", "--config", p(&cfg), "--out", p(&run_dir)])
        .status
        .success());

    let cases: &[(&str, &[&str], &str)] = &[
        ("relevance", &["--checkpoint", p(&run_dir)], "end\\start"),
        ("weight_length", &["--checkpoint", p(&run_dir)], "length,"),
        (
            "weight_diversity",
            &["--checkpoint", p(&run_dir), "--fixed-length", "3"],
            "diversity,",
        ),
        ("gap", &["--config", p(&cfg)], "model,epoch"),
        (
            "robustness",
            &[
                "--config",
                p(&cfg),
                "--rates",
                "0,0.5",
                "--set",
                "max_epochs=2",
            ],
            "variant,parameter",
        ),
        (
            "oversmoothing",
            &[
                "--config",
                p(&cfg),
                "--hops",
                "1,2",
                "--set",
                "max_epochs=2",
            ],
            "variant,parameter",
        ),
        (
            "dimension",
            &[
                "--config",
                p(&cfg),
                "--dims",
                "4,8",
                "--set",
                "max_epochs=2",
            ],
            "variant,parameter",
        ),
    ];
    for (which, extra, header) in cases {
        let out = tmp.path().join(format!("an-{which}"));
        let mut args = vec!["analyze", which, "--out", p(&out)];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert!(o.status.success(), "{which}: {}", text(&o.stderr));
        let csv = std::fs::read_to_string(out.join(format!("{which}.csv"))).unwrap();
        assert!(csv.starts_with(header), "{which}: {csv}");
        assert!(csv.lines().count() >= 2, "{which}: {csv}");
    }
}
