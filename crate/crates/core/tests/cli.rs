use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ramanseg");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"
epochs = 1
batch_size = 4
[model]
backbone_channels = 4
prototype_depth = 4
addon_channels = 4
prototypes_per_class = 2
unet_base_channels = 2
"#;

/// Six 64x64 samples (three patients) and a tiny-model config.
fn dataset(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    ok(&["generate", "--out", p(&data), "--samples", "6", "--size", "64", "--seed", "3"]);
    let cfg = dir.join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    (data.join("manifest.json"), cfg)
}

fn csv_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn generate_is_deterministic_and_handles_zero_samples() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        ok(&["generate", "--out", p(d), "--samples", "6", "--size", "64", "--seed", "1"]);
    }
    let manifest = fs::read(a.join("manifest.json")).unwrap();
    assert_eq!(manifest, fs::read(b.join("manifest.json")).unwrap());
    let m: serde_json::Value = serde_json::from_slice(&manifest).unwrap();
    assert_eq!(m["samples"].as_array().unwrap().len(), 6);
    let first = m["samples"][0]["cube"].as_str().unwrap();
    assert_eq!(fs::read(a.join(first)).unwrap(), fs::read(b.join(first)).unwrap());
    assert_eq!(fs::read(a.join("run.json")).unwrap(), fs::read(b.join("run.json")).unwrap());

    let empty = dir.path().join("empty");
    ok(&["generate", "--out", p(&empty), "--samples", "0"]);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(empty.join("manifest.json")).unwrap()).unwrap();
    assert!(m["samples"].as_array().unwrap().is_empty());

    let bad = run(&["generate", "--out", p(&empty), "--overlap", "2"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn train_eval_and_ensembles() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, cfg) = dataset(dir.path());
    let one = dir.path().join("one");
    ok(&["--config", p(&cfg), "train", "--manifest", p(&manifest), "--out", p(&one), "--model", "ramanseg-pf"]);
    assert!(one.join("model.ckpt").exists());
    assert!(one.join("loss.svg").exists());
    assert!(!one.join("ensemble.json").exists());

    let five = dir.path().join("five");
    ok(&[
        "--config", p(&cfg), "train", "--manifest", p(&manifest), "--out", p(&five), "--model", "unet", "--folds", "2",
    ]);
    assert!(five.join("fold_0.ckpt").exists() && five.join("fold_1.ckpt").exists());
    let desc: serde_json::Value = serde_json::from_slice(&fs::read(five.join("ensemble.json")).unwrap()).unwrap();
    assert_eq!(desc["members"].as_array().unwrap().len(), 2);

    let m: serde_json::Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
    let tests = m["samples"].as_array().unwrap().iter().filter(|s| s["split"] == "test").count();
    let reports: Vec<Vec<u8>> = ["e1", "e2"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            ok(&[
                "eval",
                "--checkpoints",
                p(&five.join("ensemble.json")),
                "--manifest",
                p(&manifest),
                "--out",
                p(&out),
            ]);
            let report: serde_json::Value =
                serde_json::from_slice(&fs::read(out.join("eval_report.json")).unwrap()).unwrap();
            assert_eq!(report["samples"].as_array().unwrap().len(), tests);
            fs::read(out.join("eval_report.json")).unwrap()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn bad_config_key_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = dataset(dir.path());
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "epochz = 3\n").unwrap();
    let out = run(&["--config", p(&cfg), "train", "--manifest", p(&manifest), "--out", p(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
    let out = run(&["train", "--manifest", p(&manifest), "--out", "t", "--set", "alpha=-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bottleneck_interpret_and_sweep_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, cfg) = dataset(dir.path());
    let bn = dir.path().join("bn");
    ok(&["bottleneck", "--manifest", p(&manifest), "--out", p(&bn), "--sizes", "8,4,2"]);
    let csv = fs::read_to_string(bn.join("bottleneck.csv")).unwrap();
    assert_eq!(csv.lines().count() - 1, 4);
    assert!(csv.lines().nth(1).unwrap().ends_with(",1.000000"));

    let model = dir.path().join("model");
    ok(&["--config", p(&cfg), "train", "--manifest", p(&manifest), "--out", p(&model), "--model", "ramanseg"]);
    let ckpt = model.join("model.ckpt");
    let interp = |method: &str, extra: &[&str]| {
        let out = dir.path().join(method);
        let mut args = vec![
            "--config",
            p(&cfg),
            "interpret",
            "--method",
            method,
            "--checkpoints",
            p(&ckpt),
            "--manifest",
            p(&manifest),
            "--out",
            p(&out),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        out
    };
    let out = interp("proto-proportions", &[]);
    assert_eq!(csv_rows(&out.join("proto_proportions.csv")), 4);
    let out = interp("inertia", &["--k-max", "3"]);
    assert_eq!(csv_rows(&out.join("inertia.csv")), 3);
    let out = interp("ig", &["--steps", "4", "--target", "3,4,1"]);
    assert_eq!(csv_rows(&out.join("ig.csv")), 24);
    let out = interp("ablation", &["--target", "3,4,1", "--region-class", "0"]);
    assert_eq!(csv_rows(&out.join("ablation.csv")), 24);
    let out = interp("gradcam", &["--layer", "latent"]);
    assert!(out.join("gradcam.svg").exists());

    let unknown = run(&["interpret", "--method", "lime", "--checkpoints", p(&ckpt), "--manifest", p(&manifest), "--out", "x"]);
    assert_eq!(unknown.status.code(), Some(2));

    let sweep = dir.path().join("sweep");
    ok(&[
        "--config", p(&cfg), "sweep", "--manifest", p(&manifest), "--out", p(&sweep), "--model", "ramanseg-pf", "--param",
        "prototypes_per_class", "--values", "1,2",
    ]);
    let csv = fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("value,val_dice\n"));
    assert_eq!(csv.lines().count() - 1, 2);
}
