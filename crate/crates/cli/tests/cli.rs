use std::path::Path;
use std::process::{Command, Output};

fn emgf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emgf"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let o = emgf(args, dir);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

const SMALL: [&str; 8] = ["--preset", "synthetic", "--dim", "8", "--blocks", "2", "--epochs", "3"];

#[test]
fn synth_train_eval_anchors_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "d.jsonl", "--instances", "24"], d);
    assert!(d.join("d.jsonl.lexicon.tsv").exists());

    let prep = ok(&["prepare", "--data", "d.jsonl"], d);
    assert!(prep.contains("instances\t24"));
    assert!(prep.contains("with_kge\t24"), "{prep}");

    let mut args = vec!["train", "--data", "d.jsonl"];
    args.extend(SMALL);
    let out = ok(&args, d);
    assert!(out.contains("best epoch"), "{out}");
    let log = std::fs::read_to_string(d.join("metrics.tsv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let eval = ok(&["eval", "--checkpoint", "model.ckpt", "--data", "d.jsonl", "--json"], d);
    let report: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert!(report["accuracy"].as_f64().unwrap() >= 0.0);
    let total: u64 = report["confusion"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|r| r.as_array().unwrap())
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(total, 24);

    let anchors = ok(
        &["anchors", "--data", "d.jsonl", "--checkpoint", "model.ckpt", "--limit", "2"],
        d,
    );
    assert_eq!(anchors.matches("# instance").count(), 2);
    assert!(anchors.contains("pos "));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["gradcheck", "--preset", "synthetic", "--dim", "8", "--blocks", "2"], dir.path());
    assert!(out.contains("PASS"), "{out}");
}

#[test]
fn same_seed_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "d.jsonl", "--instances", "12"], d);
    for name in ["a", "b"] {
        let m = format!("{name}.tsv");
        let c = format!("{name}.ckpt");
        let mut args = vec!["train", "--data", "d.jsonl", "--metrics", &m, "--checkpoint", &c, "--dropout", "0.3"];
        args.extend(SMALL);
        ok(&args, d);
    }
    assert_eq!(std::fs::read(d.join("a.tsv")).unwrap(), std::fs::read(d.join("b.tsv")).unwrap());
    assert_eq!(std::fs::read(d.join("a.ckpt")).unwrap(), std::fs::read(d.join("b.ckpt")).unwrap());
}

#[test]
fn repeats_write_one_file_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "d.jsonl", "--instances", "9"], d);
    let mut args = vec!["train", "--data", "d.jsonl", "--repeats", "2"];
    args.extend(SMALL);
    let out = ok(&args, d);
    assert!(out.contains("mean over 2 runs"));
    for r in 0..2 {
        assert!(d.join(format!("metrics.tsv.r{r}")).exists());
        assert!(d.join(format!("model.ckpt.r{r}")).exists());
    }
}

#[test]
fn flags_override_config_file_which_overrides_preset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "d.jsonl", "--instances", "6"], d);
    std::fs::write(d.join("c.toml"), "lr = 0.5\nbeta = 0.3\n[model]\ndim = 4\n").unwrap();
    ok(
        &[
            "train", "--data", "d.jsonl", "--preset", "twitter", "--config", "c.toml", "--beta", "0.01",
            "--epochs", "1", "--blocks", "1", "--save-config", "resolved.toml",
        ],
        d,
    );
    let resolved: toml::Table = std::fs::read_to_string(d.join("resolved.toml")).unwrap().parse().unwrap();
    assert_eq!(resolved["lr"].as_float(), Some(0.5));
    assert_eq!(resolved["beta"].as_float(), Some(0.01));
    assert_eq!(resolved["epochs"].as_integer(), Some(1));
    assert_eq!(resolved["model"]["dim"].as_integer(), Some(4));
    // from the twitter preset
    assert_eq!(resolved["model"]["dep_layers"].as_integer(), Some(9));
    assert_eq!(resolved["model"]["sem_layers"].as_integer(), Some(1));
    assert_eq!(resolved["model"]["kge_dim"].as_integer(), Some(4));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| emgf(args, d).status.code();

    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["train", "--help"]), Some(0));
    assert_eq!(code(&[]), Some(1));
    assert_eq!(code(&["frobnicate"]), Some(1));
    assert_eq!(code(&["train", "--data", "x", "--preset", "nope"]), Some(1));

    ok(&["synth", "--out", "d.jsonl", "--instances", "3"], d);
    std::fs::write(d.join("bad.toml"), "no_such_key = 1\n").unwrap();
    assert_eq!(code(&["train", "--data", "d.jsonl", "--config", "bad.toml"]), Some(1));
    assert_eq!(code(&["train", "--data", "d.jsonl", "--heads", "3"]), Some(1));

    assert_eq!(code(&["prepare", "--data", "missing.jsonl"]), Some(2));
    std::fs::write(d.join("broken.jsonl"), "{\"tokens\": 3}\n").unwrap();
    assert_eq!(code(&["prepare", "--data", "broken.jsonl"]), Some(2));
    assert_eq!(code(&["eval", "--checkpoint", "missing.ckpt", "--data", "d.jsonl"]), Some(2));

    assert_eq!(
        code(&["train", "--data", "d.jsonl", "--lr", "1e300", "--epochs", "20", "--dim", "4", "--blocks", "1"]),
        Some(3)
    );
    assert_eq!(code(&["gradcheck", "--dim", "4", "--blocks", "1", "--tol", "1e-300"]), Some(3));
}
