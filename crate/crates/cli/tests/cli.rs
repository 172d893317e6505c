use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tnlogic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tnlogic"))
        .args(args)
        .env_remove("TNORM_LOGIC_SEED")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

const SMALL_DIGITS: &str = r#"{
  "task": "digits", "tnorm": "r-product", "lambda": 1.0,
  "n_labeled": 100, "n_pairs": 64, "seeds": [0, 1],
  "model": {"digit_hidden": [8], "operator_hidden": [8]},
  "optimizer": {"kind": "adam", "lr": 0.01, "batch_size": 32, "epochs": 2},
  "warm_start": {}, "property_repeats": 2
}"#;

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn help_exits_zero_everywhere() {
    for sub in ["", "consistency", "selfconsistency", "suite", "gradcheck", "train", "eval-properties"] {
        let mut args: Vec<&str> = sub.split_whitespace().collect();
        args.push("--help");
        let out = tnlogic(&args);
        assert_eq!(out.status.code(), Some(0), "{sub}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let cases: &[&[&str]] = &[
        &[],
        &["frobnicate"],
        &["consistency", "--formula", "A", "--tnorm", "s-godel", "--bogus"],
        &["consistency", "--formula", "A", "--tnorm", "nope"],
        &["consistency", "--formula", "A ->", "--tnorm", "s-godel"],
        &["consistency", "--formula", "A & B & C & D & E", "--tnorm", "s-godel", "--method", "grid"],
        &["suite", "--samples", "0"],
        &["gradcheck", "--tnorm", "r-godel"],
        &["train", "--config", "/nonexistent.json", "--out", "/tmp/x"],
    ];
    for args in cases {
        assert_eq!(tnlogic(args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn numerical_failures_exit_two() {
    let out = tnlogic(&["gradcheck", "--tnorm", "s-product", "--count", "3", "--tolerance", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "diverge.json",
        r#"{"n_labeled": 50, "n_pairs": 32, "seeds": [0],
            "optimizer": {"kind": "sgd", "lr": 1e300, "epochs": 2}}"#,
    );
    let out = tnlogic(&["train", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn worked_examples() {
    let v = json(&tnlogic(&["consistency", "--formula", "A -> A", "--tnorm", "s-product", "--method", "grid"]));
    assert!((v["value"].as_f64().unwrap() - 5.0 / 6.0).abs() < 1e-6);
    let v = json(&tnlogic(&["consistency", "--formula", "A -> A", "--tnorm", "r-godel", "--samples", "1000"]));
    assert_eq!(v["value"].as_f64(), Some(1.0));
    let v = json(&tnlogic(&["selfconsistency", "--conjunction", "2"]));
    assert_eq!(v["closed_form"]["exact"], "449/600");
}

#[test]
fn seed_comes_from_flag_then_env_then_default() {
    let args = ["consistency", "--formula", "A & B", "--tnorm", "s-product", "--samples", "5000"];
    let default = json(&tnlogic(&args));
    assert_eq!(default["method"]["seed"], 20);
    let env = Command::new(env!("CARGO_BIN_EXE_tnlogic"))
        .args(args)
        .env("TNORM_LOGIC_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(json(&env)["method"]["seed"], 7);
    let mut with_flag = args.to_vec();
    with_flag.extend(["--seed", "9"]);
    assert_eq!(json(&tnlogic(&with_flag))["method"]["seed"], 9);
}

#[test]
fn suite_csv_and_json_agree() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("t8.csv");
    let base = ["suite", "--samples", "20000", "--tnorms", "s-godel,r-product"];
    let mut args = base.to_vec();
    args.extend(["--out", csv_path.to_str().unwrap()]);
    json(&tnlogic(&args));
    let csv = fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().count(), 23);
    assert!(csv.starts_with("group,tautology,s-godel,s-godel_stderr,r-product,r-product_stderr"));
    let v = json(&tnlogic(&base));
    let first = &v["rows"][0];
    assert_eq!(first["tautology"], "P -> (Q -> P)");
    let cell = first["cells"]["s-godel"]["value"].as_f64().unwrap();
    let in_csv: f64 = csv.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((cell - in_csv).abs() < 1e-6);
}

#[test]
fn train_writes_results_and_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "exp.json", SMALL_DIGITS);
    let out_dir = dir.path().join("results");
    let v = json(&tnlogic(&["train", "--config", &cfg, "--out", out_dir.to_str().unwrap()]));
    assert!(v["summary"]["coherence_fraction"]["mean"].is_number());
    for f in ["results.json", "results.csv", "model_seed0.json", "model_seed1.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["seed", "0", "1", "mean", "std"]);

    let model = out_dir.join("model_seed1.json");
    let p = json(&tnlogic(&["eval-properties", "--config", &cfg, "--models", model.to_str().unwrap()]));
    let comm = p["properties"]["commutativity"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&comm));
}

#[test]
fn strict_lukasiewicz_is_flagged_by_train() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "luk.json", &SMALL_DIGITS.replace("r-product", "lukasiewicz"));
    let v = json(&tnlogic(&["train", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]));
    assert_eq!(v["zero_gradient_on_first_step"], true);
}

#[test]
fn stdout_is_independent_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "exp.json", SMALL_DIGITS);
    let out = dir.path().join("r");
    let out = out.to_str().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["consistency", "--formula", "(P -> Q) -> P", "--tnorm", "s-product", "--samples", "300000"],
        vec!["selfconsistency", "--formula", "A | B", "--tnorm", "lukasiewicz", "--method", "sobol", "--samples", "70000"],
        vec!["suite", "--samples", "70000", "--method", "mc"],
        vec!["gradcheck", "--tnorm", "s-godel", "--count", "5"],
        vec!["train", "--config", &cfg, "--out", out],
    ];
    for cmd in commands {
        let runs: Vec<Vec<u8>> = ["1", "3", "1"]
            .iter()
            .map(|w| {
                let mut args = cmd.clone();
                args.extend(["--workers", w, "--seed", "5"]);
                let o = tnlogic(&args);
                assert!(o.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&o.stderr));
                o.stdout
            })
            .collect();
        assert_eq!(runs[0], runs[1], "{cmd:?}");
        assert_eq!(runs[0], runs[2], "{cmd:?}");
    }
}
