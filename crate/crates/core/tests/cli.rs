use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hystereq"));
    c.env_remove("HYSTEREQ_WORKERS").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn hystereq")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The run directory is printed on the last stdout line.
fn run_dir(o: &Output) -> PathBuf {
    PathBuf::from(stdout(o).lines().last().expect("no output").trim())
}

const BENCHMARK_MODEL: &str = r#"{
  "version": 1,
  "motion": {"kind": "physical", "m": 2.0, "c": 10.0, "k": 50000.0, "alpha": 1.0, "stiffness_power": 1},
  "link": "(- (- (* 50000.0 xdot) (* 800.0 (* (abs xdot) z))) (* -1100.0 (* xdot (abs z))))"
}"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn help_lists_every_flag() {
    let o = run(&["learn", "--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for flag in ["--config", "--seed", "--noise", "--case", "--obs", "--out", "--workers"] {
        assert!(text.contains(flag), "missing {flag} in\n{text}");
    }
    let text = stdout(&run(&["--help"]));
    for cmd in ["simulate", "learn", "discover", "baseline", "predict", "evaluate", "plot", "repro"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn unknown_flag_is_rejected() {
    let o = run(&["simulate", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--frobnicate"));
}

#[test]
fn bad_noise_value_is_rejected() {
    let o = run(&["simulate", "--noise", "loud"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.json", r#"{"train_fraction": 2.0}"#);
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("train_fraction"));

    let cfg = write(tmp.path(), "broken.json", "{\"seed\": ");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn repro_refuses_a_config_for_another_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"experiment": "complex"}"#);
    let o = run(&["repro", "benchmark", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_a_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--out", tmp.path().to_str().unwrap(), "--seed", "3", "--noise", "20", "--workers", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = run_dir(&o);
    assert!(dir.starts_with(tmp.path()));
    let name = dir.file_name().unwrap().to_str().unwrap();
    assert!(name.contains("-simulate-"), "{name}");
    for f in ["run.json", "config.json", "train_0.csv", "train_0_truth.csv", "test_excitation.csv"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 3);
    assert_eq!(cfg["noise_snr_db"], 20.0);
    assert!(cfg["digest"].is_string());
    // the observed record carries noise, the truth does not
    let obs = std::fs::read_to_string(dir.join("train_0.csv")).unwrap();
    let truth = std::fs::read_to_string(dir.join("train_0_truth.csv")).unwrap();
    assert_ne!(obs, truth);
}

#[test]
fn predict_defaults_to_rest_and_warns() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write(tmp.path(), "m.json", BENCHMARK_MODEL);
    let o = run(&["predict", "--model", model.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("(0, 0, 0)"), "{}", stderr(&o));
    assert!(run_dir(&o).join("prediction.csv").exists());
}

#[test]
fn predict_against_simulated_data_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = run(&["simulate", "--out", out]);
    assert!(o.status.success());
    let truth = run_dir(&o).join("test_excitation.csv");
    let model = write(tmp.path(), "m.json", BENCHMARK_MODEL);
    let o = run(&["predict", "--model", model.to_str().unwrap(), "--data", truth.to_str().unwrap(), "--ic", "0,0,0", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(run_dir(&o).join("metrics.csv")).unwrap();
    let x_row = metrics.lines().find(|l| l.starts_with("x,")).unwrap();
    let err: f64 = x_row.split(',').nth(1).unwrap().parse().unwrap();
    assert!(err < 1e-6, "{metrics}");
}

#[test]
fn diverging_model_exits_with_numerical_code() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write(
        tmp.path(),
        "m.json",
        r#"{"version": 1, "motion": {"kind": "physical", "m": 1.0, "c": 0.0, "k": 1.0, "alpha": 1.0, "stiffness_power": 1}, "link": "(* 1000.0 z)"}"#,
    );
    let o = run(&["predict", "--model", model.to_str().unwrap(), "--ic", "0,0,1", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverge"), "{}", stderr(&o));
}

#[test]
fn unknown_model_version_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write(tmp.path(), "m.json", &BENCHMARK_MODEL.replace("\"version\": 1", "\"version\": 99"));
    let o = run(&["predict", "--model", model.to_str().unwrap(), "--ic", "0,0,0", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn plot_renders_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--out", tmp.path().to_str().unwrap()]);
    let dir = run_dir(&o);
    let svg = tmp.path().join("figs").join("x.svg");
    let o = run(&[
        "plot",
        dir.join("train_0_truth.csv").to_str().unwrap(),
        dir.join("train_0.csv").to_str().unwrap(),
        "--channel",
        "xdot",
        "--output",
        svg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") || text.starts_with("<?xml"));
    assert!(text.contains("train_0_truth"));
}

#[test]
fn evaluate_scores_the_true_model_near_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write(tmp.path(), "m.json", BENCHMARK_MODEL);
    let o = run(&["evaluate", "--model", model.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(run_dir(&o).join("metrics.csv")).unwrap();
    let x_row: Vec<f64> = metrics
        .lines()
        .find(|l| l.starts_with("x,"))
        .unwrap()
        .split(',')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(!x_row.is_empty());
    for v in x_row {
        assert!(v < 1e-3, "{metrics}");
    }
}
