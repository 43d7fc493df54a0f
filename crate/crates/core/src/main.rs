use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;

use hystereq::config::{Experiment, RunConfig};
use hystereq::dataset::{Channel, Dataset};
use hystereq::eval::{channel_nrmse, resimulate, resimulate_on, DiscoveredModel};
use hystereq::excitation::make_excitation;
use hystereq::io::{load_dataset, load_model, read_json, save_dataset, save_front, save_model, write_json};
use hystereq::learner::{Case, LearnResult, ObservationSpec};
use hystereq::pipeline::{self, matching_z0, Records};
use hystereq::report::{self, Figure};
use hystereq::simulate::IntegrateOptions;
use hystereq::{Error, Result};

#[derive(Parser)]
#[command(name = "hystereq", version, about = "Discover governing equations of hysteretic oscillators from data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training and test records of a configuration.
    Simulate(Common),
    /// Learn the internal variable and motion parameters.
    Learn(Common),
    /// Fix the gauge and run symbolic regression on the learned variables.
    Discover {
        #[command(flatten)]
        common: Common,
        /// Reuse a `learn.json` instead of learning again.
        #[arg(long)]
        learned: Option<PathBuf>,
    },
    /// Fit the sparse-regression baseline.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        learned: Option<PathBuf>,
    },
    /// Re-simulate a model file under a dataset's forcing or the configured excitation.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// CSV with `t,u` and optionally measured responses to compare against.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Initial state `x0,xdot0,z0`.
        #[arg(long, value_parser = parse_ic, allow_hyphen_values = true)]
        ic: Option<[f64; 3]>,
    },
    /// Score a model file on the configured training and test records.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Draw the response channels of dataset CSVs as SVG line plots.
    Plot {
        /// Datasets to overlay; the first is drawn solid.
        #[arg(required = true)]
        data: Vec<PathBuf>,
        #[arg(long, default_value = "x")]
        channel: String,
        #[arg(long, default_value = "plot.svg")]
        output: PathBuf,
    },
    /// Run a bundled experiment end to end and check its thresholds.
    Repro {
        #[arg(value_enum)]
        experiment: ExperimentArg,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON configuration; fields not given keep the preset's values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Signal-to-noise ratio in dB, or `inf` for noise-free data.
    #[arg(long, value_parser = parse_noise)]
    noise: Option<Noise>,
    #[arg(long, value_enum)]
    case: Option<CaseArg>,
    /// Observed channels as a comma list, e.g. `x,xddot`.
    #[arg(long)]
    obs: Option<String>,
    /// Parent directory of the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "HYSTEREQ_WORKERS")]
    workers: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Noise(Option<f64>);

fn parse_noise(s: &str) -> std::result::Result<Noise, String> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(Noise(None));
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Noise(Some(v))),
        _ => Err(format!("expected `inf` or a number of dB, got `{s}`")),
    }
}

fn parse_ic(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|v| format!("expected three values x0,xdot0,z0, got {}", v.len()))
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    Hysteresis,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Benchmark,
    Complex,
    #[value(name = "complex_full", alias = "complex-full")]
    ComplexFull,
}

impl From<ExperimentArg> for Experiment {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::Benchmark => Experiment::Benchmark,
            ExperimentArg::Complex => Experiment::Complex,
            ExperimentArg::ComplexFull => Experiment::ComplexFull,
        }
    }
}

/// Process exit codes.
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_ACCEPTANCE: u8 = 4;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_CONFIG })
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate(common) => {
            let (cfg, dir) = prepare(&common, None, "simulate")?;
            let records = pipeline::generate(&cfg).map_err(|e| e.in_stage("simulate"))?;
            save_records(&dir, &records)?;
            println!("{}", dir.display());
        }
        Command::Learn(common) => {
            let (cfg, dir) = prepare(&common, None, "learn")?;
            let records = pipeline::generate(&cfg).map_err(|e| e.in_stage("simulate"))?;
            let learned = pipeline::learn(&cfg, &records).map_err(|e| e.in_stage("learn"))?;
            write_json(&dir.join("learn.json"), &learned)?;
            println!("loss {:.6e} -> {:.6e} after {} iterations", learned.initial_loss, learned.best_loss, learned.iterations);
            println!("{}", dir.display());
        }
        Command::Discover { common, learned } => {
            let (cfg, dir) = prepare(&common, None, "discover")?;
            let (records, learned) = records_and_learned(&cfg, learned.as_deref())?;
            let d = pipeline::discover_model(&cfg, &records, &learned).map_err(|e| e.in_stage("discover"))?;
            save_model(&dir.join("model_sr.json"), &d.model)?;
            save_front(&dir.join("front_link.csv"), &d.link_front)?;
            if let Some(f) = &d.motion_front {
                save_front(&dir.join("front_motion.csv"), f)?;
            }
            write_json(&dir.join("gauge.json"), &d.gauge)?;
            print_model(&d.model);
            println!("{}", dir.display());
        }
        Command::Baseline { common, learned } => {
            let (cfg, dir) = prepare(&common, None, "baseline")?;
            let (records, learned) = records_and_learned(&cfg, learned.as_deref())?;
            let d = pipeline::discover_model(&cfg, &records, &learned).map_err(|e| e.in_stage("discover"))?;
            let b = pipeline::baseline(&cfg, &records, &learned, &d).map_err(|e| e.in_stage("baseline"))?;
            save_model(&dir.join("model_sindy.json"), &b.model)?;
            let (th, err): (Vec<f64>, Vec<f64>) = b.sweep.iter().copied().unzip();
            hystereq::io::write_columns(&dir.join("sindy_sweep.csv"), &["threshold", "holdout_nrmse_x"], &[&th, &err])?;
            println!("threshold {}", b.threshold);
            print_model(&b.model);
            println!("{}", dir.display());
        }
        Command::Predict { common, model, data, ic } => {
            let (cfg, dir) = prepare(&common, None, "predict")?;
            let model = load_model(&model)?;
            predict(&cfg, &dir, &model, data.as_deref(), ic)?;
            println!("{}", dir.display());
        }
        Command::Evaluate { common, model } => {
            let (cfg, dir) = prepare(&common, None, "evaluate")?;
            let model = load_model(&model)?;
            let records = pipeline::generate(&cfg).map_err(|e| e.in_stage("simulate"))?;
            let z = starting_z(&model, &records)?;
            let (rows, _) = pipeline::evaluate("model", &model, &records, &z).map_err(|e| e.in_stage("evaluate"))?;
            let text = report::metrics_csv(&rows);
            std::fs::write(dir.join("metrics.csv"), &text).map_err(|e| Error::io(&dir, e))?;
            print!("{text}");
            println!("{}", dir.display());
        }
        Command::Plot { data, channel, output } => {
            let chan = Channel::parse(&channel).ok_or_else(|| Error::Config(format!("unknown channel `{channel}`")))?;
            let mut fig = Figure::new(channel.clone(), "t", channel.clone());
            for path in &data {
                let ds = load_dataset(path, false)?;
                let v = ds.require(chan)?;
                let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
                fig.add(label, &ds.t, v);
            }
            if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(&output, fig.render()).map_err(|e| Error::io(&output, e))?;
            println!("{}", output.display());
        }
        Command::Repro { experiment, common } => {
            let (cfg, dir) = prepare(&common, Some(experiment.into()), "repro")?;
            let outcome = match pipeline::run(&cfg) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("run directory: {}", dir.display());
                    return Err(e);
                }
            };
            report::write_run(&dir, &outcome)?;
            print_model(&outcome.discovery.model);
            if let Some(b) = &outcome.baseline {
                println!("baseline:");
                print_model(&b.model);
            }
            print!("{}", report::metrics_csv(&outcome.metrics));
            let checks = report::acceptance_checks(&outcome);
            for c in &checks {
                println!("{} {}: {} (limit {})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.limit);
            }
            println!("{}", dir.display());
            if checks.iter().any(|c| !c.passed) {
                return Ok(ExitCode::from(EXIT_ACCEPTANCE));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Resolves the configuration, starts the worker pool and creates the run
/// directory `<out>/<UTC timestamp>-<command>-<digest>`.
fn prepare(common: &Common, experiment: Option<Experiment>, command: &str) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match (&common.config, experiment) {
        (Some(path), exp) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut value: serde_json::Value = hystereq::io::parse_json(&text)?;
            if let (Some(exp), serde_json::Value::Object(map)) = (exp, &mut value) {
                match map.get("experiment").and_then(|v| v.as_str()) {
                    Some(name) if Experiment::parse(name) != Some(exp) => {
                        return Err(Error::Config(format!("config is for `{name}`, not `{}`", exp.name())));
                    }
                    _ => {
                        map.insert("experiment".into(), exp.name().into());
                    }
                }
            }
            RunConfig::from_json(&value.to_string())?
        }
        (None, exp) => RunConfig::preset(exp.unwrap_or(Experiment::Benchmark)),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(Noise(snr)) = common.noise {
        cfg = cfg.with_noise(snr);
    }
    if let Some(case) = common.case {
        cfg.case = match case {
            CaseArg::Hysteresis => Case::HysteresisDiscovery,
            CaseArg::Full => Case::FullEquationDiscovery,
        };
    }
    if let Some(obs) = &common.obs {
        cfg.observation = ObservationSpec::parse(obs)?;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        // a second initialization (tests calling in-process) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
    let base = format!("{stamp}-{command}-{}", cfg.short_digest());
    let mut dir = cfg.out_dir.join(&base);
    let mut k = 1;
    while dir.exists() {
        dir = cfg.out_dir.join(format!("{base}-{k}"));
        k += 1;
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let meta = serde_json::json!({
        "command": command,
        "started": stamp,
        "version": env!("CARGO_PKG_VERSION"),
        "config_digest": cfg.digest(),
    });
    write_json(&dir.join("run.json"), &meta)?;
    let mut cfg_json = serde_json::to_value(&cfg)?;
    if let serde_json::Value::Object(map) = &mut cfg_json {
        map.insert("digest".into(), cfg.digest().into());
    }
    write_json(&dir.join("config.json"), &cfg_json)?;
    Ok((cfg, dir))
}

fn records_and_learned(cfg: &RunConfig, learned: Option<&Path>) -> Result<(Records, LearnResult)> {
    let records = pipeline::generate(cfg).map_err(|e| e.in_stage("simulate"))?;
    let learned = match learned {
        Some(p) => read_json(p)?,
        None => pipeline::learn(cfg, &records).map_err(|e| e.in_stage("learn"))?,
    };
    Ok((records, learned))
}

fn save_records(dir: &Path, records: &Records) -> Result<()> {
    for (i, (obs, truth)) in records.train_observed.iter().zip(&records.train_truth).enumerate() {
        save_dataset(&dir.join(format!("train_{i}.csv")), obs)?;
        save_dataset(&dir.join(format!("train_{i}_truth.csv")), truth)?;
    }
    if let Some(s) = &records.small {
        save_dataset(&dir.join("small.csv"), s)?;
    }
    for (i, ds) in records.test_ic.iter().enumerate() {
        save_dataset(&dir.join(format!("test_ic_{i}.csv")), ds)?;
    }
    if let Some(ds) = &records.test_excitation {
        save_dataset(&dir.join("test_excitation.csv"), ds)?;
    }
    Ok(())
}

fn print_model(model: &DiscoveredModel) {
    println!("{}", report::motion_equation(model, 6));
    println!("{}", report::link_equation(model, 6));
}

/// Initial `z` per training record for scoring a stored model: the value
/// that reproduces the first measured acceleration.
fn starting_z(model: &DiscoveredModel, records: &Records) -> Result<Vec<Vec<f64>>> {
    records
        .train_observed
        .iter()
        .map(|ds| {
            let (x, v, a) = (ds.require(Channel::X)?[0], ds.require(Channel::Xdot)?[0], ds.require(Channel::Xddot)?[0]);
            Ok(vec![matching_z0(model, x, v, a, ds.u[0], 1.0)])
        })
        .collect()
}

fn predict(cfg: &RunConfig, dir: &Path, model: &DiscoveredModel, data: Option<&Path>, ic: Option<[f64; 3]>) -> Result<()> {
    let initial = match ic {
        Some(v) => v,
        None => {
            warn!("no initial conditions given; starting from (0, 0, 0)");
            [0.0; 3]
        }
    };
    let opts = IntegrateOptions::default();
    let (pred, truth): (Dataset, Option<Dataset>) = match data {
        Some(path) => {
            let ds = load_dataset(path, false)?;
            (resimulate_on(model, &ds, initial, opts)?, Some(ds))
        }
        None => {
            let spec = cfg.test_excitation.as_ref().unwrap_or(&cfg.excitation);
            (resimulate(model, &make_excitation(spec)?, initial, opts)?, None)
        }
    };
    save_dataset(&dir.join("prediction.csv"), &pred)?;
    if let Some(truth) = truth {
        if [Channel::X, Channel::Xdot, Channel::Xddot].iter().any(|c| truth.channel(*c).is_some()) {
            let m = channel_nrmse(&pred, &truth, 0, truth.len())?;
            let rows = [pipeline::MetricRow {
                method: "model".into(),
                dataset: "data".into(),
                nrmse: m,
            }];
            let text = report::metrics_csv(&rows);
            std::fs::write(dir.join("metrics.csv"), &text).map_err(|e| Error::io(dir, e))?;
            print!("{text}");
        }
    }
    Ok(())
}
