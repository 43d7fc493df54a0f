//! End-to-end recipes: simulate, learn, fix the gauge, discover, re-simulate
//! and score.
//!
//! Each stage is a separate function so the command-line tool can run and
//! persist them one at a time; [`run`] chains them.

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Selection, SystemSpec};
use crate::dataset::{Channel, Dataset};
use crate::error::{Error, Result};
use crate::eval::{channel_nrmse, link_vars, motion_vars, resimulate_on, ChannelNrmse, DiscoveredModel, MotionLaw, Provenance};
use crate::excitation::make_excitation;
use crate::gauge::{mask, physical_z, refine_network, refine_physical, NetworkGauge, PhysicalGauge};
use crate::learner::{fit, Case, LearnResult, LearnedTrajectory, Theta};
use crate::numeric::{correlation, lowpass_zero_phase, rms, savgol};
use crate::simulate::{add_noise, simulate, IntegrateOptions};
use crate::sindy::{build_library, stlsq, Library, LibraryKind, SparseFit};
use crate::symreg::{discover, select_model, Expr, ParetoFront, SRConfig};

/// Ground truth and observations for one run.
#[derive(Clone, Debug)]
pub struct Records {
    /// Full-length noise-free training records.
    pub train_truth: Vec<Dataset>,
    /// The same records as observed (noise added when configured).
    pub train_observed: Vec<Dataset>,
    /// Samples of each training record used for learning; the rest of the
    /// record is the first test window.
    pub learn_len: Vec<usize>,
    /// Initial states `[x0, ẋ0, z0]` of the training records.
    pub train_initial: Vec<[f64; 3]>,
    /// Observed low-amplitude record for the linear initialization.
    pub small: Option<Dataset>,
    /// Noise-free records from held-out initial conditions.
    pub test_ic: Vec<Dataset>,
    /// Noise-free record under the second test excitation.
    pub test_excitation: Option<Dataset>,
}

impl Records {
    /// Learning windows of the observed records.
    pub fn learning_windows(&self) -> Vec<Dataset> {
        self.train_observed.iter().zip(&self.learn_len).map(|(d, &n)| d.slice(0, n)).collect()
    }
}

/// Zero-phase low-pass of the response channels.
pub fn prefilter(ds: &Dataset, cutoff: f64) -> Dataset {
    let mut out = ds.clone();
    let fs = 1.0 / ds.dt();
    for c in Channel::ALL {
        if let Some(v) = out.channel_mut(c).as_mut() {
            *v = lowpass_zero_phase(v, fs, cutoff);
        }
    }
    out
}

fn cut(n: usize, fraction: f64) -> usize {
    if fraction >= 1.0 {
        n
    } else {
        ((n as f64 * fraction).floor() as usize).clamp(3, n)
    }
}

/// Simulates (or loads) the records a configuration asks for.
pub fn generate(cfg: &RunConfig) -> Result<Records> {
    cfg.validate()?;
    match &cfg.system {
        SystemSpec::Csv { path } => {
            let ds = crate::io::load_dataset(path, true)?;
            let n = ds.len();
            let x0 = ds.require(Channel::X)?[0];
            let v0 = ds.require(Channel::Xdot)?[0];
            Ok(Records {
                train_truth: vec![ds.clone()],
                learn_len: vec![cut(n, cfg.train_fraction)],
                train_observed: vec![ds],
                train_initial: vec![[x0, v0, 0.0]],
                small: None,
                test_ic: Vec::new(),
                test_excitation: None,
            })
        }
        SystemSpec::Params { params } => {
            let exc = make_excitation(&cfg.excitation)?;
            let observe = |ds: &Dataset, stream: usize| -> Result<Dataset> {
                match cfg.noise_snr_db {
                    Some(snr) => add_noise(ds, snr, cfg.noise_seed(stream)),
                    None => Ok(ds.clone()),
                }
            };
            let mut train_truth = Vec::new();
            let mut train_observed = Vec::new();
            let mut train_initial = Vec::new();
            for (i, ic) in cfg.initial_conditions.iter().enumerate() {
                let ds = simulate(params, &exc, ic[0], ic[1], 0.0)?;
                train_observed.push(observe(&ds, i)?);
                train_initial.push([ic[0], ic[1], 0.0]);
                train_truth.push(ds);
            }
            let small = match &cfg.small_excitation {
                Some(spec) => Some(observe(&simulate(params, &make_excitation(spec)?, 0.0, 0.0, 0.0)?, 999)?),
                None => None,
            };
            let test_ic = cfg
                .test_initial_conditions
                .iter()
                .map(|ic| simulate(params, &exc, ic[0], ic[1], 0.0))
                .collect::<Result<Vec<_>>>()?;
            let test_excitation = match &cfg.test_excitation {
                Some(spec) => Some(simulate(params, &make_excitation(spec)?, 0.0, 0.0, 0.0)?),
                None => None,
            };
            Ok(Records {
                learn_len: train_truth.iter().map(|d| cut(d.len(), cfg.train_fraction)).collect(),
                train_truth,
                train_observed,
                train_initial,
                small,
                test_ic,
                test_excitation,
            })
        }
    }
}

/// Learner options with the run seed folded in.
pub fn learner_options(cfg: &RunConfig) -> crate::learner::LearnOptions {
    let mut o = cfg.learner.clone();
    o.seed = o.seed.wrapping_add(cfg.seed.wrapping_mul(7919));
    o
}

/// Seeds of the symbolic-regression restarts.
pub fn sr_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.sr_restarts as u64)
        .map(|r| cfg.sr.seed.wrapping_add(cfg.seed.wrapping_mul(1000)).wrapping_add(r))
        .collect()
}

pub fn learn(cfg: &RunConfig, records: &Records) -> Result<LearnResult> {
    let mut windows = records.learning_windows();
    let mut small = records.small.clone();
    if let Some(fc) = cfg.prefilter_hz {
        windows = windows.iter().map(|d| prefilter(d, fc)).collect();
        small = small.map(|d| prefilter(&d, fc));
    }
    fit(&windows, small.as_ref(), cfg.case, &cfg.observation, &learner_options(cfg))
}

/// How the learned internal variable was pinned down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GaugeResult {
    /// `α = 1` and refined `(m, c, k)`.
    Physical { gauge: PhysicalGauge, stiffness_power: u8 },
    /// Kinematic shift of a network-paired `z`.
    Network { gauge: NetworkGauge },
}

/// Gauge-fixed internal variable of each learned trajectory.
pub fn fix_gauge(cfg: &RunConfig, learned: &LearnResult) -> Result<(GaugeResult, Vec<Vec<f64>>)> {
    match &learned.theta {
        Theta::Physical {
            m,
            c,
            k,
            stiffness_power,
            ..
        } => {
            let g = refine_physical(&learned.trajectories, *m, *c, *k, *stiffness_power, &cfg.gauge)?;
            let z = learned
                .trajectories
                .iter()
                .map(|tr| physical_z(tr, g.m, g.c, g.k, *stiffness_power))
                .collect();
            Ok((
                GaugeResult::Physical {
                    gauge: g,
                    stiffness_power: *stiffness_power,
                },
                z,
            ))
        }
        Theta::Network { .. } => {
            let g = refine_network(&learned.trajectories, &cfg.gauge)?;
            let z = learned.trajectories.iter().map(|tr| g.apply(tr)).collect();
            Ok((GaugeResult::Network { gauge: g }, z))
        }
    }
}

/// Output of the discovery stage.
#[derive(Clone, Debug)]
pub struct Discovery {
    pub gauge: GaugeResult,
    /// Gauge-fixed internal variable per training record.
    pub z: Vec<Vec<f64>>,
    pub link_front: ParetoFront,
    pub motion_front: Option<ParetoFront>,
    pub model: DiscoveredModel,
}

/// Rows for the link regression: `(ẋ, z, ż)` with `z` and `ż` from the
/// configured smoothing, away from sign changes of `ẋ` and `z`.
fn link_rows(cfg: &RunConfig, trajs: &[LearnedTrajectory], z: &[Vec<f64>], fraction: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mut v, mut zz, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (tr, z) in trajs.iter().zip(z) {
        let dt = tr.t[1] - tr.t[0];
        let h = cfg.gauge.link_smoothing;
        let zd = savgol(z, dt, h, 3, 1);
        let zs = savgol(z, dt, h, 3, 0);
        let z = &zs;
        let keep = mask(&[&tr.xdot_pred, z], &cfg.gauge);
        let end = cut(z.len(), fraction);
        for i in (0..end).filter(|&i| keep[i]) {
            v.push(tr.xdot_pred[i]);
            zz.push(z[i]);
            y.push(zd[i]);
        }
    }
    (v, zz, y)
}

/// Rows for the motion regression: `(x, ẋ, z, u)` and `ẍ`.
fn motion_rows(cfg: &RunConfig, trajs: &[LearnedTrajectory], z: &[Vec<f64>], fraction: f64) -> ([Vec<f64>; 4], Vec<f64>) {
    let mut cols: [Vec<f64>; 4] = Default::default();
    let mut y = Vec::new();
    for (tr, z) in trajs.iter().zip(z) {
        let n = tr.t.len();
        let e = cfg.gauge.edge.min(n / 2);
        let end = cut(n, fraction).min(n - e);
        for i in e..end {
            cols[0].push(tr.x_pred[i]);
            cols[1].push(tr.xdot_pred[i]);
            cols[2].push(z[i]);
            cols[3].push(tr.u[i]);
            y.push(tr.xddot_pred[i]);
        }
    }
    (cols, y)
}

/// Runs every seeded restart and merges the fronts.
fn discover_merged(target: &[f64], features: &[(&str, &[f64])], cfg: &SRConfig, seeds: &[u64]) -> Result<ParetoFront> {
    let mut vars = None;
    let mut members = Vec::new();
    for &seed in seeds {
        let c = SRConfig { seed, ..cfg.clone() };
        let f = discover(target, features, &c)?;
        vars.get_or_insert(f.vars);
        members.extend(f.members);
    }
    let vars = vars.ok_or(Error::NoViableExpression)?;
    Ok(ParetoFront::from_candidates(vars, members))
}

/// Gauge fixing and symbolic regression of the link law (and, for full
/// equation discovery, the motion law).
pub fn discover_model(cfg: &RunConfig, records: &Records, learned: &LearnResult) -> Result<Discovery> {
    let (gauge, z) = fix_gauge(cfg, learned).map_err(|e| e.in_stage("gauge"))?;
    let seeds = sr_seeds(cfg);
    let trajs = &learned.trajectories;

    let (v, zz, y) = link_rows(cfg, trajs, &z, 1.0);
    let link_front = discover_merged(&y, &[("xdot", &v), ("z", &zz)], &cfg.sr, &seeds)?;

    let (physical, motion_front) = match &gauge {
        GaugeResult::Physical { gauge: g, stiffness_power } => (
            Some(MotionLaw::Physical {
                m: g.m,
                c: g.c,
                k: g.k,
                alpha: 1.0,
                stiffness_power: *stiffness_power,
            }),
            None,
        ),
        GaugeResult::Network { .. } => {
            let (cols, y) = motion_rows(cfg, trajs, &z, 1.0);
            let features: Vec<(&str, &[f64])> = ["x", "xdot", "z", "u"].iter().zip(&cols).map(|(n, c)| (*n, c.as_slice())).collect();
            (None, Some(discover_merged(&y, &features, &cfg.sr, &seeds)?))
        }
    };
    let provenance = Provenance {
        case: Some(learned.case),
        seeds: std::iter::once(learned.options.seed).chain(seeds).collect(),
        config_digest: Some(cfg.digest()),
    };
    let motions: Vec<(usize, MotionLaw)> = match (&physical, &motion_front) {
        (Some(law), _) => vec![(0, law.clone())],
        (None, Some(front)) => match cfg.selection {
            Selection::Knee => select_model(front).map(|m| (m.complexity, MotionLaw::Symbolic(m.expr.clone()))).into_iter().collect(),
            Selection::Resimulation { .. } => front.members.iter().map(|m| (m.complexity, MotionLaw::Symbolic(m.expr.clone()))).collect(),
        },
        (None, None) => unreachable!("network gauge always has a motion front"),
    };
    let links: Vec<(usize, Expr)> = match cfg.selection {
        Selection::Knee => select_model(&link_front).map(|m| (m.complexity, m.expr.clone())).into_iter().collect(),
        Selection::Resimulation { .. } => link_front.members.iter().map(|m| (m.complexity, m.expr.clone())).collect(),
    };
    let mut candidates = Vec::new();
    for (cm, motion) in &motions {
        for (cl, link) in &links {
            let model = DiscoveredModel {
                motion: motion.clone(),
                link: link.clone(),
                provenance: provenance.clone(),
            };
            if model.validate().is_ok() {
                candidates.push((cm + cl, model));
            }
        }
    }
    let model = match cfg.selection {
        Selection::Knee => candidates.into_iter().next().map(|(_, m)| m),
        Selection::Resimulation { tolerance, floor } => {
            let scored: Vec<(usize, f64, DiscoveredModel)> = candidates.into_iter().map(|(c, m)| (c, training_fit_error(&m, records, &z), m)).collect();
            let best = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
            if best.is_finite() {
                scored.into_iter().filter(|s| s.1 <= best * (1.0 + tolerance) + floor).min_by_key(|s| s.0).map(|s| s.2)
            } else {
                None
            }
        }
    }
    .ok_or(Error::NoViableExpression)?;
    debug_assert_eq!(link_front.vars, link_vars());
    debug_assert!(motion_front.as_ref().map_or(true, |f| f.vars == motion_vars()));
    Ok(Discovery {
        gauge,
        z,
        link_front,
        motion_front,
        model,
    })
}

/// Initial internal variable matching the measured acceleration at the
/// first sample: solves `f(x0, ẋ0, z, u0) = ẍ0` by the secant method.
pub fn matching_z0(model: &DiscoveredModel, x0: f64, v0: f64, a0: f64, u0: f64, scale: f64) -> f64 {
    let g = |z: f64| model.motion.accel(x0, v0, z, u0) - a0;
    let (mut z_prev, mut z) = (0.0, scale.abs().max(1e-6));
    let (mut g_prev, mut gz) = (g(z_prev), g(z));
    for _ in 0..60 {
        if !(gz.is_finite() && g_prev.is_finite()) || gz == g_prev {
            break;
        }
        let next = z - gz * (z - z_prev) / (gz - g_prev);
        z_prev = z;
        g_prev = gz;
        z = next;
        gz = g(z);
        if gz.abs() <= 1e-12 * a0.abs().max(1e-12) {
            break;
        }
    }
    if z.is_finite() && gz.abs() < g(0.0).abs() {
        z
    } else {
        0.0
    }
}

/// The sparse-regression baseline.
#[derive(Clone, Debug)]
pub struct Baseline {
    pub threshold: f64,
    pub link: SparseFit,
    pub link_library: Library,
    pub motion: Option<(SparseFit, Library)>,
    pub model: DiscoveredModel,
    /// `(threshold, held-out displacement NRMSE)` for every candidate.
    pub sweep: Vec<(f64, f64)>,
}

fn baseline_fit(cfg: &RunConfig, learned: &LearnResult, d: &Discovery, threshold: f64, fraction: f64) -> Result<(SparseFit, Library, Option<(SparseFit, Library)>, DiscoveredModel)> {
    let trajs = &learned.trajectories;
    let (v, zz, y) = link_rows(cfg, trajs, &d.z, fraction);
    let lib = build_library(LibraryKind::HystereticAbs, &[&v, &zz])?;
    let link = stlsq(&lib.column_refs(), &y, threshold, cfg.sindy.ridge)?;
    let mut motion = None;
    let law = match &d.model.motion {
        MotionLaw::Physical { .. } => d.model.motion.clone(),
        MotionLaw::Symbolic(_) => {
            let (cols, y) = motion_rows(cfg, trajs, &d.z, fraction);
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            let mlib = build_library(LibraryKind::MotionCubic, &refs)?;
            let fit = stlsq(&mlib.column_refs(), &y, threshold, cfg.sindy.ridge)?;
            let e = fit.to_expr(&mlib);
            motion = Some((fit, mlib));
            MotionLaw::Symbolic(e)
        }
    };
    let model = DiscoveredModel {
        motion: law,
        link: link.to_expr(&lib),
        provenance: d.model.provenance.clone(),
    };
    Ok((link, lib, motion, model))
}

/// Mean closed-loop NRMSE of `model` over the observed channels of the
/// learning windows, started from the training initial states.
pub fn training_fit_error(model: &DiscoveredModel, records: &Records, z: &[Vec<f64>]) -> f64 {
    let inits = training_initial(records, z);
    let windows = records.learning_windows();
    let total: f64 = windows.iter().zip(&inits).map(|(w, init)| window_fit_error(model, w, *init, 0)).sum();
    total / windows.len() as f64
}

/// Closed-loop NRMSE averaged over the channels present in `window`,
/// scored from sample `start` on.
fn window_fit_error(model: &DiscoveredModel, window: &Dataset, init: [f64; 3], start: usize) -> f64 {
    let e = resimulate_on(model, window, init, IntegrateOptions::default())
        .and_then(|p| channel_nrmse(&p, window, start, window.len()))
        .map(|c| {
            let v: Vec<f64> = [c.x, c.xdot, c.xddot].into_iter().flatten().collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        })
        .unwrap_or(f64::INFINITY);
    if e.is_finite() {
        e
    } else {
        f64::INFINITY
    }
}

/// Training initial states in the gauge of `z`.
fn training_initial(records: &Records, z: &[Vec<f64>]) -> Vec<[f64; 3]> {
    records.train_initial.iter().zip(z).map(|(s, z)| [s[0], s[1], z[0]]).collect()
}

/// Sweeps the STLSQ threshold, fitting on the leading part of each
/// training record and scoring the closed-loop displacement on the
/// held-out tail, then refits on all rows with the winner.
pub fn baseline(cfg: &RunConfig, records: &Records, learned: &LearnResult, d: &Discovery) -> Result<Baseline> {
    let keep = 1.0 - cfg.sindy.holdout_fraction;
    let inits = training_initial(records, &d.z);
    let mut sweep = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for &th in &cfg.sindy.thresholds {
        let score = match baseline_fit(cfg, learned, d, th, keep) {
            Ok((link, _, motion, model)) if !link.is_empty() && motion.as_ref().map_or(true, |(f, _)| !f.is_empty()) => {
                let windows = records.learning_windows();
                let total: f64 = windows
                    .iter()
                    .zip(&inits)
                    .map(|(w, init)| window_fit_error(&model, w, *init, cut(w.len(), keep).min(w.len() - 2)))
                    .sum();
                total / windows.len() as f64
            }
            _ => f64::INFINITY,
        };
        let score = if score.is_finite() { score } else { f64::INFINITY };
        sweep.push((th, score));
        if best.map_or(true, |(_, s)| score < s) {
            best = Some((th, score));
        }
    }
    let threshold = best.map(|b| b.0).ok_or_else(|| Error::Config("sindy.thresholds is empty".into()))?;
    let (link, link_library, motion, model) = baseline_fit(cfg, learned, d, threshold, 1.0)?;
    Ok(Baseline {
        threshold,
        link,
        link_library,
        motion,
        model,
        sweep,
    })
}

/// NRMSE of one method on one data window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub dataset: String,
    #[serde(flatten)]
    pub nrmse: ChannelNrmse,
}

/// A closed-loop prediction with its truth, for plots.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub method: String,
    pub dataset: String,
    pub truth: Dataset,
    /// `None` when the re-simulation diverged.
    pub pred: Option<Dataset>,
    pub window: (usize, usize),
}

fn divergent() -> ChannelNrmse {
    ChannelNrmse {
        x: Some(f64::INFINITY),
        xdot: Some(f64::INFINITY),
        xddot: Some(f64::INFINITY),
    }
}

fn mean_nrmse(rows: &[ChannelNrmse]) -> ChannelNrmse {
    let avg = |f: &dyn Fn(&ChannelNrmse) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = rows.iter().map(f).collect();
        v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    ChannelNrmse {
        x: avg(&|r| r.x),
        xdot: avg(&|r| r.xdot),
        xddot: avg(&|r| r.xddot),
    }
}

/// Re-simulates `model` on every training and test record and scores it
/// against the noise-free truth.
pub fn evaluate(method: &str, model: &DiscoveredModel, records: &Records, z: &[Vec<f64>]) -> Result<(Vec<MetricRow>, Vec<Prediction>)> {
    let opts = IntegrateOptions::default();
    let z_scale = rms(&z.iter().flatten().copied().collect::<Vec<_>>());
    let mut rows = Vec::new();
    let mut preds: Vec<Prediction> = Vec::new();
    let sim = |truth: &Dataset, init: [f64; 3]| -> Result<Option<Dataset>> {
        match resimulate_on(model, truth, init, opts) {
            Ok(p) => Ok(Some(p)),
            Err(e) if e.is_numerical() => Ok(None),
            Err(e) => Err(e),
        }
    };
    let score = |pred: &Option<Dataset>, truth: &Dataset, window: (usize, usize)| -> Result<ChannelNrmse> {
        match pred {
            Some(p) => channel_nrmse(p, truth, window.0, window.1),
            None => Ok(divergent()),
        }
    };
    let mut record = |dataset: String, truth: &Dataset, pred: Option<Dataset>, window: (usize, usize)| {
        preds.push(Prediction {
            method: method.to_string(),
            dataset,
            truth: truth.clone(),
            pred,
            window,
        });
    };

    let inits = training_initial(records, z);
    let single = records.train_truth.len() == 1;
    let mut train_scores = Vec::new();
    let mut test1_scores = Vec::new();
    for (i, ((truth, &n), init)) in records.train_truth.iter().zip(&records.learn_len).zip(&inits).enumerate() {
        let label = if single { "training".to_string() } else { format!("training_{i}") };
        let full = truth.len();
        let pred = sim(truth, *init)?;
        train_scores.push(score(&pred, truth, (0, n))?);
        if n < full {
            test1_scores.push(score(&pred, truth, (n, full))?);
        }
        record(label, truth, pred, (0, n));
    }
    rows.push(MetricRow {
        method: method.into(),
        dataset: "training".into(),
        nrmse: mean_nrmse(&train_scores),
    });
    if !test1_scores.is_empty() {
        rows.push(MetricRow {
            method: method.into(),
            dataset: "testing_1".into(),
            nrmse: mean_nrmse(&test1_scores),
        });
    }
    let first_sample_init = |ds: &Dataset| -> Result<[f64; 3]> {
        let (x, v, a) = (ds.require(Channel::X)?[0], ds.require(Channel::Xdot)?[0], ds.require(Channel::Xddot)?[0]);
        Ok([x, v, matching_z0(model, x, v, a, ds.u[0], z_scale)])
    };
    if let Some(ds) = &records.test_excitation {
        let pred = sim(ds, first_sample_init(ds)?)?;
        let s = score(&pred, ds, (0, ds.len()))?;
        record("testing_2".into(), ds, pred, (0, ds.len()));
        rows.push(MetricRow {
            method: method.into(),
            dataset: "testing_2".into(),
            nrmse: s,
        });
    }
    let mut ic_scores = Vec::new();
    for (i, ds) in records.test_ic.iter().enumerate() {
        let label = if records.test_ic.len() == 1 { "testing".to_string() } else { format!("testing_{i}") };
        let pred = sim(ds, first_sample_init(ds)?)?;
        ic_scores.push(score(&pred, ds, (0, ds.len()))?);
        record(label, ds, pred, (0, ds.len()));
    }
    if !ic_scores.is_empty() {
        rows.push(MetricRow {
            method: method.into(),
            dataset: "testing".into(),
            nrmse: mean_nrmse(&ic_scores),
        });
    }
    Ok((rows, preds))
}

/// Correlation of the gauge-fixed learned `z` (with `α = 1`) against
/// `α_true·z_true` over the learning windows, when the truth is known.
pub fn z_correlation(records: &Records, z: &[Vec<f64>]) -> Option<f64> {
    let alpha = records.train_truth.first()?.meta.params?.alpha;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for ((truth, &n), z) in records.train_truth.iter().zip(&records.learn_len).zip(z) {
        let zt = truth.z.as_ref()?;
        a.extend_from_slice(&z[..n.min(z.len())]);
        b.extend(zt[..n.min(z.len())].iter().map(|v| alpha * v));
    }
    Some(correlation(&a, &b))
}

/// Everything a full run produces.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub records: Records,
    pub learned: LearnResult,
    pub discovery: Discovery,
    pub baseline: Option<Baseline>,
    pub metrics: Vec<MetricRow>,
    pub predictions: Vec<Prediction>,
    pub z_correlation: Option<f64>,
}

impl RunOutcome {
    pub fn metric(&self, method: &str, dataset: &str) -> Option<&ChannelNrmse> {
        self.metrics.iter().find(|r| r.method == method && r.dataset == dataset).map(|r| &r.nrmse)
    }
}

/// The whole recipe. Errors carry the name of the failing stage.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let records = generate(cfg).map_err(|e| e.in_stage("simulate"))?;
    let learned = learn(cfg, &records).map_err(|e| e.in_stage("learn"))?;
    let discovery = discover_model(cfg, &records, &learned).map_err(|e| e.in_stage("discover"))?;
    let (mut metrics, mut predictions) = evaluate("sr", &discovery.model, &records, &discovery.z).map_err(|e| e.in_stage("evaluate"))?;
    let baseline = if cfg.baseline {
        let b = baseline(cfg, &records, &learned, &discovery).map_err(|e| e.in_stage("baseline"))?;
        let (m, p) = evaluate("sindy", &b.model, &records, &discovery.z).map_err(|e| e.in_stage("evaluate"))?;
        metrics.extend(m);
        predictions.extend(p);
        Some(b)
    } else {
        None
    };
    let z_correlation = match learned.case {
        Case::HysteresisDiscovery => z_correlation(&records, &discovery.z),
        Case::FullEquationDiscovery => None,
    };
    Ok(RunOutcome {
        config: cfg.clone(),
        records,
        learned,
        discovery,
        baseline,
        metrics,
        predictions,
        z_correlation,
    })
}
