//! Internal-variable learning through a differentiable RK4 rollout.
//!
//! The internal variable is a free per-sample vector `z`. In
//! [`Case::HysteresisDiscovery`] the motion law has the known form
//! `m ẍ + c ẋ + k x^p + α z = u` with learnable `(m, c, k, α)`; in
//! [`Case::FullEquationDiscovery`] it is a [`SurrogateNet`] over
//! `(x, ẋ, z, u)`. Both are optimized jointly with `z` by Adam.

mod adam;
mod init;
mod net;
mod rollout;

use std::cell::RefCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use init::{draw_alpha0, init_linear, init_linear_multi, init_z, small_amplitude_window, MAX_CONDITION};
pub use net::{Affine, SurrogateNet};
pub use rollout::{diff_on_tape, rollout, Rollout, StageForcing};

use crate::adiff::{Tape, Var};
use crate::dataset::{Channel, Dataset};
use crate::error::{Error, Result};
use crate::numeric::{diff_central, rms, std};

/// Which part of the governing equations is unknown.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    /// Motion law structure known, link law unknown.
    #[serde(alias = "hysteresis")]
    HysteresisDiscovery,
    /// Both laws unknown.
    #[serde(alias = "full")]
    FullEquationDiscovery,
}

impl Case {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hysteresis" | "hysteresis_discovery" | "1" => Some(Case::HysteresisDiscovery),
            "full" | "full_equation_discovery" | "2" => Some(Case::FullEquationDiscovery),
            _ => None,
        }
    }
}

/// The observed response channels (rows of the selection matrix) and
/// their loss weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSpec {
    pub observed: Vec<Channel>,
    #[serde(default)]
    pub weights: Vec<f64>,
}

impl Default for ObservationSpec {
    fn default() -> Self {
        Self::all()
    }
}

impl ObservationSpec {
    pub fn all() -> Self {
        Self::new(&Channel::ALL).expect("valid")
    }

    pub fn new(channels: &[Channel]) -> Result<Self> {
        let spec = Self {
            observed: channels.to_vec(),
            weights: vec![1.0; channels.len()],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Parses a comma list such as `x,xdot`.
    pub fn parse(list: &str) -> Result<Self> {
        let channels = list
            .split(',')
            .map(|s| Channel::parse(s).ok_or_else(|| Error::Config(format!("unknown channel `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(&channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.observed.is_empty() {
            return Err(Error::Config("at least one observed channel is required".into()));
        }
        for (i, c) in self.observed.iter().enumerate() {
            if self.observed[..i].contains(c) {
                return Err(Error::Config(format!("channel `{}` listed twice", c.name())));
            }
        }
        if !self.weights.is_empty() && self.weights.len() != self.observed.len() {
            return Err(Error::Config("one weight per observed channel".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (!self.weights.is_empty() && self.weights.iter().sum::<f64>() == 0.0) {
            return Err(Error::Config("weights must be nonnegative with a positive sum".into()));
        }
        Ok(())
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.get(i).copied().unwrap_or(1.0)
    }

    /// `(channel, normalized weight)` pairs; the weights sum to 1.
    pub fn normalized(&self) -> Vec<(Channel, f64)> {
        let total: f64 = (0..self.observed.len()).map(|i| self.weight(i)).sum();
        self.observed.iter().enumerate().map(|(i, &c)| (c, self.weight(i) / total)).collect()
    }
}

/// Optimizer and initialization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnOptions {
    pub max_iters: usize,
    pub lr_z: f64,
    pub lr_theta: f64,
    /// Stop when the best loss improves by less than this fraction over
    /// `patience` iterations.
    pub tol: f64,
    pub patience: usize,
    pub seed: u64,
    /// Weight of the `dt²·mean(Diff(w)²)/var(w)` smoothness penalty; off by default.
    pub lambda_z: f64,
    /// Retries with a reseeded `α₀` after a failed run.
    pub restarts: usize,
    /// Stiffness exponent of the known motion law (1 or 3).
    pub stiffness_power: u8,
    /// Fixed `α₀` instead of a random draw.
    pub alpha0: Option<f64>,
    /// Also learn the initial displacement and velocity.
    pub learn_initial_state: bool,
    /// Fraction of the record used for the automatic small-amplitude window.
    pub small_window: f64,
    pub net_layers: Vec<usize>,
    /// Teacher-forced iterations fitting the surrogate before the rollout
    /// optimization.
    pub warm_start_iters: usize,
    pub warm_start_lr: f64,
}

impl Default for LearnOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            lr_z: 1e-2,
            lr_theta: 1e-3,
            tol: 1e-8,
            patience: 100,
            seed: 0,
            lambda_z: 0.0,
            restarts: 3,
            stiffness_power: 1,
            alpha0: None,
            learn_initial_state: false,
            small_window: 0.1,
            net_layers: vec![4, 32, 32, 1],
            warm_start_iters: 2000,
            warm_start_lr: 1e-2,
        }
    }
}

/// Learnable motion law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Theta {
    Physical {
        m: f64,
        c: f64,
        k: f64,
        alpha: f64,
        stiffness_power: u8,
    },
    Network { net: SurrogateNet },
}

impl Theta {
    /// `ẍ` for plain floats.
    pub fn accel(&self, x: f64, xdot: f64, z: f64, u: f64) -> f64 {
        match self {
            Theta::Physical {
                m,
                c,
                k,
                alpha,
                stiffness_power,
            } => (u - c * xdot - k * crate::simulate::stiffness_term(x, *stiffness_power) - alpha * z) / m,
            Theta::Network { net } => net.eval(&[x, xdot, z, u]),
        }
    }
}

/// Learned trajectories for one training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedTrajectory {
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub x_pred: Vec<f64>,
    pub xdot_pred: Vec<f64>,
    pub xddot_pred: Vec<f64>,
    pub z_pred: Vec<f64>,
    /// `diff_z(z_pred)`.
    pub zdot_pred: Vec<f64>,
}

/// Everything produced by [`fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnResult {
    pub case: Case,
    pub theta: Theta,
    pub trajectories: Vec<LearnedTrajectory>,
    #[serde(with = "crate::io::nan_as_null")]
    pub loss_history: Vec<f64>,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub iterations: usize,
    pub rejected_steps: usize,
    pub restarts_used: usize,
    /// `(m₀, c₀, k₀)` from the linear initialization.
    pub linear_init: (f64, f64, f64),
    pub alpha0: f64,
    pub options: LearnOptions,
}

/// Central differences inside, one-sided second-order stencils at the ends.
pub fn diff_z(z: &[f64], dt: f64) -> Vec<f64> {
    diff_central(z, dt)
}

/// Mean over observed channels of the weighted, variance-normalized mean
/// squared error.
pub fn loss(pred: &Dataset, ds: &Dataset, obs: &ObservationSpec) -> Result<f64> {
    obs.validate()?;
    let mut total = 0.0;
    for (c, w) in obs.normalized() {
        let m = ds.require(c)?;
        let p = pred.require(c)?;
        let s = std(m);
        let inv = if s > 0.0 { 1.0 / (s * s) } else { 1.0 };
        let mse = p.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m.len() as f64;
        total += w * inv * mse;
    }
    Ok(total)
}

struct Trajectory {
    t: Vec<f64>,
    u_samples: Vec<f64>,
    forcing: StageForcing,
    dt: f64,
    x0: f64,
    v0: f64,
    targets: Vec<(Channel, f64, Vec<f64>)>,
}

impl Trajectory {
    fn new(ds: &Dataset, obs: &ObservationSpec) -> Result<Self> {
        let dt = ds.dt();
        let exc = ds.forcing();
        let n = ds.len();
        let forcing = StageForcing {
            at: ds.u.clone(),
            mid: (0..n.saturating_sub(1)).map(|i| exc.eval(ds.t[i] + 0.5 * dt)).collect(),
        };
        let mut targets = Vec::new();
        for (c, w) in obs.normalized() {
            let m = ds.require(c)?.to_vec();
            let s = std(&m);
            let inv = if s > 0.0 { 1.0 / (s * s) } else { 1.0 };
            targets.push((c, w * inv, m));
        }
        Ok(Self {
            t: ds.t.clone(),
            u_samples: ds.u.clone(),
            forcing,
            dt,
            x0: ds.require(Channel::X)?[0],
            v0: ds.require(Channel::Xdot)?[0],
            targets,
        })
    }

    fn len(&self) -> usize {
        self.t.len()
    }
}

/// Position of each block inside the flat parameter vector.
#[derive(Clone, Debug)]
struct Layout {
    n_theta: usize,
    z: Vec<(usize, usize)>,
    init: Vec<Option<usize>>,
    total: usize,
}

#[derive(Clone, Debug)]
enum ThetaBase {
    Physical {
        m0: f64,
        c0: f64,
        k0: f64,
        alpha0: f64,
        scales: [f64; 3],
        power: u8,
    },
    Network(SurrogateNet),
}

struct Objective {
    trajs: Vec<Trajectory>,
    base: ThetaBase,
    layout: Layout,
    z_scale: f64,
    x_scale: f64,
    v_scale: f64,
    lambda_z: f64,
}

struct TrajEval {
    loss: f64,
    grad_theta: Vec<f64>,
    grad_local: Vec<f64>,
    pred: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl Objective {
    fn theta(&self, params: &[f64]) -> Theta {
        match &self.base {
            ThetaBase::Physical {
                m0,
                c0,
                k0,
                alpha0,
                scales,
                power,
            } => Theta::Physical {
                m: m0 * params[0].exp(),
                c: c0 + scales[0] * params[1],
                k: k0 + scales[1] * params[2],
                alpha: alpha0 + scales[2] * params[3],
                stiffness_power: *power,
            },
            ThetaBase::Network(net) => {
                let mut net = net.clone();
                net.params.copy_from_slice(&params[..self.layout.n_theta]);
                Theta::Network { net }
            }
        }
    }

    fn z_of(&self, params: &[f64], j: usize) -> Vec<f64> {
        let (s, n) = self.layout.z[j];
        params[s..s + n].iter().map(|v| v * self.z_scale).collect()
    }

    fn eval_traj(&self, params: &[f64], j: usize, want_pred: bool) -> Result<TrajEval> {
        let tr = &self.trajs[j];
        let n = tr.len();
        let tape = Tape::with_capacity(60 * n);
        let theta_vars = tape.lift_all(&params[..self.layout.n_theta]);
        let (zs, zn) = self.layout.z[j];
        let zeta = tape.lift_all(&params[zs..zs + zn]);
        let z: Vec<Var> = zeta.iter().map(|v| v.scale(self.z_scale)).collect();
        let (x0, v0, init_vars) = match self.layout.init[j] {
            Some(o) => {
                let iv = tape.lift_all(&params[o..o + 2]);
                (iv[0].scale(self.x_scale).shift(tr.x0), iv[1].scale(self.v_scale).shift(tr.v0), iv)
            }
            None => (tape.lift(tr.x0), tape.lift(tr.v0), Vec::new()),
        };
        let net_cache = RefCell::new(Vec::<f64>::new());
        let mut alpha_var = None;
        let roll = match &self.base {
            ThetaBase::Physical {
                m0,
                c0,
                k0,
                alpha0,
                scales,
                power,
            } => {
                let m = theta_vars[0].exp().scale(*m0);
                let c = theta_vars[1].scale(scales[0]).shift(*c0);
                let k = theta_vars[2].scale(scales[1]).shift(*k0);
                let alpha = theta_vars[3].scale(scales[2]).shift(*alpha0);
                alpha_var = Some(alpha);
                let p = *power;
                let mut f = accel_fn(|x, v, z, u| {
                    let xp = if p == 3 { x * x * x } else { x };
                    (-(c * v) - k * xp - alpha * z).shift(u) / m
                });
                rollout(x0, v0, &z, &tr.forcing, tr.dt, &mut f)?
            }
            ThetaBase::Network(base) => {
                let mut net = base.clone();
                net.params.copy_from_slice(&params[..self.layout.n_theta]);
                let cl = net.cache_len();
                let tape_ref = &tape;
                let mut f = accel_fn(|x, v, z, u| {
                    let mut cache = net_cache.borrow_mut();
                    let start = cache.len();
                    let val = net.forward(&[x.value(), v.value(), z.value(), u], &mut cache);
                    let jac = net.backward(&cache[start..start + cl], 1.0, None);
                    let payload = start / cl;
                    drop(cache);
                    tape_ref.opaque(&[x, v, z], &jac[..3], val, payload)
                });
                rollout(x0, v0, &z, &tr.forcing, tr.dt, &mut f)?
            }
        };
        let inv_traj = 1.0 / self.trajs.len() as f64;
        let mut terms = Vec::with_capacity(tr.targets.len() + 1);
        for (c, w, meas) in &tr.targets {
            let pred = match c {
                Channel::X => &roll.x,
                Channel::Xdot => &roll.xdot,
                Channel::Xddot => &roll.xddot,
            };
            let mut acc = pred[0].constant(0.0);
            for (p, &m) in pred.iter().zip(meas) {
                let e = p.shift(-m);
                acc = acc + e * e;
            }
            terms.push(acc.scale(w * inv_traj / n as f64));
        }
        if self.lambda_z > 0.0 {
            // dt²·mean(Diff(w)²)/var(w) for w = α·z (or z): unit-free and
            // blind to the scale and offset of z, which the data fit alone
            // does not pin down. About (ω·dt)² for a smooth signal, O(1)
            // for white noise.
            let w: Vec<Var> = match alpha_var {
                Some(a) => z.iter().map(|v| *v * a).collect(),
                None => z.clone(),
            };
            // Forward differences: the central stencil is blind to the
            // sample-to-sample alternation that noise excites most.
            let zero = w[0].constant(0.0);
            let (mut sq, mut s1, mut s2) = (zero, zero, zero);
            for pair in w.windows(2) {
                let d = (pair[1] - pair[0]).scale(1.0 / tr.dt);
                sq = sq + d * d;
            }
            for v in &w {
                s1 = s1 + *v;
                s2 = s2 + *v * *v;
            }
            let inv_n = 1.0 / n as f64;
            let mean = s1.scale(inv_n);
            let var = s2.scale(inv_n) - mean * mean;
            terms.push((sq / var).scale(self.lambda_z * tr.dt * tr.dt * inv_traj * inv_n));
        }
        let total = crate::adiff::sum(&terms).expect("at least one term");
        if let Some(e) = tape.domain_error() {
            return Err(e.into());
        }
        if !total.value().is_finite() {
            return Err(Error::Rollout { step: n });
        }
        let mut grad_net = vec![0.0; if matches!(self.base, ThetaBase::Network(_)) { self.layout.n_theta } else { 0 }];
        let grads = match &self.base {
            ThetaBase::Network(base) => {
                let mut net = base.clone();
                net.params.copy_from_slice(&params[..self.layout.n_theta]);
                let cache = net_cache.borrow();
                let cl = net.cache_len();
                tape.backward_with(&total, |payload, adj| {
                    net.backward(&cache[payload * cl..(payload + 1) * cl], adj, Some(&mut grad_net));
                })
            }
            ThetaBase::Physical { .. } => tape.backward(&total),
        };
        let grad_theta = match self.base {
            ThetaBase::Physical { .. } => grads.wrt_all(&theta_vars),
            ThetaBase::Network(_) => grad_net,
        };
        let mut grad_local = grads.wrt_all(&zeta);
        grad_local.extend(grads.wrt_all(&init_vars));
        let pred = want_pred.then(|| {
            (
                roll.x.iter().map(Var::value).collect(),
                roll.xdot.iter().map(Var::value).collect(),
                roll.xddot.iter().map(Var::value).collect(),
            )
        });
        Ok(TrajEval {
            loss: total.value(),
            grad_theta,
            grad_local,
            pred,
        })
    }

    /// Loss and full gradient; trajectories are evaluated in parallel and
    /// reduced in index order.
    fn evaluate(&self, params: &[f64], want_pred: bool) -> Result<(f64, Vec<f64>, Vec<TrajEval>)> {
        let evals: Vec<Result<TrajEval>> = (0..self.trajs.len())
            .into_par_iter()
            .map(|j| self.eval_traj(params, j, want_pred))
            .collect();
        let mut grad = vec![0.0; self.layout.total];
        let mut loss = 0.0;
        let mut out = Vec::with_capacity(evals.len());
        for (j, e) in evals.into_iter().enumerate() {
            let e = e?;
            loss += e.loss;
            for (g, d) in grad.iter_mut().zip(&e.grad_theta) {
                *g += d;
            }
            let (zs, zn) = self.layout.z[j];
            grad[zs..zs + zn].copy_from_slice(&e.grad_local[..zn]);
            if let Some(o) = self.layout.init[j] {
                grad[o..o + 2].copy_from_slice(&e.grad_local[zn..zn + 2]);
            }
            out.push(e);
        }
        Ok((loss, grad, out))
    }
}

fn accel_fn<'t, F>(f: F) -> F
where
    F: FnMut(Var<'t>, Var<'t>, Var<'t>, f64) -> Var<'t>,
{
    f
}

/// Teacher-forced least-squares fit of the surrogate to measured ẍ.
fn warm_start(net: &mut SurrogateNet, inputs: &[[f64; 4]], targets: &[f64], iters: usize, lr: f64) {
    let mut opt = Adam::new(net.n_params());
    let lrs = vec![lr; net.n_params()];
    let cl = net.cache_len();
    let inv = {
        let s = std(targets);
        if s > 0.0 { 1.0 / (s * s) } else { 1.0 }
    };
    let mut cache = Vec::with_capacity(cl);
    let mut grad = vec![0.0; net.n_params()];
    for _ in 0..iters {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (inp, &y) in inputs.iter().zip(targets) {
            cache.clear();
            let p = net.forward(inp, &mut cache);
            let adj = 2.0 * (p - y) * inv / targets.len() as f64;
            net.backward(&cache, adj, Some(&mut grad));
        }
        opt.step(&mut net.params, &grad, &lrs, 1.0);
    }
}

/// Ensures `ds` has all three kinematic channels, deriving missing ones.
fn complete(ds: &Dataset) -> Dataset {
    let mut d = ds.clone();
    crate::io::derive_channels(&mut d);
    d
}

/// Runs the learner on one record.
pub fn fit_one(ds: &Dataset, case: Case, obs: &ObservationSpec, opts: &LearnOptions) -> Result<LearnResult> {
    fit(&[ds.clone()], None, case, obs, opts)
}

/// Jointly learns the motion law and one `z` trajectory per record.
///
/// `small` is a dedicated small-amplitude record for the linear
/// initialization; without it the quietest `opts.small_window` fraction of
/// each training record is used. A failed run (rollout error at the start or
/// loss blow-up) is retried up to `opts.restarts` times with a reseeded `α₀`.
pub fn fit(
    train: &[Dataset],
    small: Option<&Dataset>,
    case: Case,
    obs: &ObservationSpec,
    opts: &LearnOptions,
) -> Result<LearnResult> {
    obs.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("no training records".into()));
    }
    if !matches!(opts.stiffness_power, 1 | 3) {
        return Err(Error::Config("stiffness_power must be 1 or 3".into()));
    }
    for ds in train {
        ds.validate()?;
        if ds.len() < 3 {
            return Err(Error::Dataset("need at least three samples".into()));
        }
        for c in &obs.observed {
            ds.require(*c)?;
        }
    }
    let full: Vec<Dataset> = train.iter().map(complete).collect();
    let linear_init = linear_initialization(&full, small, opts)?;
    let mut last_err = None;
    for attempt in 0..=opts.restarts {
        let seed = opts.seed.wrapping_add(attempt as u64);
        match fit_attempt(&full, linear_init, case, obs, opts, seed) {
            Ok(mut r) => {
                r.restarts_used = attempt;
                return Ok(r);
            }
            Err(e @ (Error::Diverged { .. } | Error::BadInitialization(_))) => {
                log::warn!("learner attempt {attempt} failed: {e}");
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// `(m₀, c₀, k₀)` from the dedicated small-amplitude record, or from the
/// quietest window of each training record.
///
/// When the fit is unphysical (a non-positive coefficient, typical when
/// the hysteretic force dominates the small-amplitude response), the
/// estimate is replaced by the gauge that makes `u − mẍ − cẋ − kx^p` best
/// follow an autonomous hysteretic law on the measured channels.
fn linear_initialization(full: &[Dataset], small: Option<&Dataset>, opts: &LearnOptions) -> Result<(f64, f64, f64)> {
    let (m, c, k) = match small {
        Some(s) => init_linear_multi(&[&complete(s)], opts.stiffness_power)?,
        None => {
            let windows = full
                .iter()
                .map(|d| small_amplitude_window(d, opts.small_window).map(|(a, b)| d.slice(a, b)))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Dataset> = windows.iter().collect();
            init_linear_multi(&refs, opts.stiffness_power)?
        }
    };
    if m > 0.0 && c >= 0.0 && k > 0.0 {
        return Ok((m, c, k));
    }
    let measured: Vec<LearnedTrajectory> = full
        .iter()
        .map(|d| LearnedTrajectory {
            t: d.t.clone(),
            u: d.u.clone(),
            x_pred: d.x.clone().unwrap(),
            xdot_pred: d.xdot.clone().unwrap(),
            xddot_pred: d.xddot.clone().unwrap(),
            z_pred: Vec::new(),
            zdot_pred: Vec::new(),
        })
        .collect();
    let gauge_opts = crate::gauge::GaugeOptions::default();
    let (m0, c0, k0) = (m.abs().max(1e-6), c.abs(), k.abs().max(1e-6));
    let mut best: Option<crate::gauge::PhysicalGauge> = None;
    for scale in [1.0, 10.0, 100.0] {
        if let Ok(g) = crate::gauge::refine_physical(&measured, m0 * scale, c0, k0, opts.stiffness_power, &gauge_opts) {
            if best.as_ref().map_or(true, |b| g.score_after < b.score_after) {
                best = Some(g);
            }
        }
    }
    match best {
        Some(g) if g.m > 0.0 && g.score_after.is_finite() => {
            log::info!("unphysical linear fit ({m:.4}, {c:.4}, {k:.4}); starting from ({:.4}, {:.4}, {:.4})", g.m, g.c, g.k);
            Ok((g.m, g.c, g.k))
        }
        _ => Err(Error::BadInitialization(format!("unphysical linear fit m={m}, c={c}, k={k}"))),
    }
}

fn fit_attempt(
    full: &[Dataset],
    linear_init: (f64, f64, f64),
    case: Case,
    obs: &ObservationSpec,
    opts: &LearnOptions,
    seed: u64,
) -> Result<LearnResult> {
    let Setup {
        objective,
        mut params,
        lrs,
        alpha0,
    } = build_objective(full, linear_init, case, obs, opts, seed)?;
    let layout = objective.layout.clone();
    let (initial_loss, mut grad, _) = objective
        .evaluate(&params, false)
        .map_err(|e| Error::BadInitialization(e.to_string()))?;
    let mut best = (initial_loss, params.clone());
    let mut history = vec![initial_loss];
    let mut best_history = vec![initial_loss];
    let mut adam = Adam::new(layout.total);
    let mut lr_scale = 1.0;
    let mut rejected = 0;
    let mut consecutive_rejects = 0;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let prev = params.clone();
        adam.step(&mut params, &grad, &lrs, lr_scale);
        match objective.evaluate(&params, false) {
            Ok((l, g, _)) if l.is_finite() => {
                consecutive_rejects = 0;
                if l > 1e6 * initial_loss {
                    return Err(Error::Diverged {
                        loss: l,
                        initial: initial_loss,
                    });
                }
                if l < best.0 {
                    best = (l, params.clone());
                }
                grad = g;
                history.push(l);
            }
            Ok(_) | Err(Error::Rollout { .. }) | Err(Error::Domain { .. }) => {
                params = prev;
                lr_scale *= 0.5;
                rejected += 1;
                consecutive_rejects += 1;
                history.push(f64::NAN);
                if consecutive_rejects >= 30 {
                    break;
                }
            }
            Err(e) => return Err(e),
        }
        best_history.push(best.0);
        let k = best_history.len();
        if k > opts.patience {
            let old = best_history[k - 1 - opts.patience];
            if old > 0.0 && (old - best.0) / old < opts.tol {
                break;
            }
        }
    }

    let params = best.1;
    let (_, _, evals) = objective.evaluate(&params, true)?;
    let trajectories = evals
        .into_iter()
        .enumerate()
        .map(|(j, e)| {
            let tr = &objective.trajs[j];
            let (x, v, a) = e.pred.expect("requested");
            let z = objective.z_of(&params, j);
            LearnedTrajectory {
                t: tr.t.clone(),
                u: tr.u_samples.clone(),
                x_pred: x,
                xdot_pred: v,
                xddot_pred: a,
                zdot_pred: diff_z(&z, tr.dt),
                z_pred: z,
            }
        })
        .collect();
    Ok(LearnResult {
        case,
        theta: objective.theta(&params),
        trajectories,
        loss_history: history,
        initial_loss,
        best_loss: best.0,
        iterations,
        rejected_steps: rejected,
        restarts_used: 0,
        linear_init,
        alpha0,
        options: opts.clone(),
    })
}

fn positive_or_one(v: f64) -> f64 {
    if v > 0.0 && v.is_finite() {
        v
    } else {
        1.0
    }
}

/// The training objective of [`fit`] at its initialization, for
/// gradient checks.
pub struct LossProbe {
    objective: Objective,
    params: Vec<f64>,
}

impl LossProbe {
    /// Builds the objective at the initialization [`fit`] would use.
    pub fn new(
        train: &[Dataset],
        small: Option<&Dataset>,
        case: Case,
        obs: &ObservationSpec,
        opts: &LearnOptions,
    ) -> Result<Self> {
        let mut o = opts.clone();
        o.max_iters = 0;
        o.warm_start_iters = o.warm_start_iters.min(50);
        let full: Vec<Dataset> = train.iter().map(complete).collect();
        let lin = linear_initialization(&full, small, &o)?;
        let setup = build_objective(&full, lin, case, obs, &o, o.seed)?;
        Ok(Self {
            objective: setup.objective,
            params: setup.params,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_theta(&self) -> usize {
        self.objective.layout.n_theta
    }

    pub fn loss(&self, params: &[f64]) -> Result<f64> {
        Ok(self.objective.evaluate(params, false)?.0)
    }

    pub fn loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (l, g, _) = self.objective.evaluate(params, false)?;
        Ok((l, g))
    }
}

struct Setup {
    objective: Objective,
    params: Vec<f64>,
    lrs: Vec<f64>,
    alpha0: f64,
}

fn build_objective(
    full: &[Dataset],
    (m0, c0, k0): (f64, f64, f64),
    case: Case,
    obs: &ObservationSpec,
    opts: &LearnOptions,
    seed: u64,
) -> Result<Setup> {
    let refs: Vec<&Dataset> = full.iter().collect();
    let p = opts.stiffness_power;
    let alpha0 = match opts.alpha0 {
        Some(a) => a,
        None => draw_alpha0(&refs, m0, c0, k0, p, seed)?,
    };
    let z_init = full
        .iter()
        .map(|d| init_z(d, m0, c0, k0, alpha0, p))
        .collect::<Result<Vec<_>>>()?;
    let all_z: Vec<f64> = z_init.iter().flatten().copied().collect();
    let z_scale = positive_or_one(rms(&all_z));
    let all_x: Vec<f64> = full.iter().flat_map(|d| d.x.clone().unwrap()).collect();
    let all_v: Vec<f64> = full.iter().flat_map(|d| d.xdot.clone().unwrap()).collect();

    let base = match case {
        Case::HysteresisDiscovery => {
            let fallback = |v: f64, alt: f64| if v.abs() > 0.0 { v.abs() } else { alt };
            ThetaBase::Physical {
                m0,
                c0,
                k0,
                alpha0,
                scales: [fallback(c0, m0), fallback(k0, m0), alpha0.abs()],
                power: p,
            }
        }
        Case::FullEquationDiscovery => {
            let mut net = SurrogateNet::new(&opts.net_layers, seed)?;
            if net.n_inputs() != 4 {
                return Err(Error::Config("the surrogate takes four inputs (x, xdot, z, u)".into()));
            }
            let mut inputs = Vec::new();
            let mut targets = Vec::new();
            for (d, z) in full.iter().zip(&z_init) {
                let (x, v, a) = (d.x.as_ref().unwrap(), d.xdot.as_ref().unwrap(), d.xddot.as_ref().unwrap());
                for i in 0..d.len() {
                    inputs.push([x[i], v[i], z[i], d.u[i]]);
                    targets.push(a[i]);
                }
            }
            let col = |k: usize| inputs.iter().map(|r| r[k]).collect::<Vec<_>>();
            net.inputs = (0..4).map(|k| Affine::fit(&col(k))).collect();
            net.output = Affine::fit(&targets);
            warm_start(&mut net, &inputs, &targets, opts.warm_start_iters, opts.warm_start_lr);
            ThetaBase::Network(net)
        }
    };
    let n_theta = match &base {
        ThetaBase::Physical { .. } => 4,
        ThetaBase::Network(net) => net.n_params(),
    };
    let mut offset = n_theta;
    let mut z_layout = Vec::new();
    let mut init_layout = Vec::new();
    for d in full {
        z_layout.push((offset, d.len()));
        offset += d.len();
    }
    for _ in full {
        if opts.learn_initial_state {
            init_layout.push(Some(offset));
            offset += 2;
        } else {
            init_layout.push(None);
        }
    }
    let layout = Layout {
        n_theta,
        z: z_layout,
        init: init_layout,
        total: offset,
    };
    let objective = Objective {
        trajs: full.iter().map(|d| Trajectory::new(d, obs)).collect::<Result<_>>()?,
        base,
        layout: layout.clone(),
        z_scale,
        x_scale: positive_or_one(std(&all_x)),
        v_scale: positive_or_one(std(&all_v)),
        lambda_z: opts.lambda_z,
    };

    let mut params = vec![0.0; layout.total];
    if let ThetaBase::Network(net) = &objective.base {
        params[..n_theta].copy_from_slice(&net.params);
    }
    for (j, z) in z_init.iter().enumerate() {
        let (s, n) = layout.z[j];
        for (p, v) in params[s..s + n].iter_mut().zip(z) {
            *p = v / z_scale;
        }
    }
    let mut lrs = vec![opts.lr_theta; layout.total];
    for &(s, n) in &layout.z {
        lrs[s..s + n].iter_mut().for_each(|l| *l = opts.lr_z);
    }
    for o in layout.init.iter().flatten() {
        lrs[*o] = opts.lr_z;
        lrs[*o + 1] = opts.lr_z;
    }

    Ok(Setup {
        objective,
        params,
        lrs,
        alpha0,
    })
}
