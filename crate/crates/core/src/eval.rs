//! Metrics, hysteresis loops and closed-loop re-simulation of discovered
//! models.

use serde::{Deserialize, Serialize};

use crate::dataset::{Channel, Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::excitation::{Excitation, ExcitationKind};
use crate::learner::Case;
use crate::simulate::{integrate, simulate_system, stiffness_term, BoucWenParams, Hysteretic, IntegrateOptions, State};
use crate::symreg::{canonicalize, Expr, VarSet};

/// Variables of a symbolic motion law, in evaluation order.
pub const MOTION_VARS: [&str; 4] = ["x", "xdot", "z", "u"];
/// Variables of a link law, in evaluation order.
pub const LINK_VARS: [&str; 2] = ["xdot", "z"];

pub fn motion_vars() -> VarSet {
    VarSet::new(&MOTION_VARS)
}

pub fn link_vars() -> VarSet {
    VarSet::new(&LINK_VARS)
}

/// `ẍ` as either a fixed-structure oscillator or a free expression.
#[derive(Clone, Debug, PartialEq)]
pub enum MotionLaw {
    Physical {
        m: f64,
        c: f64,
        k: f64,
        alpha: f64,
        stiffness_power: u8,
    },
    /// Expression over `(x, xdot, z, u)` giving `ẍ`.
    Symbolic(Expr),
}

impl MotionLaw {
    pub fn accel(&self, x: f64, xdot: f64, z: f64, u: f64) -> f64 {
        match self {
            MotionLaw::Physical {
                m,
                c,
                k,
                alpha,
                stiffness_power,
            } => (u - c * xdot - k * stiffness_term(x, *stiffness_power) - alpha * z) / m,
            MotionLaw::Symbolic(e) => e.eval_row(&[x, xdot, z, u]),
        }
    }

    /// `ẍ = f(x, ẋ, z, u)` as an expression.
    pub fn to_expr(&self) -> Expr {
        match self {
            MotionLaw::Symbolic(e) => e.clone(),
            MotionLaw::Physical {
                m,
                c,
                k,
                alpha,
                stiffness_power,
            } => {
                let v = Expr::var;
                let stiff = if *stiffness_power == 1 {
                    v(0)
                } else {
                    Expr::pow(v(0), *stiffness_power as f64)
                };
                let terms = [
                    Expr::mul(Expr::Const(-c / m), v(1)),
                    Expr::mul(Expr::Const(-k / m), stiff),
                    Expr::mul(Expr::Const(-alpha / m), v(2)),
                    Expr::mul(Expr::Const(1.0 / m), v(3)),
                ];
                canonicalize(&Expr::sum(terms))
            }
        }
    }
}

/// Where a model came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default)]
    pub case: Option<Case>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub config_digest: Option<String>,
}

/// Motion law plus link law `ż = g(ẋ, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscoveredModel {
    pub motion: MotionLaw,
    /// Expression over `(xdot, z)`.
    pub link: Expr,
    pub provenance: Provenance,
}

impl DiscoveredModel {
    /// The exact equations of a Bouc-Wen oscillator.
    pub fn from_params(p: &BoucWenParams) -> Self {
        let (xdot, z) = (Expr::var(0), Expr::var(1));
        let abs_z_pow = |e: f64| Expr::pow(Expr::abs(z.clone()), e);
        let link = Expr::sum([
            Expr::mul(Expr::Const(p.a), xdot.clone()),
            Expr::mul(
                Expr::Const(-p.beta),
                Expr::mul(Expr::mul(Expr::abs(xdot.clone()), abs_z_pow(p.n - 1.0)), z.clone()),
            ),
            Expr::mul(Expr::Const(-p.gamma), Expr::mul(xdot, abs_z_pow(p.n))),
        ]);
        Self {
            motion: MotionLaw::Physical {
                m: p.m,
                c: p.c,
                k: p.k,
                alpha: p.alpha,
                stiffness_power: p.stiffness_power,
            },
            link: canonicalize(&link),
            provenance: Provenance::default(),
        }
    }

    /// Checks that both laws only use their declared variables and give
    /// finite values at a few probe points.
    pub fn validate(&self) -> Result<()> {
        if self.link.n_vars() > LINK_VARS.len() {
            return Err(Error::Config("link law references variables beyond (xdot, z)".into()));
        }
        if let MotionLaw::Symbolic(e) = &self.motion {
            if e.n_vars() > MOTION_VARS.len() {
                return Err(Error::Config("motion law references variables beyond (x, xdot, z, u)".into()));
            }
        }
        if let MotionLaw::Physical { m, .. } = self.motion {
            if !(m.is_finite() && m != 0.0) {
                return Err(Error::Config("mass must be finite and non-zero".into()));
            }
        }
        for p in [[0.1, -0.2, 0.3, 0.4], [-0.5, 0.7, -0.1, 0.0]] {
            let a = self.motion.accel(p[0], p[1], p[2], p[3]);
            let g = self.link.eval_row(&[p[1], p[2]]);
            if !(a.is_finite() && g.is_finite()) {
                return Err(Error::Config("model does not evaluate to finite values".into()));
            }
        }
        Ok(())
    }
}

impl Hysteretic for DiscoveredModel {
    fn acceleration(&self, x: f64, xdot: f64, z: f64, u: f64) -> f64 {
        self.motion.accel(x, xdot, z, u)
    }

    fn link(&self, xdot: f64, z: f64) -> f64 {
        self.link.eval_row(&[xdot, z])
    }
}

/// Closed-loop solution of `model` under `excitation` from `[x0, ẋ0, z0]`.
pub fn resimulate(model: &DiscoveredModel, excitation: &Excitation, initial: State, opts: IntegrateOptions) -> Result<Dataset> {
    let mut ds = simulate_system(model, excitation, initial, opts)?;
    ds.meta.params = None;
    Ok(ds)
}

/// Closed-loop solution on the time grid and forcing of `ds`.
pub fn resimulate_on(model: &DiscoveredModel, ds: &Dataset, initial: State, opts: IntegrateOptions) -> Result<Dataset> {
    let forcing = ds.forcing();
    let u = |t: f64| forcing.eval(t);
    let states = integrate(model, &u, initial, ds.t[0], ds.dt(), ds.len(), opts)?;
    let xddot = states
        .iter()
        .zip(&ds.u)
        .map(|(s, &ui)| model.acceleration(s[0], s[1], s[2], ui))
        .collect();
    Ok(Dataset {
        t: ds.t.clone(),
        u: ds.u.clone(),
        x: Some(states.iter().map(|s| s[0]).collect()),
        xdot: Some(states.iter().map(|s| s[1]).collect()),
        xddot: Some(xddot),
        z: Some(states.iter().map(|s| s[2]).collect()),
        meta: DatasetMeta {
            excitation: ds.meta.excitation.clone(),
            initial_state: Some(initial),
            ..Default::default()
        },
    })
}

/// Root-mean-square error over the range of `truth`, in percent.
pub fn nrmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::Config(format!(
            "nrmse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let (lo, hi) = truth.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::ZeroRange);
    }
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / truth.len() as f64;
    Ok(mse.sqrt() / range * 100.0)
}

/// NRMSE per response channel present in both datasets, over `[start, end)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelNrmse {
    pub x: Option<f64>,
    pub xdot: Option<f64>,
    pub xddot: Option<f64>,
}

pub fn channel_nrmse(pred: &Dataset, truth: &Dataset, start: usize, end: usize) -> Result<ChannelNrmse> {
    let one = |c: Channel| -> Result<Option<f64>> {
        match (pred.channel(c), truth.channel(c)) {
            (Some(p), Some(t)) => nrmse(&p[start..end], &t[start..end]).map(Some),
            _ => Ok(None),
        }
    };
    Ok(ChannelNrmse {
        x: one(Channel::X)?,
        xdot: one(Channel::Xdot)?,
        xddot: one(Channel::Xddot)?,
    })
}

/// Loop pairs for plotting: `(x, F)`, `(x, ẋ)` and `(x, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Loops {
    pub x: Vec<f64>,
    /// `F = k·x^p + α·z`.
    pub force: Vec<f64>,
    pub xdot: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn loop_f(ds: &Dataset, k: f64, alpha: f64, stiffness_power: u8) -> Result<Loops> {
    let x = ds.require(Channel::X)?.to_vec();
    let z = ds.require_z()?.to_vec();
    let force = x.iter().zip(&z).map(|(x, z)| k * stiffness_term(*x, stiffness_power) + alpha * z).collect();
    Ok(Loops {
        xdot: ds.channel(Channel::Xdot).map(<[f64]>::to_vec).unwrap_or_default(),
        x,
        force,
        z,
    })
}

/// `∮ F dx` around the closed polygon through the points, by the
/// trapezoid (shoelace) rule. Positive when the loop dissipates energy.
pub fn loop_area(x: &[f64], f: &[f64]) -> f64 {
    let n = x.len().min(f.len());
    if n < 3 {
        return 0.0;
    }
    (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            0.5 * (f[i] + f[j]) * (x[j] - x[i])
        })
        .sum()
}

/// How to divide data into training and testing parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SplitScheme {
    /// The first `fraction` of each record trains, the rest tests.
    TimeSplit { fraction: f64 },
    /// Sine-sweep records train, other excitations test.
    ByExcitation,
    /// The first `n_train` records train, the rest test.
    ByInitialCondition { n_train: usize },
}

fn tagged(mut ds: Dataset, label: String) -> Dataset {
    ds.meta.split = Some(label);
    ds
}

pub fn split_train_test(records: &[Dataset], scheme: SplitScheme) -> Result<(Vec<Dataset>, Vec<Dataset>)> {
    if records.is_empty() {
        return Err(Error::Config("nothing to split".into()));
    }
    match scheme {
        SplitScheme::TimeSplit { fraction } => {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::Config(format!("split fraction must lie in (0, 1), got {fraction}")));
            }
            let mut train = Vec::new();
            let mut test = Vec::new();
            for ds in records {
                let cut = (ds.len() as f64 * fraction).floor() as usize;
                if cut == 0 || cut >= ds.len() {
                    return Err(Error::Config(format!("time split at {fraction} leaves an empty part")));
                }
                train.push(tagged(ds.slice(0, cut), format!("time_split({fraction}):train")));
                test.push(tagged(ds.slice(cut, ds.len()), format!("time_split({fraction}):test")));
            }
            Ok((train, test))
        }
        SplitScheme::ByExcitation => {
            let is_sweep = |ds: &Dataset| matches!(ds.meta.excitation.as_ref().map(|s| &s.kind), Some(ExcitationKind::Sinesweep { .. }));
            let train: Vec<Dataset> = records
                .iter()
                .filter(|d| is_sweep(d))
                .map(|d| tagged(d.clone(), "by_excitation:train".into()))
                .collect();
            let test: Vec<Dataset> = records
                .iter()
                .filter(|d| !is_sweep(d))
                .map(|d| tagged(d.clone(), "by_excitation:test".into()))
                .collect();
            if train.is_empty() || test.is_empty() {
                return Err(Error::Config("by_excitation needs sine-sweep and other records".into()));
            }
            Ok((train, test))
        }
        SplitScheme::ByInitialCondition { n_train } => {
            if n_train == 0 || n_train >= records.len() {
                return Err(Error::Config(format!(
                    "by_initial_condition needs 0 < n_train < {}, got {n_train}",
                    records.len()
                )));
            }
            let train = records[..n_train]
                .iter()
                .map(|d| tagged(d.clone(), "by_initial_condition:train".into()))
                .collect();
            let test = records[n_train..]
                .iter()
                .map(|d| tagged(d.clone(), "by_initial_condition:test".into()))
                .collect();
            Ok((train, test))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::{make_excitation, ExcitationSpec};
    use crate::simulate::simulate;

    #[test]
    fn nrmse_examples() {
        assert_eq!(nrmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let v = nrmse(&[0.0, 2.0], &[0.0, 1.0]).unwrap();
        assert!((v - 100.0 * 0.5f64.sqrt()).abs() < 1e-9);
        assert!(matches!(nrmse(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::ZeroRange)));
        assert!(nrmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn exact_model_reproduces_simulator() {
        let cases = [
            (BoucWenParams::benchmark(), ExcitationSpec::sinusoid(40.0, 60.0, 0.5, 3000.0), 1e-3),
            (BoucWenParams::complex_structure(), ExcitationSpec::sinusoid(1.0, 2.0, 6.0, 100.0), 0.5),
        ];
        for (p, spec, x0) in cases {
            let exc = make_excitation(&spec).unwrap();
            let truth = simulate(&p, &exc, x0, 0.0, 0.0).unwrap();
            let model = DiscoveredModel::from_params(&p);
            model.validate().unwrap();
            let re = resimulate(&model, &exc, [x0, 0.0, 0.0], IntegrateOptions::default()).unwrap();
            let scale = truth.x.as_ref().unwrap().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in re.x.unwrap().iter().zip(truth.x.as_ref().unwrap()) {
                assert!((a - b).abs() <= 1e-9 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn symbolic_motion_law_matches_physical() {
        let law = MotionLaw::Physical {
            m: 2.0,
            c: 10.0,
            k: 3.0,
            alpha: 0.5,
            stiffness_power: 3,
        };
        let sym = MotionLaw::Symbolic(law.to_expr());
        for p in [[0.3, -1.0, 0.2, 0.7], [-1.2, 0.4, -0.6, 0.0]] {
            assert!((law.accel(p[0], p[1], p[2], p[3]) - sym.accel(p[0], p[1], p[2], p[3])).abs() < 1e-12);
        }
    }

    #[test]
    fn loops() {
        let p = BoucWenParams::benchmark();
        let exc = make_excitation(&ExcitationSpec::sinusoid(40.0, 2.0 * std::f64::consts::PI * 5.0, 1.0, 2000.0)).unwrap();
        let ds = simulate(&p, &exc, 0.0, 0.0, 0.0).unwrap();
        // last full period of the 5 Hz forcing
        let tail = ds.slice(ds.len() - 400, ds.len());
        let l = loop_f(&tail, p.k, p.alpha, 1).unwrap();
        assert!(loop_area(&l.x, &l.force) > 0.0);
        let l = loop_f(&tail, p.k, 0.0, 1).unwrap();
        for (x, f) in l.x.iter().zip(&l.force) {
            assert_eq!(*f, p.k * x);
        }
    }

    #[test]
    fn splits() {
        let exc = make_excitation(&ExcitationSpec::sinusoid(1.0, 2.0, 6.0, 100.0)).unwrap();
        let ds = simulate(&BoucWenParams::complex_structure(), &exc, 0.0, 0.0, 0.0).unwrap();
        let (tr, te) = split_train_test(&[ds.clone()], SplitScheme::TimeSplit { fraction: 0.5 }).unwrap();
        assert_eq!((tr[0].len(), te[0].len()), (300, 300));
        assert!(split_train_test(&[ds.clone()], SplitScheme::TimeSplit { fraction: 1.0 }).is_err());
        let six = vec![ds.clone(); 6];
        let (tr, te) = split_train_test(&six, SplitScheme::ByInitialCondition { n_train: 5 }).unwrap();
        assert_eq!((tr.len(), te.len()), (5, 1));
        let sweep = simulate(
            &BoucWenParams::benchmark(),
            &make_excitation(&ExcitationSpec::sinesweep(40.0, 20.0, 50.0, 0.1, 3000.0)).unwrap(),
            0.0,
            0.0,
            0.0,
        )
        .unwrap();
        let (tr, te) = split_train_test(&[ds, sweep], SplitScheme::ByExcitation).unwrap();
        assert!(matches!(tr[0].meta.excitation.as_ref().unwrap().kind, ExcitationKind::Sinesweep { .. }));
        assert_eq!(te.len(), 1);
    }
}
