//! Symbolic regression by genetic programming over expression trees.

mod canon;
mod expr;
mod gp;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMead};

pub use canon::{canonicalize, match_terms, same_structure, to_poly, Base, Factor, Monomial, Poly};
pub use expr::{eval_expr, format_sig, pow, sign, BinaryOp, Expr, UnaryOp, VarSet};
pub use gp::discover;

/// Operators available to the search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Neg,
    Abs,
    Sign,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Sin,
    Cos,
    Exp,
}

impl Op {
    pub const DEFAULT: [Op; 7] = [Op::Neg, Op::Abs, Op::Sign, Op::Add, Op::Sub, Op::Mul, Op::Pow];
}

/// Search settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SRConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub p_mutation: f64,
    pub p_crossover: f64,
    pub p_reproduction: f64,
    /// Weight of the complexity penalty in the fitness.
    pub parsimony: f64,
    pub max_complexity: usize,
    pub alphabet: Vec<Op>,
    /// Nelder-Mead iterations spent on each top-decile individual.
    pub refine_iters: usize,
    /// Rows used for fitness during the search; the final front is refit
    /// on all rows.
    pub max_rows: usize,
    /// Stop early once the front has not changed for this many generations.
    pub stall_generations: Option<usize>,
    pub seed: u64,
}

impl Default for SRConfig {
    fn default() -> Self {
        Self {
            population: 512,
            generations: 200,
            tournament: 5,
            p_mutation: 0.5,
            p_crossover: 0.4,
            p_reproduction: 0.1,
            parsimony: 1e-3,
            max_complexity: 30,
            alphabet: Op::DEFAULT.to_vec(),
            refine_iters: 100,
            max_rows: 1000,
            stall_generations: None,
            seed: 0,
        }
    }
}

impl SRConfig {
    pub fn validate(&self) -> Result<()> {
        let total = self.p_mutation + self.p_crossover + self.p_reproduction;
        if (total - 1.0).abs() > 1e-9 || [self.p_mutation, self.p_crossover, self.p_reproduction].iter().any(|p| *p < 0.0) {
            return Err(Error::Config(format!("operator probabilities must be non-negative and sum to 1, got {total}")));
        }
        if self.max_complexity < 3 {
            return Err(Error::Config("max_complexity must be at least 3".into()));
        }
        if self.population < 2 || self.tournament == 0 || self.tournament > self.population {
            return Err(Error::Config("population must be at least 2 and hold a tournament".into()));
        }
        if self.max_rows < 10 {
            return Err(Error::Config("max_rows must be at least 10".into()));
        }
        if !(self.parsimony >= 0.0) {
            return Err(Error::Config("parsimony must be non-negative".into()));
        }
        if !self.alphabet.iter().any(|op| matches!(op, Op::Add | Op::Sub | Op::Mul | Op::Div)) {
            return Err(Error::Config("alphabet needs a binary operator".into()));
        }
        Ok(())
    }
}

/// A front entry.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontMember {
    pub complexity: usize,
    /// Normalized mean squared error on all rows.
    pub loss: f64,
    pub expr: Expr,
}

/// Non-dominated expressions, sorted by complexity with strictly
/// decreasing loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ParetoFront {
    pub vars: VarSet,
    pub members: Vec<FrontMember>,
}

impl ParetoFront {
    /// Keeps the non-dominated subset of `candidates`.
    pub fn from_candidates(vars: VarSet, mut candidates: Vec<FrontMember>) -> Self {
        candidates.retain(|m| m.loss.is_finite());
        candidates.sort_by(|a, b| a.complexity.cmp(&b.complexity).then(a.loss.total_cmp(&b.loss)));
        let mut members: Vec<FrontMember> = Vec::new();
        for c in candidates {
            if members.last().map_or(true, |m| c.loss < m.loss) {
                members.push(c);
            }
        }
        Self { vars, members }
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }
}

/// Losses below this are treated as equal when looking for the knee, so
/// round-off gains past an exact fit do not win.
pub const KNEE_LOSS_FLOOR: f64 = 1e-12;

/// The member with the largest loss drop relative to its predecessor; ties
/// go to the lower complexity.
pub fn select_model(front: &ParetoFront) -> Option<&FrontMember> {
    let m = &front.members;
    let first = m.first()?;
    if m.len() == 1 || first.loss <= KNEE_LOSS_FLOOR {
        return Some(first);
    }
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..m.len() {
        let r = m[i - 1].loss.max(KNEE_LOSS_FLOOR) / m[i].loss.max(KNEE_LOSS_FLOOR);
        if r > best.1 {
            best = (i, r);
        }
    }
    Some(&m[best.0])
}

fn mse(e: &Expr, cols: &[&[f64]], target: &[f64]) -> f64 {
    let pred = e.eval_columns(cols, target.len());
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    let v = s / target.len() as f64;
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Refines every constant of `e` (including exponents) by Nelder-Mead on
/// the mean squared residual, from the current values and from four
/// random restarts. Returns `e` unchanged if nothing improves.
pub fn fit_constants(e: &Expr, cols: &[&[f64]], target: &[f64]) -> Expr {
    let c0 = e.constants();
    if c0.is_empty() {
        return e.clone();
    }
    let mut work = e.clone();
    let mut objective = |c: &[f64]| {
        work.set_constants(c);
        mse(&work, cols, target)
    };
    let cfg = NelderMead {
        max_iters: 200,
        f_tol: 1e-15,
        x_tol: 1e-12,
    };
    let step = |c: &[f64]| -> Vec<f64> { c.iter().map(|v| 0.1 * v.abs().max(0.1)).collect() };
    let mut best = (c0.clone(), objective(&c0));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let jitter = Normal::new(0.0, 0.5).expect("valid normal");
    for restart in 0..5 {
        let start: Vec<f64> = if restart == 0 {
            c0.clone()
        } else {
            best.0.iter().map(|v| v * (1.0 + jitter.sample(&mut rng)) + 0.1 * jitter.sample(&mut rng)).collect()
        };
        let m = nelder_mead(&mut objective, &start, &step(&start), cfg);
        // A second pass from the result recovers from simplex collapse.
        let m = nelder_mead(&mut objective, &m.x, &step(&m.x), cfg);
        if m.f < best.1 {
            best = (m.x, m.f);
        }
    }
    let mut out = e.clone();
    out.set_constants(&best.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn member(complexity: usize, loss: f64) -> FrontMember {
        FrontMember {
            complexity,
            loss,
            expr: Expr::Const(complexity as f64),
        }
    }

    #[test]
    fn knee_picks_largest_drop() {
        let f = ParetoFront::from_candidates(VarSet::new(&["x"]), vec![member(1, 1.0), member(5, 1e-6), member(9, 9e-7)]);
        assert_eq!(select_model(&f).unwrap().complexity, 5);
    }

    #[test]
    fn knee_single_member_and_ties() {
        let f = ParetoFront::from_candidates(VarSet::new(&["x"]), vec![member(3, 0.5)]);
        assert_eq!(select_model(&f).unwrap().complexity, 3);
        let f = ParetoFront::from_candidates(VarSet::new(&["x"]), vec![member(1, 1.0), member(3, 0.1), member(5, 0.01)]);
        assert_eq!(select_model(&f).unwrap().complexity, 3);
    }

    #[test]
    fn front_drops_dominated_members() {
        let f = ParetoFront::from_candidates(
            VarSet::new(&["x"]),
            vec![member(5, 0.2), member(1, 1.0), member(3, 1.0), member(7, f64::NAN), member(9, 0.1)],
        );
        let cs: Vec<usize> = f.members.iter().map(|m| m.complexity).collect();
        assert_eq!(cs, vec![1, 5, 9]);
    }

    #[test]
    fn config_validation() {
        assert!(SRConfig::default().validate().is_ok());
        let bad = SRConfig {
            p_mutation: 0.6,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SRConfig {
            max_complexity: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fit_constants_linear_coefficient() {
        let xdot: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let y: Vec<f64> = xdot.iter().map(|v| 4.0 * v).collect();
        let e = Expr::mul(Expr::Const(1.0), Expr::var(0));
        let fit = fit_constants(&e, &[&xdot], &y);
        assert!((fit.constants()[0] - 4.0).abs() < 1e-6, "{:?}", fit.constants());
    }

    #[test]
    fn fit_constants_power_law_matches_grid_oracle() {
        let z: Vec<f64> = (0..60).map(|i| 0.1 + 1.9 * i as f64 / 59.0).collect();
        let y: Vec<f64> = z.iter().map(|v| v.abs().powf(1.5)).collect();
        // Coarse grid oracle for the basin, then the optimizer must agree
        // with it to the requested tolerance.
        let mut grid_best = (f64::INFINITY, 0.0, 0.0);
        for ia in 0..=40 {
            for ip in 0..=40 {
                let (a, p) = (0.5 + ia as f64 * 0.025, 1.0 + ip as f64 * 0.025);
                let err: f64 = z.iter().zip(&y).map(|(zv, yv)| (a * zv.powf(p) - yv).powi(2)).sum();
                if err < grid_best.0 {
                    grid_best = (err, a, p);
                }
            }
        }
        let e = Expr::mul(Expr::Const(0.7), Expr::pow(Expr::abs(Expr::var(0)), 1.2));
        let fit = fit_constants(&e, &[&z], &y);
        let c = fit.constants();
        assert!((c[0] - grid_best.1).abs() < 0.03 && (c[1] - grid_best.2).abs() < 0.03);
        assert!((c[0] - 1.0).abs() < 1e-3 && (c[1] - 1.5).abs() < 1e-3, "{c:?}");
    }

    #[test]
    fn fit_constants_without_constants_is_identity() {
        let e = Expr::mul(Expr::var(0), Expr::var(0));
        let x = [1.0, 2.0, 3.0];
        assert_eq!(fit_constants(&e, &[&x], &[1.0, 4.0, 9.0]), e);
    }
}
