//! Sparse regression baseline over fixed candidate libraries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{lstsq_equilibrated, mean, rms};
use crate::symreg::{canonicalize, Expr, VarSet};

/// Ridge used by default in [`stlsq`].
pub const DEFAULT_RIDGE: f64 = 1e-8;
const MAX_ITERS: usize = 20;

/// Candidate families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LibraryKind {
    /// `[x, x³, ẋ, z, u]` over `(x, xdot, z, u)`.
    MotionCubic,
    /// Absolute-value powers of `z` up to 5 over `(xdot, z)`.
    HystereticAbs,
}

impl LibraryKind {
    pub fn vars(self) -> VarSet {
        match self {
            LibraryKind::MotionCubic => VarSet::new(&["x", "xdot", "z", "u"]),
            LibraryKind::HystereticAbs => VarSet::new(&["xdot", "z"]),
        }
    }

    /// Feature expressions, in column order.
    pub fn terms(self) -> Vec<Expr> {
        let v = Expr::var;
        match self {
            LibraryKind::MotionCubic => vec![v(0), Expr::pow(v(0), 3.0), v(1), v(2), v(3)],
            LibraryKind::HystereticAbs => {
                let (xdot, z) = (v(0), v(1));
                let abs_z = |p: f64| {
                    if p == 1.0 {
                        Expr::abs(z.clone())
                    } else {
                        Expr::pow(Expr::abs(z.clone()), p)
                    }
                };
                let mut t = vec![xdot.clone()];
                for p in 1..=5 {
                    t.push(Expr::mul(xdot.clone(), abs_z(p as f64)));
                }
                for p in 1..=5 {
                    let head = Expr::mul(Expr::abs(xdot.clone()), z.clone());
                    t.push(if p == 1 { head } else { Expr::mul(head, abs_z(p as f64 - 1.0)) });
                }
                for p in 1..=5 {
                    t.push(Expr::mul(z.clone(), abs_z(p as f64)));
                }
                t
            }
        }
    }
}

/// Evaluated candidate features.
#[derive(Clone, Debug, PartialEq)]
pub struct Library {
    pub kind: LibraryKind,
    pub vars: VarSet,
    pub names: Vec<String>,
    pub terms: Vec<Expr>,
    pub columns: Vec<Vec<f64>>,
}

impl Library {
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column_refs(&self) -> Vec<&[f64]> {
        self.columns.iter().map(Vec::as_slice).collect()
    }
}

/// Evaluates the `kind` library; `cols` follow [`LibraryKind::vars`].
pub fn build_library(kind: LibraryKind, cols: &[&[f64]]) -> Result<Library> {
    let vars = kind.vars();
    if cols.len() != vars.len() {
        return Err(Error::Config(format!(
            "library needs {} channels ({}), got {}",
            vars.len(),
            vars.names().join(", "),
            cols.len()
        )));
    }
    let n = cols[0].len();
    if cols.iter().any(|c| c.len() != n) {
        return Err(Error::Config("library channels must have equal length".into()));
    }
    let terms = kind.terms();
    let names = terms.iter().map(|t| t.to_infix(&vars, 6)).collect();
    let columns = terms.iter().map(|t| t.eval_columns(cols, n)).collect();
    Ok(Library {
        kind,
        vars,
        names,
        terms,
        columns,
    })
}

/// Result of sequentially thresholded least squares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseFit {
    pub coefficients: Vec<f64>,
    pub active: Vec<bool>,
    /// Mean squared residual; the target variance for an empty model.
    pub mse: f64,
    pub threshold: f64,
}

impl SparseFit {
    pub fn is_empty(&self) -> bool {
        !self.active.iter().any(|a| *a)
    }

    /// `Σ cⱼ·termⱼ` over the active terms.
    pub fn to_expr(&self, library: &Library) -> Expr {
        let terms = self
            .coefficients
            .iter()
            .zip(&library.terms)
            .zip(&self.active)
            .filter(|(_, a)| **a)
            .map(|((c, t), _)| Expr::mul(Expr::Const(*c), t.clone()));
        canonicalize(&Expr::sum(terms))
    }
}

/// Standardized magnitude `|w|·rms(column)/rms(target)` used for
/// thresholding, so one threshold applies across columns of any scale.
fn standardized(w: f64, column: &[f64], target_rms: f64) -> f64 {
    w.abs() * rms(column) / target_rms
}

/// Sequentially thresholded least squares starting from all columns.
pub fn stlsq(columns: &[&[f64]], target: &[f64], threshold: f64, ridge: f64) -> Result<SparseFit> {
    stlsq_from(columns, target, threshold, ridge, &vec![true; columns.len()])
}

/// [`stlsq`] restricted to the columns marked in `initial`.
pub fn stlsq_from(columns: &[&[f64]], target: &[f64], threshold: f64, ridge: f64, initial: &[bool]) -> Result<SparseFit> {
    let k = columns.len();
    let n = target.len();
    if k == 0 || initial.len() != k {
        return Err(Error::Config("stlsq needs at least one column and a matching mask".into()));
    }
    if n <= k || columns.iter().any(|c| c.len() != n) {
        return Err(Error::Config(format!("stlsq needs more rows than columns ({n} rows, {k} columns)")));
    }
    if !(threshold >= 0.0) {
        return Err(Error::Config("threshold must be non-negative".into()));
    }
    let target_rms = rms(target).max(f64::MIN_POSITIVE);
    let mut active: Vec<bool> = initial.iter().zip(columns).map(|(a, c)| *a && rms(c) > 0.0).collect();
    let mut coefficients = vec![0.0; k];
    for _ in 0..MAX_ITERS {
        coefficients = solve_active(columns, target, ridge, &active)?;
        let next: Vec<bool> = (0..k)
            .map(|j| active[j] && standardized(coefficients[j], columns[j], target_rms) >= threshold)
            .collect();
        if next == active {
            break;
        }
        active = next;
    }
    // The loop may stop on the iteration cap with a pending mask change.
    coefficients = solve_active(columns, target, ridge, &active)?;
    let mse = if active.iter().any(|a| *a) {
        let mut resid = target.to_vec();
        for (j, c) in columns.iter().enumerate() {
            if active[j] {
                resid.iter_mut().zip(c.iter()).for_each(|(r, v)| *r -= coefficients[j] * v);
            }
        }
        resid.iter().map(|r| r * r).sum::<f64>() / n as f64
    } else {
        let m = mean(target);
        target.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / n as f64
    };
    Ok(SparseFit {
        coefficients,
        active,
        mse,
        threshold,
    })
}

fn solve_active(columns: &[&[f64]], target: &[f64], ridge: f64, active: &[bool]) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..columns.len()).filter(|&j| active[j]).collect();
    let mut out = vec![0.0; columns.len()];
    if idx.is_empty() {
        return Ok(out);
    }
    let sub: Vec<&[f64]> = idx.iter().map(|&j| columns[j]).collect();
    let w = lstsq_equilibrated(&sub, target, ridge).ok_or(Error::RankDeficient { cond: f64::INFINITY })?;
    for (k, &j) in idx.iter().enumerate() {
        out[j] = w[k];
    }
    Ok(out)
}

/// `count` log-spaced thresholds from `lo` to `hi`.
pub fn threshold_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// Default sweep: 10 values in `[1e-3, 1]`.
pub fn default_thresholds() -> Vec<f64> {
    threshold_grid(1e-3, 1.0, 10)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal(n: usize, f: f64, phase: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * f + phase).sin()).collect()
    }

    #[test]
    fn library_shapes() {
        let x = signal(50, 0.1, 0.0);
        let lib = build_library(LibraryKind::MotionCubic, &[&x, &x, &x, &x]).unwrap();
        assert_eq!(lib.columns.len(), 5);
        let lib = build_library(LibraryKind::HystereticAbs, &[&x, &x]).unwrap();
        assert_eq!(lib.columns.len(), 16);
        let names: std::collections::HashSet<_> = lib.names.iter().collect();
        assert_eq!(names.len(), 16);
        let zero = vec![0.0; 50];
        let lib = build_library(LibraryKind::HystereticAbs, &[&zero, &zero]).unwrap();
        assert!(lib.columns.iter().all(|c| c.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn hysteretic_terms_evaluate_as_named() {
        let lib = build_library(LibraryKind::HystereticAbs, &[&[-0.5], &[-2.0]]).unwrap();
        let (v, z) = (-0.5f64, -2.0f64);
        let expected: Vec<f64> = std::iter::once(v)
            .chain((1..=5).map(|p| v * z.abs().powi(p)))
            .chain((1..=5).map(|p| v.abs() * z.abs().powi(p - 1) * z))
            .chain((1..=5).map(|p| z * z.abs().powi(p)))
            .collect();
        for (c, e) in lib.columns.iter().zip(&expected) {
            assert!((c[0] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_sparse_target_is_recovered() {
        let cols: Vec<Vec<f64>> = (0..4).map(|j| signal(200, 0.05 * (j + 1) as f64, j as f64)).collect();
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let y: Vec<f64> = cols[0].iter().map(|v| 3.0 * v).collect();
        let fit = stlsq(&refs, &y, 0.05, DEFAULT_RIDGE).unwrap();
        assert_eq!(fit.active, vec![true, false, false, false]);
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-6);
        assert_eq!(&fit.coefficients[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_threshold_is_dense() {
        let cols: Vec<Vec<f64>> = (0..3).map(|j| signal(100, 0.07 * (j + 1) as f64, 0.3 * j as f64)).collect();
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let y: Vec<f64> = (0..100).map(|i| cols[0][i] + 1e-4 * cols[2][i] + 0.01 * (i as f64).cos()).collect();
        let fit = stlsq(&refs, &y, 0.0, DEFAULT_RIDGE).unwrap();
        assert!(fit.active.iter().all(|a| *a));
        let dense = lstsq_equilibrated(&refs, &y, DEFAULT_RIDGE).unwrap();
        for (a, b) in fit.coefficients.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_model_reports_variance() {
        let cols = [signal(100, 0.1, 0.0)];
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let y = signal(100, 0.37, 1.0);
        let fit = stlsq(&refs, &y, 10.0, DEFAULT_RIDGE).unwrap();
        assert!(fit.is_empty());
        let m = mean(&y);
        let var = y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 100.0;
        assert!((fit.mse - var).abs() < 1e-15);
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = default_thresholds();
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1e-3).abs() < 1e-15 && (g[9] - 1.0).abs() < 1e-12);
        assert!((g[1] / g[0] - g[9] / g[8]).abs() < 1e-9);
    }
}
