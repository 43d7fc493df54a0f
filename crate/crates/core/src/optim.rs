//! Derivative-free local minimization.

/// Settings for [`nelder_mead`].
#[derive(Clone, Copy, Debug)]
pub struct NelderMead {
    pub max_iters: usize,
    /// Stop when the simplex's function-value spread drops below
    /// `f_tol * (|f_best| + 1e-300)`.
    pub f_tol: f64,
    /// Stop when every vertex lies within `x_tol` of the best one.
    pub x_tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_iters: 200,
            f_tol: 1e-12,
            x_tol: 1e-12,
        }
    }
}

/// Result of a minimization.
#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
}

/// Nelder-Mead with standard coefficients (1, 2, 0.5, 0.5). Non-finite
/// function values are treated as `+∞`.
pub fn nelder_mead(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], step: &[f64], cfg: NelderMead) -> Minimum {
    let n = x0.len();
    let eval = |f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    if n == 0 {
        let v = eval(f, x0);
        return Minimum {
            x: Vec::new(),
            f: v,
            iterations: 0,
        };
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(f, x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += if step[i] != 0.0 { step[i] } else { 1e-3 };
        let v = eval(f, &x);
        simplex.push((x, v));
    }
    let mut it = 0;
    while it < cfg.max_iters {
        it += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread_ok = worst.is_finite() && (worst - best).abs() <= cfg.f_tol * (best.abs() + 1e-300);
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread_ok || size <= cfg.x_tol {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for j in 0..n {
                centroid[j] += x[j] / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n].0[j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = eval(f, &xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(f, &xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(-0.5);
                let fc = eval(f, &xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(f, &xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    for j in 0..n {
                        s.0[j] = x0[j] + 0.5 * (s.0[j] - x0[j]);
                    }
                    s.1 = eval(f, &s.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    Minimum {
        x,
        f: v,
        iterations: it,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_rosenbrock_minimum() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let cfg = NelderMead {
            max_iters: 5000,
            ..Default::default()
        };
        let m = nelder_mead(&mut f, &[-1.2, 1.0], &[0.5, 0.5], cfg);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m);
    }

    #[test]
    fn non_finite_values_are_avoided() {
        let mut f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 2.0).powi(2) };
        let m = nelder_mead(&mut f, &[0.5], &[1.0], NelderMead::default());
        assert!((m.x[0] - 2.0).abs() < 1e-5);
    }
}
