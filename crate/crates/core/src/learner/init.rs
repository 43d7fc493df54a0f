//! Initial estimates for the motion parameters and the internal variable.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Channel, Dataset};
use crate::error::{Error, Result};
use crate::numeric::std;
use crate::simulate::stiffness_term;

/// Largest equilibrated condition number accepted by [`init_linear`].
pub const MAX_CONDITION: f64 = 1e12;

/// Least-squares `(m, c, k)` of `m ẍ + c ẋ + k x^p = u` over one or more
/// records.
pub fn init_linear_multi(data: &[&Dataset], stiffness_power: u8) -> Result<(f64, f64, f64)> {
    let mut gram = DMatrix::<f64>::zeros(3, 3);
    let mut rhs = DVector::<f64>::zeros(3);
    for ds in data {
        let a = ds.require(Channel::Xddot)?;
        let v = ds.require(Channel::Xdot)?;
        let x = ds.require(Channel::X)?;
        for i in 0..ds.len() {
            let row = [a[i], v[i], stiffness_term(x[i], stiffness_power)];
            for r in 0..3 {
                rhs[r] += row[r] * ds.u[i];
                for c in 0..3 {
                    gram[(r, c)] += row[r] * row[c];
                }
            }
        }
    }
    // equilibrate so the condition number reflects collinearity, not units
    let d: Vec<f64> = (0..3).map(|i| gram[(i, i)].sqrt()).collect();
    if d.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::RankDeficient { cond: f64::INFINITY });
    }
    let scaled = DMatrix::from_fn(3, 3, |r, c| gram[(r, c)] / (d[r] * d[c]));
    let cond = crate::numeric::symmetric_condition(&scaled);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::RankDeficient { cond });
    }
    let srhs = DVector::from_fn(3, |r, _| rhs[r] / d[r]);
    let w = scaled
        .cholesky()
        .map(|ch| ch.solve(&srhs))
        .ok_or(Error::RankDeficient { cond })?;
    Ok((w[0] / d[0], w[1] / d[1], w[2] / d[2]))
}

/// Least-squares `(m₀, c₀, k₀)` of the linear model `m ẍ + c ẋ + k x = u`.
pub fn init_linear(ds_small: &Dataset) -> Result<(f64, f64, f64)> {
    init_linear_multi(&[ds_small], 1)
}

/// `z₀ = (u − m₀ẍ − c₀ẋ − k₀x^p) / α₀` at every sample.
pub fn init_z(
    ds: &Dataset,
    m0: f64,
    c0: f64,
    k0: f64,
    alpha0: f64,
    stiffness_power: u8,
) -> Result<Vec<f64>> {
    if alpha0 == 0.0 || !alpha0.is_finite() {
        return Err(Error::Config("alpha0 must be finite and nonzero".into()));
    }
    let a = ds.require(Channel::Xddot)?;
    let v = ds.require(Channel::Xdot)?;
    let x = ds.require(Channel::X)?;
    Ok((0..ds.len())
        .map(|i| (ds.u[i] - m0 * a[i] - c0 * v[i] - k0 * stiffness_term(x[i], stiffness_power)) / alpha0)
        .collect())
}

/// The contiguous window of `fraction · N` samples with the smallest RMS
/// displacement, as `[start, end)`.
pub fn small_amplitude_window(ds: &Dataset, fraction: f64) -> Result<(usize, usize)> {
    let x = ds.require(Channel::X)?;
    let n = x.len();
    let w = ((fraction * n as f64).round() as usize).clamp(3.min(n), n);
    let mut sum: f64 = x[..w].iter().map(|v| v * v).sum();
    let (mut best, mut best_start) = (sum, 0);
    for s in 1..=n - w {
        sum += x[s + w - 1].powi(2) - x[s - 1].powi(2);
        if sum < best {
            best = sum;
            best_start = s;
        }
    }
    Ok((best_start, best_start + w))
}

/// Random `α₀`: log-uniform in `[0.1, 10]` times
/// `std(u − m₀ẍ − c₀ẋ − k₀x^p) / std(x)`.
pub fn draw_alpha0(data: &[&Dataset], m0: f64, c0: f64, k0: f64, stiffness_power: u8, seed: u64) -> Result<f64> {
    let mut resid = Vec::new();
    let mut xs = Vec::new();
    for ds in data {
        resid.extend(init_z(ds, m0, c0, k0, 1.0, stiffness_power)?);
        xs.extend_from_slice(ds.require(Channel::X)?);
    }
    let (sr, sx) = (std(&resid), std(&xs));
    let base = if sr > 0.0 && sx > 0.0 { sr / sx } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e: f64 = rng.gen_range(-1.0..1.0);
    Ok(base * 10f64.powf(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetMeta;

    fn harmonic(n: usize) -> Dataset {
        let dt = 0.01;
        let w = 3.0;
        let t: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let x: Vec<f64> = t.iter().map(|t| (w * t).sin()).collect();
        let v: Vec<f64> = t.iter().map(|t| w * (w * t).cos()).collect();
        let a: Vec<f64> = x.iter().map(|x| -w * w * x).collect();
        let u = (0..n).map(|i| 2.0 * a[i] + 0.1 * v[i] + 30.0 * x[i]).collect();
        Dataset {
            t,
            u,
            x: Some(x),
            xdot: Some(v),
            xddot: Some(a),
            z: None,
            meta: DatasetMeta::default(),
        }
    }

    #[test]
    fn pure_harmonic_is_rank_deficient() {
        assert!(matches!(init_linear(&harmonic(500)), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn window_finds_quiet_segment() {
        let mut ds = harmonic(100);
        let x: Vec<f64> = (0..100).map(|i| if (40..50).contains(&i) { 0.0 } else { 1.0 }).collect();
        ds.x = Some(x);
        assert_eq!(small_amplitude_window(&ds, 0.1).unwrap(), (40, 50));
    }

    #[test]
    fn alpha_scaling_divides_z() {
        let ds = harmonic(50);
        let a = init_z(&ds, 1.0, 0.2, 3.0, 1.0, 1).unwrap();
        let b = init_z(&ds, 1.0, 0.2, 3.0, 4.0, 1).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p / 4.0 - q).abs() <= 1e-15 * p.abs().max(1.0));
        }
        assert!(init_z(&ds, 1.0, 0.2, 3.0, 0.0, 1).is_err());
    }
}
