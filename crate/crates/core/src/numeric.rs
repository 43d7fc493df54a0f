//! Small numerical helpers shared across modules.

use nalgebra::{DMatrix, DVector};

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Pearson correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Second-order finite-difference derivative on a uniform grid.
///
/// Central differences inside, one-sided three-point stencils at both ends,
/// so polynomials of degree ≤ 2 are differentiated exactly. Needs ≥ 3 samples;
/// shorter inputs fall back to a single forward difference (or zeros).
pub fn diff_central(v: &[f64], dt: f64) -> Vec<f64> {
    let n = v.len();
    match n {
        0 => return Vec::new(),
        1 => return vec![0.0],
        2 => {
            let d = (v[1] - v[0]) / dt;
            return vec![d, d];
        }
        _ => {}
    }
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (v[i + 1] - v[i - 1]) / (2.0 * dt);
    }
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dt);
    d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dt);
    d
}

/// Fourth-order central differences inside, [`diff_central`] within two
/// samples of either end.
pub fn diff_fourth(v: &[f64], dt: f64) -> Vec<f64> {
    let n = v.len();
    let mut d = diff_central(v, dt);
    if n >= 5 {
        for i in 2..n - 2 {
            d[i] = (-v[i + 2] + 8.0 * v[i + 1] - 8.0 * v[i - 1] + v[i - 2]) / (12.0 * dt);
        }
    }
    d
}

/// Weights `w` with `Σ wⱼ v(offsetⱼ)` equal to the `deriv`-th derivative
/// at `at` of the least-squares polynomial of degree `order` through the
/// samples (offsets in units of the sample step).
fn savgol_weights(offsets: &[f64], at: f64, order: usize, deriv: usize) -> Vec<f64> {
    let a = DMatrix::from_fn(offsets.len(), order + 1, |i, k| offsets[i].powi(k as i32));
    let e = DVector::from_fn(order + 1, |k, _| {
        if k < deriv {
            0.0
        } else {
            let falling: f64 = ((k - deriv + 1)..=k).map(|f| f as f64).product();
            falling * at.powi((k - deriv) as i32)
        }
    });
    let gram = a.transpose() * &a;
    let c = gram.lu().solve(&e).expect("window wider than the polynomial degree");
    (a * c).iter().copied().collect()
}

/// Savitzky-Golay smoothing (`deriv = 0`) or differentiation over windows
/// of `2·half + 1` samples; the first and last `half` samples use the
/// nearest full window. Returns the input unchanged (or [`diff_fourth`])
/// when `half` is 0 or the record is too short.
pub fn savgol(v: &[f64], dt: f64, half: usize, order: usize, deriv: usize) -> Vec<f64> {
    let n = v.len();
    let width = 2 * half + 1;
    if half == 0 || n < width || order >= width {
        return match deriv {
            0 => v.to_vec(),
            _ => diff_fourth(v, dt),
        };
    }
    let scale = dt.powi(-(deriv as i32));
    let offsets: Vec<f64> = (0..width).map(|j| j as f64 - half as f64).collect();
    let apply = |w: &[f64], start: usize| -> f64 { w.iter().zip(&v[start..start + width]).map(|(a, b)| a * b).sum::<f64>() * scale };
    let centre = savgol_weights(&offsets, 0.0, order, deriv);
    let mut out = vec![0.0; n];
    for i in half..n - half {
        out[i] = apply(&centre, i - half);
    }
    for i in 0..half {
        let at = i as f64 - half as f64;
        out[i] = apply(&savgol_weights(&offsets, at, order, deriv), 0);
        out[n - 1 - i] = apply(&savgol_weights(&offsets, -at, order, deriv), n - width);
    }
    out
}

/// Second-order section `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Clone, Copy, Debug)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// Low-pass section of quality `q` at `cutoff` (bilinear transform with
    /// prewarping).
    fn lowpass(cutoff: f64, fs: f64, q: f64) -> Self {
        let k = (std::f64::consts::PI * cutoff / fs).tan();
        let norm = 1.0 / (1.0 + k / q + k * k);
        let b0 = k * k * norm;
        Self {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
        }
    }

    /// Direct form II transposed, starting from the steady state for a
    /// constant input equal to `v[0]`.
    fn run(&self, v: &[f64]) -> Vec<f64> {
        let Some(&x0) = v.first() else {
            return Vec::new();
        };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let y0 = gain * x0;
        let mut s1 = y0 - b0 * x0;
        let mut s2 = b2 * x0 - a2 * y0;
        v.iter()
            .map(|&x| {
                let y = b0 * x + s1;
                s1 = b1 * x - a1 * y + s2;
                s2 = b2 * x - a2 * y;
                y
            })
            .collect()
    }
}

/// Zero-phase fourth-order Butterworth low-pass: forward and backward
/// passes over the signal extended by odd reflection at both ends.
pub fn lowpass_zero_phase(v: &[f64], fs: f64, cutoff: f64) -> Vec<f64> {
    let n = v.len();
    if n < 4 || !(cutoff > 0.0 && cutoff < 0.5 * fs) {
        return v.to_vec();
    }
    // Butterworth pole pairs for order 4.
    let sections = [0.541_196_100_146_197, 1.306_562_964_876_376].map(|q| Biquad::lowpass(cutoff, fs, q));
    let pad = (3.0 * fs / cutoff).ceil() as usize;
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * v[0] - v[i]));
    ext.extend_from_slice(v);
    ext.extend((1..=pad).map(|i| 2.0 * v[n - 1] - v[n - 1 - i]));
    let mut y = ext;
    for s in &sections {
        y = s.run(&y);
    }
    y.reverse();
    for s in &sections {
        y = s.run(&y);
    }
    y.reverse();
    y[pad..pad + n].to_vec()
}

/// Cumulative trapezoidal integral starting from `initial`.
pub fn cumtrapz(v: &[f64], dt: f64, initial: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    let mut acc = initial;
    for (i, &x) in v.iter().enumerate() {
        if i > 0 {
            acc += 0.5 * dt * (v[i - 1] + x);
        }
        out.push(acc);
    }
    out
}

/// Ridge-regularised least squares `min ||A w - y||² + ridge·N·||w||²`
/// over the given columns. Returns `None` when the system cannot be solved.
pub fn lstsq(columns: &[&[f64]], y: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let k = columns.len();
    if k == 0 {
        return Some(Vec::new());
    }
    let n = y.len();
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for i in 0..k {
        let ci = columns[i];
        rhs[i] = dot(ci, y);
        for j in 0..=i {
            let g = dot(ci, columns[j]);
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }
    if ridge > 0.0 {
        for i in 0..k {
            gram[(i, i)] += ridge * n as f64;
        }
    }
    solve_spd(gram, rhs)
}

/// [`lstsq`] on columns rescaled to unit RMS; `ridge` is relative to the
/// rescaled Gram matrix. All-zero columns get a zero coefficient.
pub fn lstsq_equilibrated(columns: &[&[f64]], y: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let scales: Vec<f64> = columns.iter().map(|c| rms(c)).collect();
    let live: Vec<usize> = (0..columns.len()).filter(|&j| scales[j] > 0.0 && scales[j].is_finite()).collect();
    let scaled: Vec<Vec<f64>> = live.iter().map(|&j| columns[j].iter().map(|v| v / scales[j]).collect()).collect();
    let refs: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
    let w = lstsq(&refs, y, ridge)?;
    let mut out = vec![0.0; columns.len()];
    for (k, &j) in live.iter().enumerate() {
        out[j] = w[k] / scales[j];
    }
    Some(out)
}

fn solve_spd(gram: DMatrix<f64>, rhs: DVector<f64>) -> Option<Vec<f64>> {
    if let Some(ch) = gram.clone().cholesky() {
        let w = ch.solve(&rhs);
        if w.iter().all(|v| v.is_finite()) {
            return Some(w.iter().copied().collect());
        }
    }
    let w = gram.lu().solve(&rhs)?;
    w.iter().all(|v| v.is_finite()).then(|| w.iter().copied().collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Condition number (ratio of extreme eigenvalues) of a symmetric matrix.
pub fn symmetric_condition(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &e in eig.eigenvalues.iter() {
        lo = lo.min(e.abs());
        hi = hi.max(e.abs());
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}
