//! Differentiable RK4 rollout with a free internal-variable trajectory.

use crate::adiff::Var;
use crate::error::{Error, Result};

/// Forcing sampled at the grid points and at the midpoints between them.
#[derive(Clone, Debug)]
pub struct StageForcing {
    pub at: Vec<f64>,
    pub mid: Vec<f64>,
}

/// Predicted `(x, ẋ, ẍ)` at the sample times, recorded on the tape.
pub struct Rollout<'t> {
    pub x: Vec<Var<'t>>,
    pub xdot: Vec<Var<'t>>,
    pub xddot: Vec<Var<'t>>,
}

/// Integrates `[x, ẋ]` with `ẍ = accel(x, ẋ, z, u)`, reading `z` at RK4
/// stage times by linear interpolation of `z` (the midpoint average at
/// half-steps).
pub fn rollout<'t>(
    x0: Var<'t>,
    v0: Var<'t>,
    z: &[Var<'t>],
    u: &StageForcing,
    dt: f64,
    accel: &mut dyn FnMut(Var<'t>, Var<'t>, Var<'t>, f64) -> Var<'t>,
) -> Result<Rollout<'t>> {
    let n = z.len();
    let mut out = Rollout {
        x: Vec::with_capacity(n),
        xdot: Vec::with_capacity(n),
        xddot: Vec::with_capacity(n),
    };
    let (mut x, mut v) = (x0, v0);
    let mut a = accel(x, v, z[0], u.at[0]);
    let h = dt;
    for i in 0..n {
        if !(x.value().is_finite() && v.value().is_finite() && a.value().is_finite()) {
            return Err(Error::Rollout { step: i });
        }
        out.x.push(x);
        out.xdot.push(v);
        out.xddot.push(a);
        if i + 1 == n {
            break;
        }
        let zm = (z[i] + z[i + 1]) * 0.5;
        let (k1x, k1v) = (v, a);
        let x2 = x + k1x * (0.5 * h);
        let v2 = v + k1v * (0.5 * h);
        let k2v = accel(x2, v2, zm, u.mid[i]);
        let x3 = x + v2 * (0.5 * h);
        let v3 = v + k2v * (0.5 * h);
        let k3v = accel(x3, v3, zm, u.mid[i]);
        let x4 = x + v3 * h;
        let v4 = v + k3v * h;
        let k4v = accel(x4, v4, z[i + 1], u.at[i + 1]);
        x = x + (k1x + (v2 + v3) * 2.0 + v4) * (h / 6.0);
        v = v + (k1v + (k2v + k3v) * 2.0 + k4v) * (h / 6.0);
        a = accel(x, v, z[i + 1], u.at[i + 1]);
    }
    Ok(out)
}

/// Second-order finite-difference derivative recorded on the tape.
pub fn diff_on_tape<'t>(z: &[Var<'t>], dt: f64) -> Vec<Var<'t>> {
    let n = z.len();
    if n < 3 {
        return z.iter().map(|v| v.constant(0.0)).collect();
    }
    let inv = 1.0 / (2.0 * dt);
    let mut d = Vec::with_capacity(n);
    d.push((z[1] * 4.0 - z[0] * 3.0 - z[2]) * inv);
    for i in 1..n - 1 {
        d.push((z[i + 1] - z[i - 1]) * inv);
    }
    d.push((z[n - 1] * 3.0 - z[n - 2] * 4.0 + z[n - 3]) * inv);
    d
}
