//! Bouc-Wen oscillator simulation with classical RK4.
//!
//! The state is `[x, ẋ, z]` with
//!
//! ```text
//! m ẍ + c ẋ + k x^p + α z = u(t)          (p = 1 or 3)
//! ż = A ẋ − β |ẋ| |z|^(n−1) z − γ ẋ |z|^n
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Channel, Dataset, DatasetMeta, NoiseMeta};
use crate::error::{Error, Result};
use crate::excitation::Excitation;

/// `[x, ẋ, z]`.
pub type State = [f64; 3];

/// Physical parameters of the hysteretic oscillator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoucWenParams {
    pub m: f64,
    pub c: f64,
    pub k: f64,
    pub alpha: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub beta: f64,
    pub gamma: f64,
    pub n: f64,
    #[serde(default = "default_power")]
    pub stiffness_power: u8,
}

fn default_power() -> u8 {
    1
}

impl BoucWenParams {
    /// The hysteretic benchmark: m=2, c=10, k=5e4, α=1, A=5e4, β=800, γ=−1100, n=1.
    pub fn benchmark() -> Self {
        Self {
            m: 2.0,
            c: 10.0,
            k: 5e4,
            alpha: 1.0,
            a: 5e4,
            beta: 800.0,
            gamma: -1100.0,
            n: 1.0,
            stiffness_power: 1,
        }
    }

    /// Cubic-stiffness system with fractional exponent: m=1, c=0.8, k=0.5,
    /// α=1, A=4, β=5, γ=−4, n=1.5.
    pub fn complex_structure() -> Self {
        Self {
            m: 1.0,
            c: 0.8,
            k: 0.5,
            alpha: 1.0,
            a: 4.0,
            beta: 5.0,
            gamma: -4.0,
            n: 1.5,
            stiffness_power: 3,
        }
    }

    /// Linear oscillator (α = 0).
    pub fn linear(m: f64, c: f64, k: f64) -> Self {
        Self {
            m,
            c,
            k,
            alpha: 0.0,
            a: 0.0,
            beta: 0.0,
            gamma: 0.0,
            n: 1.0,
            stiffness_power: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0) {
            return Err(Error::Config(format!("mass must be positive, got {}", self.m)));
        }
        if !(self.n > 0.0) {
            return Err(Error::Config(format!("exponent n must be positive, got {}", self.n)));
        }
        if !matches!(self.stiffness_power, 1 | 3) {
            return Err(Error::Config(format!(
                "stiffness_power must be 1 or 3, got {}",
                self.stiffness_power
            )));
        }
        let all = [self.c, self.k, self.alpha, self.a, self.beta, self.gamma];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("parameters must be finite".into()));
        }
        Ok(())
    }
}

/// `x^p` for the stiffness term.
pub fn stiffness_term(x: f64, power: u8) -> f64 {
    match power {
        1 => x,
        3 => x * x * x,
        p => x.powi(p as i32),
    }
}

/// Right-hand side of a hysteretic oscillator: motion law and link law.
pub trait Hysteretic {
    /// ẍ as a function of the state and forcing.
    fn acceleration(&self, x: f64, xdot: f64, z: f64, u: f64) -> f64;

    /// ż as a function of velocity and internal variable.
    fn link(&self, xdot: f64, z: f64) -> f64;

    fn derivative(&self, s: &State, u: f64) -> State {
        [s[1], self.acceleration(s[0], s[1], s[2], u), self.link(s[1], s[2])]
    }
}

impl Hysteretic for BoucWenParams {
    fn acceleration(&self, x: f64, xdot: f64, z: f64, u: f64) -> f64 {
        (u - self.c * xdot - self.k * stiffness_term(x, self.stiffness_power) - self.alpha * z) / self.m
    }

    fn link(&self, xdot: f64, z: f64) -> f64 {
        // |z|^(n-1) z == sign(z) |z|^n, which stays finite at z = 0 for n < 1
        let zn = z.abs().powf(self.n);
        let signed = if z > 0.0 {
            zn
        } else if z < 0.0 {
            -zn
        } else {
            0.0
        };
        self.a * xdot - self.beta * xdot.abs() * signed - self.gamma * xdot * zn
    }
}

/// One classical RK4 step with stage forcing evaluated at t, t+dt/2, t+dt.
pub fn rk4_step<S: Hysteretic + ?Sized>(
    state: State,
    t: f64,
    dt: f64,
    sys: &S,
    u: &dyn Fn(f64) -> f64,
) -> Result<State> {
    let fail = || Error::Integration {
        step: (t / dt).round().max(0.0) as usize,
        t,
    };
    if !state.iter().all(|v| v.is_finite()) || !(dt > 0.0) {
        return Err(fail());
    }
    let add = |s: &State, k: &State, h: f64| [s[0] + h * k[0], s[1] + h * k[1], s[2] + h * k[2]];
    let u_mid = u(t + 0.5 * dt);
    let k1 = sys.derivative(&state, u(t));
    let k2 = sys.derivative(&add(&state, &k1, 0.5 * dt), u_mid);
    let k3 = sys.derivative(&add(&state, &k2, 0.5 * dt), u_mid);
    let k4 = sys.derivative(&add(&state, &k3, dt), u(t + dt));
    let stages_ok = [k1, k2, k3, k4].iter().flatten().all(|v| v.is_finite());
    if !stages_ok {
        return Err(fail());
    }
    let mut next = state;
    for i in 0..3 {
        next[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(next)
}

/// Integration options shared by simulation and re-simulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegrateOptions {
    /// RK4 steps per sample interval.
    pub substeps: usize,
    /// Abort when any state component exceeds this magnitude.
    pub blowup: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            substeps: 1,
            blowup: 1e12,
        }
    }
}

/// Integrates `sys` on the sample grid `t_i = i / fs`, `i < n`.
pub fn integrate<S: Hysteretic + ?Sized>(
    sys: &S,
    u: &dyn Fn(f64) -> f64,
    initial: State,
    t0: f64,
    dt: f64,
    n: usize,
    opts: IntegrateOptions,
) -> Result<Vec<State>> {
    let sub = opts.substeps.max(1);
    let h = dt / sub as f64;
    let mut states = Vec::with_capacity(n);
    let mut s = initial;
    states.push(s);
    for i in 1..n {
        let base = t0 + (i - 1) as f64 * dt;
        for j in 0..sub {
            let t = base + j as f64 * h;
            s = rk4_step(s, t, h, sys, u).map_err(|_| Error::Integration { step: i, t })?;
        }
        if s.iter().any(|v| v.abs() > opts.blowup) {
            return Err(Error::Divergence {
                t: t0 + i as f64 * dt,
            });
        }
        states.push(s);
    }
    Ok(states)
}

/// Simulates `sys` under `excitation` and packages the result as a dataset.
///
/// `xddot` is evaluated from the motion law at each sample (not by
/// differencing), so the recorded channels satisfy it to rounding error.
pub fn simulate_system<S: Hysteretic + ?Sized>(
    sys: &S,
    excitation: &Excitation,
    initial: State,
    opts: IntegrateOptions,
) -> Result<Dataset> {
    let spec = excitation.spec();
    let n = spec.n_samples()?;
    let dt = spec.dt();
    let forcing = |t: f64| excitation.eval(t);
    let states = integrate(sys, &forcing, initial, 0.0, dt, n, opts)?;
    let t: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
    let u: Vec<f64> = t.iter().map(|&ti| excitation.eval(ti)).collect();
    let xddot = states
        .iter()
        .zip(&u)
        .map(|(s, &ui)| sys.acceleration(s[0], s[1], s[2], ui))
        .collect();
    Ok(Dataset {
        t,
        u,
        x: Some(states.iter().map(|s| s[0]).collect()),
        xdot: Some(states.iter().map(|s| s[1]).collect()),
        xddot: Some(xddot),
        z: Some(states.iter().map(|s| s[2]).collect()),
        meta: DatasetMeta {
            excitation: Some(spec.clone()),
            initial_state: Some(initial),
            substeps: (opts.substeps > 1).then_some(opts.substeps),
            ..Default::default()
        },
    })
}

/// Ground-truth trajectory of a Bouc-Wen oscillator.
pub fn simulate(
    params: &BoucWenParams,
    excitation: &Excitation,
    x0: f64,
    xdot0: f64,
    z0: f64,
) -> Result<Dataset> {
    simulate_with(params, excitation, [x0, xdot0, z0], IntegrateOptions::default())
}

pub fn simulate_with(
    params: &BoucWenParams,
    excitation: &Excitation,
    initial: State,
    opts: IntegrateOptions,
) -> Result<Dataset> {
    params.validate()?;
    let mut ds = simulate_system(params, excitation, initial, opts)?;
    ds.meta.params = Some(*params);
    Ok(ds)
}

/// Mean squared value.
pub fn power(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
}

/// Adds zero-mean Gaussian noise to each response channel at `snr_db`.
///
/// The noise variance of a channel is its mean squared value divided by
/// `10^(snr_db / 10)`. `u` and `z` are left untouched. An infinite SNR
/// returns the dataset unchanged.
pub fn add_noise(ds: &Dataset, snr_db: f64, seed: u64) -> Result<Dataset> {
    if snr_db.is_nan() {
        return Err(Error::Config("SNR must not be NaN".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(ds.clone());
    }
    let mut out = ds.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in Channel::ALL {
        if let Some(v) = out.channel_mut(c).as_mut() {
            if v.is_empty() {
                return Err(Error::Dataset(format!("channel `{}` is empty", c.name())));
            }
            let sigma = (power(v) / 10f64.powf(snr_db / 10.0)).sqrt();
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
                for x in v.iter_mut() {
                    *x += normal.sample(&mut rng);
                }
            }
        }
    }
    out.meta.noise = Some(NoiseMeta { snr_db, seed });
    Ok(out)
}

/// Empirical SNR in dB of `noisy` against `clean`.
pub fn measured_snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let noise: Vec<f64> = noisy.iter().zip(clean).map(|(a, b)| a - b).collect();
    10.0 * (power(clean) / power(&noise)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::{make_excitation, ExcitationSpec};

    fn zero_forcing() -> impl Fn(f64) -> f64 {
        |_| 0.0
    }

    #[test]
    fn equilibrium_is_fixed() {
        let p = BoucWenParams::benchmark();
        let s = rk4_step([0.0; 3], 0.0, 1e-3, &p, &zero_forcing()).unwrap();
        assert_eq!(s, [0.0; 3]);
    }

    #[test]
    fn undamped_linear_matches_cosine() {
        let p = BoucWenParams::linear(1.0, 0.0, 1.0);
        let u = zero_forcing();
        let dt = 1e-3;
        let mut s = [1.0, 0.0, 0.0];
        for i in 0..1000 {
            s = rk4_step(s, i as f64 * dt, dt, &p, &u).unwrap();
        }
        assert!((s[0] - 1f64.cos()).abs() < 1e-9, "{}", s[0] - 1f64.cos());
    }

    #[test]
    fn non_finite_state_is_an_error() {
        let p = BoucWenParams::benchmark();
        let err = rk4_step([f64::NAN, 0.0, 0.0], 0.5, 0.1, &p, &zero_forcing()).unwrap_err();
        assert!(matches!(err, Error::Integration { step: 5, .. }));
    }

    #[test]
    fn complex_recipe_sample_count() {
        let e = make_excitation(&ExcitationSpec::sinusoid(1.0, 2.0, 6.0, 100.0)).unwrap();
        let ds = simulate(&BoucWenParams::complex_structure(), &e, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(ds.len(), 600);
        ds.validate().unwrap();
    }

    #[test]
    fn rest_stays_at_rest() {
        let e = make_excitation(&ExcitationSpec::sinusoid(0.0, 2.0, 1.0, 100.0)).unwrap();
        let ds = simulate(&BoucWenParams::benchmark(), &e, 0.0, 0.0, 0.0).unwrap();
        for c in Channel::ALL {
            assert!(ds.channel(c).unwrap().iter().all(|&v| v == 0.0));
        }
        assert!(ds.z.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = BoucWenParams::benchmark();
        p.m = 0.0;
        assert!(p.validate().is_err());
        let mut p = BoucWenParams::benchmark();
        p.stiffness_power = 2;
        assert!(p.validate().is_err());
    }

    #[test]
    fn link_is_finite_at_zero_for_small_n() {
        let mut p = BoucWenParams::complex_structure();
        p.n = 0.5;
        assert_eq!(p.link(1.0, 0.0), p.a);
    }

    #[test]
    fn infinite_snr_is_identity() {
        let e = make_excitation(&ExcitationSpec::sinusoid(1.0, 2.0, 1.0, 100.0)).unwrap();
        let ds = simulate(&BoucWenParams::complex_structure(), &e, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(add_noise(&ds, f64::INFINITY, 3).unwrap(), ds);
    }
}
