//! External forcing signals.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The shape of a forcing signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExcitationKind {
    /// `amplitude * sin(2π φ(t))` with linearly increasing instantaneous
    /// frequency from `f_start` to `f_end` over the record.
    Sinesweep {
        amplitude: f64,
        f_start: f64,
        f_end: f64,
    },
    /// Flat-amplitude random-phase sum of cosines inside `[band_low, band_high]`.
    ///
    /// With `n_components = None` there is one component per DFT bin
    /// (multiples of `1 / duration`) in the band. The RMS value of the sum is
    /// `amplitude / √2`, the same as a sinusoid of peak `amplitude`.
    Multisine {
        band_low: f64,
        band_high: f64,
        n_components: Option<usize>,
        seed: u64,
        amplitude: f64,
    },
    /// `amplitude * sin(angular_frequency * t)`.
    Sinusoid {
        amplitude: f64,
        angular_frequency: f64,
    },
    /// Samples read from a CSV with `t,u` columns, linearly interpolated.
    FromFile { path: PathBuf },
}

/// A forcing description plus its record length and sampling rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSpec {
    #[serde(flatten)]
    pub kind: ExcitationKind,
    pub duration: f64,
    pub sample_rate: f64,
}

impl ExcitationSpec {
    pub fn new(kind: ExcitationKind, duration: f64, sample_rate: f64) -> Self {
        Self {
            kind,
            duration,
            sample_rate,
        }
    }

    pub fn sinusoid(amplitude: f64, angular_frequency: f64, duration: f64, sample_rate: f64) -> Self {
        Self::new(
            ExcitationKind::Sinusoid {
                amplitude,
                angular_frequency,
            },
            duration,
            sample_rate,
        )
    }

    pub fn sinesweep(amplitude: f64, f_start: f64, f_end: f64, duration: f64, sample_rate: f64) -> Self {
        Self::new(
            ExcitationKind::Sinesweep {
                amplitude,
                f_start,
                f_end,
            },
            duration,
            sample_rate,
        )
    }

    pub fn multisine(
        band_low: f64,
        band_high: f64,
        n_components: Option<usize>,
        seed: u64,
        amplitude: f64,
        duration: f64,
        sample_rate: f64,
    ) -> Self {
        Self::new(
            ExcitationKind::Multisine {
                band_low,
                band_high,
                n_components,
                seed,
                amplitude,
            },
            duration,
            sample_rate,
        )
    }

    /// Number of samples, `duration * sample_rate`, which must be integral.
    pub fn n_samples(&self) -> Result<usize> {
        let n = self.duration * self.sample_rate;
        let rounded = n.round();
        if !(n.is_finite() && rounded >= 2.0 && (n - rounded).abs() < 1e-6) {
            return Err(Error::Config(format!(
                "duration {} s at {} Hz does not give an integer sample count >= 2",
                self.duration, self.sample_rate
            )));
        }
        Ok(rounded as usize)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }
}

#[derive(Clone, Debug)]
enum Compiled {
    Sweep {
        amplitude: f64,
        f_start: f64,
        rate: f64,
    },
    Multisine(Vec<(f64, f64, f64)>),
    Sine {
        amplitude: f64,
        omega: f64,
    },
    Samples {
        t0: f64,
        dt: f64,
        u: Vec<f64>,
    },
}

/// An evaluable forcing signal.
#[derive(Clone, Debug)]
pub struct Excitation {
    spec: ExcitationSpec,
    compiled: Compiled,
}

/// Builds an evaluable excitation from its description.
pub fn make_excitation(spec: &ExcitationSpec) -> Result<Excitation> {
    if !(spec.duration > 0.0 && spec.sample_rate > 0.0) {
        return Err(Error::Config(
            "excitation duration and sample rate must be positive".into(),
        ));
    }
    let compiled = match &spec.kind {
        ExcitationKind::Sinesweep {
            amplitude,
            f_start,
            f_end,
        } => {
            if !(*f_start > 0.0 && *f_end > 0.0) {
                return Err(Error::Config("sinesweep frequencies must be positive".into()));
            }
            Compiled::Sweep {
                amplitude: *amplitude,
                f_start: *f_start,
                rate: (f_end - f_start) / spec.duration,
            }
        }
        ExcitationKind::Multisine {
            band_low,
            band_high,
            n_components,
            seed,
            amplitude,
        } => {
            if !(*band_low >= 0.0 && band_low < band_high) {
                return Err(Error::Config(format!(
                    "invalid multisine band [{band_low}, {band_high}]"
                )));
            }
            let freqs: Vec<f64> = match n_components {
                Some(0) => return Err(Error::Config("multisine needs at least one component".into())),
                Some(1) => vec![*band_low],
                Some(n) => (0..*n)
                    .map(|i| band_low + (band_high - band_low) * i as f64 / (*n - 1) as f64)
                    .collect(),
                None => {
                    let df = 1.0 / spec.duration;
                    let first = (band_low / df).ceil() as usize;
                    let last = (band_high / df).floor() as usize;
                    (first.max(1)..=last).map(|k| k as f64 * df).collect()
                }
            };
            if freqs.is_empty() {
                return Err(Error::Config("multisine band contains no DFT bin".into()));
            }
            let amp = amplitude / (freqs.len() as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Compiled::Multisine(
                freqs
                    .into_iter()
                    .map(|f| (2.0 * PI * f, rng.gen_range(0.0..2.0 * PI), amp))
                    .collect(),
            )
        }
        ExcitationKind::Sinusoid {
            amplitude,
            angular_frequency,
        } => Compiled::Sine {
            amplitude: *amplitude,
            omega: *angular_frequency,
        },
        ExcitationKind::FromFile { path } => {
            let (t, u) = crate::io::read_forcing_csv(path)?;
            let dt = crate::dataset::uniform_step(&t)?;
            Compiled::Samples { t0: t[0], dt, u }
        }
    };
    Ok(Excitation {
        spec: spec.clone(),
        compiled,
    })
}

impl Excitation {
    /// Wraps already-sampled forcing (uniform step) for interpolation.
    pub fn from_samples(t0: f64, dt: f64, u: Vec<f64>, path: PathBuf) -> Self {
        let duration = dt * u.len() as f64;
        Self {
            spec: ExcitationSpec::new(ExcitationKind::FromFile { path }, duration, 1.0 / dt),
            compiled: Compiled::Samples { t0, dt, u },
        }
    }

    pub fn spec(&self) -> &ExcitationSpec {
        &self.spec
    }

    /// Forcing at an arbitrary time.
    pub fn eval(&self, t: f64) -> f64 {
        match &self.compiled {
            Compiled::Sweep {
                amplitude,
                f_start,
                rate,
            } => amplitude * (2.0 * PI * (f_start * t + 0.5 * rate * t * t)).sin(),
            Compiled::Multisine(components) => components
                .iter()
                .map(|&(w, phase, a)| a * (w * t + phase).cos())
                .sum(),
            Compiled::Sine { amplitude, omega } => amplitude * (omega * t).sin(),
            Compiled::Samples { t0, dt, u } => interpolate(*t0, *dt, u, t),
        }
    }

    /// Instantaneous frequency in Hz where it is defined in closed form.
    pub fn instantaneous_frequency(&self, t: f64) -> Option<f64> {
        match &self.compiled {
            Compiled::Sweep { f_start, rate, .. } => Some(f_start + rate * t),
            Compiled::Sine { omega, .. } => Some(omega / (2.0 * PI)),
            _ => None,
        }
    }

    /// Samples the signal on the spec's time grid.
    pub fn sample(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.spec.n_samples()?;
        let dt = self.spec.dt();
        let t: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let u = t.iter().map(|&ti| self.eval(ti)).collect();
        Ok((t, u))
    }
}

/// Linear interpolation on a uniform grid, clamped at both ends.
pub fn interpolate(t0: f64, dt: f64, u: &[f64], t: f64) -> f64 {
    if u.is_empty() {
        return 0.0;
    }
    let s = (t - t0) / dt;
    if s <= 0.0 {
        return u[0];
    }
    let i = s.floor() as usize;
    if i + 1 >= u.len() {
        return u[u.len() - 1];
    }
    let w = s - i as f64;
    u[i] * (1.0 - w) + u[i + 1] * w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_frequency_endpoints() {
        let spec = ExcitationSpec::sinesweep(40.0, 20.0, 50.0, 2.0, 3000.0);
        let e = make_excitation(&spec).unwrap();
        assert!((e.instantaneous_frequency(0.0).unwrap() - 20.0).abs() < 1e-12);
        assert!((e.instantaneous_frequency(2.0).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_sweep_is_a_sinusoid() {
        let sweep = make_excitation(&ExcitationSpec::sinesweep(3.0, 7.0, 7.0, 1.0, 100.0)).unwrap();
        let sine = make_excitation(&ExcitationSpec::sinusoid(3.0, 2.0 * PI * 7.0, 1.0, 100.0)).unwrap();
        for i in 0..100 {
            let t = i as f64 * 0.01;
            assert!((sweep.eval(t) - sine.eval(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(make_excitation(&ExcitationSpec::sinesweep(1.0, 0.0, 5.0, 1.0, 10.0)).is_err());
        assert!(make_excitation(&ExcitationSpec::multisine(150.0, 5.0, None, 1, 1.0, 1.0, 10.0)).is_err());
        assert!(ExcitationSpec::sinusoid(1.0, 1.0, 1.005, 100.0).n_samples().is_err());
    }

    #[test]
    fn multisine_rms_and_determinism() {
        let spec = ExcitationSpec::multisine(5.0, 150.0, None, 3, 40.0, 2.0, 3000.0);
        let a = make_excitation(&spec).unwrap().sample().unwrap().1;
        let b = make_excitation(&spec).unwrap().sample().unwrap().1;
        assert_eq!(a, b);
        let rms = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
        assert!((rms - 40.0 / 2f64.sqrt()).abs() < 1e-6 * 40.0, "rms {rms}");
    }

    #[test]
    fn interpolation_clamps() {
        let u = [0.0, 1.0, 4.0];
        assert_eq!(interpolate(0.0, 1.0, &u, -1.0), 0.0);
        assert_eq!(interpolate(0.0, 1.0, &u, 0.5), 0.5);
        assert_eq!(interpolate(0.0, 1.0, &u, 1.5), 2.5);
        assert_eq!(interpolate(0.0, 1.0, &u, 9.0), 4.0);
    }
}
