//! Run configuration.
//!
//! A configuration starts from one of the bundled experiment presets and
//! may override any field from a JSON file or the command line. Its digest
//! (SHA-256 of the canonical JSON, output directory excluded) is written
//! into every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::excitation::ExcitationSpec;
use crate::gauge::GaugeOptions;
use crate::learner::{Case, LearnOptions, ObservationSpec};
use crate::simulate::BoucWenParams;
use crate::sindy::default_thresholds;
use crate::symreg::SRConfig;

/// Bundled experiment recipes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Hysteretic benchmark: sine-sweep training, multisine testing.
    Benchmark,
    /// Cubic-stiffness system with a fractional exponent, known motion law.
    Complex,
    /// The same system with both laws unknown.
    ComplexFull,
}

impl Experiment {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "benchmark" => Some(Experiment::Benchmark),
            "complex" => Some(Experiment::Complex),
            "complex_full" | "complex-full" => Some(Experiment::ComplexFull),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Benchmark => "benchmark",
            Experiment::Complex => "complex",
            Experiment::ComplexFull => "complex_full",
        }
    }
}

/// Where the ground-truth system comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum SystemSpec {
    /// Simulate a Bouc-Wen oscillator.
    Params { params: BoucWenParams },
    /// A measured record with `t,u` and at least one of `x,xdot,xddot`.
    Csv { path: PathBuf },
}

/// Settings for the sparse-regression baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SindyOptions {
    pub thresholds: Vec<f64>,
    /// Trailing fraction of each training record used to pick the threshold.
    pub holdout_fraction: f64,
    pub ridge: f64,
}

impl Default for SindyOptions {
    fn default() -> Self {
        Self {
            thresholds: default_thresholds(),
            holdout_fraction: 0.2,
            ridge: crate::sindy::DEFAULT_RIDGE,
        }
    }
}

/// How a member is picked from a Pareto front.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Selection {
    /// Largest loss drop along the front.
    Knee,
    /// Simplest member whose closed-loop error on the training windows is
    /// within `tolerance` (relative) plus `floor` (NRMSE points) of the
    /// best member's. The floor keeps round-off sized differences between
    /// near-exact fits from deciding the pick.
    Resimulation {
        tolerance: f64,
        #[serde(default = "default_fit_floor")]
        floor: f64,
    },
}

impl Default for Selection {
    fn default() -> Self {
        Selection::Resimulation { tolerance: 0.05, floor: default_fit_floor() }
    }
}

fn default_fit_floor() -> f64 {
    0.01
}

/// Everything a run needs. Every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub system: SystemSpec,
    /// Training excitation.
    pub excitation: ExcitationSpec,
    /// Different excitation for the second test, if any.
    pub test_excitation: Option<ExcitationSpec>,
    /// Dedicated low-amplitude record for the linear initialization; when
    /// absent the quietest window of the training data is used.
    pub small_excitation: Option<ExcitationSpec>,
    /// Training initial conditions `(x0, xdot0)`; `z0 = 0`.
    pub initial_conditions: Vec<[f64; 2]>,
    /// Held-out initial conditions.
    pub test_initial_conditions: Vec<[f64; 2]>,
    /// Leading fraction of a single training record used for learning; the
    /// rest is the first test window.
    pub train_fraction: f64,
    /// Signal-to-noise ratio of the injected noise; `None` is noise-free.
    pub noise_snr_db: Option<f64>,
    /// Cutoff of the zero-phase low-pass applied to the observed channels
    /// before learning; `None` leaves them untouched.
    pub prefilter_hz: Option<f64>,
    pub observation: ObservationSpec,
    pub case: Case,
    pub learner: LearnOptions,
    pub sr: SRConfig,
    /// Seeded symbolic-regression runs whose fronts are merged.
    pub sr_restarts: usize,
    pub selection: Selection,
    pub sindy: SindyOptions,
    /// Run the sparse-regression baseline.
    pub baseline: bool,
    pub gauge: GaugeOptions,
    /// Master seed; the learner, noise and regression streams derive from it.
    pub seed: u64,
    /// Not part of the digest.
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Experiment::Benchmark)
    }
}

impl RunConfig {
    pub fn preset(experiment: Experiment) -> Self {
        match experiment {
            Experiment::Benchmark => Self {
                experiment,
                system: SystemSpec::Params {
                    params: BoucWenParams::benchmark(),
                },
                excitation: ExcitationSpec::sinesweep(40.0, 20.0, 50.0, 2.0, 3000.0),
                test_excitation: Some(ExcitationSpec::multisine(5.0, 150.0, None, 1, 40.0, 1.0, 3000.0)),
                small_excitation: Some(ExcitationSpec::sinesweep(2.0, 20.0, 50.0, 1.0, 3000.0)),
                initial_conditions: vec![[0.0, 0.0]],
                test_initial_conditions: Vec::new(),
                train_fraction: 0.6,
                noise_snr_db: None,
                prefilter_hz: None,
                observation: ObservationSpec::all(),
                case: Case::HysteresisDiscovery,
                learner: LearnOptions::default(),
                sr: SRConfig::default(),
                sr_restarts: 3,
                selection: Selection::default(),
                sindy: SindyOptions::default(),
                baseline: false,
                gauge: GaugeOptions::default(),
                seed: 0,
                out_dir: PathBuf::from("runs"),
            },
            Experiment::Complex | Experiment::ComplexFull => Self {
                experiment,
                system: SystemSpec::Params {
                    params: BoucWenParams::complex_structure(),
                },
                excitation: ExcitationSpec::sinusoid(1.0, 2.0, 6.0, 100.0),
                test_excitation: None,
                small_excitation: None,
                initial_conditions: vec![[0.0, 0.0], [0.5, 0.0], [-0.5, 0.5], [1.0, -1.0], [0.0, 1.0]],
                test_initial_conditions: vec![[0.3, -0.6]],
                train_fraction: 1.0,
                noise_snr_db: None,
                prefilter_hz: None,
                observation: ObservationSpec::all(),
                case: if experiment == Experiment::Complex {
                    Case::HysteresisDiscovery
                } else {
                    Case::FullEquationDiscovery
                },
                learner: LearnOptions {
                    stiffness_power: 3,
                    ..LearnOptions::default()
                },
                sr: SRConfig::default(),
                sr_restarts: 3,
                selection: Selection::default(),
                sindy: SindyOptions::default(),
                baseline: true,
                gauge: GaugeOptions::default(),
                seed: 0,
                out_dir: PathBuf::from("runs"),
            },
        }
    }

    /// Sets the noise level together with the smoothing it calls for: the
    /// weak-form gauge score over windows of about 13 ms and Savitzky-Golay
    /// differentiation over about 3 ms for the link regression. `None`
    /// restores the pointwise forms, which are more accurate on clean data.
    pub fn with_noise(mut self, snr_db: Option<f64>) -> Self {
        self.noise_snr_db = snr_db;
        let fs = self.excitation.sample_rate;
        (self.gauge.weak_window, self.gauge.link_smoothing) = match snr_db {
            Some(_) => (((fs / 75.0).round() as usize).max(2), (fs / 300.0).round() as usize),
            None => (0, 0),
        };
        self
    }

    /// Applies the JSON object `overrides` on top of the preset named by its
    /// `experiment` field (default: benchmark).
    pub fn from_json(text: &str) -> Result<Self> {
        let overrides: Value = crate::io::parse_json(text)?;
        let experiment = match overrides.get("experiment") {
            None => Experiment::Benchmark,
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("experiment: {e}")))?,
        };
        let mut base = serde_json::to_value(Self::preset(experiment))?;
        merge(&mut base, &overrides);
        let cfg: RunConfig = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!("train_fraction must lie in (0, 1], got {}", self.train_fraction)));
        }
        if self.initial_conditions.is_empty() {
            return Err(Error::Config("at least one training initial condition is required".into()));
        }
        if let Some(snr) = self.noise_snr_db {
            if !snr.is_finite() {
                return Err(Error::Config("noise_snr_db must be finite; omit it for noise-free data".into()));
            }
        }
        if let Some(f) = self.prefilter_hz {
            if !(f > 0.0 && f < 0.5 * self.excitation.sample_rate) {
                return Err(Error::Config(format!("prefilter_hz must lie in (0, Nyquist), got {f}")));
            }
        }
        if let SystemSpec::Params { params } = &self.system {
            params.validate()?;
        }
        if self.sr_restarts == 0 {
            return Err(Error::Config("sr_restarts must be at least 1".into()));
        }
        if let Selection::Resimulation { tolerance, floor } = self.selection {
            if !(tolerance >= 0.0 && tolerance.is_finite()) {
                return Err(Error::Config(format!("selection tolerance must be finite and non-negative, got {tolerance}")));
            }
            if !(floor >= 0.0 && floor.is_finite()) {
                return Err(Error::Config(format!("selection floor must be finite and non-negative, got {floor}")));
            }
        }
        if !(self.sindy.holdout_fraction > 0.0 && self.sindy.holdout_fraction < 1.0) {
            return Err(Error::Config("sindy.holdout_fraction must lie in (0, 1)".into()));
        }
        self.observation.validate()?;
        self.sr.validate()
    }

    /// SHA-256 of the canonical JSON form, excluding `out_dir`.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("out_dir");
        }
        let text = serde_json::to_string(&v).expect("value serializes");
        let hash = Sha256::digest(text.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// First twelve hex digits of [`RunConfig::digest`].
    pub fn short_digest(&self) -> String {
        self.digest()[..12].to_string()
    }

    pub fn noise_seed(&self, record: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(1000 + record as u64)
    }
}

/// Recursively overlays `patch` on `base`; objects merge, everything else
/// replaces.
fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for e in [Experiment::Benchmark, Experiment::Complex, Experiment::ComplexFull] {
            let cfg = RunConfig::preset(e);
            cfg.validate().unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn overrides_merge_into_preset() {
        let cfg = RunConfig::from_json(r#"{"experiment": "complex", "seed": 7, "learner": {"max_iters": 10}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.learner.max_iters, 10);
        assert_eq!(cfg.learner.stiffness_power, 3);
        assert_eq!(cfg.initial_conditions.len(), 5);
    }

    #[test]
    fn noise_brings_smoothing() {
        let cfg = RunConfig::preset(Experiment::Benchmark).with_noise(Some(20.0));
        assert_eq!(cfg.noise_snr_db, Some(20.0));
        assert_eq!((cfg.gauge.weak_window, cfg.gauge.link_smoothing), (40, 10));
        let clean = cfg.with_noise(None);
        assert_eq!(clean, RunConfig::preset(Experiment::Benchmark));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"sed": 1}"#), Err(Error::Config(_))));
    }

    #[test]
    fn digest_ignores_output_directory() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
