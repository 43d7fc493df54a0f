//! Uniformly sampled response records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::{make_excitation, Excitation, ExcitationKind, ExcitationSpec};
use crate::simulate::BoucWenParams;

/// One of the three kinematic response channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    #[serde(alias = "displacement")]
    X,
    #[serde(alias = "velocity")]
    Xdot,
    #[serde(alias = "acceleration")]
    Xddot,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::X, Channel::Xdot, Channel::Xddot];

    pub fn name(self) -> &'static str {
        match self {
            Channel::X => "x",
            Channel::Xdot => "xdot",
            Channel::Xddot => "xddot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "x" | "displacement" => Some(Channel::X),
            "xdot" | "velocity" => Some(Channel::Xdot),
            "xddot" | "acceleration" => Some(Channel::Xddot),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseMeta {
    pub snr_db: f64,
    pub seed: u64,
}

/// Provenance of a dataset, stored in the `.meta.json` sidecar.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<BoucWenParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excitation: Option<ExcitationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseMeta>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub derived: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
}

/// Excitation and response samples on a uniform time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub x: Option<Vec<f64>>,
    pub xdot: Option<Vec<f64>>,
    pub xddot: Option<Vec<f64>>,
    /// Internal variable, when known (simulated data).
    pub z: Option<Vec<f64>>,
    pub meta: DatasetMeta,
}

/// Checks that `t` is uniform to within 1e-6 relative jitter; returns the step.
pub fn uniform_step(t: &[f64]) -> Result<f64> {
    if t.len() < 2 {
        return Err(Error::Dataset("need at least two samples".into()));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Dataset("time stamps must increase".into()));
    }
    for (i, w) in t.windows(2).enumerate() {
        let step = w[1] - w[0];
        if ((step - dt) / dt).abs() > 1e-6 {
            return Err(Error::Dataset(format!(
                "non-uniform time step at row {}: {step} vs {dt}",
                i + 1
            )));
        }
    }
    Ok(dt)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Sample step (assumes the grid was validated on construction).
    pub fn dt(&self) -> f64 {
        (self.t[self.len() - 1] - self.t[0]) / (self.len() - 1) as f64
    }

    pub fn channel(&self, c: Channel) -> Option<&[f64]> {
        match c {
            Channel::X => self.x.as_deref(),
            Channel::Xdot => self.xdot.as_deref(),
            Channel::Xddot => self.xddot.as_deref(),
        }
    }

    pub fn channel_mut(&mut self, c: Channel) -> &mut Option<Vec<f64>> {
        match c {
            Channel::X => &mut self.x,
            Channel::Xdot => &mut self.xdot,
            Channel::Xddot => &mut self.xddot,
        }
    }

    /// The channel, or a dataset error naming it.
    pub fn require(&self, c: Channel) -> Result<&[f64]> {
        self.channel(c)
            .ok_or_else(|| Error::Dataset(format!("channel `{}` is missing", c.name())))
    }

    pub fn require_z(&self) -> Result<&[f64]> {
        self.z
            .as_deref()
            .ok_or_else(|| Error::Dataset("internal variable `z` is missing".into()))
    }

    /// Structural checks: equal channel lengths, N >= 2, uniform step.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n < 2 {
            return Err(Error::Dataset("need at least two samples".into()));
        }
        if self.u.len() != n {
            return Err(Error::Dataset("`u` length differs from `t`".into()));
        }
        for c in Channel::ALL {
            if let Some(v) = self.channel(c) {
                if v.len() != n {
                    return Err(Error::Dataset(format!("`{}` length differs from `t`", c.name())));
                }
            }
        }
        if let Some(z) = &self.z {
            if z.len() != n {
                return Err(Error::Dataset("`z` length differs from `t`".into()));
            }
        }
        if self.x.is_none() && self.xdot.is_none() && self.xddot.is_none() {
            return Err(Error::Dataset("no response channel present".into()));
        }
        uniform_step(&self.t).map(|_| ())
    }

    /// Forcing as a function of time: the closed form when the excitation
    /// was generated, linear interpolation of `u` otherwise.
    pub fn forcing(&self) -> Excitation {
        if let Some(spec) = &self.meta.excitation {
            if !matches!(spec.kind, ExcitationKind::FromFile { .. }) {
                if let Ok(e) = make_excitation(spec) {
                    return e;
                }
            }
        }
        Excitation::from_samples(self.t[0], self.dt(), self.u.clone(), "<samples>".into())
    }

    /// Samples `[start, end)` as a new dataset with the original time stamps.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let cut = |v: &Option<Vec<f64>>| v.as_ref().map(|v| v[start..end].to_vec());
        let mut meta = self.meta.clone();
        if let Some(s) = meta.initial_state.as_mut() {
            *s = [
                self.x.as_ref().map_or(s[0], |v| v[start]),
                self.xdot.as_ref().map_or(s[1], |v| v[start]),
                self.z.as_ref().map_or(s[2], |v| v[start]),
            ];
        }
        Dataset {
            t: self.t[start..end].to_vec(),
            u: self.u[start..end].to_vec(),
            x: cut(&self.x),
            xdot: cut(&self.xdot),
            xddot: cut(&self.xddot),
            z: cut(&self.z),
            meta,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_step_detects_jitter() {
        let t: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        assert!((uniform_step(&t).unwrap() - 0.1).abs() < 1e-15);
        let mut bad = t.clone();
        bad.swap(3, 4);
        assert!(uniform_step(&bad).is_err());
    }

    #[test]
    fn channel_names_round_trip() {
        for c in Channel::ALL {
            assert_eq!(Channel::parse(c.name()), Some(c));
        }
        assert_eq!(Channel::parse("velocity"), Some(Channel::Xdot));
        assert_eq!(Channel::parse("jerk"), None);
    }
}
