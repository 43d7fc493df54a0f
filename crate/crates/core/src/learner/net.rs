//! Small fully connected tanh network used as the motion-law surrogate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine normalization `(v - shift) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { shift: 0.0, scale: 1.0 };

    /// Standardization from sample mean and deviation.
    pub fn fit(v: &[f64]) -> Self {
        let shift = crate::numeric::mean(v);
        let scale = crate::numeric::std(v);
        Affine {
            shift,
            scale: if scale > 0.0 { scale } else { 1.0 },
        }
    }
}

/// MLP with tanh hidden layers and a linear scalar output.
///
/// Inputs are `(x, ẋ, z, u)` after the `inputs` normalization; the raw
/// output is mapped back through `output`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateNet {
    pub layers: Vec<usize>,
    pub params: Vec<f64>,
    pub inputs: Vec<Affine>,
    pub output: Affine,
}

impl SurrogateNet {
    /// Glorot-normal weights, zero biases.
    pub fn new(layers: &[usize], seed: u64) -> Result<Self> {
        if layers.len() < 2 || layers.iter().any(|&n| n == 0) || *layers.last().unwrap() != 1 {
            return Err(Error::Config(format!("invalid network layout {layers:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::count(layers));
        for w in layers.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let sd = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let normal = Normal::new(0.0, sd).expect("positive deviation");
            params.extend((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)));
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(Self {
            layers: layers.to_vec(),
            params,
            inputs: vec![Affine::IDENTITY; layers[0]],
            output: Affine::IDENTITY,
        })
    }

    fn count(layers: &[usize]) -> usize {
        layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0]
    }

    /// Floats stored per cached evaluation.
    pub fn cache_len(&self) -> usize {
        self.layers[..self.layers.len() - 1].iter().sum()
    }

    /// Output in physical units.
    pub fn eval(&self, input: &[f64]) -> f64 {
        let mut cache = Vec::with_capacity(self.cache_len());
        self.forward(input, &mut cache)
    }

    /// Evaluates in physical units, appending normalized activations to
    /// `cache`, and returns the output.
    pub fn forward(&self, input: &[f64], cache: &mut Vec<f64>) -> f64 {
        let start = cache.len();
        cache.extend(input.iter().zip(&self.inputs).map(|(v, a)| (v - a.shift) / a.scale));
        let mut offset = 0;
        let mut prev = start;
        let n_layers = self.layers.len() - 1;
        let mut out = 0.0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.layers[l], self.layers[l + 1]);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let here = cache.len();
            for j in 0..fan_out {
                let row = &w[j * fan_in..(j + 1) * fan_in];
                let mut s = b[j];
                for i in 0..fan_in {
                    s += row[i] * cache[prev + i];
                }
                if l + 1 < n_layers {
                    cache.push(s.tanh());
                } else {
                    out = s;
                }
            }
            prev = here;
            offset += fan_in * fan_out + fan_out;
        }
        self.output.shift + self.output.scale * out
    }

    /// Backpropagates `adjoint` (of the physical output) through one cached
    /// evaluation. Adds weight gradients to `grad` when given and returns
    /// the gradient with respect to the physical inputs.
    pub fn backward(&self, cache: &[f64], adjoint: f64, mut grad: Option<&mut [f64]>) -> Vec<f64> {
        let n_layers = self.layers.len() - 1;
        // activation offsets inside `cache`
        let mut act_start = Vec::with_capacity(n_layers);
        let mut acc = 0;
        for l in 0..n_layers {
            act_start.push(acc);
            acc += self.layers[l];
        }
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.layers[l] * self.layers[l + 1] + self.layers[l + 1];
        }
        let mut delta = vec![adjoint * self.output.scale];
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.layers[l], self.layers[l + 1]);
            let a_prev = &cache[act_start[l]..act_start[l] + fan_in];
            let w_off = offsets[l];
            if let Some(g) = grad.as_deref_mut() {
                for j in 0..fan_out {
                    let d = delta[j];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut g[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                    for i in 0..fan_in {
                        row[i] += d * a_prev[i];
                    }
                    g[w_off + fan_in * fan_out + j] += d;
                }
            }
            let w = &self.params[w_off..w_off + fan_in * fan_out];
            let mut next = vec![0.0; fan_in];
            for j in 0..fan_out {
                let d = delta[j];
                let row = &w[j * fan_in..(j + 1) * fan_in];
                for i in 0..fan_in {
                    next[i] += row[i] * d;
                }
            }
            if l > 0 {
                for i in 0..fan_in {
                    next[i] *= 1.0 - a_prev[i] * a_prev[i];
                }
            }
            delta = next;
        }
        delta.iter().zip(&self.inputs).map(|(d, a)| d / a.scale).collect()
    }
}
