//! Per-pixel classifiers with hand-written backpropagation, and Adam.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// `F → C` affine map.
    Linear,
    /// `F → hidden (ReLU) → C`.
    Mlp1 { hidden: usize },
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Linear => f.write_str("linear"),
            Architecture::Mlp1 { hidden } if *hidden == DEFAULT_HIDDEN => f.write_str("mlp1"),
            Architecture::Mlp1 { hidden } => write!(f, "mlp1:{hidden}"),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    /// `linear`, `mlp1` or `mlp1:<hidden>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "linear" => Ok(Architecture::Linear),
            None if s == "mlp1" => Ok(Architecture::Mlp1 {
                hidden: DEFAULT_HIDDEN,
            }),
            Some(("mlp1", h)) => match h.parse() {
                Ok(hidden) if hidden > 0 => Ok(Architecture::Mlp1 { hidden }),
                _ => Err(Error::invalid(format!("bad hidden width in `{s}`"))),
            },
            _ => Err(Error::invalid(format!("unknown architecture `{s}`"))),
        }
    }
}

/// Model weights in one flat vector plus fixed input standardization.
///
/// Layout: linear `[W (F×C), b (C)]`; mlp1
/// `[W1 (F×H), b1 (H), W2 (H×C), b2 (C)]`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub architecture: Architecture,
    pub inputs: usize,
    pub classes: usize,
    pub params: Vec<f64>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct Forward {
    pub logits: Vec<f64>,
    inputs: Vec<f64>,
    hidden: Vec<f64>,
}

impl ModelParams {
    /// Uniform `±1/√fan_in` weights, zero biases, identity standardization.
    pub fn init(architecture: Architecture, inputs: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut layer = |fan_in: usize, fan_out: usize, params: &mut Vec<f64>| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        };
        match architecture {
            Architecture::Linear => layer(inputs, classes, &mut params),
            Architecture::Mlp1 { hidden } => {
                layer(inputs, hidden, &mut params);
                layer(hidden, classes, &mut params);
            }
        }
        ModelParams {
            architecture,
            inputs,
            classes,
            params,
            input_mean: vec![0.0; inputs],
            input_scale: vec![1.0; inputs],
        }
    }

    /// Sets the standardization to per-channel mean and standard deviation
    /// of `features` (`n × F`). Constant channels keep scale 1.
    pub fn standardize_from(&mut self, features: &[f64]) {
        let f = self.inputs;
        let n = (features.len() / f) as f64;
        let mut mean = vec![0.0; f];
        for row in features.chunks_exact(f) {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; f];
        for row in features.chunks_exact(f) {
            for k in 0..f {
                var[k] += (row[k] - mean[k]).powi(2);
            }
        }
        self.input_scale = var
            .iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        self.input_mean = mean;
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Logits `(n × C)` for features `(n × F)`.
    pub fn forward(&self, features: &[f64]) -> Forward {
        let f = self.inputs;
        let mut inputs = features.to_vec();
        for row in inputs.chunks_exact_mut(f) {
            for ((x, mean), scale) in row.iter_mut().zip(&self.input_mean).zip(&self.input_scale) {
                *x = (*x - mean) / scale;
            }
        }
        match self.architecture {
            Architecture::Linear => {
                let logits = affine(&inputs, &self.params, f, self.classes);
                Forward {
                    logits,
                    inputs,
                    hidden: Vec::new(),
                }
            }
            Architecture::Mlp1 { hidden } => {
                let (first, second) = self.params.split_at((f + 1) * hidden);
                let mut h = affine(&inputs, first, f, hidden);
                h.iter_mut().for_each(|v| *v = v.max(0.0));
                let logits = affine(&h, second, hidden, self.classes);
                Forward {
                    logits,
                    inputs,
                    hidden: h,
                }
            }
        }
    }

    /// Parameter gradient given the loss gradient on the logits.
    pub fn backward(&self, fwd: &Forward, grad_logits: &[f64]) -> Vec<f64> {
        let f = self.inputs;
        let mut grad = vec![0.0; self.params.len()];
        match self.architecture {
            Architecture::Linear => {
                affine_backward(&fwd.inputs, grad_logits, f, self.classes, &mut grad);
            }
            Architecture::Mlp1 { hidden } => {
                let split = (f + 1) * hidden;
                let (g1, g2) = grad.split_at_mut(split);
                affine_backward(&fwd.hidden, grad_logits, hidden, self.classes, g2);
                let w2 = &self.params[split..split + hidden * self.classes];
                let c = self.classes;
                let mut grad_hidden = vec![0.0; fwd.hidden.len()];
                for (i, gl) in grad_logits.chunks_exact(c).enumerate() {
                    for j in 0..hidden {
                        if fwd.hidden[i * hidden + j] > 0.0 {
                            let w = &w2[j * c..(j + 1) * c];
                            grad_hidden[i * hidden + j] =
                                w.iter().zip(gl).map(|(a, b)| a * b).sum();
                        }
                    }
                }
                affine_backward(&fwd.inputs, &grad_hidden, f, hidden, g1);
            }
        }
        grad
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// `x (n×fan_in) · W (fan_in×fan_out) + b`, with `[W, b]` packed in `wb`.
fn affine(x: &[f64], wb: &[f64], fan_in: usize, fan_out: usize) -> Vec<f64> {
    let (w, b) = wb.split_at(fan_in * fan_out);
    let n = x.len() / fan_in;
    let mut out = Vec::with_capacity(n * fan_out);
    for row in x.chunks_exact(fan_in) {
        let start = out.len();
        out.extend_from_slice(&b[..fan_out]);
        let o = &mut out[start..];
        for (k, &xk) in row.iter().enumerate() {
            if xk != 0.0 {
                let wk = &w[k * fan_out..(k + 1) * fan_out];
                o.iter_mut().zip(wk).for_each(|(a, wv)| *a += xk * wv);
            }
        }
    }
    out
}

/// Accumulates `∂/∂[W, b]` of an affine layer into `grad`.
fn affine_backward(x: &[f64], grad_out: &[f64], fan_in: usize, fan_out: usize, grad: &mut [f64]) {
    let (gw, gb) = grad.split_at_mut(fan_in * fan_out);
    for (row, go) in x.chunks_exact(fan_in).zip(grad_out.chunks_exact(fan_out)) {
        gb.iter_mut().zip(go).for_each(|(b, g)| *b += g);
        for (k, &xk) in row.iter().enumerate() {
            if xk != 0.0 {
                let w = &mut gw[k * fan_out..(k + 1) * fan_out];
                w.iter_mut().zip(go).for_each(|(a, g)| *a += xk * g);
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(num_params: usize, learning_rate: f64, betas: (f64, f64), eps: f64) -> Self {
        Adam {
            learning_rate,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
