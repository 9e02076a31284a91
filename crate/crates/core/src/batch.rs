//! Pixel batches and the transforms shared by every loss.
//!
//! All per-pixel tensors are stored row-major as `(num_pixels, classes)`
//! where the pixel index flattens `batch × height × width`. Loss
//! normalizers (the `N` of cross-entropy and the sums of the Dice
//! coefficient) run over that flattened pixel index.

use crate::error::{Error, Result};

/// Probability floor applied after softmax so `log` and fractional powers
/// stay finite.
pub const PROB_FLOOR: f64 = 1e-12;

/// Shape metadata carried by every batch tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchShape {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl BatchShape {
    pub fn new(batch: usize, height: usize, width: usize, classes: usize) -> Result<Self> {
        let shape = BatchShape {
            batch,
            height,
            width,
            classes,
        };
        if shape.pixels() == 0 {
            return Err(Error::invalid(format!(
                "batch has no pixels ({batch}×{height}×{width})"
            )));
        }
        if classes < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        Ok(shape)
    }

    /// A flat `(pixels, classes)` shape with `batch = pixels`, `H = W = 1`.
    pub fn flat(pixels: usize, classes: usize) -> Result<Self> {
        Self::new(pixels, 1, 1, classes)
    }

    pub fn pixels(&self) -> usize {
        self.batch * self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.pixels() * self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Raw pre-softmax scores; the variable every gradient is taken against.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch {
    shape: BatchShape,
    data: Vec<f64>,
}

impl LogitBatch {
    pub fn new(shape: BatchShape, data: Vec<f64>) -> Result<Self> {
        check_len(&shape, data.len())?;
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite logit at pixel {}, class {}",
                k / shape.classes,
                k % shape.classes
            )));
        }
        Ok(LogitBatch { shape, data })
    }

    pub fn shape(&self) -> BatchShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        let c = self.shape.classes;
        &self.data[pixel * c..(pixel + 1) * c]
    }

    /// Copy with a single entry shifted by `delta`. Used by the
    /// finite-difference oracle.
    pub fn perturbed(&self, index: usize, delta: f64) -> LogitBatch {
        let mut data = self.data.clone();
        data[index] += delta;
        LogitBatch {
            shape: self.shape,
            data,
        }
    }
}

/// Softmax probabilities, each row on the simplex and floored at
/// [`PROB_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbBatch {
    shape: BatchShape,
    data: Vec<f64>,
}

impl ProbBatch {
    /// Builds a batch from explicit probabilities. Rows must already sum to
    /// one (within 1e-6); they are floored and renormalized like softmax
    /// output.
    pub fn from_probs(shape: BatchShape, mut data: Vec<f64>) -> Result<Self> {
        check_len(&shape, data.len())?;
        for (i, row) in data.chunks_exact_mut(shape.classes).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
                return Err(Error::invalid(format!(
                    "row {i} has entries outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("row {i} sums to {sum}, expected 1")));
            }
            floor_and_normalize(row);
        }
        Ok(ProbBatch { shape, data })
    }

    pub fn shape(&self) -> BatchShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        let c = self.shape.classes;
        &self.data[pixel * c..(pixel + 1) * c]
    }

    pub fn get(&self, pixel: usize, class: usize) -> f64 {
        self.data[pixel * self.shape.classes + class]
    }

    /// Pulls a gradient taken with respect to probabilities back through
    /// the softmax Jacobian onto the logits:
    /// `dz_{i,c} = p_{i,c} (g_{i,c} - Σ_k p_{i,k} g_{i,k})`.
    pub fn chain_softmax(&self, grad_probs: &[f64]) -> Vec<f64> {
        let c = self.shape.classes;
        let mut out = vec![0.0; self.data.len()];
        for ((p, g), o) in self
            .data
            .chunks_exact(c)
            .zip(grad_probs.chunks_exact(c))
            .zip(out.chunks_exact_mut(c))
        {
            let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
            for k in 0..c {
                o[k] = p[k] * (g[k] - dot);
            }
        }
        out
    }

    /// Index of the largest probability per pixel (first on ties).
    pub fn argmax(&self) -> Vec<usize> {
        self.data
            .chunks_exact(self.shape.classes)
            .map(argmax)
            .collect()
    }
}

/// One-hot ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBatch {
    shape: BatchShape,
    classes_of: Vec<usize>,
}

impl LabelBatch {
    pub fn shape(&self) -> BatchShape {
        self.shape
    }

    /// True class per pixel.
    pub fn classes(&self) -> &[usize] {
        &self.classes_of
    }

    pub fn true_class(&self, pixel: usize) -> usize {
        self.classes_of[pixel]
    }

    pub fn get(&self, pixel: usize, class: usize) -> f64 {
        if self.classes_of[pixel] == class {
            1.0
        } else {
            0.0
        }
    }

    /// Dense one-hot matrix, row-major `(pixels, classes)`.
    pub fn dense(&self) -> Vec<f64> {
        let c = self.shape.classes;
        let mut out = vec![0.0; self.classes_of.len() * c];
        for (i, &k) in self.classes_of.iter().enumerate() {
            out[i * c + k] = 1.0;
        }
        out
    }

    /// Number of pixels labelled with each class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.shape.classes];
        for &k in &self.classes_of {
            counts[k] += 1;
        }
        counts
    }
}

/// Per-class Dice coefficients plus the batch-level confidence signals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub dice_per_class: Vec<f64>,
    /// Mean Dice coefficient `D = 1 - L_Dice`.
    pub dice_mean: f64,
    /// Batch mean of the true-class probability.
    pub p_bar: f64,
    /// Mean over every pixel and class. Identically `1/C` under softmax;
    /// kept for comparison with `p_bar`.
    pub p_bar_all: f64,
    /// Cross-entropy component value (unclamped).
    pub ce: f64,
    /// Dice loss component value.
    pub dice_loss: f64,
    /// Confidence exponent; only set for the adaptive losses.
    pub alpha: Option<f64>,
}

/// A loss value, its gradient with respect to the logits, and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Row-wise softmax with max subtraction, floored at [`PROB_FLOOR`] and
/// renormalized.
pub fn softmax(logits: &LogitBatch) -> Result<ProbBatch> {
    let shape = logits.shape;
    if logits.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite logits"));
    }
    let mut data = Vec::with_capacity(logits.data.len());
    for row in logits.data.chunks_exact(shape.classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = data.len();
        let mut sum = 0.0;
        for &z in row {
            let e = (z - max).exp();
            sum += e;
            data.push(e);
        }
        let out = &mut data[start..];
        out.iter_mut().for_each(|e| *e /= sum);
        floor_and_normalize(out);
    }
    Ok(ProbBatch { shape, data })
}

/// One-hot encodes class indices into a batch of the given shape.
pub fn one_hot(shape: BatchShape, class_indices: &[usize]) -> Result<LabelBatch> {
    if class_indices.len() != shape.pixels() {
        return Err(Error::invalid(format!(
            "expected {} class indices, got {}",
            shape.pixels(),
            class_indices.len()
        )));
    }
    if let Some((i, &k)) = class_indices
        .iter()
        .enumerate()
        .find(|(_, &k)| k >= shape.classes)
    {
        return Err(Error::invalid(format!(
            "class index {k} at pixel {i} is out of range for {} classes",
            shape.classes
        )));
    }
    Ok(LabelBatch {
        shape,
        classes_of: class_indices.to_vec(),
    })
}

pub(crate) fn check_pair(probs: &ProbBatch, labels: &LabelBatch) -> Result<()> {
    if probs.shape != labels.shape {
        return Err(Error::invalid(format!(
            "shape mismatch: probabilities {:?} vs labels {:?}",
            probs.shape, labels.shape
        )));
    }
    Ok(())
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn check_len(shape: &BatchShape, len: usize) -> Result<()> {
    if shape.pixels() == 0 || shape.classes < 2 {
        return Err(Error::invalid(format!("degenerate batch shape {shape:?}")));
    }
    if len != shape.len() {
        return Err(Error::invalid(format!(
            "data length {len} does not match shape {shape:?} ({} entries)",
            shape.len()
        )));
    }
    Ok(())
}

fn floor_and_normalize(row: &mut [f64]) {
    if row.iter().all(|&p| p >= PROB_FLOOR) {
        return;
    }
    row.iter_mut().for_each(|p| *p = p.max(PROB_FLOOR));
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= sum);
}
