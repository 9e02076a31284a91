//! Central finite-difference oracle for the analytic loss gradients.
//!
//! The oracle only evaluates forward loss values, never the analytic
//! gradient it is checking. Those values come from a separate
//! double-double implementation of every loss, so the difference
//! `f(z + h) - f(z - h)` is formed without `f64` round-off. With plain
//! `f64` values that round-off alone is about `1e-16 / h` in absolute
//! terms, which swamps the relative error of small gradient entries.

mod dd;
mod params;
mod reference;

use crate::batch::{LabelBatch, LogitBatch};
use crate::error::{Error, Result};
use crate::losses::{eval_loss, LossKind, LossSpec};
use crate::trainer::ModelParams;

/// Default central-difference step on the logits.
pub const DEFAULT_STEP: f64 = 1e-6;

/// Floor on the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Relative-error bar for a loss kind: `1e-4` for the adaptive losses,
/// whose exponent path compounds rounding, and `1e-5` otherwise.
pub fn default_tolerance(kind: LossKind) -> f64 {
    if kind.is_adaptive() {
        1e-4
    } else {
        1e-5
    }
}

/// Outcome of comparing analytic and numerical gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss_kind: LossKind,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(pixel, class)` of the entry with the largest relative error.
    pub worst_index: (usize, usize),
    /// Forward evaluations spent by the oracle.
    pub num_evals: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Central differences of an arbitrary scalar function.
///
/// Fails with [`Error::NumericalFailure`] (pixel = entry index, class 0)
/// when `f` returns a non-finite value.
pub fn central_differences<F>(x: &[f64], step: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_step(step)?;
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        probe[k] = x[k] + step;
        let up = f(&probe)?;
        probe[k] = x[k] - step;
        let down = f(&probe)?;
        probe[k] = x[k];
        for v in [up, down] {
            if !v.is_finite() {
                return Err(Error::NumericalFailure {
                    pixel: k,
                    class: 0,
                    value: v,
                });
            }
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Numerical gradient of a loss with respect to every logit.
pub fn finite_diff_grad(
    spec: &LossSpec,
    logits: &LogitBatch,
    labels: &LabelBatch,
    step: f64,
) -> Result<Vec<f64>> {
    check_step(step)?;
    spec.validate()?;
    if logits.shape() != labels.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch: logits {:?} vs labels {:?}",
            logits.shape(),
            labels.shape()
        )));
    }
    let classes = logits.shape().classes;
    let reference = reference::Reference::new(*spec, logits, labels);
    let forward = |index: usize, delta: f64| {
        let value = reference.perturbed(index, delta);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NumericalFailure {
                pixel: index / classes,
                class: index % classes,
                value: value.hi(),
            })
        }
    };
    (0..logits.data().len())
        .map(|k| Ok(((forward(k, step)? - forward(k, -step)?) / (2.0 * step)).to_f64()))
        .collect()
}

/// Largest relative and absolute discrepancy between two gradients, with
/// the flat index of the worst relative entry.
pub fn compare(analytic: &[f64], numeric: &[f64]) -> (f64, f64, usize) {
    let mut worst = (0.0, 0.0, 0);
    for (k, (a, f)) in analytic.iter().zip(numeric).enumerate() {
        let abs = (a - f).abs();
        let rel = abs / a.abs().max(f.abs()).max(REL_ERROR_FLOOR);
        if rel > worst.0 {
            worst.0 = rel;
            worst.2 = k;
        }
        worst.1 = f64::max(worst.1, abs);
    }
    worst
}

/// Compares the analytic gradient of `spec` against central differences
/// with [`DEFAULT_STEP`].
pub fn check(
    spec: &LossSpec,
    logits: &LogitBatch,
    labels: &LabelBatch,
    tolerance: f64,
) -> Result<GradCheckReport> {
    check_with_step(spec, logits, labels, tolerance, DEFAULT_STEP)
}

pub fn check_with_step(
    spec: &LossSpec,
    logits: &LogitBatch,
    labels: &LabelBatch,
    tolerance: f64,
    step: f64,
) -> Result<GradCheckReport> {
    check_tolerance(tolerance)?;
    let analytic = eval_loss(spec, logits, labels)?.grad;
    let numeric = finite_diff_grad(spec, logits, labels, step)?;
    let (max_rel_error, max_abs_error, worst) = compare(&analytic, &numeric);
    let classes = logits.shape().classes;
    Ok(GradCheckReport {
        loss_kind: spec.kind(),
        max_rel_error,
        max_abs_error,
        worst_index: (worst / classes, worst % classes),
        num_evals: 2 * numeric.len(),
        step,
        tolerance,
    })
}

/// Outcome of checking a model's parameter gradient, obtained by chaining
/// the analytic loss gradient through [`ModelParams::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheckReport {
    pub loss_kind: LossKind,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index into [`ModelParams::params`].
    pub worst_param: usize,
    pub num_params: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl ParamCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Numerical gradient of the loss with respect to every model parameter,
/// for per-pixel `features` laid out as `(pixels × model.inputs)`.
pub fn param_finite_diff_grad(
    spec: &LossSpec,
    model: &ModelParams,
    features: &[f64],
    labels: &LabelBatch,
    step: f64,
) -> Result<Vec<f64>> {
    check_step(step)?;
    spec.validate()?;
    check_model_inputs(model, features, labels)?;
    let reference = params::ModelReference::new(*spec, model, features, labels);
    let forward = |index: usize, delta: f64| {
        let value = reference.perturbed(index, delta);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NumericalFailure {
                pixel: index,
                class: 0,
                value: value.hi(),
            })
        }
    };
    (0..model.params.len())
        .map(|k| Ok(((forward(k, step)? - forward(k, -step)?) / (2.0 * step)).to_f64()))
        .collect()
}

/// Compares the backpropagated parameter gradient against central
/// differences with [`DEFAULT_STEP`].
pub fn check_params(
    spec: &LossSpec,
    model: &ModelParams,
    features: &[f64],
    labels: &LabelBatch,
    tolerance: f64,
) -> Result<ParamCheckReport> {
    check_tolerance(tolerance)?;
    check_model_inputs(model, features, labels)?;
    let fwd = model.forward(features);
    let logits = LogitBatch::new(labels.shape(), fwd.logits.clone())?;
    let analytic = model.backward(&fwd, &eval_loss(spec, &logits, labels)?.grad);
    let numeric = param_finite_diff_grad(spec, model, features, labels, DEFAULT_STEP)?;
    let (max_rel_error, max_abs_error, worst_param) = compare(&analytic, &numeric);
    Ok(ParamCheckReport {
        loss_kind: spec.kind(),
        max_rel_error,
        max_abs_error,
        worst_param,
        num_params: numeric.len(),
        step: DEFAULT_STEP,
        tolerance,
    })
}

fn check_model_inputs(model: &ModelParams, features: &[f64], labels: &LabelBatch) -> Result<()> {
    let shape = labels.shape();
    if shape.classes != model.classes || features.len() != shape.pixels() * model.inputs {
        return Err(Error::invalid(format!(
            "model ({} inputs, {} classes) does not fit {} features for labels {:?}",
            model.inputs,
            model.classes,
            features.len(),
            shape
        )));
    }
    Ok(())
}

fn check_tolerance(tolerance: f64) -> Result<()> {
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(Error::invalid(format!(
            "tolerance must be non-negative, got {tolerance}"
        )));
    }
    Ok(())
}

fn check_step(step: f64) -> Result<()> {
    if !(1e-8..=1e-3).contains(&step) {
        return Err(Error::invalid(format!(
            "step must lie in [1e-8, 1e-3], got {step}"
        )));
    }
    Ok(())
}
