//! Cross-entropy, Dice, additive, multiplicative (ML) and
//! confidence-adaptive multiplicative (CAML) losses.
//!
//! Every loss returns its value together with the exact gradient with
//! respect to the logits, with the softmax Jacobian folded in. The
//! composite losses are assembled from the cross-entropy and Dice
//! components:
//!
//! * additive: `λ·L_Dice + (1-λ)·L_CE`
//! * ML: `L_Dice · L_CE`
//! * CAML: `L_Dice · max(L_CE, ε)^α` with `α = (1 - p̄)^D`, where `p̄` is
//!   the batch mean of the true-class probability and `D = 1 - L_Dice`
//! * CAML with a constant exponent: as CAML but `α = (1 - p̄)^r`.

use std::fmt;
use std::str::FromStr;

use crate::batch::softmax;
use crate::batch::{check_pair, Diagnostics, LabelBatch, LogitBatch, LossEval, ProbBatch};
use crate::error::{Error, Result};

/// Additive smoothing on the numerator and denominator of each per-class
/// Dice coefficient.
pub const DICE_SMOOTH: f64 = 1e-6;

/// Floor on the cross-entropy factor before it is raised to `α` or logged.
pub const CE_FLOOR: f64 = 1e-12;

/// Upper bound accepted for the constant exponent `r`.
pub const MAX_CONST_EXPONENT: f64 = 10.0;

/// Discriminant of [`LossSpec`], without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossKind {
    Ce,
    Dice,
    Additive,
    Ml,
    Caml,
    CamlConstR,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Ce,
        LossKind::Dice,
        LossKind::Additive,
        LossKind::Ml,
        LossKind::Caml,
        LossKind::CamlConstR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Dice => "dice",
            LossKind::Additive => "additive",
            LossKind::Ml => "ml",
            LossKind::Caml => "caml",
            LossKind::CamlConstR => "caml-r",
        }
    }

    /// Whether the loss carries the confidence exponent `α`.
    pub fn is_adaptive(self) -> bool {
        matches!(self, LossKind::Caml | LossKind::CamlConstR)
    }
}

impl FromStr for LossKind {
    type Err = Error;

    /// Canonical names, case-insensitive, with `_` accepted for `-`.
    fn from_str(s: &str) -> Result<Self> {
        let name = s.trim().to_ascii_lowercase().replace('_', "-");
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown loss `{s}`")))
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A fully parameterized loss selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    Ce,
    Dice,
    Additive { lambda: f64 },
    Ml,
    Caml,
    CamlConstR { r: f64 },
}

impl LossSpec {
    pub fn kind(&self) -> LossKind {
        match self {
            LossSpec::Ce => LossKind::Ce,
            LossSpec::Dice => LossKind::Dice,
            LossSpec::Additive { .. } => LossKind::Additive,
            LossSpec::Ml => LossKind::Ml,
            LossSpec::Caml => LossKind::Caml,
            LossSpec::CamlConstR { .. } => LossKind::CamlConstR,
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match *self {
            LossSpec::Additive { lambda } => Some(lambda),
            _ => None,
        }
    }

    pub fn r(&self) -> Option<f64> {
        match *self {
            LossSpec::CamlConstR { r } => Some(r),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Additive { lambda } => check_lambda(lambda),
            LossSpec::CamlConstR { r } => check_r(r),
            _ => Ok(()),
        }
    }

    /// Default parameterization for a kind: `λ = 0.5`, `r = 3`.
    pub fn default_for(kind: LossKind) -> LossSpec {
        match kind {
            LossKind::Ce => LossSpec::Ce,
            LossKind::Dice => LossSpec::Dice,
            LossKind::Additive => LossSpec::Additive { lambda: 0.5 },
            LossKind::Ml => LossSpec::Ml,
            LossKind::Caml => LossSpec::Caml,
            LossKind::CamlConstR => LossSpec::CamlConstR { r: 3.0 },
        }
    }

    /// The six-loss family with default parameters.
    pub fn family() -> Vec<LossSpec> {
        LossKind::ALL
            .iter()
            .map(|&k| LossSpec::default_for(k))
            .collect()
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LossSpec::Additive { lambda } => write!(f, "additive(lambda={lambda})"),
            LossSpec::CamlConstR { r } => write!(f, "caml-r(r={r})"),
            other => f.write_str(other.kind().name()),
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    /// A loss name with an optional inline parameter: `additive=0.3`,
    /// `caml-r=2`. Parameterized kinds without one take their defaults.
    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once('=') {
            Some((n, p)) => {
                let v: f64 = p
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad loss parameter in `{s}`")))?;
                (n, Some(v))
            }
            None => (s, None),
        };
        let kind: LossKind = name.parse()?;
        let spec = match (kind, param) {
            (LossKind::Additive, Some(lambda)) => LossSpec::Additive { lambda },
            (LossKind::CamlConstR, Some(r)) => LossSpec::CamlConstR { r },
            (_, Some(_)) => {
                return Err(Error::invalid(format!(
                    "loss `{}` takes no parameter",
                    kind.name()
                )))
            }
            (kind, None) => LossSpec::default_for(kind),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Confidence exponent `(1 - p̄)^e`, clamped to `[0, 1]`.
pub fn confidence_exponent(p_bar: f64, exponent: f64) -> f64 {
    (1.0 - p_bar).max(0.0).powf(exponent).clamp(0.0, 1.0)
}

/// Mean cross-entropy over pixels; gradient `(p - y) / N`.
pub fn ce_loss(probs: &ProbBatch, labels: &LabelBatch) -> Result<LossEval> {
    check_pair(probs, labels)?;
    let parts = Components::compute(probs, labels);
    Ok(LossEval {
        value: parts.ce,
        grad: parts.ce_grad.clone(),
        diagnostics: parts.diagnostics(None),
    })
}

/// `1 - mean_c Dice_c` with smoothed per-class Dice coefficients.
pub fn dice_loss(probs: &ProbBatch, labels: &LabelBatch) -> Result<LossEval> {
    check_pair(probs, labels)?;
    let parts = Components::compute(probs, labels);
    Ok(LossEval {
        value: parts.dice_loss,
        grad: parts.dice_grad.clone(),
        diagnostics: parts.diagnostics(None),
    })
}

pub fn additive_loss(probs: &ProbBatch, labels: &LabelBatch, lambda: f64) -> Result<LossEval> {
    check_lambda(lambda)?;
    check_pair(probs, labels)?;
    let parts = Components::compute(probs, labels);
    let value = lambda * parts.dice_loss + (1.0 - lambda) * parts.ce;
    let grad = parts
        .dice_grad
        .iter()
        .zip(&parts.ce_grad)
        .map(|(d, c)| lambda * d + (1.0 - lambda) * c)
        .collect();
    Ok(LossEval {
        value,
        grad,
        diagnostics: parts.diagnostics(None),
    })
}

/// `L_Dice · L_CE`, differentiated by the product rule.
pub fn ml_loss(probs: &ProbBatch, labels: &LabelBatch) -> Result<LossEval> {
    check_pair(probs, labels)?;
    let parts = Components::compute(probs, labels);
    let (ld, lc) = (parts.dice_loss, parts.ce);
    let grad = parts
        .ce_grad
        .iter()
        .zip(&parts.dice_grad)
        .map(|(gc, gd)| ld * gc + lc * gd)
        .collect();
    Ok(LossEval {
        value: ld * lc,
        grad,
        diagnostics: parts.diagnostics(None),
    })
}

/// `L_Dice · max(L_CE, ε)^α` with `α = (1 - p̄)^D`.
pub fn caml_loss(probs: &ProbBatch, labels: &LabelBatch) -> Result<LossEval> {
    check_pair(probs, labels)?;
    let parts = Components::compute(probs, labels);
    Ok(parts.adaptive(Exponent::MeanDice))
}

/// CAML with the mean Dice in the exponent replaced by a constant `r`.
pub fn caml_const_r_loss(probs: &ProbBatch, labels: &LabelBatch, r: f64) -> Result<LossEval> {
    check_r(r)?;
    check_pair(probs, labels)?;
    let parts = Components::compute(probs, labels);
    Ok(parts.adaptive(Exponent::Constant(r)))
}

/// CAML value and gradient with `α` held at a supplied constant, as if
/// `p̄` and `D` were external context. Used for gradient-magnitude curves.
pub fn caml_with_fixed_alpha(
    probs: &ProbBatch,
    labels: &LabelBatch,
    alpha: f64,
) -> Result<LossEval> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    check_pair(probs, labels)?;
    let parts = Components::compute(probs, labels);
    Ok(parts.adaptive(Exponent::Fixed(alpha)))
}

/// Softmax followed by the loss selected by `spec`.
pub fn eval_loss(spec: &LossSpec, logits: &LogitBatch, labels: &LabelBatch) -> Result<LossEval> {
    spec.validate()?;
    let probs = softmax(logits)?;
    eval_on_probs(spec, &probs, labels)
}

/// Dispatch on already-computed probabilities.
pub fn eval_on_probs(spec: &LossSpec, probs: &ProbBatch, labels: &LabelBatch) -> Result<LossEval> {
    match *spec {
        LossSpec::Ce => ce_loss(probs, labels),
        LossSpec::Dice => dice_loss(probs, labels),
        LossSpec::Additive { lambda } => additive_loss(probs, labels, lambda),
        LossSpec::Ml => ml_loss(probs, labels),
        LossSpec::Caml => caml_loss(probs, labels),
        LossSpec::CamlConstR { r } => caml_const_r_loss(probs, labels, r),
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    Ok(())
}

fn check_r(r: f64) -> Result<()> {
    if !(r > 0.0 && r <= MAX_CONST_EXPONENT) {
        return Err(Error::invalid(format!(
            "r must lie in (0, {MAX_CONST_EXPONENT}], got {r}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum Exponent {
    MeanDice,
    Constant(f64),
    Fixed(f64),
}

/// Cross-entropy, Dice and confidence terms of one batch, each with its
/// logit gradient.
struct Components {
    ce: f64,
    ce_grad: Vec<f64>,
    dice_loss: f64,
    dice_per_class: Vec<f64>,
    dice_grad: Vec<f64>,
    p_bar: f64,
    p_bar_all: f64,
    p_bar_grad: Vec<f64>,
}

impl Components {
    fn compute(probs: &ProbBatch, labels: &LabelBatch) -> Self {
        let shape = probs.shape();
        let (n, c) = (shape.pixels(), shape.classes);
        let inv_n = 1.0 / n as f64;

        let mut ce_sum = 0.0;
        let mut p_true_sum = 0.0;
        let mut ce_grad = vec![0.0; n * c];
        let mut p_bar_grad = vec![0.0; n * c];
        // Σ_i y_ic p_ic, Σ_i y_ic, Σ_i p_ic
        let mut inter = vec![0.0; c];
        let mut label_mass = vec![0.0; c];
        let mut pred_mass = vec![0.0; c];

        for i in 0..n {
            let t = labels.true_class(i);
            let row = probs.row(i);
            let pt = row[t];
            ce_sum -= pt.ln();
            p_true_sum += pt;
            inter[t] += pt;
            label_mass[t] += 1.0;
            for k in 0..c {
                let y = if k == t { 1.0 } else { 0.0 };
                pred_mass[k] += row[k];
                ce_grad[i * c + k] = (row[k] - y) * inv_n;
                // ∂p_it/∂z_ik = p_it (δ_tk - p_ik)
                p_bar_grad[i * c + k] = pt * (y - row[k]) * inv_n;
            }
        }

        let dice_per_class: Vec<f64> = (0..c)
            .map(|k| (2.0 * inter[k] + DICE_SMOOTH) / (label_mass[k] + pred_mass[k] + DICE_SMOOTH))
            .collect();
        let dice_loss = 1.0 - dice_per_class.iter().sum::<f64>() / c as f64;

        // ∂Dice_k/∂p_ik = (2 y_ik S_k - (2 I_k + ε)) / S_k², S_k = Σy + Σp + ε
        let mut dice_grad_p = vec![0.0; n * c];
        for k in 0..c {
            let s = label_mass[k] + pred_mass[k] + DICE_SMOOTH;
            let num = 2.0 * inter[k] + DICE_SMOOTH;
            let scale = -1.0 / (c as f64 * s * s);
            for i in 0..n {
                let y = labels.get(i, k);
                dice_grad_p[i * c + k] = scale * (2.0 * y * s - num);
            }
        }
        let dice_grad = probs.chain_softmax(&dice_grad_p);

        Components {
            ce: ce_sum * inv_n,
            ce_grad,
            dice_loss,
            dice_per_class,
            dice_grad,
            p_bar: p_true_sum * inv_n,
            p_bar_all: probs.data().iter().sum::<f64>() / (n * c) as f64,
            p_bar_grad,
        }
    }

    fn diagnostics(&self, alpha: Option<f64>) -> Diagnostics {
        Diagnostics {
            dice_per_class: self.dice_per_class.clone(),
            dice_mean: 1.0 - self.dice_loss,
            p_bar: self.p_bar,
            p_bar_all: self.p_bar_all,
            ce: self.ce,
            dice_loss: self.dice_loss,
            alpha,
        }
    }

    /// `V = L_d · L_c^α`:
    /// `dV = L_c^α [dL_d + L_d (ln L_c · dα + α/L_c · dL_c)]`, and for
    /// `α = q^e`, `q = 1 - p̄`: `dα = α ln q · de - e q^(e-1) dp̄`, where
    /// `de = -dL_d` when the exponent is the mean Dice.
    fn adaptive(&self, exponent: Exponent) -> LossEval {
        let ld = self.dice_loss;
        let ce_active = self.ce > CE_FLOOR;
        let lc = self.ce.max(CE_FLOOR);
        let q = (1.0 - self.p_bar).max(0.0);

        let (alpha, d_alpha_d_pbar, d_alpha_d_dice_loss) = match exponent {
            Exponent::MeanDice => {
                let e = 1.0 - ld;
                let alpha = confidence_exponent(self.p_bar, e);
                let (dp, dd) = if q > 0.0 {
                    (-e * q.powf(e - 1.0), -alpha * q.ln())
                } else {
                    (0.0, 0.0)
                };
                (alpha, dp, dd)
            }
            Exponent::Constant(r) => {
                let alpha = confidence_exponent(self.p_bar, r);
                let dp = if q > 0.0 { -r * q.powf(r - 1.0) } else { 0.0 };
                (alpha, dp, 0.0)
            }
            Exponent::Fixed(alpha) => (alpha, 0.0, 0.0),
        };

        let factor = lc.powf(alpha);
        let log_lc = lc.ln();
        let ce_scale = if ce_active { ld * alpha / lc } else { 0.0 };

        let grad = (0..self.ce_grad.len())
            .map(|j| {
                let d_alpha =
                    d_alpha_d_pbar * self.p_bar_grad[j] + d_alpha_d_dice_loss * self.dice_grad[j];
                factor * (self.dice_grad[j] + ld * log_lc * d_alpha + ce_scale * self.ce_grad[j])
            })
            .collect();

        LossEval {
            value: ld * factor,
            grad,
            diagnostics: self.diagnostics(Some(alpha)),
        }
    }
}
