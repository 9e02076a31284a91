//! Loss and gradient-magnitude curves over the true-class probability.
//!
//! Each grid point `p` builds a two-pixel binary batch in which both pixels
//! predict their true class with probability `p`: pixel 0 is labelled 0
//! with logits `(logit(p), 0)` and pixel 1 is labelled 1 with logits
//! `(0, logit(p))`. With both classes present, the mean Dice coefficient
//! tends to 1 as `p → 1`, as for a binary foreground/background plot.

use std::fmt::Write;
use std::str::FromStr;

use crate::batch::{one_hot, softmax, BatchShape, LabelBatch, LogitBatch, ProbBatch};
use crate::error::{Error, Result};
use crate::losses::{caml_with_fixed_alpha, confidence_exponent, eval_on_probs, LossSpec};

pub const CURVE_HEADER: &str = "p,loss_kind,value,grad_norm,alpha";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveMode {
    /// Every requested loss, with `p̄` and `D` taken from the batch.
    LossAndGrad,
    /// ML against CAML with `(p̄, D)` held at fixed context values.
    CamlVsMl,
}

impl FromStr for CurveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1" | "fig1_loss_and_grad" | "loss-and-grad" => Ok(CurveMode::LossAndGrad),
            "fig3" | "fig3_caml_vs_ml" | "caml-vs-ml" => Ok(CurveMode::CamlVsMl),
            other => Err(Error::invalid(format!("unknown curve mode `{other}`"))),
        }
    }
}

/// A fixed `(p̄, D)` pair for [`CurveMode::CamlVsMl`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CamlContext {
    pub p_bar: f64,
    pub dice: f64,
}

impl CamlContext {
    pub fn alpha(&self) -> f64 {
        confidence_exponent(self.p_bar, self.dice)
    }

    pub fn label(&self) -> String {
        format!("caml@pbar={};d={}", self.p_bar, self.dice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRequest {
    pub mode: CurveMode,
    /// Probabilities strictly inside `(0, 1)`.
    pub grid: Vec<f64>,
    pub losses: Vec<LossSpec>,
    pub contexts: Vec<CamlContext>,
}

impl CurveRequest {
    /// `p = 0.01, 0.02, …, 0.99`.
    pub fn default_grid() -> Vec<f64> {
        (1..=99).map(|k| k as f64 / 100.0).collect()
    }

    /// `p̄, D ∈ {0.2, 0.5, 0.8}`.
    pub fn default_contexts() -> Vec<CamlContext> {
        let levels = [0.2, 0.5, 0.8];
        levels
            .iter()
            .flat_map(|&p_bar| levels.iter().map(move |&dice| CamlContext { p_bar, dice }))
            .collect()
    }

    pub fn new(mode: CurveMode) -> Self {
        CurveRequest {
            mode,
            grid: Self::default_grid(),
            losses: LossSpec::family(),
            contexts: Self::default_contexts(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.grid.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::invalid(
                "curve grid must be non-empty and inside (0, 1)",
            ));
        }
        for spec in &self.losses {
            spec.validate()?;
        }
        for ctx in &self.contexts {
            if !(0.0..=1.0).contains(&ctx.p_bar) || !(0.0..=1.0).contains(&ctx.dice) {
                return Err(Error::invalid(format!("context {ctx:?} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub p: f64,
    pub loss_kind: String,
    pub value: f64,
    /// Euclidean norm of the logit gradient.
    pub grad_norm: f64,
    pub alpha: Option<f64>,
}

/// The two-pixel batch described in the module docs.
pub fn mirrored_pair(p: f64) -> Result<(ProbBatch, LabelBatch)> {
    let z = (p / (1.0 - p)).ln();
    let shape = BatchShape::flat(2, 2)?;
    let logits = LogitBatch::new(shape, vec![z, 0.0, 0.0, z])?;
    Ok((softmax(&logits)?, one_hot(shape, &[0, 1])?))
}

pub fn curve_rows(req: &CurveRequest) -> Result<Vec<CurveRow>> {
    req.validate()?;
    let mut rows = Vec::new();
    for &p in &req.grid {
        let (probs, labels) = mirrored_pair(p)?;
        match req.mode {
            CurveMode::LossAndGrad => {
                for spec in &req.losses {
                    let e = eval_on_probs(spec, &probs, &labels)?;
                    rows.push(row(
                        p,
                        spec_label(spec),
                        e.value,
                        &e.grad,
                        e.diagnostics.alpha,
                    ));
                }
            }
            CurveMode::CamlVsMl => {
                let ml = eval_on_probs(&LossSpec::Ml, &probs, &labels)?;
                rows.push(row(p, "ml".into(), ml.value, &ml.grad, None));
                for ctx in &req.contexts {
                    let alpha = ctx.alpha();
                    let e = caml_with_fixed_alpha(&probs, &labels, alpha)?;
                    rows.push(row(p, ctx.label(), e.value, &e.grad, Some(alpha)));
                }
            }
        }
    }
    Ok(rows)
}

pub fn curves_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in rows {
        let alpha = r.alpha.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            r.p, r.loss_kind, r.value, r.grad_norm, alpha
        )
        .expect("write to String");
    }
    out
}

/// `ce`, `dice`, `additive=<λ>`, `ml`, `caml`, `caml-r=<r>`.
pub fn spec_label(spec: &LossSpec) -> String {
    match *spec {
        LossSpec::Additive { lambda } => format!("additive={lambda}"),
        LossSpec::CamlConstR { r } => format!("caml-r={r}"),
        other => other.kind().name().to_string(),
    }
}

fn row(p: f64, loss_kind: String, value: f64, grad: &[f64], alpha: Option<f64>) -> CurveRow {
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    CurveRow {
        p,
        loss_kind,
        value,
        grad_norm,
        alpha,
    }
}
