//! Forward loss values in double-double precision, written directly from
//! the loss definitions and sharing no code with the analytic path.
//!
//! Each pixel's softmax row is cached so that perturbing one logit only
//! recomputes one row before the batch-level sums.

use super::dd::Dd;
use crate::batch::{LabelBatch, LogitBatch, PROB_FLOOR};
use crate::losses::{LossSpec, CE_FLOOR, DICE_SMOOTH};

pub(crate) struct Row {
    probs: Vec<Dd>,
    log_true: Dd,
}

pub(crate) struct Reference<'a> {
    spec: LossSpec,
    logits: &'a LogitBatch,
    labels: &'a LabelBatch,
    rows: Vec<Row>,
}

impl<'a> Reference<'a> {
    pub(crate) fn new(spec: LossSpec, logits: &'a LogitBatch, labels: &'a LabelBatch) -> Self {
        let n = logits.shape().pixels();
        let rows = (0..n)
            .map(|i| row(&widen(logits.row(i), None), labels.true_class(i)))
            .collect();
        Reference {
            spec,
            logits,
            labels,
            rows,
        }
    }

    #[cfg(test)]
    pub(crate) fn value(&self) -> Dd {
        loss_from_rows(&self.spec, self.rows.iter(), self.labels)
    }

    /// Loss with logit `index` (flat) shifted by exactly `delta`.
    pub(crate) fn perturbed(&self, index: usize, delta: f64) -> Dd {
        let c = self.logits.shape().classes;
        let pixel = index / c;
        let z = widen(self.logits.row(pixel), Some((index % c, delta)));
        let replaced = row(&z, self.labels.true_class(pixel));
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| if i == pixel { &replaced } else { r });
        loss_from_rows(&self.spec, rows, self.labels)
    }
}

/// Loss value from per-pixel rows in pixel order.
pub(crate) fn loss_from_rows<'r>(
    spec: &LossSpec,
    rows: impl Iterator<Item = &'r Row>,
    labels: &LabelBatch,
) -> Dd {
    let c = labels.shape().classes;
    let n = labels.shape().pixels();
    let mut log_sum = Dd::ZERO;
    let mut p_true_sum = Dd::ZERO;
    let mut inter = vec![Dd::ZERO; c];
    let mut pred_mass = vec![Dd::ZERO; c];
    let mut label_mass = vec![0usize; c];
    for (i, r) in rows.enumerate() {
        let t = labels.true_class(i);
        log_sum = log_sum + r.log_true;
        p_true_sum = p_true_sum + r.probs[t];
        inter[t] = inter[t] + r.probs[t];
        label_mass[t] += 1;
        for (mass, &p) in pred_mass.iter_mut().zip(&r.probs) {
            *mass = *mass + p;
        }
    }
    let ce = -log_sum / n as f64;
    let p_bar = p_true_sum / n as f64;
    let smooth = Dd::from(DICE_SMOOTH);
    let mut dice_sum = Dd::ZERO;
    for k in 0..c {
        let num = inter[k] * 2.0 + smooth;
        let den = Dd::from(label_mass[k] as f64) + pred_mass[k] + smooth;
        dice_sum = dice_sum + num / den;
    }
    let dice_mean = dice_sum / c as f64;
    let dice_loss = Dd::ONE - dice_mean;

    match *spec {
        LossSpec::Ce => ce,
        LossSpec::Dice => dice_loss,
        LossSpec::Additive { lambda } => dice_loss * lambda + ce * (1.0 - lambda),
        LossSpec::Ml => dice_loss * ce,
        LossSpec::Caml => adaptive(dice_loss, ce, p_bar, dice_mean),
        LossSpec::CamlConstR { r } => adaptive(dice_loss, ce, p_bar, Dd::from(r)),
    }
}

/// `L_Dice · max(L_CE, floor)^α` with `α = (1 - p̄)^e` clamped to `[0, 1]`.
fn adaptive(dice_loss: Dd, ce: Dd, p_bar: Dd, exponent: Dd) -> Dd {
    let q = (Dd::ONE - p_bar).max(Dd::ZERO);
    let alpha = q.powf(exponent).max(Dd::ZERO).min(Dd::ONE);
    dice_loss * ce.max(Dd::from(CE_FLOOR)).powf(alpha)
}

/// `f64` logits as double-double, with entry `j` shifted by exactly `d`.
fn widen(z: &[f64], shift: Option<(usize, f64)>) -> Vec<Dd> {
    z.iter()
        .enumerate()
        .map(|(k, &v)| match shift {
            Some((j, d)) if j == k => Dd::from(v) + Dd::from(d),
            _ => Dd::from(v),
        })
        .collect()
}

/// Floored softmax of one pixel's logits.
pub(crate) fn row(z: &[Dd], true_class: usize) -> Row {
    let max = z.iter().copied().fold(z[0], Dd::max);
    let e: Vec<Dd> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum = e.iter().fold(Dd::ZERO, |a, &b| a + b);
    let mut probs: Vec<Dd> = e.iter().map(|&v| v / sum).collect();
    let floor = Dd::from(PROB_FLOOR);
    if probs.iter().any(|p| p.less_than(floor)) {
        probs.iter_mut().for_each(|p| *p = p.max(floor));
        let s = probs.iter().fold(Dd::ZERO, |a, &b| a + b);
        probs.iter_mut().for_each(|p| *p = *p / s);
    }
    let log_true = probs[true_class].max(Dd::from(CE_FLOOR)).ln();
    Row { probs, log_true }
}
