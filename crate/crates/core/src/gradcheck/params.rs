//! Double-double forward of a per-pixel model followed by its loss, for
//! finite differences over the model parameters.

use super::dd::Dd;
use super::reference::{loss_from_rows, row, Row};
use crate::batch::LabelBatch;
use crate::losses::LossSpec;
use crate::trainer::{Architecture, ModelParams};

pub(crate) struct ModelReference<'a> {
    spec: LossSpec,
    model: &'a ModelParams,
    labels: &'a LabelBatch,
    /// Standardized inputs, one row per pixel.
    inputs: Vec<Vec<Dd>>,
}

impl<'a> ModelReference<'a> {
    pub(crate) fn new(
        spec: LossSpec,
        model: &'a ModelParams,
        features: &[f64],
        labels: &'a LabelBatch,
    ) -> Self {
        let inputs = features
            .chunks_exact(model.inputs)
            .map(|x| {
                x.iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        (Dd::from(v) - Dd::from(model.input_mean[k])) / model.input_scale[k]
                    })
                    .collect()
            })
            .collect();
        ModelReference {
            spec,
            model,
            labels,
            inputs,
        }
    }

    /// Loss with parameter `index` shifted by exactly `delta`.
    pub(crate) fn perturbed(&self, index: usize, delta: f64) -> Dd {
        let params = &self.model.params;
        let w = |j: usize| {
            let p = Dd::from(params[j]);
            if j == index {
                p + Dd::from(delta)
            } else {
                p
            }
        };
        let (f, c) = (self.model.inputs, self.model.classes);
        let rows: Vec<Row> = self
            .inputs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let z = match self.model.architecture {
                    Architecture::Linear => affine(x, &w, 0, f, c),
                    Architecture::Mlp1 { hidden } => {
                        let h: Vec<Dd> = affine(x, &w, 0, f, hidden)
                            .into_iter()
                            .map(|v| v.max(Dd::ZERO))
                            .collect();
                        affine(&h, &w, (f + 1) * hidden, hidden, c)
                    }
                };
                row(&z, self.labels.true_class(i))
            })
            .collect();
        loss_from_rows(&self.spec, rows.iter(), self.labels)
    }
}

/// `x · W + b` with `[W (fan_in × fan_out), b]` starting at `offset`.
fn affine(
    x: &[Dd],
    w: &impl Fn(usize) -> Dd,
    offset: usize,
    fan_in: usize,
    fan_out: usize,
) -> Vec<Dd> {
    (0..fan_out)
        .map(|j| {
            (0..fan_in).fold(w(offset + fan_in * fan_out + j), |acc, k| {
                acc + x[k] * w(offset + k * fan_out + j)
            })
        })
        .collect()
}
