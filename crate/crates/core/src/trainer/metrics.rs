//! Class-wise intersection over union.

use std::str::FromStr;

use crate::error::{Error, Result};

/// How to score a class absent from both prediction and labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AbsentIou {
    /// Correct absence scores 1.
    #[default]
    One,
    /// The class is left out of the mean.
    Skip,
}

impl FromStr for AbsentIou {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" => Ok(AbsentIou::One),
            "skip" => Ok(AbsentIou::Skip),
            other => Err(Error::invalid(format!(
                "absent-iou must be `one` or `skip`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    /// `None` for classes skipped under [`AbsentIou::Skip`].
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean over the scored classes.
    pub miou: f64,
}

/// Running confusion counts, so IoU can be accumulated over many images.
#[derive(Debug, Clone, PartialEq)]
pub struct IouCounts {
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
}

impl IouCounts {
    pub fn new(classes: usize) -> Self {
        IouCounts {
            tp: vec![0; classes],
            fp: vec![0; classes],
            fn_: vec![0; classes],
        }
    }

    pub fn add(&mut self, pred: &[usize], labels: &[usize]) -> Result<()> {
        if pred.len() != labels.len() {
            return Err(Error::invalid(format!(
                "prediction has {} pixels, labels have {}",
                pred.len(),
                labels.len()
            )));
        }
        let c = self.tp.len();
        for (&p, &y) in pred.iter().zip(labels) {
            if p >= c || y >= c {
                return Err(Error::invalid(format!(
                    "class index out of range for {c} classes"
                )));
            }
            if p == y {
                self.tp[p] += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[y] += 1;
            }
        }
        Ok(())
    }

    pub fn report(&self, absent: AbsentIou) -> IouReport {
        let per_class: Vec<Option<f64>> = (0..self.tp.len())
            .map(|k| {
                let union = self.tp[k] + self.fp[k] + self.fn_[k];
                if union == 0 {
                    match absent {
                        AbsentIou::One => Some(1.0),
                        AbsentIou::Skip => None,
                    }
                } else {
                    Some(self.tp[k] as f64 / union as f64)
                }
            })
            .collect();
        let scored: Vec<f64> = per_class.iter().flatten().copied().collect();
        let miou = if scored.is_empty() {
            1.0
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        };
        IouReport { per_class, miou }
    }
}

/// `IoU_c = TP / (TP + FP + FN)` per class and their mean.
pub fn iou(
    pred: &[usize],
    labels: &[usize],
    classes: usize,
    absent: AbsentIou,
) -> Result<IouReport> {
    let mut counts = IouCounts::new(classes);
    counts.add(pred, labels)?;
    Ok(counts.report(absent))
}
