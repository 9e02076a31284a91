//! CSV renderings of training results.
//!
//! * per-class results: `fraction,loss,lambda,r,repeat,class,iou,miou,seed`
//! * summary: `fraction,loss,lambda,r,repeats,miou_mean,miou_std,`
//!   then `iou_<c>_mean,iou_<c>_std` per class, then `status`
//! * curves: `epoch,train_loss,val_loss,p_bar,dice_mean,alpha`
//!
//! Empty fields mean "not applicable" (λ for non-additive losses, a skipped
//! class IoU, α for non-adaptive losses).

use std::fmt::Write;

use super::{RunReport, SweepCell};
use crate::losses::LossSpec;

pub const RESULTS_HEADER: &str = "fraction,loss,lambda,r,repeat,class,iou,miou,seed";
pub const CURVE_HEADER: &str = "epoch,train_loss,val_loss,p_bar,dice_mean,alpha";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn loss_columns(loss: &LossSpec) -> String {
    format!("{},{},{}", loss.kind(), opt(loss.lambda()), opt(loss.r()))
}

pub fn results_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for cell in cells {
        let Ok(report) = &cell.outcome else { continue };
        for run in &report.runs {
            for (class, value) in run.per_class_iou.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    cell.fraction,
                    loss_columns(&cell.loss),
                    run.repeat,
                    class,
                    opt(*value),
                    run.miou,
                    run.init_seed
                )
                .expect("write to String");
            }
        }
    }
    out
}

pub fn summary_header(classes: usize) -> String {
    let mut h = String::from("fraction,loss,lambda,r,repeats,miou_mean,miou_std");
    for c in 0..classes {
        write!(h, ",iou_{c}_mean,iou_{c}_std").expect("write to String");
    }
    h.push_str(",status");
    h
}

/// One row per cell with mean and sample standard deviation over repeats.
pub fn summary_csv(cells: &[SweepCell], classes: usize) -> String {
    let mut out = summary_header(classes);
    out.push('\n');
    for cell in cells {
        write!(out, "{},{}", cell.fraction, loss_columns(&cell.loss)).expect("write to String");
        match &cell.outcome {
            Ok(r) => {
                write!(
                    out,
                    ",{},{},{}",
                    r.runs.len(),
                    r.miou_mean_over_repeats,
                    r.miou_std
                )
                .expect("write to String");
                for c in 0..classes {
                    write!(
                        out,
                        ",{},{}",
                        opt(r.per_class_iou[c]),
                        opt(r.per_class_iou_std[c])
                    )
                    .expect("write to String");
                }
                out.push_str(",ok\n");
            }
            Err(msg) => {
                out.push_str(",0,,");
                out.push_str(&",,".repeat(classes));
                writeln!(out, ",failed: {}", msg.replace([',', '\n'], ";"))
                    .expect("write to String");
            }
        }
    }
    out
}

pub fn curve_csv(run: &RunReport) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for e in &run.curve {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.p_bar,
            e.dice_mean,
            opt(e.alpha)
        )
        .expect("write to String");
    }
    out
}
