//! Segmentation losses that combine cross-entropy and Dice
//! multiplicatively, with analytic logit gradients, a finite-difference
//! oracle, a synthetic segmentation benchmark and a small training harness.

pub mod batch;
pub mod cli;
pub mod curves;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod problems;
pub mod synthdata;
pub mod trainer;

pub use batch::{
    one_hot, softmax, BatchShape, Diagnostics, LabelBatch, LogitBatch, LossEval, ProbBatch,
};
pub use error::{Error, Result};
pub use gradcheck::{check, finite_diff_grad, GradCheckReport};
pub use losses::{eval_loss, LossKind, LossSpec};
