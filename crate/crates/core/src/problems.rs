//! Seeded random loss problems for gradient certification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batch::{one_hot, BatchShape, LabelBatch, LogitBatch};

/// Logits drawn uniformly from `[-2, 2)` and labels uniformly over the
/// classes, both from one ChaCha8 stream seeded with `seed`.
pub fn random_problem(seed: u64, pixels: usize, classes: usize) -> (LogitBatch, LabelBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = BatchShape::flat(pixels, classes).expect("pixels > 0 and classes >= 2");
    let logits: Vec<f64> = (0..shape.len())
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let labels: Vec<usize> = (0..pixels).map(|_| rng.random_range(0..classes)).collect();
    (
        LogitBatch::new(shape, logits).expect("finite logits"),
        one_hot(shape, &labels).expect("labels in range"),
    )
}
