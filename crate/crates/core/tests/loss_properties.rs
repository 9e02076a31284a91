use proptest::prelude::*;

use segloss::gradcheck::{check, default_tolerance};
use segloss::losses::{caml_with_fixed_alpha, confidence_exponent, eval_on_probs};
use segloss::{eval_loss, one_hot, softmax, BatchShape, LabelBatch, LogitBatch, LossSpec};

/// Random logits in `[-4, 4]` with labels, up to 64 pixels and 2, 3 or 5
/// classes.
fn batch() -> impl Strategy<Value = (LogitBatch, LabelBatch)> {
    (1usize..=64, prop::sample::select(vec![2usize, 3, 5])).prop_flat_map(|(n, c)| {
        (
            prop::collection::vec(-4.0f64..4.0, n * c),
            prop::collection::vec(0..c, n),
        )
            .prop_map(move |(z, y)| {
                let shape = BatchShape::flat(n, c).unwrap();
                (
                    LogitBatch::new(shape, z).unwrap(),
                    one_hot(shape, &y).unwrap(),
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn softmax_rows_are_distributions((logits, _) in batch(), shift in -50.0f64..50.0) {
        let p = softmax(&logits).unwrap();
        for i in 0..logits.shape().pixels() {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let shifted = LogitBatch::new(logits.shape(), logits.data().iter().map(|v| v + shift).collect()).unwrap();
        let q = softmax(&shifted).unwrap();
        for (a, b) in p.data().iter().zip(q.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_rows_have_a_single_one((_, labels) in batch()) {
        let c = labels.shape().classes;
        for row in labels.dense().chunks_exact(c) {
            prop_assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
            prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn additive_is_linear_in_lambda((logits, labels) in batch()) {
        let ce = eval_loss(&LossSpec::Ce, &logits, &labels).unwrap().value;
        let dice = eval_loss(&LossSpec::Dice, &logits, &labels).unwrap().value;
        for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let v = eval_loss(&LossSpec::Additive { lambda }, &logits, &labels).unwrap().value;
            prop_assert!((v - (lambda * dice + (1.0 - lambda) * ce)).abs() <= 1e-12);
        }
    }

    #[test]
    fn product_is_bounded_by_its_factors((logits, labels) in batch()) {
        let ce = eval_loss(&LossSpec::Ce, &logits, &labels).unwrap().value;
        let dice = eval_loss(&LossSpec::Dice, &logits, &labels).unwrap().value;
        let ml = eval_loss(&LossSpec::Ml, &logits, &labels).unwrap().value;
        prop_assert!((ml - dice * ce).abs() <= 1e-12 * ml.abs().max(1.0));
        if ce <= 1.0 && dice <= 1.0 {
            prop_assert!(ml <= ce.min(dice) + 1e-15);
        }
    }

    #[test]
    fn product_rule_holds_elementwise((logits, labels) in batch()) {
        let ml = eval_loss(&LossSpec::Ml, &logits, &labels).unwrap();
        let ce = eval_loss(&LossSpec::Ce, &logits, &labels).unwrap();
        let dice = eval_loss(&LossSpec::Dice, &logits, &labels).unwrap();
        for k in 0..ml.grad.len() {
            prop_assert!((ml.grad[k] - (dice.value * ce.grad[k] + ce.value * dice.grad[k])).abs() <= 1e-10);
        }
    }

    #[test]
    fn exponent_is_in_unit_interval_and_non_increasing(d in 1e-6f64..=1.0) {
        let mut previous = f64::INFINITY;
        for k in 0..10 {
            let alpha = confidence_exponent(k as f64 / 10.0, d);
            prop_assert!((0.0..=1.0).contains(&alpha));
            prop_assert!(alpha <= previous);
            previous = alpha;
        }
    }

    #[test]
    fn caml_reduces_to_ml_when_the_exponent_is_one((logits, labels) in batch()) {
        let probs = softmax(&logits).unwrap();
        let ml = eval_on_probs(&LossSpec::Ml, &probs, &labels).unwrap();
        for (p_bar, d) in [(0.0, 0.4), (0.6, 0.0)] {
            let caml = caml_with_fixed_alpha(&probs, &labels, confidence_exponent(p_bar, d)).unwrap();
            prop_assert!((caml.value - ml.value).abs() <= 1e-6 * ml.value.max(1e-300));
        }
    }

    #[test]
    fn caml_approaches_dice_as_confidence_saturates((logits, labels) in batch()) {
        let probs = softmax(&logits).unwrap();
        let dice = eval_on_probs(&LossSpec::Dice, &probs, &labels).unwrap().value;
        let alpha = confidence_exponent(1.0 - 1e-12, 0.9);
        let caml = caml_with_fixed_alpha(&probs, &labels, alpha).unwrap().value;
        prop_assert!((caml - dice).abs() <= 1e-4 * dice.max(1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 50, ..ProptestConfig::default() })]

    #[test]
    fn analytic_gradients_match_the_oracle((logits, labels) in batch()) {
        for spec in LossSpec::family() {
            let report = check(&spec, &logits, &labels, default_tolerance(spec.kind())).unwrap();
            prop_assert!(report.passed(), "{spec}: {report:?}");
        }
    }
}
