//! Deterministic training of per-pixel models with Adam, and the
//! data-fraction × loss sweep.
//!
//! Seeds: a run with base seed `s` initializes repeat `k` from
//! `mix(s, k)` and shuffles from `mix(mix(s, k), 1)`; a sweep cell uses
//! base seed [`cell_seed`]`(seed, fraction, loss)`. `mix` is the
//! SplitMix64 finalizer applied to `a ^ splitmix(b)`, so every generator is
//! a pure function of `(seed, fraction, loss, repeat)` and cells can run in
//! any order.

pub mod csv;
pub mod metrics;
pub mod model;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batch::{one_hot, BatchShape, LogitBatch};
use crate::error::{Error, Result};
use crate::losses::{eval_loss, LossSpec};
use crate::synthdata::{subsample_train, DataFraction, SynthDataset};

pub use metrics::{iou, AbsentIou, IouCounts, IouReport};
pub use model::{Adam, Architecture, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub epochs: usize,
    pub batch_images: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    pub flip_augment: bool,
    pub repeats: usize,
    pub absent_iou: AbsentIou,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossSpec::Ce,
            epochs: 60,
            batch_images: 4,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            flip_augment: true,
            repeats: 3,
            absent_iou: AbsentIou::One,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_images == 0 || self.repeats == 0 {
            return Err(Error::invalid(
                "epochs, batch_images and repeats must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Per-epoch training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean of the mini-batch losses.
    pub train_loss: f64,
    /// Loss over the whole validation split as one batch.
    pub val_loss: f64,
    pub val_miou: f64,
    /// Means over the epoch's mini-batches.
    pub p_bar: f64,
    pub dice_mean: f64,
    pub alpha: Option<f64>,
}

/// One repeat: test metrics of the best-validation epoch plus its curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub repeat: usize,
    pub init_seed: u64,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub best_epoch: usize,
    pub best_val_miou: f64,
    pub curve: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub loss: LossSpec,
    pub runs: Vec<RunReport>,
    /// Mean over repeats of each class IoU (skipped entries ignored).
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_iou_std: Vec<Option<f64>>,
    /// Mean of `per_class_iou`.
    pub miou: f64,
    pub miou_mean_over_repeats: f64,
    /// Sample standard deviation over repeats (0 for a single repeat).
    pub miou_std: f64,
}

impl MetricsReport {
    fn from_runs(loss: LossSpec, runs: Vec<RunReport>) -> Self {
        let classes = runs[0].per_class_iou.len();
        let mut per_class_iou = Vec::with_capacity(classes);
        let mut per_class_iou_std = Vec::with_capacity(classes);
        for k in 0..classes {
            let values: Vec<f64> = runs.iter().filter_map(|r| r.per_class_iou[k]).collect();
            if values.is_empty() {
                per_class_iou.push(None);
                per_class_iou_std.push(None);
            } else {
                let (m, s) = mean_std(&values);
                per_class_iou.push(Some(m));
                per_class_iou_std.push(Some(s));
            }
        }
        let scored: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        let miou = if scored.is_empty() {
            1.0
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        };
        let run_mious: Vec<f64> = runs.iter().map(|r| r.miou).collect();
        let (miou_mean_over_repeats, miou_std) = mean_std(&run_mious);
        MetricsReport {
            loss,
            runs,
            per_class_iou,
            per_class_iou_std,
            miou,
            miou_mean_over_repeats,
            miou_std,
        }
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

/// Base seed of one sweep cell.
pub fn cell_seed(seed: u64, fraction: DataFraction, loss: &LossSpec) -> u64 {
    let param = loss.lambda().or(loss.r()).unwrap_or(0.0).to_bits();
    let h = mix(seed, fraction.denominator() as u64);
    let h = mix(h, loss.kind() as u64);
    mix(h, param)
}

/// Trains `cfg.repeats` models and evaluates each on the test split.
///
/// Returns the parameters of the repeat with the best validation mIoU
/// (earliest on ties) and the aggregated report.
pub fn train(
    dataset: &SynthDataset,
    architecture: Architecture,
    cfg: &TrainConfig,
) -> Result<(ModelParams, MetricsReport)> {
    cfg.validate()?;
    let split = &dataset.split;
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::invalid(
            "train, validation and test splits must be non-empty",
        ));
    }
    let mut best: Option<(f64, ModelParams)> = None;
    let mut runs = Vec::with_capacity(cfg.repeats);
    for repeat in 0..cfg.repeats {
        let (params, run) = train_once(dataset, architecture, cfg, repeat)?;
        if best.as_ref().is_none_or(|(v, _)| run.best_val_miou > *v) {
            best = Some((run.best_val_miou, params));
        }
        runs.push(run);
    }
    let (_, params) = best.expect("at least one repeat");
    Ok((params, MetricsReport::from_runs(cfg.loss, runs)))
}

/// Pixels of several images stacked into one batch.
struct PixelBatch {
    features: Vec<f64>,
    labels: Vec<usize>,
    images: usize,
}

fn gather(dataset: &SynthDataset, images: &[usize], flips: &[bool]) -> PixelBatch {
    let px = dataset.pixels_per_image();
    let mut features = Vec::with_capacity(images.len() * px * dataset.num_features);
    let mut labels = Vec::with_capacity(images.len() * px);
    for (&i, &flip) in images.iter().zip(flips) {
        dataset.gather_image(i, flip, &mut features, &mut labels);
    }
    PixelBatch {
        features,
        labels,
        images: images.len(),
    }
}

impl PixelBatch {
    fn shape(&self, dataset: &SynthDataset) -> Result<BatchShape> {
        BatchShape::new(
            self.images,
            dataset.height,
            dataset.width,
            dataset.num_classes(),
        )
    }
}

fn train_once(
    dataset: &SynthDataset,
    architecture: Architecture,
    cfg: &TrainConfig,
    repeat: usize,
) -> Result<(ModelParams, RunReport)> {
    let init_seed = mix(cfg.seed, repeat as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(init_seed, 1));
    let classes = dataset.num_classes();
    let mut model = ModelParams::init(architecture, dataset.num_features, classes, init_seed);

    let train_all = gather(
        dataset,
        &dataset.split.train,
        &vec![false; dataset.split.train.len()],
    );
    model.standardize_from(&train_all.features);
    drop(train_all);
    let val = gather(
        dataset,
        &dataset.split.val,
        &vec![false; dataset.split.val.len()],
    );
    let val_shape = val.shape(dataset)?;
    let val_labels = one_hot(val_shape, &val.labels)?;

    let mut adam = Adam::new(
        model.num_params(),
        cfg.learning_rate,
        cfg.adam_betas,
        cfg.adam_eps,
    );
    let mut order = dataset.split.train.clone();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::NEG_INFINITY, 0usize, model.clone());

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_images) {
            let flips: Vec<bool> = chunk
                .iter()
                .map(|_| cfg.flip_augment && rng.random_bool(0.5))
                .collect();
            let batch = gather(dataset, chunk, &flips);
            let shape = batch.shape(dataset)?;
            let fwd = model.forward(&batch.features);
            let logits = LogitBatch::new(shape, fwd.logits.clone()).map_err(|_| {
                Error::TrainingDiverged {
                    epoch,
                    value: f64::NAN,
                }
            })?;
            let labels = one_hot(shape, &batch.labels)?;
            let eval = eval_loss(&cfg.loss, &logits, &labels)?;
            if !eval.value.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged {
                    epoch,
                    value: eval.value,
                });
            }
            let grad = model.backward(&fwd, &eval.grad);
            adam.step(&mut model.params, &grad);
            if !model.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    value: eval.value,
                });
            }
            let d = &eval.diagnostics;
            sums[0] += eval.value;
            sums[1] += d.p_bar;
            sums[2] += d.dice_mean;
            sums[3] += d.alpha.unwrap_or(0.0);
            batches += 1;
        }
        let nb = batches as f64;

        let fwd = model.forward(&val.features);
        let logits =
            LogitBatch::new(val_shape, fwd.logits).map_err(|_| Error::TrainingDiverged {
                epoch,
                value: f64::NAN,
            })?;
        let val_eval = eval_loss(&cfg.loss, &logits, &val_labels)?;
        let pred = predict_from_logits(logits.data(), classes);
        let val_miou = iou(&pred, &val.labels, classes, cfg.absent_iou)?.miou;
        if val_miou > best.0 {
            best = (val_miou, epoch, model.clone());
        }
        curve.push(EpochRecord {
            epoch,
            train_loss: sums[0] / nb,
            val_loss: val_eval.value,
            val_miou,
            p_bar: sums[1] / nb,
            dice_mean: sums[2] / nb,
            alpha: cfg.loss.kind().is_adaptive().then(|| sums[3] / nb),
        });
    }

    let (best_val_miou, best_epoch, params) = best;
    let test = evaluate(dataset, &params, &dataset.split.test, cfg.absent_iou)?;
    Ok((
        params,
        RunReport {
            repeat,
            init_seed,
            per_class_iou: test.per_class,
            miou: test.miou,
            best_epoch,
            best_val_miou,
            curve,
        },
    ))
}

/// Argmax class per pixel.
pub fn predict_from_logits(logits: &[f64], classes: usize) -> Vec<usize> {
    logits
        .chunks_exact(classes)
        .map(crate::batch::argmax)
        .collect()
}

/// IoU of a model over the given images (no augmentation).
pub fn evaluate(
    dataset: &SynthDataset,
    model: &ModelParams,
    images: &[usize],
    absent: AbsentIou,
) -> Result<IouReport> {
    let classes = dataset.num_classes();
    let mut counts = IouCounts::new(classes);
    for &i in images {
        let batch = gather(dataset, &[i], &[false]);
        let pred = predict_from_logits(&model.forward(&batch.features).logits, classes);
        counts.add(&pred, &batch.labels)?;
    }
    Ok(counts.report(absent))
}

/// One `(fraction, loss)` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub fraction: DataFraction,
    pub loss: LossSpec,
    pub seed: u64,
    /// Failure message for cells that could not be trained.
    pub outcome: std::result::Result<MetricsReport, String>,
}

/// Trains every `(fraction, loss)` pair, `cfg.repeats` times each.
///
/// Fractions are visited in increasing-reduction order, losses in the
/// order given. Subsets come from `subsample_train(dataset, f, cfg.seed)`,
/// so all losses at one fraction see the same images. A failing cell is
/// recorded and the sweep continues.
pub fn sweep(
    dataset: &SynthDataset,
    fractions: &[DataFraction],
    losses: &[LossSpec],
    architecture: Architecture,
    cfg: &TrainConfig,
) -> Result<Vec<SweepCell>> {
    if fractions.is_empty() || losses.is_empty() {
        return Err(Error::invalid(
            "sweep needs at least one fraction and one loss",
        ));
    }
    for loss in losses {
        loss.validate()?;
    }
    let mut fractions = fractions.to_vec();
    fractions.sort();
    fractions.dedup();

    let mut cells = Vec::with_capacity(fractions.len() * losses.len());
    for &fraction in &fractions {
        let subset = subsample_train(dataset, fraction, cfg.seed);
        for &loss in losses {
            let seed = cell_seed(cfg.seed, fraction, &loss);
            let outcome = match &subset {
                Err(e) => Err(e.to_string()),
                Ok(data) => {
                    let cell_cfg = TrainConfig {
                        loss,
                        seed,
                        ..cfg.clone()
                    };
                    train(data, architecture, &cell_cfg)
                        .map(|(_, r)| r)
                        .map_err(|e| e.to_string())
                }
            };
            cells.push(SweepCell {
                fraction,
                loss,
                seed,
                outcome,
            });
        }
    }
    Ok(cells)
}
