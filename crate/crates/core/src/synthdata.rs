//! Deterministic synthetic segmentation tasks.
//!
//! Each image holds small foreground structures (ellipses, thin random-walk
//! vessels, or both) on a large background, rendered as class intensity
//! plus Gaussian noise. Five per-pixel feature channels are derived from
//! the render:
//!
//! | channel | content |
//! |---|---|
//! | 0 | noisy intensity |
//! | 1 | 3×3 box-smoothed intensity |
//! | 2 | row coordinate in `[0, 1]` |
//! | 3 | column coordinate in `[0, 1]` |
//! | 4 | gradient magnitude of the smoothed intensity |

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod io;

pub const NUM_FEATURES: usize = 5;
/// Channels that encode pixel position and therefore stay put under flips.
pub const COORDINATE_CHANNELS: [usize; 2] = [2, 3];

const MAX_IMAGE_ATTEMPTS: usize = 100;
const MAX_SUBSAMPLE_ATTEMPTS: usize = 10;
const MAX_SHAPES_PER_IMAGE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Blobs,
    Vessels,
    Mixed,
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "blobs" => Ok(ShapeFamily::Blobs),
            "vessels" => Ok(ShapeFamily::Vessels),
            "mixed" => Ok(ShapeFamily::Mixed),
            other => Err(Error::invalid(format!("unknown shape family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTaskConfig {
    /// Side length; images are square.
    pub image_size: usize,
    pub num_classes: usize,
    pub num_images: usize,
    /// Target fraction of foreground pixels per image.
    pub foreground_fraction_target: f64,
    pub shape_family: ShapeFamily,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthTaskConfig {
    fn default() -> Self {
        SynthTaskConfig {
            image_size: 32,
            num_classes: 2,
            num_images: 40,
            foreground_fraction_target: 0.08,
            shape_family: ShapeFamily::Vessels,
            noise_sigma: 0.35,
            seed: 0,
        }
    }
}

impl SynthTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(8..=128).contains(&self.image_size) {
            return Err(Error::invalid(format!(
                "image_size must lie in [8, 128], got {}",
                self.image_size
            )));
        }
        if !(2..=5).contains(&self.num_classes) {
            return Err(Error::invalid(format!(
                "num_classes must lie in [2, 5], got {}",
                self.num_classes
            )));
        }
        if self.num_images < 8 {
            return Err(Error::invalid(format!(
                "num_images must be at least 8, got {}",
                self.num_images
            )));
        }
        let t = self.foreground_fraction_target;
        if !(t > 0.0 && t < 0.5) {
            return Err(Error::invalid(format!(
                "foreground_fraction_target must lie in (0, 0.5), got {t}"
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "noise_sigma must be finite and non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Image indices of the train, validation and test partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// 60/20/20 by image, in index order.
    fn by_ratio(n: usize) -> Split {
        let val = (n as f64 * 0.2).round() as usize;
        let test = val;
        let train = n - val - test;
        Split {
            train: (0..train).collect(),
            val: (train..train + val).collect(),
            test: (train + val..n).collect(),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || seen[i] {
                return Err(Error::invalid(format!(
                    "split index {i} is out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

/// Features `(images, H, W, F)` and labels `(images, H, W)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthTaskConfig,
    pub height: usize,
    pub width: usize,
    pub num_features: usize,
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
    pub split: Split,
}

impl SynthDataset {
    /// Assembles a dataset from raw parts, checking shapes and the split.
    pub fn from_parts(
        config: SynthTaskConfig,
        features: Vec<f64>,
        labels: Vec<u32>,
        split: Split,
    ) -> Result<Self> {
        let (h, w) = (config.image_size, config.image_size);
        let n = config.num_images;
        if features.len() != n * h * w * NUM_FEATURES {
            return Err(Error::invalid(
                "feature tensor does not match the config shape",
            ));
        }
        if labels.len() != n * h * w {
            return Err(Error::invalid(
                "label tensor does not match the config shape",
            ));
        }
        if labels.iter().any(|&k| k as usize >= config.num_classes) {
            return Err(Error::invalid("label outside the configured class range"));
        }
        split.validate(n)?;
        Ok(SynthDataset {
            config,
            height: h,
            width: w,
            num_features: NUM_FEATURES,
            features,
            labels,
            split,
        })
    }

    pub fn num_images(&self) -> usize {
        self.config.num_images
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height * self.width
    }

    pub fn image_features(&self, image: usize) -> &[f64] {
        let len = self.pixels_per_image() * self.num_features;
        &self.features[image * len..(image + 1) * len]
    }

    pub fn image_labels(&self, image: usize) -> &[u32] {
        let len = self.pixels_per_image();
        &self.labels[image * len..(image + 1) * len]
    }

    /// Appends the pixels of `image` to `features` and `labels`, mirrored
    /// left-right when `flip` is set. Coordinate channels keep describing
    /// the destination position.
    pub fn gather_image(
        &self,
        image: usize,
        flip: bool,
        features: &mut Vec<f64>,
        labels: &mut Vec<usize>,
    ) {
        let f = self.num_features;
        let src = self.image_features(image);
        let lab = self.image_labels(image);
        for r in 0..self.height {
            for c in 0..self.width {
                let sc = if flip { self.width - 1 - c } else { c };
                let s = r * self.width + sc;
                let d = r * self.width + c;
                let start = features.len();
                features.extend_from_slice(&src[s * f..(s + 1) * f]);
                for ch in COORDINATE_CHANNELS {
                    features[start + ch] = src[d * f + ch];
                }
                labels.push(lab[s] as usize);
            }
        }
    }

    /// Fraction of non-background pixels over the given images.
    pub fn foreground_fraction(&self, images: &[usize]) -> f64 {
        let total = images.len() * self.pixels_per_image();
        let fg: usize = images
            .iter()
            .map(|&i| self.image_labels(i).iter().filter(|&&k| k != 0).count())
            .sum();
        fg as f64 / total as f64
    }

    /// Classes with at least one pixel in the given images.
    pub fn classes_present(&self, images: &[usize]) -> BTreeSet<usize> {
        images
            .iter()
            .flat_map(|&i| self.image_labels(i).iter().map(|&k| k as usize))
            .collect()
    }

    fn first_missing_class(&self, images: &[usize]) -> Option<usize> {
        let present = self.classes_present(images);
        (0..self.num_classes()).find(|k| !present.contains(k))
    }
}

/// Renders a dataset. Pure function of the config.
pub fn generate(config: &SynthTaskConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let size = config.image_size;
    let pixels = size * size;
    let mut features = Vec::with_capacity(config.num_images * pixels * NUM_FEATURES);
    let mut labels = Vec::with_capacity(config.num_images * pixels);

    for image in 0..config.num_images {
        let mask = draw_mask(config, &mut rng).ok_or_else(|| {
            Error::GenerationFailure(format!(
                "image {image}: foreground fraction {} unreachable after {MAX_IMAGE_ATTEMPTS} attempts",
                config.foreground_fraction_target
            ))
        })?;
        render_features(config, &mask, &mut rng, &mut features);
        labels.extend(mask.iter().map(|&k| k as u32));
    }

    let dataset = SynthDataset::from_parts(
        config.clone(),
        features,
        labels,
        Split::by_ratio(config.num_images),
    )?;
    if let Some(k) = dataset.first_missing_class(&dataset.split.train) {
        return Err(Error::GenerationFailure(format!(
            "class {k} absent from the training split"
        )));
    }
    Ok(dataset)
}

/// Training-set reduction factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DataFraction {
    Full,
    Half,
    Quarter,
    Eighth,
}

impl DataFraction {
    pub const ALL: [DataFraction; 4] = [
        DataFraction::Full,
        DataFraction::Half,
        DataFraction::Quarter,
        DataFraction::Eighth,
    ];

    pub fn denominator(self) -> usize {
        match self {
            DataFraction::Full => 1,
            DataFraction::Half => 2,
            DataFraction::Quarter => 4,
            DataFraction::Eighth => 8,
        }
    }

    pub fn value(self) -> f64 {
        1.0 / self.denominator() as f64
    }

    /// Number of images kept out of `n`, rounded up.
    pub fn keep(self, n: usize) -> usize {
        n.div_ceil(self.denominator())
    }
}

impl fmt::Display for DataFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataFraction::Full => f.write_str("1"),
            other => write!(f, "1/{}", other.denominator()),
        }
    }
}

impl FromStr for DataFraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let value = if let Some((num, den)) = t.split_once('/') {
            let num: f64 = num.trim().parse().map_err(|_| bad_fraction(s))?;
            let den: f64 = den.trim().parse().map_err(|_| bad_fraction(s))?;
            num / den
        } else {
            t.parse::<f64>().map_err(|_| bad_fraction(s))?
        };
        DataFraction::ALL
            .into_iter()
            .find(|f| (f.value() - value).abs() < 1e-12)
            .ok_or_else(|| bad_fraction(s))
    }
}

fn bad_fraction(s: &str) -> Error {
    Error::invalid(format!(
        "fraction must be one of 1, 1/2, 1/4, 1/8; got `{s}`"
    ))
}

/// Keeps `⌈fraction · |train|⌉` training images chosen by a seeded shuffle.
///
/// Subsets for the same seed are nested across fractions because each is a
/// prefix of the same permutation. If the prefix misses a class, the
/// permutation is redrawn with the next seed offset (up to 10 attempts).
pub fn subsample_train(
    dataset: &SynthDataset,
    fraction: DataFraction,
    seed: u64,
) -> Result<SynthDataset> {
    let mut out = dataset.clone();
    if fraction == DataFraction::Full {
        return Ok(out);
    }
    let keep = fraction.keep(dataset.split.train.len());
    let mut missing = 0;
    for attempt in 0..MAX_SUBSAMPLE_ATTEMPTS {
        let mut order = dataset.split.train.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        order.shuffle(&mut rng);
        let mut train = order[..keep].to_vec();
        train.sort_unstable();
        match dataset.first_missing_class(&train) {
            None => {
                out.split.train = train;
                return Ok(out);
            }
            Some(k) => missing = k,
        }
    }
    Err(Error::SubsampleFailure {
        missing_class: missing,
        attempts: MAX_SUBSAMPLE_ATTEMPTS,
    })
}

/// Draws one label mask, rejecting draws whose foreground fraction falls
/// outside `[t/2, 2t]` or that miss a class.
fn draw_mask(config: &SynthTaskConfig, rng: &mut ChaCha8Rng) -> Option<Vec<u8>> {
    let size = config.image_size;
    let target = config.foreground_fraction_target;
    let total = (size * size) as f64;
    for _ in 0..MAX_IMAGE_ATTEMPTS {
        let mut mask = vec![0u8; size * size];
        let mut shapes = 0;
        while (count_foreground(&mask) as f64) < target * total && shapes < MAX_SHAPES_PER_IMAGE {
            let class = 1 + (shapes % (config.num_classes - 1)) as u8;
            let vessel = match config.shape_family {
                ShapeFamily::Blobs => false,
                ShapeFamily::Vessels => true,
                ShapeFamily::Mixed => shapes % 2 == 0,
            };
            if vessel {
                draw_vessel(&mut mask, size, class, rng);
            } else {
                draw_blob(&mut mask, size, class, target, config.num_classes, rng);
            }
            shapes += 1;
        }
        let frac = count_foreground(&mask) as f64 / total;
        let all_classes = (0..config.num_classes as u8).all(|k| mask.contains(&k));
        if frac >= 0.5 * target && frac <= 2.0 * target && all_classes {
            return Some(mask);
        }
    }
    None
}

fn count_foreground(mask: &[u8]) -> usize {
    mask.iter().filter(|&&k| k != 0).count()
}

/// Filled rotated ellipse sized so one blob per foreground class covers
/// roughly half of that class's share of the target area.
fn draw_blob(
    mask: &mut [u8],
    size: usize,
    class: u8,
    target: f64,
    classes: usize,
    rng: &mut ChaCha8Rng,
) {
    let area = 0.5 * target * (size * size) as f64 / (classes - 1) as f64;
    let radius = (area / PI).sqrt().max(1.0);
    let a = radius * rng.random_range(0.7..1.4);
    let b = radius * radius / a;
    let theta = rng.random_range(0.0..PI);
    let (sin, cos) = theta.sin_cos();
    let margin = a.max(b);
    let lo = margin.min(size as f64 / 2.0 - 0.5);
    let cy = rng.random_range(lo..=(size as f64 - 1.0 - lo));
    let cx = rng.random_range(lo..=(size as f64 - 1.0 - lo));
    for r in 0..size {
        for c in 0..size {
            let dy = r as f64 - cy;
            let dx = c as f64 - cx;
            let u = (dx * cos + dy * sin) / a;
            let v = (-dx * sin + dy * cos) / b;
            if u * u + v * v <= 1.0 {
                mask[r * size + c] = class;
            }
        }
    }
}

/// Random-walk polyline entering from the border, 1 or 2 pixels wide.
fn draw_vessel(mask: &mut [u8], size: usize, class: u8, rng: &mut ChaCha8Rng) {
    let s = size as f64 - 1.0;
    let along = rng.random_range(0.0..=s);
    let (mut y, mut x) = match rng.random_range(0..4) {
        0 => (0.0, along),
        1 => (s, along),
        2 => (along, 0.0),
        _ => (along, s),
    };
    let centre = s / 2.0;
    let mut heading = (centre - y).atan2(centre - x) + rng.random_range(-0.6..0.6);
    let width = rng.random_range(1..=2usize);
    let turn = Normal::new(0.0, 0.25).expect("valid sigma");
    for _ in 0..2 * size {
        let (r, c) = (y.round() as isize, x.round() as isize);
        for dr in 0..width as isize {
            for dc in 0..width as isize {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < size && (cc as usize) < size {
                    mask[rr as usize * size + cc as usize] = class;
                }
            }
        }
        heading += turn.sample(rng);
        y += heading.sin();
        x += heading.cos();
        if y < -0.5 || x < -0.5 || y > s + 0.5 || x > s + 0.5 {
            break;
        }
    }
}

fn render_features(
    config: &SynthTaskConfig,
    mask: &[u8],
    rng: &mut ChaCha8Rng,
    out: &mut Vec<f64>,
) {
    let size = config.image_size;
    let scale = 1.0 / (config.num_classes - 1) as f64;
    let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
    let noisy: Vec<f64> = mask
        .iter()
        .map(|&k| {
            let clean = k as f64 * scale;
            if config.noise_sigma > 0.0 {
                clean + noise.sample(rng)
            } else {
                clean
            }
        })
        .collect();

    let at = |img: &[f64], r: isize, c: isize| {
        let r = r.clamp(0, size as isize - 1) as usize;
        let c = c.clamp(0, size as isize - 1) as usize;
        img[r * size + c]
    };
    let mut smooth = vec![0.0; size * size];
    for r in 0..size as isize {
        for c in 0..size as isize {
            let mut sum = 0.0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    sum += at(&noisy, r + dr, c + dc);
                }
            }
            smooth[r as usize * size + c as usize] = sum / 9.0;
        }
    }
    let denom = (size - 1) as f64;
    for r in 0..size as isize {
        for c in 0..size as isize {
            let gy = 0.5 * (at(&smooth, r + 1, c) - at(&smooth, r - 1, c));
            let gx = 0.5 * (at(&smooth, r, c + 1) - at(&smooth, r, c - 1));
            let k = r as usize * size + c as usize;
            out.extend_from_slice(&[
                noisy[k],
                smooth[k],
                r as f64 / denom,
                c as f64 / denom,
                (gx * gx + gy * gy).sqrt(),
            ]);
        }
    }
}
