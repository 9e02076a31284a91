//! C interface to the `segloss` loss library.
//!
//! Every function returns a [`SeglossStatus`]. On failure a message is kept
//! per thread and can be read with [`segloss_last_error_message`]. Panics
//! never cross the boundary; they are reported as
//! [`SeglossStatus::Panic`].
//!
//! Batches and datasets are opaque handles created by `*_new`, `*_generate`
//! or `*_load` and released with the matching `*_free`. Passing a handle
//! to `*_free` twice, or using it afterwards, is undefined behaviour.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use segloss::gradcheck;
use segloss::synthdata::{self, ShapeFamily, SynthDataset, SynthTaskConfig};
use segloss::{eval_loss, one_hot, BatchShape, Error, LabelBatch, LogitBatch, LossSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeglossStatus {
    Ok = 0,
    InvalidInput = 1,
    NumericalFailure = 2,
    GenerationFailure = 3,
    SubsampleFailure = 4,
    TrainingDiverged = 5,
    /// Malformed dataset files or metadata.
    Format = 6,
    Io = 7,
    NullPointer = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeglossLossKind {
    Ce = 0,
    Dice = 1,
    Additive = 2,
    Ml = 3,
    Caml = 4,
    CamlConstR = 5,
}

/// A loss and its parameter: λ for `Additive`, r for `CamlConstR`,
/// ignored otherwise.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SeglossLoss {
    pub kind: SeglossLossKind,
    pub param: f64,
}

/// Loss value with the batch statistics behind it. `alpha` is NaN for the
/// non-adaptive losses.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SeglossLossValue {
    pub value: f64,
    pub ce: f64,
    pub dice_loss: f64,
    pub p_bar: f64,
    pub dice_mean: f64,
    pub alpha: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SeglossGradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_pixel: usize,
    pub worst_class: usize,
    pub tolerance: f64,
    pub passed: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeglossShapeFamily {
    Blobs = 0,
    Vessels = 1,
    Mixed = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SeglossTaskConfig {
    pub image_size: usize,
    pub num_classes: usize,
    pub num_images: usize,
    pub foreground_fraction_target: f64,
    pub shape_family: SeglossShapeFamily,
    pub noise_sigma: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SeglossDatasetInfo {
    pub num_images: usize,
    pub height: usize,
    pub width: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub train_images: usize,
    pub val_images: usize,
    pub test_images: usize,
}

/// Logits and one-hot labels of one batch.
pub struct SeglossBatch {
    logits: LogitBatch,
    labels: LabelBatch,
}

pub struct SeglossDataset {
    inner: SynthDataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn status_of(e: &Error) -> SeglossStatus {
    match e {
        Error::InvalidInput(_) => SeglossStatus::InvalidInput,
        Error::NumericalFailure { .. } => SeglossStatus::NumericalFailure,
        Error::GenerationFailure(_) => SeglossStatus::GenerationFailure,
        Error::SubsampleFailure { .. } => SeglossStatus::SubsampleFailure,
        Error::TrainingDiverged { .. } => SeglossStatus::TrainingDiverged,
        Error::Format { .. } | Error::Json(_) => SeglossStatus::Format,
        Error::Io { .. } => SeglossStatus::Io,
    }
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SeglossStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SeglossStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer passed as `{what}`"));
            SeglossStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SeglossStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(p: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    p.write(value);
    Ok(())
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidInput(format!("`{what}` is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn loss_spec(loss: &SeglossLoss) -> Result<LossSpec, Failure> {
    let spec = match loss.kind {
        SeglossLossKind::Ce => LossSpec::Ce,
        SeglossLossKind::Dice => LossSpec::Dice,
        SeglossLossKind::Additive => LossSpec::Additive { lambda: loss.param },
        SeglossLossKind::Ml => LossSpec::Ml,
        SeglossLossKind::Caml => LossSpec::Caml,
        SeglossLossKind::CamlConstR => LossSpec::CamlConstR { r: loss.param },
    };
    spec.validate()?;
    Ok(spec)
}

fn task_config(c: &SeglossTaskConfig) -> SynthTaskConfig {
    SynthTaskConfig {
        image_size: c.image_size,
        num_classes: c.num_classes,
        num_images: c.num_images,
        foreground_fraction_target: c.foreground_fraction_target,
        shape_family: match c.shape_family {
            SeglossShapeFamily::Blobs => ShapeFamily::Blobs,
            SeglossShapeFamily::Vessels => ShapeFamily::Vessels,
            SeglossShapeFamily::Mixed => ShapeFamily::Mixed,
        },
        noise_sigma: c.noise_sigma,
        seed: c.seed,
    }
}

/// Message of the last failure on the calling thread, or NULL. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn segloss_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn segloss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies a batch of `batch × height × width` pixels with `classes` logits
/// each (pixel-major) and one class index per pixel.
///
/// # Safety
/// `logits` must point to `batch·height·width·classes` doubles and
/// `labels` to `batch·height·width` integers; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn segloss_batch_new(
    batch: usize,
    height: usize,
    width: usize,
    classes: usize,
    logits: *const f64,
    labels: *const u32,
    out: *mut *mut SeglossBatch,
) -> SeglossStatus {
    guard(|| {
        let shape = BatchShape::new(batch, height, width, classes)?;
        let z = slice(logits, shape.len(), "logits")?;
        let y = slice(labels, shape.pixels(), "labels")?;
        let y: Vec<usize> = y.iter().map(|&k| k as usize).collect();
        let handle = SeglossBatch {
            logits: LogitBatch::new(shape, z.to_vec())?,
            labels: one_hot(shape, &y)?,
        };
        write_out(out, Box::into_raw(Box::new(handle)), "out")
    })
}

/// # Safety
/// `handle` must be NULL or come from [`segloss_batch_new`].
#[no_mangle]
pub unsafe extern "C" fn segloss_batch_free(handle: *mut SeglossBatch) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Evaluates a loss. When `grad` is non-NULL the gradient with respect to
/// every logit is written there; `grad_len` must then equal the logit
/// count.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `grad` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn segloss_eval(
    batch: *const SeglossBatch,
    loss: *const SeglossLoss,
    out: *mut SeglossLossValue,
    grad: *mut f64,
    grad_len: usize,
) -> SeglossStatus {
    guard(|| {
        let b = deref(batch, "batch")?;
        let spec = loss_spec(deref(loss, "loss")?)?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let eval = eval_loss(&spec, &b.logits, &b.labels)?;
        if !grad.is_null() {
            if grad_len != eval.grad.len() {
                return Err(Error::InvalidInput(format!(
                    "gradient buffer holds {grad_len} values, {} needed",
                    eval.grad.len()
                ))
                .into());
            }
            std::slice::from_raw_parts_mut(grad, grad_len).copy_from_slice(&eval.grad);
        }
        let d = &eval.diagnostics;
        let value = SeglossLossValue {
            value: eval.value,
            ce: d.ce,
            dice_loss: d.dice_loss,
            p_bar: d.p_bar,
            dice_mean: d.dice_mean,
            alpha: d.alpha.unwrap_or(f64::NAN),
        };
        write_out(out, value, "out")
    })
}

/// Compares the analytic gradient against central finite differences.
/// A negative `tolerance` selects the library default for the loss.
///
/// # Safety
/// `batch`, `loss` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn segloss_gradcheck(
    batch: *const SeglossBatch,
    loss: *const SeglossLoss,
    tolerance: f64,
    out: *mut SeglossGradCheck,
) -> SeglossStatus {
    guard(|| {
        let b = deref(batch, "batch")?;
        let spec = loss_spec(deref(loss, "loss")?)?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let tolerance = if tolerance < 0.0 {
            gradcheck::default_tolerance(spec.kind())
        } else {
            tolerance
        };
        let r = gradcheck::check(&spec, &b.logits, &b.labels, tolerance)?;
        let report = SeglossGradCheck {
            max_rel_error: r.max_rel_error,
            max_abs_error: r.max_abs_error,
            worst_pixel: r.worst_index.0,
            worst_class: r.worst_index.1,
            tolerance: r.tolerance,
            passed: r.passed(),
        };
        write_out(out, report, "out")
    })
}

/// Default synthetic task: 32×32 vessels, 2 classes, 40 images.
#[no_mangle]
pub extern "C" fn segloss_task_config_default() -> SeglossTaskConfig {
    let d = SynthTaskConfig::default();
    SeglossTaskConfig {
        image_size: d.image_size,
        num_classes: d.num_classes,
        num_images: d.num_images,
        foreground_fraction_target: d.foreground_fraction_target,
        shape_family: match d.shape_family {
            ShapeFamily::Blobs => SeglossShapeFamily::Blobs,
            ShapeFamily::Vessels => SeglossShapeFamily::Vessels,
            ShapeFamily::Mixed => SeglossShapeFamily::Mixed,
        },
        noise_sigma: d.noise_sigma,
        seed: d.seed,
    }
}

/// # Safety
/// `config` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn segloss_dataset_generate(
    config: *const SeglossTaskConfig,
    out: *mut *mut SeglossDataset,
) -> SeglossStatus {
    guard(|| {
        let cfg = task_config(deref(config, "config")?);
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let inner = synthdata::generate(&cfg)?;
        write_out(
            out,
            Box::into_raw(Box::new(SeglossDataset { inner })),
            "out",
        )
    })
}

/// Writes the dataset directory (created if missing).
///
/// # Safety
/// `dataset` must be a live handle and `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn segloss_dataset_save(
    dataset: *const SeglossDataset,
    dir: *const c_char,
) -> SeglossStatus {
    guard(|| {
        let ds = deref(dataset, "dataset")?;
        let dir = path_arg(dir, "dir")?;
        Ok(synthdata::io::save(&ds.inner, &dir)?)
    })
}

/// # Safety
/// `dir` must be a NUL-terminated path and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn segloss_dataset_load(
    dir: *const c_char,
    out: *mut *mut SeglossDataset,
) -> SeglossStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let inner = synthdata::io::load(&dir)?;
        write_out(
            out,
            Box::into_raw(Box::new(SeglossDataset { inner })),
            "out",
        )
    })
}

/// # Safety
/// `dataset` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn segloss_dataset_info(
    dataset: *const SeglossDataset,
    out: *mut SeglossDatasetInfo,
) -> SeglossStatus {
    guard(|| {
        let ds = &deref(dataset, "dataset")?.inner;
        let info = SeglossDatasetInfo {
            num_images: ds.num_images(),
            height: ds.height,
            width: ds.width,
            num_features: ds.num_features,
            num_classes: ds.num_classes(),
            train_images: ds.split.train.len(),
            val_images: ds.split.val.len(),
            test_images: ds.split.test.len(),
        };
        write_out(out, info, "out")
    })
}

/// Copies the label of every pixel, image-major, into `out` of exactly
/// `num_images·height·width` entries.
///
/// # Safety
/// `dataset` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn segloss_dataset_labels(
    dataset: *const SeglossDataset,
    out: *mut u32,
    len: usize,
) -> SeglossStatus {
    guard(|| {
        let ds = &deref(dataset, "dataset")?.inner;
        copy_to(&ds.labels, out, len, "labels")
    })
}

/// Copies the feature tensor `(images, height, width, features)` into
/// `out` of exactly that many entries.
///
/// # Safety
/// `dataset` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn segloss_dataset_features(
    dataset: *const SeglossDataset,
    out: *mut f64,
    len: usize,
) -> SeglossStatus {
    guard(|| {
        let ds = &deref(dataset, "dataset")?.inner;
        copy_to(&ds.features, out, len, "features")
    })
}

unsafe fn copy_to<T: Copy>(src: &[T], out: *mut T, len: usize, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    if len != src.len() {
        return Err(Error::InvalidInput(format!(
            "{what} buffer holds {len} values, {} needed",
            src.len()
        ))
        .into());
    }
    std::slice::from_raw_parts_mut(out, len).copy_from_slice(src);
    Ok(())
}

/// # Safety
/// `handle` must be NULL or a dataset handle from this library.
#[no_mangle]
pub unsafe extern "C" fn segloss_dataset_free(handle: *mut SeglossDataset) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
