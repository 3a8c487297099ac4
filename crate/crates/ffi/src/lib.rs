//! C ABI over `pfn-core`.
//!
//! Every function returns a [`PfnStatus`]; on failure a message is kept in
//! thread-local storage and can be read with [`pfn_last_error`]. Models are
//! opaque handles created by `pfn_model_*` constructors and released with
//! [`pfn_model_free`]. Images are planar (channel-major) `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pfn_core::error::PfnError;
use pfn_core::loss_metrics::{evaluate, MetricsReport};
use pfn_core::model::{
    init_model, load_checkpoint_unchecked, param_count, pfn_forward, save_checkpoint, ModelConfig,
    ModelParams,
};
use pfn_core::spectral::{divide_bands, CutoffSchedule};
use pfn_core::tensor::{Mask, Planes};
use pfn_core::training::{lr_schedule, TrainConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Checkpoint = 5,
    ConfigMismatch = 6,
    EmptyMask = 7,
    NonFinite = 8,
    /// A Rust panic was caught at the boundary.
    Internal = 9,
}

/// Metric suite for one prediction.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PfnMetrics {
    pub rel: f64,
    pub sq_rel: f64,
    pub rms: f64,
    pub rms_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_valid: usize,
}

impl From<MetricsReport> for PfnMetrics {
    fn from(m: MetricsReport) -> Self {
        Self {
            rel: m.rel,
            sq_rel: m.sq_rel,
            rms: m.rms,
            rms_log: m.rms_log,
            delta1: m.delta1,
            delta2: m.delta2,
            delta3: m.delta3,
            n_valid: m.n_valid,
        }
    }
}

/// Opaque model handle.
pub struct PfnModel {
    params: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &PfnError) -> PfnStatus {
    match e {
        PfnError::Dimensions(_) | PfnError::ShapeMismatch(_) => PfnStatus::ShapeMismatch,
        PfnError::Schedule(_) | PfnError::InvalidArgument(_) | PfnError::Config { .. } => {
            PfnStatus::InvalidArgument
        }
        PfnError::EmptyMask => PfnStatus::EmptyMask,
        PfnError::NonFinite(_) | PfnError::Diverged { .. } => PfnStatus::NonFinite,
        PfnError::ConfigMismatch { .. } => PfnStatus::ConfigMismatch,
        PfnError::Checkpoint(_) | PfnError::Format { .. } => PfnStatus::Checkpoint,
        PfnError::Io { .. } | PfnError::Image(_) | PfnError::Csv(_) => PfnStatus::Io,
    }
}

struct Fail(PfnStatus, String);

impl From<PfnError> for Fail {
    fn from(e: PfnError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PfnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PfnStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            PfnStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(PfnStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    non_null(p, "path")?;
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(PfnStatus::InvalidArgument, "path is not UTF-8".into()))
}

unsafe fn model_ref<'a>(m: *const PfnModel) -> Result<&'a PfnModel, Fail> {
    non_null(m, "model")?;
    Ok(&*m)
}

/// Message for the last failed call on this thread; empty after success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn pfn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pfn_model_load(path: *const c_char, out: *mut *mut PfnModel) -> PfnStatus {
    guard(|| {
        non_null(out, "out")?;
        let params = load_checkpoint_unchecked(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(PfnModel { params }));
        Ok(())
    })
}

/// Freshly initialized model for `side x side` inputs with the reference
/// cut-offs rescaled to that size.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pfn_model_new(side: usize, seed: u64, out: *mut *mut PfnModel) -> PfnStatus {
    guard(|| {
        non_null(out, "out")?;
        let mut config = ModelConfig::desk(side, CutoffSchedule::reference_for(side));
        config.seed = seed;
        let params = init_model(&config)?;
        *out = Box::into_raw(Box::new(PfnModel { params }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pfn_model_free(model: *mut PfnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pfn_model_save(model: *const PfnModel, path: *const c_char) -> PfnStatus {
    guard(|| {
        let m = model_ref(model)?;
        save_checkpoint(&m.params, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pfn_model_input_size(
    model: *const PfnModel,
    height: *mut usize,
    width: *mut usize,
) -> PfnStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(height, "height")?;
        non_null(width, "width")?;
        (*height, *width) = m.params.config.input_size;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pfn_model_num_bands(model: *const PfnModel, out: *mut usize) -> PfnStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(out, "out")?;
        *out = m.params.num_bands();
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pfn_model_param_count(model: *const PfnModel, out: *mut usize) -> PfnStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(out, "out")?;
        *out = param_count(&m.params);
        Ok(())
    })
}

/// Predicts depth for a planar RGB image of `height x width`. Inputs of
/// another size than the model's run with rescaled cut-offs.
///
/// # Safety
/// `rgb` must hold `3 * height * width` values and `depth_out` room for
/// `height * width`.
#[no_mangle]
pub unsafe extern "C" fn pfn_model_predict(
    model: *const PfnModel,
    rgb: *const f64,
    height: usize,
    width: usize,
    depth_out: *mut f64,
) -> PfnStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(rgb, "rgb")?;
        non_null(depth_out, "depth_out")?;
        let n = height
            .checked_mul(width)
            .ok_or_else(|| Fail(PfnStatus::InvalidArgument, "size overflows".into()))?;
        let image = Planes::from_vec(3, height, width, std::slice::from_raw_parts(rgb, 3 * n).to_vec())?;
        let params = if m.params.config.input_size == (height, width) {
            std::borrow::Cow::Borrowed(&m.params)
        } else {
            std::borrow::Cow::Owned(m.params.at_resolution(height, width))
        };
        params.config.schedule.validate_for(height, width)?;
        let stack = divide_bands(&image, &params.config.schedule)?;
        let depth = pfn_forward(&stack, &params)?;
        std::slice::from_raw_parts_mut(depth_out, n).copy_from_slice(depth.data());
        Ok(())
    })
}

/// Splits a planar image into `n_cutoffs + 1` bands written back to back
/// into `bands_out` (`(n_cutoffs + 1) * channels * height * width` values).
///
/// # Safety
/// Pointers must reference arrays of the stated lengths; `cutoffs` may be
/// null when `n_cutoffs` is 0.
#[no_mangle]
pub unsafe extern "C" fn pfn_divide_bands(
    image: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    cutoffs: *const f64,
    n_cutoffs: usize,
    bands_out: *mut f64,
) -> PfnStatus {
    guard(|| {
        non_null(image, "image")?;
        non_null(bands_out, "bands_out")?;
        let cuts = if n_cutoffs == 0 {
            vec![]
        } else {
            non_null(cutoffs, "cutoffs")?;
            std::slice::from_raw_parts(cutoffs, n_cutoffs).to_vec()
        };
        let len = channels * height * width;
        let grid = Planes::from_vec(channels, height, width, std::slice::from_raw_parts(image, len).to_vec())?;
        let schedule = CutoffSchedule::new(cuts)?;
        schedule.validate_for(height, width)?;
        let stack = divide_bands(&grid, &schedule)?;
        let out = std::slice::from_raw_parts_mut(bands_out, len * stack.num_bands());
        for (dst, band) in out.chunks_exact_mut(len).zip(&stack.bands) {
            dst.copy_from_slice(band.data());
        }
        Ok(())
    })
}

/// Scores a depth prediction. `mask` may be null, in which case every pixel
/// with positive finite ground truth is valid; otherwise nonzero bytes mark
/// valid pixels.
///
/// # Safety
/// `pred`, `gt` (and `mask` when non-null) must hold `height * width` values.
#[no_mangle]
pub unsafe extern "C" fn pfn_evaluate(
    pred: *const f64,
    gt: *const f64,
    mask: *const u8,
    height: usize,
    width: usize,
    out: *mut PfnMetrics,
) -> PfnStatus {
    guard(|| {
        non_null(pred, "pred")?;
        non_null(gt, "gt")?;
        non_null(out, "out")?;
        let n = height * width;
        let p = Planes::from_vec(1, height, width, std::slice::from_raw_parts(pred, n).to_vec())?;
        let g = Planes::from_vec(1, height, width, std::slice::from_raw_parts(gt, n).to_vec())?;
        let m = if mask.is_null() {
            Mask::from_depth(&g)
        } else {
            let bits = std::slice::from_raw_parts(mask, n).iter().map(|&b| b != 0).collect();
            Mask::from_vec(height, width, bits)?
        };
        if m.count() == 0 {
            return Err(PfnError::EmptyMask.into());
        }
        *out = evaluate(&p, &g, &m)?.into();
        Ok(())
    })
}

/// Learning rate at `epoch` for initial rate `lr0` halved every `period`
/// epochs; returns NaN for a non-positive `lr0` or zero `period`.
#[no_mangle]
pub extern "C" fn pfn_lr_schedule(epoch: usize, lr0: f64, period: usize) -> f64 {
    if !(lr0 > 0.0) || period == 0 {
        return f64::NAN;
    }
    let config = TrainConfig {
        lr0,
        lr_halving_period: period,
        ..TrainConfig::default()
    };
    lr_schedule(epoch, &config)
}
