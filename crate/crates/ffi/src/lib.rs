//! C ABI for patchbatch.
//!
//! Every fallible function returns a [`PbStatus`]; on failure the message is
//! available from [`pb_last_error_message`] on the same thread. Models and
//! flow results are opaque handles released with their `_free` function.
//! Arrays are caller-owned, row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use patchbatch::flow::{DenseFlow, FlowField};
use patchbatch::losses::{self, DistanceBatch, Label, LossConfig, LossVariant};
use patchbatch::matcher::MatchConfig;
use patchbatch::net::{checkpoint, EncoderModel};
use patchbatch::pipeline::{run_flow, PipelineConfig};
use patchbatch::seeds::derive_seed;
use patchbatch::{synthgauss, Error, Tensor};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Domain = 4,
    DegenerateBatch = 5,
    Config = 6,
    Sampling = 7,
    Diverged = 8,
    Interpolation = 9,
    Format = 10,
    Pipeline = 11,
    Io = 12,
    State = 13,
    Panic = 14,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbLossVariant {
    Spring = 0,
    Centrifuge = 1,
    SpringSd = 2,
    CentrifugeSd = 3,
}

impl From<PbLossVariant> for LossVariant {
    fn from(v: PbLossVariant) -> Self {
        match v {
            PbLossVariant::Spring => LossVariant::Spring,
            PbLossVariant::Centrifuge => LossVariant::Centrifuge,
            PbLossVariant::SpringSd => LossVariant::SpringSd,
            PbLossVariant::CentrifugeSd => LossVariant::CentrifugeSd,
        }
    }
}

/// Matching and interpolation settings for [`pb_flow_run`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbFlowConfig {
    pub iterations: usize,
    pub search_radius: usize,
    pub cc_area_threshold: usize,
    pub border_margin: usize,
    /// 1, 2 or 4.
    pub downsample: usize,
    pub k: usize,
    pub kappa: f64,
    /// Forward and backward PatchMatch seeds are derived from this.
    pub seed: u64,
}

/// Opaque trained encoder.
pub struct PbModel {
    model: EncoderModel,
}

/// Opaque result of [`pb_flow_run`].
pub struct PbFlow {
    sparse: FlowField,
    dense: DenseFlow,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

type Failure = (PbStatus, String);

fn status_of(e: &Error) -> PbStatus {
    match e {
        Error::Dimension(_) => PbStatus::Dimension,
        Error::Domain(_) => PbStatus::Domain,
        Error::DegenerateBatch(_) => PbStatus::DegenerateBatch,
        Error::State(_) => PbStatus::State,
        Error::Config(_) => PbStatus::Config,
        Error::Sampling(_) => PbStatus::Sampling,
        Error::Diverged(_) => PbStatus::Diverged,
        Error::Interpolation(_) => PbStatus::Interpolation,
        Error::Format { .. } => PbStatus::Format,
        Error::Pipeline { .. } => PbStatus::Pipeline,
        Error::Io(_) => PbStatus::Io,
    }
}

fn lib(e: Error) -> Failure {
    (status_of(&e), e.to_string())
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|l| *l.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PbStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            PbStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (PbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn labels_from(bits: &[u8]) -> Result<Vec<Label>, Failure> {
    bits.iter().map(|&b| Label::from_bit(b).map_err(lib)).collect()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn pb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|l| l.borrow().as_ptr())
}

/// Loss of a single pair. `label` is 0 for matching, 1 for non-matching.
///
/// # Safety
/// `out_loss` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn pb_pair_loss(
    variant: PbLossVariant,
    label: u8,
    distance: f64,
    margin: f64,
    out_loss: *mut f64,
) -> PbStatus {
    guard(|| {
        let label = Label::from_bit(label).map_err(lib)?;
        let v = losses::pair_loss(variant.into(), label, distance, margin).map_err(lib)?;
        *out(out_loss, "out_loss")? = v;
        Ok(())
    })
}

/// Batch loss over `n` distances and 0/1 labels.
///
/// # Safety
/// `distances` and `labels` must hold `n` elements; `out_loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pb_batch_loss(
    variant: PbLossVariant,
    margin: f64,
    lambda: f64,
    distances: *const f64,
    labels: *const u8,
    n: usize,
    out_loss: *mut f64,
) -> PbStatus {
    guard(|| {
        let cfg = LossConfig::new(variant.into(), margin, lambda).map_err(lib)?;
        let batch = DistanceBatch::new(
            slice(distances, n, "distances")?.to_vec(),
            labels_from(slice(labels, n, "labels")?)?,
        )
        .map_err(lib)?;
        *out(out_loss, "out_loss")? = losses::batch_loss(&cfg, &batch).map_err(lib)?;
        Ok(())
    })
}

/// Gradient of the batch loss with respect to each of the `n` distances.
///
/// # Safety
/// `distances`, `labels` and `out_grad` must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn pb_batch_loss_grad(
    variant: PbLossVariant,
    margin: f64,
    lambda: f64,
    distances: *const f64,
    labels: *const u8,
    n: usize,
    out_grad: *mut f64,
) -> PbStatus {
    guard(|| {
        let cfg = LossConfig::new(variant.into(), margin, lambda).map_err(lib)?;
        let batch = DistanceBatch::new(
            slice(distances, n, "distances")?.to_vec(),
            labels_from(slice(labels, n, "labels")?)?,
        )
        .map_err(lib)?;
        let g = losses::batch_loss_grad(&cfg, &batch).map_err(lib)?;
        slice_mut(out_grad, n, "out_grad")?.copy_from_slice(&g);
        Ok(())
    })
}

/// ROC AUC of separating the classes by distance (smaller means matching).
///
/// # Safety
/// `distances` and `labels` must hold `n` elements; `out_auc` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pb_auc(distances: *const f64, labels: *const u8, n: usize, out_auc: *mut f64) -> PbStatus {
    guard(|| {
        let d = slice(distances, n, "distances")?;
        let l = labels_from(slice(labels, n, "labels")?)?;
        *out(out_auc, "out_auc")? = synthgauss::auc(d, &l).map_err(lib)?;
        Ok(())
    })
}

/// Loads a PBNET1 checkpoint. Release with [`pb_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pb_model_load(path: *const c_char, out_model: *mut *mut PbModel) -> PbStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (PbStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let model = checkpoint::load(path).map_err(lib)?;
        *slot = Box::into_raw(Box::new(PbModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`pb_model_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pb_model_free(model: *mut PbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn patch_side(model: &EncoderModel) -> Result<usize, Failure> {
    match model.input_shape() {
        &[1, p, q] if p == q => Ok(p),
        s => Err((PbStatus::Dimension, format!("model input {s:?} is not a square patch"))),
    }
}

/// Side length of the square input patch and descriptor length.
///
/// # Safety
/// `model` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pb_model_dims(
    model: *const PbModel,
    out_patch: *mut usize,
    out_descriptor: *mut usize,
) -> PbStatus {
    guard(|| {
        let m = &handle(model, "model")?.model;
        *out(out_patch, "out_patch")? = patch_side(m)?;
        *out(out_descriptor, "out_descriptor")? = m.descriptor_dim();
        Ok(())
    })
}

/// Encodes `n` patches (`n × patch × patch`) into `n × descriptor` values.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn pb_model_encode(
    model: *const PbModel,
    patches: *const f64,
    n: usize,
    out_descriptors: *mut f64,
) -> PbStatus {
    guard(|| {
        let m = &handle(model, "model")?.model;
        if n == 0 {
            return Ok(());
        }
        let p = patch_side(m)?;
        let x = Tensor::new(vec![n, 1, p, p], slice(patches, n * p * p, "patches")?.to_vec()).map_err(lib)?;
        let d = m.encode(&x).map_err(lib)?;
        slice_mut(out_descriptors, d.data().len(), "out_descriptors")?.copy_from_slice(d.data());
        Ok(())
    })
}

/// Default matching and interpolation settings.
#[no_mangle]
pub extern "C" fn pb_flow_config_default() -> PbFlowConfig {
    let m = MatchConfig::default();
    let p = PipelineConfig::default();
    PbFlowConfig {
        iterations: m.iterations,
        search_radius: m.search_radius,
        cc_area_threshold: m.cc_area_threshold,
        border_margin: m.border_margin,
        downsample: p.downsample,
        k: p.k,
        kappa: p.kappa,
        seed: 0,
    }
}

/// Computes flow from `image1` to `image2` (both `height × width`, row-major
/// gray levels). Release the result with [`pb_flow_free`].
///
/// # Safety
/// Images must hold `width * height` elements; `config` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn pb_flow_run(
    model: *const PbModel,
    image1: *const f64,
    image2: *const f64,
    width: usize,
    height: usize,
    config: *const PbFlowConfig,
    out_flow: *mut *mut PbFlow,
) -> PbStatus {
    guard(|| {
        let slot = out(out_flow, "out_flow")?;
        *slot = ptr::null_mut();
        let m = &handle(model, "model")?.model;
        if width == 0 || height == 0 {
            return Err((PbStatus::InvalidArgument, "image has zero size".into()));
        }
        let c = config.as_ref().copied().unwrap_or_else(|| pb_flow_config_default());
        let img = |p, what| -> Result<Tensor, Failure> {
            Tensor::new(vec![height, width], slice(p, width * height, what)?.to_vec()).map_err(lib)
        };
        let (a, b) = (img(image1, "image1")?, img(image2, "image2")?);
        let cfg = PipelineConfig {
            matcher: MatchConfig {
                iterations: c.iterations,
                search_radius: c.search_radius,
                cc_area_threshold: c.cc_area_threshold,
                border_margin: c.border_margin,
                seed: derive_seed(c.seed, "patchmatch-fwd"),
            },
            backward_seed: derive_seed(c.seed, "patchmatch-bwd"),
            k: c.k,
            kappa: c.kappa,
            downsample: c.downsample,
            ..PipelineConfig::default()
        };
        let r = run_flow(m, &a, &b, &cfg, None).map_err(lib)?;
        *slot = Box::into_raw(Box::new(PbFlow { sparse: r.sparse, dense: r.dense }));
        Ok(())
    })
}

/// # Safety
/// `flow` must come from [`pb_flow_run`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pb_flow_free(flow: *mut PbFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}

/// Grid size and number of matches that survived filtering.
///
/// # Safety
/// `flow` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pb_flow_dims(
    flow: *const PbFlow,
    out_width: *mut usize,
    out_height: *mut usize,
    out_matches: *mut usize,
) -> PbStatus {
    guard(|| {
        let f = handle(flow, "flow")?;
        *out(out_width, "out_width")? = f.dense.width;
        *out(out_height, "out_height")? = f.dense.height;
        *out(out_matches, "out_matches")? = f.sparse.valid_count();
        Ok(())
    })
}

/// Copies the dense flow into two `width * height` buffers.
///
/// # Safety
/// `u` and `v` must hold `width * height` elements.
#[no_mangle]
pub unsafe extern "C" fn pb_flow_dense(flow: *const PbFlow, u: *mut f64, v: *mut f64) -> PbStatus {
    guard(|| {
        let f = handle(flow, "flow")?;
        let n = f.dense.u.len();
        slice_mut(u, n, "u")?.copy_from_slice(&f.dense.u);
        slice_mut(v, n, "v")?.copy_from_slice(&f.dense.v);
        Ok(())
    })
}

/// Copies the filtered integer matches; `valid` receives 0 or 1 per pixel.
///
/// # Safety
/// `u`, `v` and `valid` must hold `width * height` elements.
#[no_mangle]
pub unsafe extern "C" fn pb_flow_sparse(flow: *const PbFlow, u: *mut i32, v: *mut i32, valid: *mut u8) -> PbStatus {
    guard(|| {
        let f = handle(flow, "flow")?;
        let n = f.sparse.u.len();
        slice_mut(u, n, "u")?.copy_from_slice(&f.sparse.u);
        slice_mut(v, n, "v")?.copy_from_slice(&f.sparse.v);
        for (o, &b) in slice_mut(valid, n, "valid")?.iter_mut().zip(&f.sparse.valid) {
            *o = u8::from(b);
        }
        Ok(())
    })
}
