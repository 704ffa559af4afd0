//! C ABI over `fusion-shap`.
//!
//! Models and codecs are opaque handles created by `*_load` / `*_from_json`
//! and released with the matching `*_free`. Every fallible call returns an
//! [`FsStatus`]; on failure the message is available from
//! [`fs_last_error_message`] on the same thread until the next failing call.
//! Images are flat `double` arrays in `(c, w, h)` row-major order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use fusion_shap::codec::{ManifoldCode, ManifoldCodec};
use fusion_shap::explain::{explain, Context, EstimatorMode, ExplainSettings, Method};
use fusion_shap::fusion::fuse;
use fusion_shap::image::{Image, MapSource, SaliencyMap};
use fusion_shap::mapping::manifold_saliency;
use fusion_shap::model::BlackBoxModel;
use fusion_shap::shapley::{traditional_shap, Estimator, Imputation, PixelGrid};
use fusion_shap::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Shape = 3,
    Index = 4,
    Dimension = 5,
    Rank = 6,
    EnumerationLimit = 7,
    Config = 8,
    DeadCoordinate = 9,
    Contract = 10,
    Format = 11,
    Io = 12,
    /// An output buffer has the wrong length.
    BufferSize = 13,
    Panic = 14,
}

impl From<&Error> for FsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::ShapeMismatch { .. } => FsStatus::Shape,
            Error::IndexOutOfRange { .. } => FsStatus::Index,
            Error::Dimension(_) => FsStatus::Dimension,
            Error::RankDeficient { .. } => FsStatus::Rank,
            Error::EnumerationLimit { .. } => FsStatus::EnumerationLimit,
            Error::Config(_) => FsStatus::Config,
            Error::DeadCoordinate { .. } => FsStatus::DeadCoordinate,
            Error::Contract(_) => FsStatus::Contract,
            Error::Format { .. } => FsStatus::Format,
            Error::Io { .. } => FsStatus::Io,
        }
    }
}

/// How Shapley values are computed.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FsEstimatorMode {
    /// Exact up to 20 players, sampled beyond.
    Auto = 0,
    Exact = 1,
    Sampled = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct FsEstimator {
    pub mode: FsEstimatorMode,
    pub num_permutations: usize,
    pub seed: u64,
}

impl From<FsEstimator> for Estimator {
    fn from(e: FsEstimator) -> Self {
        match e.mode {
            FsEstimatorMode::Exact => Estimator::Exact,
            FsEstimatorMode::Sampled => Estimator::Sampled {
                num_permutations: e.num_permutations,
                seed: e.seed,
            },
            FsEstimatorMode::Auto => Estimator::Auto {
                num_permutations: e.num_permutations,
                seed: e.seed,
            },
        }
    }
}

/// Opaque classifier handle.
pub struct FsModel(BlackBoxModel);

/// Opaque codec handle.
pub struct FsCodec(ManifoldCodec);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(FsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(FsStatus::from(&e), format!("error[{}]: {e}", e.code()))
    }
}

type Outcome = Result<(), Failure>;

fn guard(body: impl FnOnce() -> Outcome) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => FsStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("panic inside fusion-shap".into());
            FsStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(FsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn input<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a>(ptr: *mut f64, len: usize, expected: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len != expected {
        return Err(Failure(
            FsStatus::BufferSize,
            format!("{what} has length {len}, expected {expected}"),
        ));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

unsafe fn string<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| Failure(FsStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn image_of(model: &BlackBoxModel, data: &[f64]) -> Result<Image, Failure> {
    Ok(Image::new(model.input_shape(), data.to_vec())?)
}

/// Message of the last failing call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Stable identifier of a status, e.g. `"E_SHAPE"`. Static storage.
#[no_mangle]
pub extern "C" fn fs_status_name(status: FsStatus) -> *const c_char {
    let s: &'static CStr = match status {
        FsStatus::Ok => c"OK",
        FsStatus::NullPointer => c"E_NULL",
        FsStatus::InvalidUtf8 => c"E_UTF8",
        FsStatus::Shape => c"E_SHAPE",
        FsStatus::Index => c"E_INDEX",
        FsStatus::Dimension => c"E_DIMENSION",
        FsStatus::Rank => c"E_RANK",
        FsStatus::EnumerationLimit => c"E_ENUMERATION_LIMIT",
        FsStatus::Config => c"E_CONFIG",
        FsStatus::DeadCoordinate => c"E_DEAD_COORDINATE",
        FsStatus::Contract => c"E_CONTRACT",
        FsStatus::Format => c"E_FORMAT",
        FsStatus::Io => c"E_IO",
        FsStatus::BufferSize => c"E_BUFFER_SIZE",
        FsStatus::Panic => c"E_PANIC",
    };
    s.as_ptr()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_model_load(path: *const c_char, out: *mut *mut FsModel) -> FsStatus {
    guard(|| {
        let path = string(path, "path")?;
        store(out, FsModel(BlackBoxModel::load(Path::new(path))?))
    })
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_model_from_json(json: *const c_char, out: *mut *mut FsModel) -> FsStatus {
    guard(|| store(out, FsModel(BlackBoxModel::from_json(string(json, "json")?)?)))
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is
/// accepted.
#[no_mangle]
pub unsafe extern "C" fn fs_model_free(model: *mut FsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes `[C, W, H]` to `out_shape`.
///
/// # Safety
/// `model` must be a live handle and `out_shape` point to 3 `size_t`.
#[no_mangle]
pub unsafe extern "C" fn fs_model_input_shape(model: *const FsModel, out_shape: *mut usize) -> FsStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        if out_shape.is_null() {
            return Err(null("out_shape"));
        }
        let s = m.input_shape();
        slice::from_raw_parts_mut(out_shape, 3).copy_from_slice(&[s.channels, s.width, s.height]);
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_model_num_classes(model: *const FsModel, out: *mut usize) -> FsStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        *out.as_mut().ok_or_else(|| null("out"))? = m.num_classes();
        Ok(())
    })
}

/// Class confidences of one image.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_model_forward(
    model: *const FsModel,
    image: *const f64,
    image_len: usize,
    out: *mut f64,
    out_len: usize,
) -> FsStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let x = image_of(m, input(image, image_len, "image")?)?;
        let conf = m.forward(&x)?;
        output(out, out_len, m.num_classes(), "out")?.copy_from_slice(conf.values());
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_codec_load(path: *const c_char, out: *mut *mut FsCodec) -> FsStatus {
    guard(|| {
        let path = string(path, "path")?;
        store(out, FsCodec(ManifoldCodec::load(Path::new(path))?))
    })
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_codec_from_json(json: *const c_char, out: *mut *mut FsCodec) -> FsStatus {
    guard(|| store(out, FsCodec(ManifoldCodec::from_json(string(json, "json")?)?)))
}

/// # Safety
/// `codec` must come from this library and not be used afterwards. Null is
/// accepted.
#[no_mangle]
pub unsafe extern "C" fn fs_codec_free(codec: *mut FsCodec) {
    if !codec.is_null() {
        drop(Box::from_raw(codec));
    }
}

/// # Safety
/// `codec` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_codec_latent_dim(codec: *const FsCodec, out: *mut usize) -> FsStatus {
    guard(|| {
        let c = &borrow(codec, "codec")?.0;
        *out.as_mut().ok_or_else(|| null("out"))? = c.latent_dim();
        Ok(())
    })
}

/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_codec_encode(
    codec: *const FsCodec,
    image: *const f64,
    image_len: usize,
    out_code: *mut f64,
    code_len: usize,
) -> FsStatus {
    guard(|| {
        let c = &borrow(codec, "codec")?.0;
        let x = Image::new(c.shape(), input(image, image_len, "image")?.to_vec())?;
        let u = c.encode(&x)?;
        output(out_code, code_len, c.latent_dim(), "out_code")?.copy_from_slice(u.as_slice());
        Ok(())
    })
}

/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_codec_decode(
    codec: *const FsCodec,
    code: *const f64,
    code_len: usize,
    out_image: *mut f64,
    image_len: usize,
) -> FsStatus {
    guard(|| {
        let c = &borrow(codec, "codec")?.0;
        let x = c.decode(&ManifoldCode(input(code, code_len, "code")?.to_vec()))?;
        output(out_image, image_len, c.shape().len(), "out_image")?.copy_from_slice(x.as_slice());
        Ok(())
    })
}

/// Pixel-group Shapley map over a `grid_cols × grid_rows` grid. A null
/// `baseline` means all zeros.
///
/// # Safety
/// Buffers must hold the stated number of doubles; `baseline` may be null.
#[no_mangle]
pub unsafe extern "C" fn fs_traditional_shap(
    model: *const FsModel,
    image: *const f64,
    image_len: usize,
    class_index: usize,
    grid_cols: usize,
    grid_rows: usize,
    baseline: *const f64,
    estimator: FsEstimator,
    out_map: *mut f64,
    map_len: usize,
) -> FsStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let x = image_of(m, input(image, image_len, "image")?)?;
        let b = if baseline.is_null() {
            Image::zeros(m.input_shape())
        } else {
            image_of(m, input(baseline, image_len, "baseline")?)?
        };
        let (map, _) = traditional_shap(m, &x, class_index, PixelGrid::new(grid_cols, grid_rows), &b, &estimator.into())?;
        output(out_map, map_len, x.shape().len(), "out_map")?.copy_from_slice(map.values());
        Ok(())
    })
}

/// Manifold Shapley values redistributed onto pixels. Off-coalition
/// coordinates take `baseline_code`, or the code of the codec's mean image
/// when it is null. `out_phi` (nullable) receives the per-coordinate values.
///
/// # Safety
/// Buffers must hold the stated number of doubles; `baseline_code` and
/// `out_phi` may be null.
#[no_mangle]
pub unsafe extern "C" fn fs_manifold_shap(
    model: *const FsModel,
    codec: *const FsCodec,
    image: *const f64,
    image_len: usize,
    class_index: usize,
    baseline_code: *const f64,
    estimator: FsEstimator,
    out_map: *mut f64,
    map_len: usize,
    out_phi: *mut f64,
    phi_len: usize,
) -> FsStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let c = &borrow(codec, "codec")?.0;
        let x = image_of(m, input(image, image_len, "image")?)?;
        let base = if baseline_code.is_null() {
            c.encode(&c.mean_image())?
        } else {
            ManifoldCode(input(baseline_code, c.latent_dim(), "baseline_code")?.to_vec())
        };
        let s = manifold_saliency(
            m,
            c,
            &x,
            class_index,
            &Imputation::Baseline(base),
            &estimator.into(),
            Default::default(),
        )?;
        output(out_map, map_len, x.shape().len(), "out_map")?.copy_from_slice(s.map.values());
        if !out_phi.is_null() {
            output(out_phi, phi_len, c.latent_dim(), "out_phi")?.copy_from_slice(&s.attribution.values);
        }
        Ok(())
    })
}

/// Grid search for the fusion coefficient. Writes the `[0, 1]` fused mask to
/// `out_fused` and the chosen `α` to `out_alpha`.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_fuse(
    model: *const FsModel,
    image: *const f64,
    image_len: usize,
    m_traditional: *const f64,
    m_manifold: *const f64,
    grid_steps: usize,
    out_fused: *mut f64,
    fused_len: usize,
    out_alpha: *mut f64,
) -> FsStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let x = image_of(m, input(image, image_len, "image")?)?;
        let map = |p, what| -> Result<SaliencyMap, Failure> {
            Ok(SaliencyMap::new(x.shape(), input(p, image_len, what)?.to_vec(), MapSource::Traditional)?)
        };
        let f = fuse(m, &x, &map(m_traditional, "m_traditional")?, &map(m_manifold, "m_manifold")?, grid_steps)?;
        output(out_fused, fused_len, x.shape().len(), "out_fused")?.copy_from_slice(f.fused.values());
        *out_alpha.as_mut().ok_or_else(|| null("out_alpha"))? = f.alpha;
        Ok(())
    })
}

/// Any method by name (`traditional`, `manifold`, `fusion`, `grad`, `ig`,
/// `smoothgrad`, `constant`) with default settings and the given seed.
/// `codec` may be null for methods that do not need one. A negative
/// `class_index` selects the top-1 class. The fused map is the unnormalized
/// `α·M_manifold + (1−α)·M_traditional`.
///
/// # Safety
/// Buffers must hold the stated number of doubles; `method` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fs_explain(
    model: *const FsModel,
    codec: *const FsCodec,
    method: *const c_char,
    image: *const f64,
    image_len: usize,
    class_index: i64,
    seed: u64,
    out_map: *mut f64,
    map_len: usize,
) -> FsStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let c = codec.as_ref().map(|c| &c.0);
        let method: Method = string(method, "method")?.parse()?;
        let x = image_of(m, input(image, image_len, "image")?)?;
        let ctx = Context::new(m, c);
        let class_index = match usize::try_from(class_index) {
            Ok(t) => t,
            Err(_) => ctx.top_class(&x)?,
        };
        let settings = ExplainSettings {
            estimator: EstimatorMode::Auto,
            seed,
            ..Default::default()
        };
        let e = explain(&ctx, &x, class_index, method, &settings)?;
        output(out_map, map_len, x.shape().len(), "out_map")?.copy_from_slice(e.map.values());
        Ok(())
    })
}
