//! C ABI over the corolla pipeline.
//!
//! Objects cross the boundary as opaque handles created by `*_load`/`*_new`
//! style constructors and released with the matching `*_free`. Every fallible
//! call returns a [`CorollaStatus`]; on failure the message is kept per thread
//! and read back with [`corolla_last_error`]. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use corolla::error::Error;
use corolla::fusion::FusedModel;
use corolla::image::Rgb8;
use corolla::numcore::{Checkpoint, Tensor};
use corolla::supcon::{self, BatchLayout, ContrastiveConfig, EmbeddingBatch};
use corolla::thickness::{generate_thickness_map, ThicknessConfig, ThicknessMap};
use corolla::volume::{load_volume, save_volume, synth_case, OctVolume, PhantomSpec};

/// Result codes. Values are stable; new codes are only appended.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorollaStatus {
    Ok = 0,
    InvalidArgument = 1,
    InvalidSpec = 2,
    FileNotFound = 3,
    BadFormat = 4,
    PayloadMismatch = 5,
    NonFinite = 6,
    Dimension = 7,
    Infeasible = 8,
    TooLarge = 9,
    Shape = 10,
    Numeric = 11,
    DegenerateBatch = 12,
    UndefinedKappa = 13,
    CheckpointMismatch = 14,
    Io = 15,
    Json = 16,
    Png = 17,
    NullPointer = 100,
    InvalidUtf8 = 101,
    BufferTooSmall = 102,
    Panic = 103,
}

impl From<&Error> for CorollaStatus {
    fn from(e: &Error) -> Self {
        use CorollaStatus as S;
        match e.root() {
            Error::InvalidArgument(_) => S::InvalidArgument,
            Error::InvalidSpec(_) => S::InvalidSpec,
            Error::FileNotFound(_) => S::FileNotFound,
            Error::BadFormat(_) => S::BadFormat,
            Error::PayloadMismatch { .. } => S::PayloadMismatch,
            Error::NonFinite { .. } => S::NonFinite,
            Error::Dimension(_) => S::Dimension,
            Error::Infeasible(_) => S::Infeasible,
            Error::TooLarge { .. } => S::TooLarge,
            Error::Shape(_) => S::Shape,
            Error::Numeric(_) => S::Numeric,
            Error::DegenerateBatch(_) => S::DegenerateBatch,
            Error::UndefinedKappa => S::UndefinedKappa,
            Error::CheckpointMismatch(_) => S::CheckpointMismatch,
            Error::Io(_) => S::Io,
            Error::Json(_) => S::Json,
            Error::Png(_) => S::Png,
            Error::Stage { .. } => unreachable!("root() looks through stages"),
        }
    }
}

/// Opaque OCT volume.
pub struct CorollaVolume(OctVolume);

/// Opaque rendered thickness map.
pub struct CorollaThicknessMap(ThicknessMap);

/// Opaque trained classifier.
pub struct CorollaModel(FusedModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(CorollaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(CorollaStatus::from(&e), e.to_string())
    }
}

fn fail(status: CorollaStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, recording any error or panic for `corolla_last_error`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CorollaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            CorollaStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            CorollaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(CorollaStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(CorollaStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(CorollaStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(CorollaStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(CorollaStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Config overrides given as a JSON object over the defaults, or defaults for null.
fn json_over<T: serde::Serialize + serde::de::DeserializeOwned>(base: T, json: Option<&str>) -> Result<T, Failure> {
    let Some(json) = json else { return Ok(base) };
    let mut value = serde_json::to_value(&base).map_err(Error::from)?;
    let patch: serde_json::Value = serde_json::from_str(json).map_err(Error::from)?;
    merge(&mut value, patch);
    Ok(serde_json::from_value(value).map_err(Error::from)?)
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next corolla call on the same thread.
#[no_mangle]
pub extern "C" fn corolla_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn corolla_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn corolla_volume_load(path: *const c_char, out: *mut *mut CorollaVolume) -> CorollaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let vol = load_volume(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(CorollaVolume(vol)));
        Ok(())
    })
}

/// Renders a phantom volume. `spec_json` overrides fields of the default
/// phantom spec and may be null.
///
/// # Safety
/// `spec_json` must be null or nul-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn corolla_volume_synth(
    spec_json: *const c_char,
    grade: u8,
    seed: u64,
    out: *mut *mut CorollaVolume,
) -> CorollaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let spec = json_over(PhantomSpec::default(), opt_str_arg(spec_json, "spec_json")?)?;
        let (vol, _, _) = synth_case(&spec, grade, seed)?;
        *out = Box::into_raw(Box::new(CorollaVolume(vol)));
        Ok(())
    })
}

/// Writes `(slices, rows, columns)` to `dims`.
///
/// # Safety
/// `vol` must come from a volume constructor; `dims` must hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn corolla_volume_dims(vol: *const CorollaVolume, dims: *mut usize) -> CorollaStatus {
    guard(|| {
        let vol = handle(vol, "vol")?;
        if dims.is_null() {
            return Err(fail(CorollaStatus::NullPointer, "dims is null"));
        }
        std::slice::from_raw_parts_mut(dims, 3).copy_from_slice(&vol.0.dims());
        Ok(())
    })
}

/// # Safety
/// `vol` must be a live handle and `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn corolla_volume_save(vol: *const CorollaVolume, path: *const c_char) -> CorollaStatus {
    guard(|| {
        let vol = handle(vol, "vol")?;
        save_volume(&vol.0, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `vol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn corolla_volume_free(vol: *mut CorollaVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}

/// Segments `vol` and renders its thickness map. `config_json` overrides
/// the default thickness config and may be null.
///
/// # Safety
/// `vol` must be a live handle, `config_json` null or nul-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn corolla_thickness_map_new(
    vol: *const CorollaVolume,
    config_json: *const c_char,
    out: *mut *mut CorollaThicknessMap,
) -> CorollaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let vol = handle(vol, "vol")?;
        let cfg = json_over(ThicknessConfig::default(), opt_str_arg(config_json, "config_json")?)?;
        let map = generate_thickness_map(&vol.0, &cfg)?;
        *out = Box::into_raw(Box::new(CorollaThicknessMap(map)));
        Ok(())
    })
}

/// # Safety
/// `map` must be a live handle; `height` and `width` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn corolla_thickness_map_size(
    map: *const CorollaThicknessMap,
    height: *mut usize,
    width: *mut usize,
) -> CorollaStatus {
    guard(|| {
        let map = handle(map, "map")?;
        *out_ptr(height, "height")? = map.0.rgb.height;
        *out_ptr(width, "width")? = map.0.rgb.width;
        Ok(())
    })
}

/// Copies the interleaved RGB bytes (`height * width * 3`) into `buf`.
///
/// # Safety
/// `map` must be a live handle and `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn corolla_thickness_map_rgb(map: *const CorollaThicknessMap, buf: *mut u8, len: usize) -> CorollaStatus {
    guard(|| {
        let map = handle(map, "map")?;
        let data = &map.0.rgb.data;
        if len < data.len() {
            return Err(fail(CorollaStatus::BufferTooSmall, format!("need {} bytes, got {len}", data.len())));
        }
        if buf.is_null() {
            return Err(fail(CorollaStatus::NullPointer, "buf is null"));
        }
        std::slice::from_raw_parts_mut(buf, data.len()).copy_from_slice(data);
        Ok(())
    })
}

/// Mean layer thickness before resampling, in the configured units.
///
/// # Safety
/// `map` must be a live handle and `mean` valid.
#[no_mangle]
pub unsafe extern "C" fn corolla_thickness_map_mean(map: *const CorollaThicknessMap, mean: *mut f64) -> CorollaStatus {
    guard(|| {
        *out_ptr(mean, "mean")? = handle(map, "map")?.0.thickness.mean();
        Ok(())
    })
}

/// # Safety
/// `map` must be a live handle and `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn corolla_thickness_map_save_png(map: *const CorollaThicknessMap, path: *const c_char) -> CorollaStatus {
    guard(|| {
        let map = handle(map, "map")?;
        map.0.rgb.save_png(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `map` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn corolla_thickness_map_free(map: *mut CorollaThicknessMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Loads a classifier checkpoint written by stage-2 training.
///
/// # Safety
/// `path` must be nul-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn corolla_model_load(path: *const c_char, out: *mut *mut CorollaModel) -> CorollaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let ckpt = Checkpoint::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(CorollaModel(FusedModel::from_checkpoint(&ckpt)?)));
        Ok(())
    })
}

/// Writes a bit set of the model's branches: 1 for fundus, 2 for thickness.
///
/// # Safety
/// `model` must be a live handle and `mask` valid.
#[no_mangle]
pub unsafe extern "C" fn corolla_model_branches(model: *const CorollaModel, mask: *mut u32) -> CorollaStatus {
    guard(|| {
        let model = handle(model, "model")?;
        *out_ptr(mask, "mask")? = model.0.branch_names().iter().map(|b| 1u32 << b.tag()).sum();
        Ok(())
    })
}

/// Grades one case from square interleaved RGB images of side `side`.
/// Images of branches the model lacks may be null. `logits` may be null or
/// hold 3 values.
///
/// # Safety
/// Non-null image pointers must be readable for `side * side * 3` bytes;
/// `model` must be a live handle and `grade` valid.
#[no_mangle]
pub unsafe extern "C" fn corolla_model_predict(
    model: *const CorollaModel,
    fundus_rgb: *const u8,
    thickness_rgb: *const u8,
    side: usize,
    grade: *mut u32,
    logits: *mut f64,
) -> CorollaStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let grade = out_ptr(grade, "grade")?;
        let n = side * side * 3;
        let images = model
            .0
            .branch_names()
            .into_iter()
            .map(|b| {
                let p = if b.tag() == 0 { fundus_rgb } else { thickness_rgb };
                let name = format!("{}_rgb", b.name());
                if p.is_null() {
                    return Err(fail(CorollaStatus::NullPointer, format!("{name} is null")));
                }
                let rgb = Rgb8 { height: side, width: side, data: slice_arg(p, n, &name)?.to_vec() };
                let size = model.0.branches[0].1.config.input_size;
                Ok(rgb.to_image().resize(size, size)?)
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let refs: Vec<_> = images.iter().collect();
        let out = model.0.logits(&refs)?;
        *grade = corolla::fusion::argmax(&out) as u32;
        if !logits.is_null() {
            std::slice::from_raw_parts_mut(logits, out.len()).copy_from_slice(&out);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn corolla_model_free(model: *mut CorollaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Supervised contrastive loss (sum over anchors) of `2n` unit rows of
/// width `dim`: rows `0..n` are originals, rows `n..2n` their second views,
/// and `labels` holds the `n` class labels. Anchors without positives are
/// skipped.
///
/// # Safety
/// `z` must be readable for `2n * dim` values, `labels` for `n`, `loss` valid.
#[no_mangle]
pub unsafe extern "C" fn corolla_supcon_loss(
    z: *const f64,
    n: usize,
    dim: usize,
    labels: *const u32,
    temperature: f64,
    loss: *mut f64,
) -> CorollaStatus {
    guard(|| {
        let loss = out_ptr(loss, "loss")?;
        let z = slice_arg(z, 2 * n * dim, "z")?;
        let labels: Vec<usize> = slice_arg(labels, n, "labels")?.iter().map(|&l| l as usize).collect();
        let z = Tensor::new(vec![2 * n, dim], z.to_vec())?;
        let batch = EmbeddingBatch::new(z, BatchLayout::stacked(&labels))?;
        let cfg = ContrastiveConfig { temperature, ..ContrastiveConfig::default() };
        *loss = supcon::sup_contrastive_loss(&batch, &cfg)?.0;
        Ok(())
    })
}
