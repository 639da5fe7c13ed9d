//! C ABI for the boxdistill library.
//!
//! Scenes are opaque handles created by `bd_scene_generate` or
//! `bd_scene_read` and released with `bd_scene_free`. Every fallible
//! function returns a [`bd_status`]; on failure the message is retrievable
//! with `bd_last_error_message`. Panics are caught at the boundary and
//! reported as `BD_ERR_PANIC`.

#![allow(non_camel_case_types)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use boxdistill::fusion::{gradient_suite, train, FusionError, TrainConfig};
use boxdistill::geometry::{compose_chain, project_points, rasterize};
use boxdistill::scenedata::{
    generate_scene, read_scene, write_scene, GeneratorConfig, SceneBundle, SceneError,
};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum bd_status {
    BD_OK = 0,
    BD_ERR_NULL_ARGUMENT = 1,
    BD_ERR_UTF8 = 2,
    BD_ERR_IO = 3,
    BD_ERR_PARSE = 4,
    BD_ERR_GEOMETRY = 5,
    BD_ERR_NUMERICS = 6,
    BD_ERR_CONFIG = 7,
    BD_ERR_GENERATION = 8,
    BD_ERR_TRAIN = 9,
    BD_ERR_BUFFER_TOO_SMALL = 10,
    BD_ERR_PANIC = 11,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).ok();
    });
}

fn clear_error() {
    LAST_ERROR.with(|slot| slot.borrow_mut().take());
}

fn scene_status(e: &SceneError) -> bd_status {
    match e {
        SceneError::Io { .. } => bd_status::BD_ERR_IO,
        SceneError::BinParse { .. }
        | SceneError::TextParse { .. }
        | SceneError::CountMismatch { .. }
        | SceneError::Invalid { .. } => bd_status::BD_ERR_PARSE,
        SceneError::InvalidConfig { .. } => bd_status::BD_ERR_CONFIG,
        SceneError::GenerationRetry { .. } => bd_status::BD_ERR_GENERATION,
        SceneError::Geometry(_) => bd_status::BD_ERR_GEOMETRY,
    }
}

fn fusion_status(e: &FusionError) -> bd_status {
    match e {
        FusionError::Numerics(_) => bd_status::BD_ERR_NUMERICS,
        FusionError::Geometry(_) => bd_status::BD_ERR_GEOMETRY,
        FusionError::Scene(inner) => scene_status(inner),
        FusionError::Config { .. }
        | FusionError::ConfigParse { .. }
        | FusionError::ConfigIo { .. } => bd_status::BD_ERR_CONFIG,
        FusionError::Io { .. } => bd_status::BD_ERR_IO,
        FusionError::EmptyBox | FusionError::LossUndefined | FusionError::BadLabel { .. } => {
            bd_status::BD_ERR_TRAIN
        }
    }
}

fn guard(body: impl FnOnce() -> bd_status) -> bd_status {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("panic: {}", message));
            bd_status::BD_ERR_PANIC
        }
    }
}

/// Opaque scene handle.
pub struct bd_scene {
    inner: SceneBundle,
}

/// One projected point record.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct bd_projected_point {
    /// Index into the scene's point list.
    pub source_index: u64,
    /// Float image coordinates.
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth in meters.
    pub depth: f64,
    /// Rasterized (floored) pixel coordinates.
    pub pixel_u: u32,
    pub pixel_v: u32,
}

/// Training options; initialize with `bd_train_options_init`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct bd_train_options {
    pub seed: u64,
    /// Number of training scenes to generate.
    pub scenes: u32,
    pub epochs: u32,
    pub batch_size: u32,
    pub learning_rate: f64,
    /// Distillation weight.
    pub lambda: f64,
}

/// Results of a training run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct bd_train_summary {
    pub final_seg_loss: f64,
    pub final_distill_loss: f64,
    pub final_total_loss: f64,
    /// Deepest-layer accuracy on box members of the held-out scene.
    pub heldout_inbox_accuracy: f64,
    pub heldout_miou: f64,
    pub steps: u64,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the last error message into `buffer` and return the full message
/// length (excluding the NUL). A zero return means no pending error. The
/// message is truncated if `capacity` is too small; a capacity of at least
/// the returned length plus one holds the whole message.
///
/// # Safety
/// `buffer` must point to writable memory of at least `capacity` bytes, or
/// be null (in which case only the length is returned).
#[no_mangle]
pub unsafe extern "C" fn bd_last_error_message(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let borrowed = slot.borrow();
        let Some(message) = borrowed.as_ref() else {
            return 0;
        };
        let bytes = message.as_bytes();
        if !buffer.is_null() && capacity > 0 {
            let copy = bytes.len().min(capacity - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buffer as *mut u8, copy);
                *buffer.add(copy) = 0;
            }
        }
        bytes.len()
    })
}

/// Generate a deterministic synthetic scene.
///
/// `objects` and `classes` may be zero to use the defaults (3 objects,
/// 4 classes including background).
///
/// # Safety
/// `out` must be a valid pointer. On success it receives a handle that must
/// be released with `bd_scene_free`.
#[no_mangle]
pub unsafe extern "C" fn bd_scene_generate(
    seed: u64,
    objects: u32,
    classes: u32,
    out: *mut *mut bd_scene,
) -> bd_status {
    guard(|| {
        if out.is_null() {
            set_error("out pointer is null".into());
            return bd_status::BD_ERR_NULL_ARGUMENT;
        }
        clear_error();
        let defaults = GeneratorConfig::default();
        let cfg = GeneratorConfig {
            seed,
            objects: if objects == 0 {
                defaults.objects
            } else {
                objects as usize
            },
            classes: if classes == 0 {
                defaults.classes
            } else {
                classes as usize
            },
            ..defaults
        };
        match generate_scene(&cfg) {
            Ok(bundle) => {
                unsafe {
                    *out = Box::into_raw(Box::new(bd_scene { inner: bundle }));
                }
                bd_status::BD_OK
            }
            Err(e) => {
                set_error(e.to_string());
                scene_status(&e)
            }
        }
    })
}

unsafe fn path_from(dir: *const c_char) -> Result<&'static Path, bd_status> {
    if dir.is_null() {
        set_error("path is null".into());
        return Err(bd_status::BD_ERR_NULL_ARGUMENT);
    }
    match unsafe { CStr::from_ptr(dir) }.to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8".into());
            Err(bd_status::BD_ERR_UTF8)
        }
    }
}

/// Read a scene directory (points.bin, labels.bin, calib.txt, boxes.txt,
/// image.ppm).
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be a valid pointer and
/// on success receives a handle to release with `bd_scene_free`.
#[no_mangle]
pub unsafe extern "C" fn bd_scene_read(dir: *const c_char, out: *mut *mut bd_scene) -> bd_status {
    guard(|| {
        if out.is_null() {
            set_error("out pointer is null".into());
            return bd_status::BD_ERR_NULL_ARGUMENT;
        }
        let path = match unsafe { path_from(dir) } {
            Ok(p) => p,
            Err(status) => return status,
        };
        clear_error();
        match read_scene(path) {
            Ok(bundle) => {
                unsafe {
                    *out = Box::into_raw(Box::new(bd_scene { inner: bundle }));
                }
                bd_status::BD_OK
            }
            Err(e) => {
                set_error(e.to_string());
                scene_status(&e)
            }
        }
    })
}

/// Write the scene into a directory, creating it if needed.
///
/// # Safety
/// `scene` must be a live handle; `dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bd_scene_write(scene: *const bd_scene, dir: *const c_char) -> bd_status {
    guard(|| {
        let Some(scene) = (unsafe { scene.as_ref() }) else {
            set_error("scene handle is null".into());
            return bd_status::BD_ERR_NULL_ARGUMENT;
        };
        let path = match unsafe { path_from(dir) } {
            Ok(p) => p,
            Err(status) => return status,
        };
        clear_error();
        match write_scene(&scene.inner, path) {
            Ok(()) => bd_status::BD_OK,
            Err(e) => {
                set_error(e.to_string());
                scene_status(&e)
            }
        }
    })
}

/// Release a scene handle. Null is a no-op.
///
/// # Safety
/// `scene` must be a handle returned by this library, released once.
#[no_mangle]
pub unsafe extern "C" fn bd_scene_free(scene: *mut bd_scene) {
    if !scene.is_null() {
        drop(unsafe { Box::from_raw(scene) });
    }
}

/// Number of points in the scene.
///
/// # Safety
/// `scene` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bd_scene_point_count(
    scene: *const bd_scene,
    out: *mut usize,
) -> bd_status {
    guard(|| {
        let (Some(scene), false) = (unsafe { scene.as_ref() }, out.is_null()) else {
            set_error("null argument".into());
            return bd_status::BD_ERR_NULL_ARGUMENT;
        };
        unsafe {
            *out = scene.inner.cloud.len();
        }
        bd_status::BD_OK
    })
}

/// Number of annotated boxes in the scene.
///
/// # Safety
/// `scene` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bd_scene_box_count(scene: *const bd_scene, out: *mut usize) -> bd_status {
    guard(|| {
        let (Some(scene), false) = (unsafe { scene.as_ref() }, out.is_null()) else {
            set_error("null argument".into());
            return bd_status::BD_ERR_NULL_ARGUMENT;
        };
        unsafe {
            *out = scene.inner.boxes2d.len();
        }
        bd_status::BD_OK
    })
}

fn project_scene(scene: &SceneBundle) -> Result<Vec<bd_projected_point>, FusionError> {
    let transform = compose_chain(&scene.chain)?;
    let projected = project_points(&scene.cloud, &scene.intrinsics, &transform, &scene.plane());
    Ok(projected
        .iter()
        .map(|pp| {
            let (pixel_u, pixel_v) = rasterize(pp);
            bd_projected_point {
                source_index: pp.source_index as u64,
                u: pp.u,
                v: pp.v,
                depth: pp.depth,
                pixel_u,
                pixel_v,
            }
        })
        .collect())
}

/// Number of points that project into the camera image.
///
/// # Safety
/// `scene` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bd_scene_projected_count(
    scene: *const bd_scene,
    out: *mut usize,
) -> bd_status {
    guard(|| {
        let (Some(scene), false) = (unsafe { scene.as_ref() }, out.is_null()) else {
            set_error("null argument".into());
            return bd_status::BD_ERR_NULL_ARGUMENT;
        };
        clear_error();
        match project_scene(&scene.inner) {
            Ok(points) => {
                unsafe {
                    *out = points.len();
                }
                bd_status::BD_OK
            }
            Err(e) => {
                set_error(e.to_string());
                fusion_status(&e)
            }
        }
    })
}

/// Project the scene's points and fill `buffer` with up to `capacity`
/// records; `written` receives the number stored. Fails with
/// `BD_ERR_BUFFER_TOO_SMALL` (after storing `capacity` records) if the
/// buffer cannot hold every projected point; query the required size with
/// `bd_scene_projected_count`.
///
/// # Safety
/// `scene` must be a live handle; `buffer` must point to at least
/// `capacity` records; `written` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bd_scene_project(
    scene: *const bd_scene,
    buffer: *mut bd_projected_point,
    capacity: usize,
    written: *mut usize,
) -> bd_status {
    guard(|| {
        let (Some(scene), false) = (unsafe { scene.as_ref() }, written.is_null()) else {
            set_error("null argument".into());
            return bd_status::BD_ERR_NULL_ARGUMENT;
        };
        if buffer.is_null() && capacity > 0 {
            set_error("buffer is null".into());
            return bd_status::BD_ERR_NULL_ARGUMENT;
        }
        clear_error();
        let points = match project_scene(&scene.inner) {
            Ok(points) => points,
            Err(e) => {
                set_error(e.to_string());
                return fusion_status(&e);
            }
        };
        let store = points.len().min(capacity);
        unsafe {
            std::ptr::copy_nonoverlapping(points.as_ptr(), buffer, store);
            *written = store;
        }
        if store < points.len() {
            set_error(format!(
                "buffer holds {} of {} projected points",
                store,
                points.len()
            ));
            bd_status::BD_ERR_BUFFER_TOO_SMALL
        } else {
            bd_status::BD_OK
        }
    })
}

/// Fill `options` with the library defaults.
///
/// # Safety
/// `options` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bd_train_options_init(options: *mut bd_train_options) {
    if options.is_null() {
        return;
    }
    let defaults = TrainConfig::default();
    unsafe {
        *options = bd_train_options {
            seed: defaults.seed,
            scenes: 8,
            epochs: defaults.epochs as u32,
            batch_size: defaults.batch_size as u32,
            learning_rate: defaults.learning_rate,
            lambda: defaults.lambda,
        };
    }
}

/// Train on generated scenes and report the final losses and held-out
/// segmentation quality.
///
/// # Safety
/// `options` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn bd_train_run(
    options: *const bd_train_options,
    out: *mut bd_train_summary,
) -> bd_status {
    guard(|| {
        let (Some(options), false) = (unsafe { options.as_ref() }, out.is_null()) else {
            set_error("null argument".into());
            return bd_status::BD_ERR_NULL_ARGUMENT;
        };
        clear_error();
        let cfg = TrainConfig {
            seed: options.seed,
            epochs: options.epochs as usize,
            batch_size: options.batch_size as usize,
            learning_rate: options.learning_rate,
            lambda: options.lambda,
            ..TrainConfig::default()
        };
        if let Err(e) = cfg.validate() {
            set_error(e.to_string());
            return fusion_status(&e);
        }
        match train(&cfg, options.scenes as usize) {
            Ok(outcome) => {
                let last = outcome.curve.last().expect("training ran at least one step");
                unsafe {
                    *out = bd_train_summary {
                        final_seg_loss: last.seg_loss,
                        final_distill_loss: last.distill_loss,
                        final_total_loss: last.total_loss,
                        heldout_inbox_accuracy: outcome.heldout_inbox_accuracy,
                        heldout_miou: outcome.heldout.miou,
                        steps: outcome.curve.len() as u64,
                    };
                }
                bd_status::BD_OK
            }
            Err(e) => {
                set_error(e.to_string());
                fusion_status(&e)
            }
        }
    })
}

/// Run the gradient verification suite for one seed and report the largest
/// relative error between analytic gradients and central finite differences.
///
/// # Safety
/// `max_rel_error` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bd_grad_check(
    seed: u64,
    step: f64,
    max_rel_error: *mut f64,
) -> bd_status {
    guard(|| {
        if max_rel_error.is_null() {
            set_error("max_rel_error pointer is null".into());
            return bd_status::BD_ERR_NULL_ARGUMENT;
        }
        clear_error();
        let cfg = TrainConfig::default();
        match gradient_suite(&cfg, &[seed], step) {
            Ok(entries) => {
                let worst = entries
                    .iter()
                    .map(|e| e.max_rel_error)
                    .fold(0.0f64, f64::max);
                unsafe {
                    *max_rel_error = worst;
                }
                bd_status::BD_OK
            }
            Err(e) => {
                set_error(e.to_string());
                fusion_status(&e)
            }
        }
    })
}
