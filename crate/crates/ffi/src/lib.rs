//! C ABI over the inference half of the runtime: load a checkpoint behind an
//! opaque handle, run forward passes, free the handle. Every function
//! returns a status code (0 success, 1 invalid argument, 2 I/O or format
//! error — matching the CLI exit codes); outputs travel through caller
//! buffers. Models are immutable after load, so one handle may serve any
//! number of threads concurrently.

use std::ffi::{c_char, CStr};
use std::path::Path;

use l2mu::l2mu::{forward, predict, Model, Window};

/// Opaque model handle.
pub struct L2muModel {
    model: Model<f32>,
}

/// Status codes returned by every fallible call.
#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum L2muStatus {
    Ok = 0,
    InvalidArgument = 1,
    IoOrFormat = 2,
}

fn status_of(err: &l2mu::Error) -> L2muStatus {
    match err.exit_code() {
        1 => L2muStatus::InvalidArgument,
        _ => L2muStatus::IoOrFormat,
    }
}

/// Loads a checkpoint file and writes a fresh handle to `out_model`.
/// On failure the handle is left null.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out_model` a valid
/// pointer. The handle must be released with [`l2mu_model_free`].
#[no_mangle]
pub unsafe extern "C" fn l2mu_model_load(
    path: *const c_char,
    out_model: *mut *mut L2muModel,
) -> L2muStatus {
    if path.is_null() || out_model.is_null() {
        return L2muStatus::InvalidArgument;
    }
    *out_model = std::ptr::null_mut();
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        return L2muStatus::InvalidArgument;
    };
    match l2mu::checkpoint::load_checkpoint(Path::new(path)) {
        Ok((model, _mask)) => {
            *out_model = Box::into_raw(Box::new(L2muModel { model }));
            L2muStatus::Ok
        }
        Err(err) => status_of(&err),
    }
}

/// Releases a handle returned by [`l2mu_model_load`]. Null is a no-op.
///
/// # Safety
/// `model` must be a pointer from [`l2mu_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn l2mu_model_free(model: *mut L2muModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes (0 for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn l2mu_model_num_classes(model: *const L2muModel) -> u32 {
    model.as_ref().map_or(0, |m| m.model.dims.n_classes as u32)
}

/// Number of input channels per timestep (0 for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn l2mu_model_num_channels(model: *const L2muModel) -> u32 {
    model.as_ref().map_or(0, |m| m.model.dims.n_channels as u32)
}

/// Timesteps per window in the dataset pipeline (2 s at 20 Hz).
#[no_mangle]
pub extern "C" fn l2mu_window_steps() -> u32 {
    l2mu::data::WINDOW_STEPS as u32
}

unsafe fn run_forward(
    model: *const L2muModel,
    window: *const f32,
    steps: usize,
    channels: usize,
) -> Result<Vec<f32>, L2muStatus> {
    let Some(handle) = model.as_ref() else {
        return Err(L2muStatus::InvalidArgument);
    };
    if window.is_null() || steps == 0 || channels == 0 {
        return Err(L2muStatus::InvalidArgument);
    }
    let data = std::slice::from_raw_parts(window, steps * channels).to_vec();
    let window = Window::new(steps, channels, data).map_err(|e| status_of(&e))?;
    forward(&handle.model, &window).map_err(|e| status_of(&e))
}

/// Runs one inference on a row-major steps×channels window and writes the
/// class logits to `logits_out` (length `logits_len` must equal the class
/// count).
///
/// # Safety
/// `model` must be a live handle, `window` must point to
/// `steps * channels` readable floats and `logits_out` to `logits_len`
/// writable floats.
#[no_mangle]
pub unsafe extern "C" fn l2mu_model_forward(
    model: *const L2muModel,
    window: *const f32,
    steps: usize,
    channels: usize,
    logits_out: *mut f32,
    logits_len: usize,
) -> L2muStatus {
    if logits_out.is_null() {
        return L2muStatus::InvalidArgument;
    }
    match run_forward(model, window, steps, channels) {
        Ok(logits) => {
            if logits.len() != logits_len {
                return L2muStatus::InvalidArgument;
            }
            std::ptr::copy_nonoverlapping(logits.as_ptr(), logits_out, logits.len());
            L2muStatus::Ok
        }
        Err(status) => status,
    }
}

/// Runs one inference and writes the predicted class index (argmax of the
/// logits, ties toward the lowest class).
///
/// # Safety
/// As for [`l2mu_model_forward`]; `class_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2mu_model_predict(
    model: *const L2muModel,
    window: *const f32,
    steps: usize,
    channels: usize,
    class_out: *mut u32,
) -> L2muStatus {
    if class_out.is_null() {
        return L2muStatus::InvalidArgument;
    }
    match run_forward(model, window, steps, channels) {
        Ok(logits) => {
            *class_out = predict(&logits) as u32;
            L2muStatus::Ok
        }
        Err(status) => status,
    }
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn l2mu_status_message(status: L2muStatus) -> *const c_char {
    let msg: &'static CStr = match status {
        L2muStatus::Ok => c"ok",
        L2muStatus::InvalidArgument => c"invalid argument",
        L2muStatus::IoOrFormat => c"i/o or format error",
    };
    msg.as_ptr()
}
