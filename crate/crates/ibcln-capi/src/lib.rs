//! C ABI for the reflection-removal toolkit.
//!
//! Other languages load a trained checkpoint through an opaque handle, run
//! inference on 8-bit interleaved RGB buffers, and compute PSNR/SSIM. Every
//! fallible call returns an [`IbclnStatus`]; the most recent error message is
//! kept per thread and can be copied out with `ibcln_last_error_message`.
//!
//! The generated header lives at `include/ibcln.h`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::Path;

use libc::{c_char, size_t};

use ibcln::error::Error;
use ibcln::evaluation::{psnr, quantize8, ssim};
use ibcln::imaging::{gamma_decode, gamma_encode, ColorSpace, Image};
use ibcln::model::{cascade_forward, load_model, LoadedModel};
use ibcln::tensor::{image_to_tensor, tensor_to_image};

/// Status code returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IbclnStatus {
    Ok = 0,
    /// Bad arguments: null pointers, zero sizes, malformed buffers.
    InvalidArgument = 1,
    /// Missing or unreadable files.
    IoError = 2,
    /// Internal failures during inference or metric computation.
    RuntimeError = 3,
}

/// Opaque handle to a loaded generator checkpoint.
pub struct IbclnModel {
    inner: LoadedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> IbclnStatus {
    match err.exit_code() {
        1 => IbclnStatus::InvalidArgument,
        _ => IbclnStatus::IoError,
    }
}

/// Copies the most recent error message of this thread into `buffer`
/// (NUL-terminated, truncated to `length` bytes). Returns the full message
/// length in bytes, excluding the terminator.
///
/// # Safety
/// `buffer` must point to at least `length` writable bytes, or be null
/// (in which case only the length is returned).
#[no_mangle]
pub unsafe extern "C" fn ibcln_last_error_message(buffer: *mut c_char, length: size_t) -> size_t {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buffer.is_null() && length > 0 {
            let n = bytes.len().min(length - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buffer, n);
            *buffer.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ibcln_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a checkpoint (stem, `.safetensors` or `.json` path) and stores the
/// handle in `out_model`. The handle must be released with
/// [`ibcln_model_free`].
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out_model` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn ibcln_model_load(
    path: *const c_char,
    out_model: *mut *mut IbclnModel,
) -> IbclnStatus {
    if path.is_null() || out_model.is_null() {
        set_last_error("null pointer argument");
        return IbclnStatus::InvalidArgument;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_last_error("checkpoint path is not valid UTF-8");
            return IbclnStatus::InvalidArgument;
        }
    };
    match load_model(Path::new(path), &candle_core::Device::Cpu) {
        Ok(inner) => {
            *out_model = Box::into_raw(Box::new(IbclnModel { inner }));
            IbclnStatus::Ok
        }
        Err(err) => {
            set_last_error(&err.to_string());
            status_of(&err)
        }
    }
}

/// Releases a model handle. Passing null is a no-op.
///
/// # Safety
/// `model` must be a handle obtained from [`ibcln_model_load`] that has not
/// been freed already.
#[no_mangle]
pub unsafe extern "C" fn ibcln_model_free(model: *mut IbclnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Cascade depth the checkpoint was trained with.
///
/// # Safety
/// `model` must be a live handle from [`ibcln_model_load`].
#[no_mangle]
pub unsafe extern "C" fn ibcln_model_time_steps(model: *const IbclnModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    (*model).inner.manifest.n_steps as u32
}

unsafe fn image_from_rgb(rgb: *const u8, height: u32, width: u32) -> Result<Image, IbclnStatus> {
    if rgb.is_null() || height == 0 || width == 0 {
        set_last_error("null or empty RGB buffer");
        return Err(IbclnStatus::InvalidArgument);
    }
    let n = height as usize * width as usize * 3;
    let bytes = std::slice::from_raw_parts(rgb, n);
    let pixels = bytes.iter().map(|&b| b as f32 / 255.0).collect();
    Image::new(pixels, height as usize, width as usize, ColorSpace::GammaEncoded).map_err(|e| {
        set_last_error(&e.to_string());
        IbclnStatus::InvalidArgument
    })
}

fn write_rgb(img: &Image, out: *mut u8) {
    let bytes: Vec<u8> = img
        .pixels()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    unsafe { std::ptr::copy_nonoverlapping(bytes.as_ptr(), out, bytes.len()) };
}

/// Removes reflections from an 8-bit interleaved RGB image. `out_rgb` receives
/// the predicted transmission layer as the same-size 8-bit RGB buffer.
/// `time_steps` of 0 uses the checkpoint's trained cascade depth.
///
/// # Safety
/// `model` must be a live handle; `rgb` must hold `height * width * 3`
/// readable bytes and `out_rgb` the same number of writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ibcln_remove_reflection(
    model: *const IbclnModel,
    rgb: *const u8,
    height: u32,
    width: u32,
    time_steps: u32,
    out_rgb: *mut u8,
) -> IbclnStatus {
    if model.is_null() || out_rgb.is_null() {
        set_last_error("null pointer argument");
        return IbclnStatus::InvalidArgument;
    }
    let input_enc = match image_from_rgb(rgb, height, width) {
        Ok(img) => img,
        Err(status) => return status,
    };
    let model = &(*model).inner;
    let n = if time_steps == 0 {
        model.manifest.n_steps
    } else {
        time_steps as usize
    };
    let run = || -> ibcln::Result<Image> {
        let input_lin = gamma_decode(&input_enc)?;
        let tensor =
            image_to_tensor(&input_lin, &candle_core::Device::Cpu, candle_core::DType::F32)?
                .unsqueeze(0)?;
        let trace = cascade_forward(&model.g_t, model.g_r.as_ref(), &tensor, n)?;
        let t_hat = tensor_to_image(trace.final_transmission())?;
        Ok(quantize8(&gamma_encode(&t_hat)?))
    };
    match run() {
        Ok(out) => {
            write_rgb(&out, out_rgb);
            IbclnStatus::Ok
        }
        Err(err) => {
            set_last_error(&err.to_string());
            IbclnStatus::RuntimeError
        }
    }
}

unsafe fn metric_pair(
    a: *const u8,
    b: *const u8,
    height: u32,
    width: u32,
) -> Result<(Image, Image), IbclnStatus> {
    Ok((image_from_rgb(a, height, width)?, image_from_rgb(b, height, width)?))
}

/// PSNR (dB) between two same-size 8-bit RGB buffers.
///
/// # Safety
/// `a` and `b` must hold `height * width * 3` readable bytes; `out_psnr`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ibcln_psnr(
    a: *const u8,
    b: *const u8,
    height: u32,
    width: u32,
    out_psnr: *mut f64,
) -> IbclnStatus {
    if out_psnr.is_null() {
        set_last_error("null output pointer");
        return IbclnStatus::InvalidArgument;
    }
    let (ia, ib) = match metric_pair(a, b, height, width) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match psnr(&ia, &ib) {
        Ok(v) => {
            *out_psnr = v;
            IbclnStatus::Ok
        }
        Err(err) => {
            set_last_error(&err.to_string());
            IbclnStatus::RuntimeError
        }
    }
}

/// SSIM between two same-size 8-bit RGB buffers (min side 11 pixels).
///
/// # Safety
/// `a` and `b` must hold `height * width * 3` readable bytes; `out_ssim`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ibcln_ssim(
    a: *const u8,
    b: *const u8,
    height: u32,
    width: u32,
    out_ssim: *mut f64,
) -> IbclnStatus {
    if out_ssim.is_null() {
        set_last_error("null output pointer");
        return IbclnStatus::InvalidArgument;
    }
    let (ia, ib) = match metric_pair(a, b, height, width) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match ssim(&ia, &ib) {
        Ok(v) => {
            *out_ssim = v;
            IbclnStatus::Ok
        }
        Err(err) => {
            set_last_error(&err.to_string());
            IbclnStatus::RuntimeError
        }
    }
}
