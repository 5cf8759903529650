//! C ABI for mpvstereo.
//!
//! Objects are opaque handles created by `mpv_*_new`/`load` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! `MpvStatus`; on failure the message is kept per thread and read with
//! `mpv_last_error_message`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mpvstereo::imgio::{load_image, GrayImage, StereoPair};
use mpvstereo::pipeline::io::save_pfm;
use mpvstereo::pipeline::{Pipeline, PipelineConfig};
use mpvstereo::recog::{cascade_classify, CascadeModel};
use mpvstereo::{DisparityMap, Error};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MpvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Dimension = 5,
    Degenerate = 6,
    Training = 7,
    Internal = 8,
}

/// Grayscale 8-bit image.
pub struct MpvImage(GrayImage);

/// Disparity map; pixels may be invalid.
pub struct MpvDisparity(DisparityMap);

/// Trained recognition cascade.
pub struct MpvCascade(CascadeModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MpvStatus {
    match err {
        Error::Stage { source, .. } => status_of(source),
        Error::FileNotFound { .. } | Error::Io { .. } => MpvStatus::Io,
        Error::Malformed { .. } | Error::Unsupported { .. } | Error::Serde(_) => MpvStatus::Format,
        Error::InvalidArgument(_) | Error::OutOfBounds(_) => MpvStatus::InvalidArgument,
        Error::DimensionMismatch(_) | Error::TooSmall(_) => MpvStatus::Dimension,
        Error::Degenerate(_) | Error::Infeasible(_) => MpvStatus::Degenerate,
        Error::Training(_) => MpvStatus::Training,
    }
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

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MpvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MpvStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            MpvStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            MpvStatus::Internal
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// excluding the terminator, or 0 when there is no error.
#[no_mangle]
pub unsafe extern "C" fn mpv_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            0
        }
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Copies a `width × height` image whose rows are `stride` bytes apart.
#[no_mangle]
pub unsafe extern "C" fn mpv_image_new(
    data: *const u8,
    width: usize,
    height: usize,
    stride: usize,
    out: *mut *mut MpvImage,
) -> MpvStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        if stride < width {
            return Err(Error::InvalidArgument(format!("stride {stride} < width {width}")).into());
        }
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            pixels.extend_from_slice(std::slice::from_raw_parts(data.add(y * stride), width));
        }
        store(out, MpvImage(GrayImage::new(width, height, pixels)?))
    })
}

/// Loads a binary PGM or 8-bit grayscale PNG.
#[no_mangle]
pub unsafe extern "C" fn mpv_image_load(path: *const c_char, out: *mut *mut MpvImage) -> MpvStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        store(out, MpvImage(load_image(path)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mpv_image_width(img: *const MpvImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.width())
}

#[no_mangle]
pub unsafe extern "C" fn mpv_image_height(img: *const MpvImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.height())
}

#[no_mangle]
pub unsafe extern "C" fn mpv_image_free(img: *mut MpvImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Loads a TOML pipeline configuration when `path` is non-null, else the
/// defaults; `d_max` > 0 and `threads` >= 0 override the file.
unsafe fn config_arg(path: *const c_char, d_max: u32, threads: i32) -> Result<PipelineConfig, Failure> {
    let mut cfg = if path.is_null() {
        PipelineConfig::default()
    } else {
        PipelineConfig::load(path_arg(path, "config path")?)?
    };
    if d_max > 0 {
        cfg.d_max = d_max;
    }
    if threads >= 0 {
        cfg.threads = threads as usize;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Computes a disparity map. `config_path` may be null; `d_max` of 0 keeps
/// the configured value and a negative `threads` keeps the configured width.
#[no_mangle]
pub unsafe extern "C" fn mpv_match(
    left: *const MpvImage,
    right: *const MpvImage,
    config_path: *const c_char,
    d_max: u32,
    threads: i32,
    out: *mut *mut MpvDisparity,
) -> MpvStatus {
    guard(|| {
        let (l, r) = (as_ref(left, "left")?, as_ref(right, "right")?);
        let cfg = config_arg(config_path, d_max, threads)?;
        let pair = StereoPair::new(l.0.clone(), r.0.clone())?;
        let matched = Pipeline::new(cfg, None)?.match_stage(0, &pair)?;
        store(out, MpvDisparity(matched.disparity))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mpv_disparity_width(d: *const MpvDisparity) -> usize {
    d.as_ref().map_or(0, |d| d.0.width())
}

#[no_mangle]
pub unsafe extern "C" fn mpv_disparity_height(d: *const MpvDisparity) -> usize {
    d.as_ref().map_or(0, |d| d.0.height())
}

/// Disparity at (x, y), or -1 for invalid pixels and bad arguments.
#[no_mangle]
pub unsafe extern "C" fn mpv_disparity_get(d: *const MpvDisparity, x: usize, y: usize) -> i32 {
    match d.as_ref() {
        Some(d) if x < d.0.width() && y < d.0.height() => d.0.get(x, y).map_or(-1, |u| u as i32),
        _ => -1,
    }
}

/// Writes row-major disparities into `buf` of `len` floats; invalid
/// pixels are +inf.
#[no_mangle]
pub unsafe extern "C" fn mpv_disparity_copy(d: *const MpvDisparity, buf: *mut f32, len: usize) -> MpvStatus {
    guard(|| {
        let d = as_ref(d, "disparity")?;
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        let (w, h) = (d.0.width(), d.0.height());
        if len < w * h {
            return Err(Error::InvalidArgument(format!("buffer holds {len} values, need {}", w * h)).into());
        }
        let out = std::slice::from_raw_parts_mut(buf, w * h);
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = d.0.get(x, y).map_or(f32::INFINITY, |u| u as f32);
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mpv_disparity_save_pfm(d: *const MpvDisparity, path: *const c_char) -> MpvStatus {
    guard(|| {
        let d = as_ref(d, "disparity")?;
        save_pfm(&d.0, path_arg(path, "path")?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mpv_disparity_free(d: *mut MpvDisparity) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

#[no_mangle]
pub unsafe extern "C" fn mpv_cascade_load(path: *const c_char, out: *mut *mut MpvCascade) -> MpvStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        store(out, MpvCascade(CascadeModel::load(path)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mpv_cascade_stage_count(c: *const MpvCascade) -> usize {
    c.as_ref().map_or(0, |c| c.0.stages.len())
}

/// Classifies a whole image as one window. `accepted` receives 1 or 0 and
/// `stages_evaluated` the number of stages run; either may be null.
#[no_mangle]
pub unsafe extern "C" fn mpv_cascade_classify(
    c: *const MpvCascade,
    window: *const MpvImage,
    accepted: *mut i32,
    stages_evaluated: *mut usize,
) -> MpvStatus {
    guard(|| {
        let (c, img) = (as_ref(c, "cascade")?, as_ref(window, "window")?);
        let (ok, stages) = cascade_classify(&img.0, &c.0)?;
        if !accepted.is_null() {
            *accepted = ok as i32;
        }
        if !stages_evaluated.is_null() {
            *stages_evaluated = stages;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mpv_cascade_free(c: *mut MpvCascade) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Runs the full frame pipeline and returns the detection record as a
/// NUL-terminated JSON string in `out_json`, to be released with
/// `mpv_string_free`. `cascade` and `config_path` may be null.
#[no_mangle]
pub unsafe extern "C" fn mpv_detect(
    left: *const MpvImage,
    right: *const MpvImage,
    cascade: *const MpvCascade,
    config_path: *const c_char,
    threads: i32,
    with_timings: i32,
    out_json: *mut *mut c_char,
) -> MpvStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(Failure::Null("out_json"));
        }
        let (l, r) = (as_ref(left, "left")?, as_ref(right, "right")?);
        let cfg = config_arg(config_path, 0, threads)?;
        let model = cascade.as_ref().map(|c| c.0.clone());
        let pair = StereoPair::new(l.0.clone(), r.0.clone())?;
        let p = Pipeline::new(cfg, model)?;
        let result = p.run_frame(&pair)?;
        let record = result.record("frame", p.config(), with_timings != 0);
        let json = serde_json::to_string(&record).map_err(|e| Error::Serde(e.to_string()))?;
        *out_json = CString::new(json).map_err(|e| Error::Serde(e.to_string()))?.into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mpv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
