//! C ABI over `ppat`.
//!
//! Every function returns a [`PpatStatus`]. On failure a message is kept per
//! thread and can be read with [`ppat_last_error_message`]. Handles are opaque
//! and must be released with their matching `*_free` function. Strings
//! returned through out-parameters are owned by the caller and released with
//! [`ppat_string_free`].

use ppat::caption::mock_caption;
use ppat::model::{ModelError, VsLlm};
use ppat::sketch::{cumulative_counts, parse_sketch_json, rasterize, Sketch, SketchError, SUB_SKETCH_COUNT};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

/// Number of cumulative sub-sketches per sketch.
pub const PPAT_SUB_SKETCH_COUNT: usize = 12;
const _: () = assert!(PPAT_SUB_SKETCH_COUNT == SUB_SKETCH_COUNT);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PpatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Schema = 3,
    EmptySketch = 4,
    InvalidArgument = 5,
    Io = 6,
    Model = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A validated sketch.
pub struct PpatSketch(Sketch);

/// A loaded model checkpoint.
pub struct PpatModel(VsLlm);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PpatStatus, String);

impl From<SketchError> for Failure {
    fn from(e: SketchError) -> Self {
        let status = match e {
            SketchError::EmptySketch => PpatStatus::EmptySketch,
            SketchError::Schema { .. } => PpatStatus::Schema,
            _ => PpatStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Sketch(s) => s.into(),
            other => Failure(PpatStatus::Model, other.to_string()),
        }
    }
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PpatStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PpatStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PpatStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(PpatStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(PpatStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next `ppat_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ppat_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ppat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse and validate sketch JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ppat_sketch_parse(json: *const c_char, out: *mut *mut PpatSketch) -> PpatStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let json = text(json, "json")?;
        let sketch = parse_sketch_json(json.as_bytes())?;
        *out = Box::into_raw(Box::new(PpatSketch(sketch)));
        Ok(())
    })
}

/// # Safety
/// `sketch` must come from [`ppat_sketch_parse`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ppat_sketch_free(sketch: *mut PpatSketch) {
    if !sketch.is_null() {
        drop(Box::from_raw(sketch));
    }
}

/// # Safety
/// `sketch` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ppat_sketch_stroke_count(sketch: *const PpatSketch, out: *mut usize) -> PpatStatus {
    guard(|| {
        let s = handle(sketch, "sketch")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = s.0.stroke_count();
        Ok(())
    })
}

/// Writes the stroke counts of the 12 cumulative sub-sketches to `out`.
///
/// # Safety
/// `out` must point to at least [`PPAT_SUB_SKETCH_COUNT`] writable `size_t`s.
#[no_mangle]
pub unsafe extern "C" fn ppat_sketch_cumulative_counts(sketch: *const PpatSketch, out: *mut usize) -> PpatStatus {
    guard(|| {
        let s = handle(sketch, "sketch")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let counts = cumulative_counts(s.0.stroke_count())?;
        ptr::copy_nonoverlapping(counts.as_ptr(), out, SUB_SKETCH_COUNT);
        Ok(())
    })
}

/// Rasterizes into `buf` as row-major RGB, `width * height * 3` bytes.
/// On `BufferTooSmall` the required length is still written to `required`.
///
/// # Safety
/// `buf` must hold `buf_len` writable bytes; `required` may be null.
#[no_mangle]
pub unsafe extern "C" fn ppat_sketch_render_rgb(
    sketch: *const PpatSketch,
    width: u32,
    height: u32,
    buf: *mut u8,
    buf_len: usize,
    required: *mut usize,
) -> PpatStatus {
    guard(|| {
        let s = handle(sketch, "sketch")?;
        let need = width as usize * height as usize * 3;
        if let Some(r) = required.as_mut() {
            *r = need;
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        if buf_len < need {
            return Err(Failure(
                PpatStatus::BufferTooSmall,
                format!("buffer holds {buf_len} bytes, {need} needed"),
            ));
        }
        let image = rasterize(&s.0, width, height)?;
        ptr::copy_nonoverlapping(image.pixels().as_ptr(), buf, need);
        Ok(())
    })
}

/// Loads a checkpoint written by `ppat train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ppat_model_load(path: *const c_char, out: *mut *mut PpatModel) -> PpatStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = text(path, "path")?;
        let file = std::fs::File::open(path).map_err(|e| Failure(PpatStatus::Io, format!("{path}: {e}")))?;
        let model = VsLlm::load(BufReader::new(file))?;
        *out = Box::into_raw(Box::new(PpatModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ppat_model_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ppat_model_free(model: *mut PpatModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs the model and writes the assessment as a JSON string to `out_json`.
/// A null `caption` uses the built-in deterministic caption for the sketch.
///
/// # Safety
/// Handles must be live, `caption` null or NUL-terminated, `out_json` writable.
/// The returned string must be released with [`ppat_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ppat_model_assess(
    model: *const PpatModel,
    sketch: *const PpatSketch,
    caption: *const c_char,
    out_json: *mut *mut c_char,
) -> PpatStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        *out_json = ptr::null_mut();
        let m = handle(model, "model")?;
        let s = handle(sketch, "sketch")?;
        let caption = if caption.is_null() {
            mock_caption(&s.0)
        } else {
            text(caption, "caption")?.to_string()
        };
        let assessment = m.0.forward(&s.0, &caption)?;
        let json = serde_json::to_string(&assessment).map_err(|e| Failure(PpatStatus::Model, e.to_string()))?;
        *out_json = CString::new(json)
            .map_err(|e| Failure(PpatStatus::Model, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ppat_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
