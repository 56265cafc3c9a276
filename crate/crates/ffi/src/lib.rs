//! C ABI over `latl`: load a checkpoint, translate, and analyse the
//! language space.
//!
//! Every fallible function returns a [`LatlStatus`]. On failure the message
//! is kept per thread and read with [`latl_last_error`]. Strings handed out
//! by the library are released with [`latl_string_free`]; handles with their
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use latl::corpus::tokenize;
use latl::langspace::{
    cut_and_score, extract_language_space, pairwise_distances, tsne_project, upgma_cluster,
    LanguageSpace, Metric, TsneConfig,
};
use latl::trainer::{load_checkpoint, Checkpoint};
use latl::translator::{translate, DecodeConfig};
use latl::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    InvalidArgument = 5,
    UnknownLanguage = 6,
    Numeric = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatlMetric {
    Cosine = 0,
    Euclidean = 1,
}

impl From<LatlMetric> for Metric {
    fn from(m: LatlMetric) -> Self {
        match m {
            LatlMetric::Cosine => Metric::Cosine,
            LatlMetric::Euclidean => Metric::Euclidean,
        }
    }
}

/// A loaded checkpoint.
pub struct LatlModel {
    checkpoint: Checkpoint,
}

/// Language vectors with codes and family labels.
pub struct LatlSpace {
    space: LanguageSpace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: LatlStatus,
    message: String,
}

impl Failure {
    fn new(status: LatlStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => LatlStatus::Io,
            Error::Parse { .. }
            | Error::DuplicateVerse { .. }
            | Error::BadMagic
            | Error::Version { .. }
            | Error::Truncated(_)
            | Error::Header(_) => LatlStatus::Format,
            Error::UnknownLanguage(_) => LatlStatus::UnknownLanguage,
            Error::NonFinite(_) | Error::Calibration { .. } => LatlStatus::Numeric,
            _ => LatlStatus::InvalidArgument,
        };
        Failure::new(status, e.to_string())
    }
}

fn set_last_error(message: Option<String>) {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() =
            message.map(|m| CString::new(m.replace('\0', " ")).expect("NUL bytes removed"));
    });
}

/// Runs `f`, recording any error or panic for [`latl_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LatlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            LatlStatus::Ok
        }
        Ok(Err(failure)) => {
            set_last_error(Some(failure.message));
            failure.status
        }
        Err(_) => {
            set_last_error(Some("internal panic".into()));
            LatlStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes either NULL or a pointer obtained from this
    // library that has not been freed.
    unsafe { p.as_ref() }
        .ok_or_else(|| Failure::new(LatlStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller passes either NULL or a valid, writable pointer.
    unsafe { p.as_mut() }
        .ok_or_else(|| Failure::new(LatlStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(
            LatlStatus::NullPointer,
            format!("{what} is NULL"),
        ));
    }
    // SAFETY: non-null and, per the API contract, NUL-terminated.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::new(LatlStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out_slice<'a, T>(
    p: *mut T,
    len: usize,
    needed: usize,
    what: &str,
) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::new(
            LatlStatus::NullPointer,
            format!("{what} is NULL"),
        ));
    }
    if len < needed {
        return Err(Failure::new(
            LatlStatus::BufferTooSmall,
            format!("{what} holds {len} values, {needed} needed"),
        ));
    }
    // SAFETY: non-null and, per the API contract, valid for `len` writes.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, needed) })
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::new(LatlStatus::InvalidArgument, "string contains NUL"))
}

/// Message of the last failed call on this thread, or NULL after a
/// success. Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn latl_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a string obtained from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn latl_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: produced by `CString::into_raw` in this library.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn latl_model_load(
    path: *const c_char,
    out: *mut *mut LatlModel,
) -> LatlStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        *out = ptr::null_mut();
        let path = unsafe { read_str(path, "path") }?;
        let checkpoint = load_checkpoint(path)?;
        *out = Box::into_raw(Box::new(LatlModel { checkpoint }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`latl_model_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn latl_model_free(model: *mut LatlModel) {
    if !model.is_null() {
        // SAFETY: produced by `Box::into_raw` in `latl_model_load`.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of languages (flags) the model knows.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn latl_model_language_count(
    model: *const LatlModel,
    out: *mut usize,
) -> LatlStatus {
    guard(|| {
        let model = unsafe { borrow(model, "model") }?;
        *unsafe { out_ref(out, "out") }? = model.checkpoint.inventory.len();
        Ok(())
    })
}

/// Translates `text` into the language `tgt_lang`. On success `*out_text`
/// receives a string to release with [`latl_string_free`] and `*out_score`
/// the hypothesis score.
///
/// # Safety
/// `model` must be a live handle, the strings NUL-terminated and the output
/// pointers writable.
#[no_mangle]
pub unsafe extern "C" fn latl_translate(
    model: *const LatlModel,
    tgt_lang: *const c_char,
    text: *const c_char,
    beam_size: usize,
    max_len: usize,
    length_norm: f64,
    out_text: *mut *mut c_char,
    out_score: *mut f64,
) -> LatlStatus {
    guard(|| {
        let out_text = unsafe { out_ref(out_text, "out_text") }?;
        *out_text = ptr::null_mut();
        let out_score = unsafe { out_ref(out_score, "out_score") }?;
        let model = unsafe { borrow(model, "model") }?;
        let lang = unsafe { read_str(tgt_lang, "tgt_lang") }?;
        let text = unsafe { read_str(text, "text") }?;
        let ckpt = &model.checkpoint;
        let flag = ckpt.inventory.index_of(lang)?;
        let src = ckpt.vocab.encode(&tokenize(text));
        if src.is_empty() {
            return Err(Failure::new(
                LatlStatus::InvalidArgument,
                "empty source text",
            ));
        }
        let cfg = DecodeConfig {
            max_len,
            beam_size,
            length_norm,
        };
        cfg.validate()?;
        let t = translate(&ckpt.params, &src, flag, &cfg)?;
        let rendered = latl::corpus::detokenize(&ckpt.vocab.decode(&t.tokens));
        *out_text = to_c_string(rendered)?;
        *out_score = t.score;
        Ok(())
    })
}

/// The model's language space, minus the codes in `exclude` (a
/// comma-separated list, or NULL).
///
/// # Safety
/// `model` must be a live handle, `exclude` NULL or NUL-terminated, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn latl_space_from_model(
    model: *const LatlModel,
    exclude: *const c_char,
    out: *mut *mut LatlSpace,
) -> LatlStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        *out = ptr::null_mut();
        let model = unsafe { borrow(model, "model") }?;
        let exclude = if exclude.is_null() {
            ""
        } else {
            unsafe { read_str(exclude, "exclude") }?
        };
        let codes: Vec<&str> = exclude
            .split(',')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .collect();
        let space = extract_language_space(&model.checkpoint)?.without(&codes)?;
        *out = Box::into_raw(Box::new(LatlSpace { space }));
        Ok(())
    })
}

/// Loads a `lang<TAB>family<TAB>v1..vd` table.
///
/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn latl_space_load_tsv(
    path: *const c_char,
    out: *mut *mut LatlSpace,
) -> LatlStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        *out = ptr::null_mut();
        let path = unsafe { read_str(path, "path") }?;
        let space = LanguageSpace::load_tsv(path)?;
        *out = Box::into_raw(Box::new(LatlSpace { space }));
        Ok(())
    })
}

/// # Safety
/// `space` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn latl_space_free(space: *mut LatlSpace) {
    if !space.is_null() {
        // SAFETY: produced by `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(space) });
    }
}

/// Number of languages and vector width.
///
/// # Safety
/// `space` must be a live handle; the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn latl_space_shape(
    space: *const LatlSpace,
    out_len: *mut usize,
    out_dim: *mut usize,
) -> LatlStatus {
    guard(|| {
        let space = unsafe { borrow(space, "space") }?;
        *unsafe { out_ref(out_len, "out_len") }? = space.space.len();
        *unsafe { out_ref(out_dim, "out_dim") }? = space.space.dim();
        Ok(())
    })
}

/// Code of language `index`, released with [`latl_string_free`].
///
/// # Safety
/// `space` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn latl_space_code(
    space: *const LatlSpace,
    index: usize,
    out: *mut *mut c_char,
) -> LatlStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        *out = ptr::null_mut();
        let space = unsafe { borrow(space, "space") }?;
        let code = space.space.codes().get(index).ok_or_else(|| {
            Failure::new(
                LatlStatus::InvalidArgument,
                format!("index {index} out of range"),
            )
        })?;
        *out = to_c_string(code.clone())?;
        Ok(())
    })
}

/// Row-major `len × len` distances into `out` (capacity `out_len`).
///
/// # Safety
/// `space` must be a live handle; `out` valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn latl_space_distances(
    space: *const LatlSpace,
    metric: LatlMetric,
    out: *mut f64,
    out_len: usize,
) -> LatlStatus {
    guard(|| {
        let space = unsafe { borrow(space, "space") }?;
        let n = space.space.len();
        let out = unsafe { out_slice(out, out_len, n * n, "out") }?;
        let d = pairwise_distances(&space.space, metric.into())?;
        for i in 0..n {
            out[i * n..(i + 1) * n].copy_from_slice(d.row(i));
        }
        Ok(())
    })
}

/// Exact t-SNE. Writes `x0 y0 x1 y1 ...` into `out_xy` (capacity
/// `out_len`, at least `2 × len`) and the final KL into `out_kl`.
///
/// # Safety
/// `space` must be a live handle; the outputs valid for writing.
#[no_mangle]
pub unsafe extern "C" fn latl_space_tsne(
    space: *const LatlSpace,
    perplexity: f64,
    iterations: usize,
    learning_rate: f64,
    seed: u64,
    out_xy: *mut f64,
    out_len: usize,
    out_kl: *mut f64,
) -> LatlStatus {
    guard(|| {
        let space = unsafe { borrow(space, "space") }?;
        let out_kl = unsafe { out_ref(out_kl, "out_kl") }?;
        let out = unsafe { out_slice(out_xy, out_len, 2 * space.space.len(), "out_xy") }?;
        let cfg = TsneConfig {
            perplexity,
            iterations,
            learning_rate,
            seed,
            ..TsneConfig::default()
        };
        let proj = tsne_project(&space.space, &cfg)?;
        for (slot, c) in out.chunks_exact_mut(2).zip(&proj.coords) {
            slot.copy_from_slice(c);
        }
        *out_kl = proj.kl;
        Ok(())
    })
}

/// UPGMA tree as a Newick string, released with [`latl_string_free`].
///
/// # Safety
/// `space` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn latl_space_newick(
    space: *const LatlSpace,
    metric: LatlMetric,
    out: *mut *mut c_char,
) -> LatlStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        *out = ptr::null_mut();
        let space = unsafe { borrow(space, "space") }?;
        let d = pairwise_distances(&space.space, metric.into())?;
        let newick = upgma_cluster(&d)?.newick(space.space.codes())?;
        *out = to_c_string(newick)?;
        Ok(())
    })
}

/// Cuts the UPGMA tree into `k` clusters. Writes one cluster id per
/// language into `out_assignment` and the family purity and silhouette.
///
/// # Safety
/// `space` must be a live handle; the outputs valid for writing.
#[no_mangle]
pub unsafe extern "C" fn latl_space_cut(
    space: *const LatlSpace,
    metric: LatlMetric,
    k: usize,
    out_assignment: *mut usize,
    out_len: usize,
    out_purity: *mut f64,
    out_silhouette: *mut f64,
) -> LatlStatus {
    guard(|| {
        let space = unsafe { borrow(space, "space") }?;
        let out_purity = unsafe { out_ref(out_purity, "out_purity") }?;
        let out_silhouette = unsafe { out_ref(out_silhouette, "out_silhouette") }?;
        let out =
            unsafe { out_slice(out_assignment, out_len, space.space.len(), "out_assignment") }?;
        let d = pairwise_distances(&space.space, metric.into())?;
        let score = cut_and_score(&upgma_cluster(&d)?, k, space.space.families(), &d)?;
        out.copy_from_slice(&score.assignment);
        *out_purity = score.purity;
        *out_silhouette = score.silhouette;
        Ok(())
    })
}
