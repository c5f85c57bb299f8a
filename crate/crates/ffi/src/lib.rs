//! C interface to trained generators, concept embeddings and the evaluation
//! metrics.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `_free` function. Every fallible function returns an
//! [`OzStatus`]; on failure a message is available from
//! [`oz_last_error_message`] on the same thread until the next failing call.
//!
//! # Safety
//!
//! Pointer arguments must be null or valid for the stated length. Strings are
//! NUL-terminated UTF-8. Handles are not thread-safe.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ontogan::encoder::ConceptEmbeddingTable;
use ontogan::gan::GanModel;
use ontogan::imgc::harmonic_mean;
use ontogan::kgc::{kgc_metrics, random_mrr};
use ontogan::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OzStatus {
    Ok = 0,
    NullPointer = -1,
    InvalidArgument = -2,
    Io = -3,
    Format = -4,
    Shape = -5,
    NotFound = -6,
    Runtime = -7,
    Panic = -8,
}

/// Generator checkpoint.
pub struct OzGan {
    model: GanModel,
}

/// Concept embedding table.
pub struct OzEmbeddings {
    table: ConceptEmbeddingTable,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OzKgcMetrics {
    pub mrr: f64,
    pub hit10: f64,
    pub hit5: f64,
    pub hit1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> OzStatus {
    match err {
        Error::Io { .. } => OzStatus::Io,
        Error::Parse { .. } | Error::Format(_) => OzStatus::Format,
        Error::Shape(_) => OzStatus::Shape,
        Error::MissingEmbedding(_) | Error::MissingVector(_) | Error::Undeclared(_) => {
            OzStatus::NotFound
        }
        Error::Config(_) | Error::UnknownTag(_) => OzStatus::InvalidArgument,
        _ => OzStatus::Runtime,
    }
}

fn fail(status: OzStatus, msg: impl Into<String>) -> OzStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, turning library errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), OzStatus>) -> OzStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OzStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(OzStatus::Panic, "internal panic"),
    }
}

fn lib<T>(r: ontogan::Result<T>) -> Result<T, OzStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, OzStatus> {
    if p.is_null() {
        return Err(fail(OzStatus::NullPointer, "path is null"));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(OzStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], OzStatus> {
    if p.is_null() {
        return Err(fail(OzStatus::NullPointer, format!("{what} is null")));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn oz_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a generator checkpoint into `*out`.
///
/// # Safety
/// `path` is a valid C string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn oz_gan_load(path: *const c_char, out: *mut *mut OzGan) -> OzStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(OzStatus::NullPointer, "out is null"));
        }
        let path = unsafe { path_arg(path)? };
        let model = lib(GanModel::load(&path, None))?;
        unsafe { *out = Box::into_raw(Box::new(OzGan { model })) };
        Ok(())
    })
}

/// # Safety
/// `gan` is null or came from [`oz_gan_load`] and was not freed.
#[no_mangle]
pub unsafe extern "C" fn oz_gan_free(gan: *mut OzGan) {
    if !gan.is_null() {
        drop(unsafe { Box::from_raw(gan) });
    }
}

/// Width of generated features, or 0 for a null handle.
///
/// # Safety
/// `gan` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oz_gan_feature_dim(gan: *const OzGan) -> usize {
    unsafe { gan.as_ref() }.map_or(0, |g| g.model.feature_dim())
}

/// Width of the conditioning embedding, or 0 for a null handle.
///
/// # Safety
/// `gan` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oz_gan_embedding_dim(gan: *const OzGan) -> usize {
    unsafe { gan.as_ref() }.map_or(0, |g| g.model.embedding_dim())
}

/// Writes `n` generated rows (row-major, `n * feature_dim` values) for one
/// class embedding into `out`.
///
/// # Safety
/// `embedding` holds `embedding_len` values and `out` has room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn oz_gan_generate(
    gan: *const OzGan,
    embedding: *const f64,
    embedding_len: usize,
    n: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> OzStatus {
    guard(|| {
        let gan =
            unsafe { gan.as_ref() }.ok_or_else(|| fail(OzStatus::NullPointer, "gan is null"))?;
        let emb = unsafe { slice_arg(embedding, embedding_len, "embedding")? };
        if out.is_null() {
            return Err(fail(OzStatus::NullPointer, "out is null"));
        }
        let need = n * gan.model.feature_dim();
        if out_len < need {
            return Err(fail(
                OzStatus::Shape,
                format!("out holds {out_len} values, need {need}"),
            ));
        }
        let rows = lib(gan.model.generate(emb, n, seed))?;
        unsafe { std::slice::from_raw_parts_mut(out, need) }.copy_from_slice(rows.data());
        Ok(())
    })
}

/// Loads a concept embedding table into `*out`.
///
/// # Safety
/// `path` is a valid C string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn oz_embeddings_load(
    path: *const c_char,
    out: *mut *mut OzEmbeddings,
) -> OzStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(OzStatus::NullPointer, "out is null"));
        }
        let path = unsafe { path_arg(path)? };
        let table = lib(ConceptEmbeddingTable::read(&path))?;
        unsafe { *out = Box::into_raw(Box::new(OzEmbeddings { table })) };
        Ok(())
    })
}

/// # Safety
/// `table` is null or came from [`oz_embeddings_load`] and was not freed.
#[no_mangle]
pub unsafe extern "C" fn oz_embeddings_free(table: *mut OzEmbeddings) {
    if !table.is_null() {
        drop(unsafe { Box::from_raw(table) });
    }
}

/// # Safety
/// `table` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oz_embeddings_dim(table: *const OzEmbeddings) -> usize {
    unsafe { table.as_ref() }.map_or(0, |t| t.table.dim())
}

/// # Safety
/// `table` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oz_embeddings_len(table: *const OzEmbeddings) -> usize {
    unsafe { table.as_ref() }.map_or(0, |t| t.table.len())
}

/// Copies the embedding of `concept` into `out`.
///
/// # Safety
/// `concept` is a valid C string and `out` has room for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn oz_embeddings_get(
    table: *const OzEmbeddings,
    concept: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> OzStatus {
    guard(|| {
        let t = unsafe { table.as_ref() }
            .ok_or_else(|| fail(OzStatus::NullPointer, "table is null"))?;
        if concept.is_null() || out.is_null() {
            return Err(fail(OzStatus::NullPointer, "concept or out is null"));
        }
        let id = unsafe { CStr::from_ptr(concept) }
            .to_str()
            .map_err(|_| fail(OzStatus::InvalidArgument, "concept is not UTF-8"))?;
        let v = lib(t.table.require(id))?;
        if out_len < v.len() {
            return Err(fail(
                OzStatus::Shape,
                format!("out holds {out_len} values, need {}", v.len()),
            ));
        }
        unsafe { std::slice::from_raw_parts_mut(out, v.len()) }.copy_from_slice(v);
        Ok(())
    })
}

/// Harmonic mean of seen and unseen accuracy; 0 when both are 0.
#[no_mangle]
pub extern "C" fn oz_harmonic_mean(acc_seen: f64, acc_unseen: f64) -> f64 {
    harmonic_mean(acc_seen, acc_unseen)
}

/// MRR and Hit@{10,5,1} of 1-based ranks.
///
/// # Safety
/// `ranks` holds `n` values and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn oz_kgc_metrics(
    ranks: *const u64,
    n: usize,
    out: *mut OzKgcMetrics,
) -> OzStatus {
    guard(|| {
        let ranks = unsafe { slice_arg(ranks, n, "ranks")? };
        let out =
            unsafe { out.as_mut() }.ok_or_else(|| fail(OzStatus::NullPointer, "out is null"))?;
        let ranks: Vec<usize> = ranks.iter().map(|&r| r as usize).collect();
        let m = lib(kgc_metrics(&ranks)).map_err(|_| OzStatus::InvalidArgument)?;
        *out = OzKgcMetrics {
            mrr: m.mrr,
            hit10: m.hit10,
            hit5: m.hit5,
            hit1: m.hit1,
        };
        Ok(())
    })
}

/// Expected MRR of uniformly random rankings over the given candidate counts.
///
/// # Safety
/// `counts` holds `n` values and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn oz_random_mrr(counts: *const u64, n: usize, out: *mut f64) -> OzStatus {
    guard(|| {
        let counts = unsafe { slice_arg(counts, n, "counts")? };
        let out =
            unsafe { out.as_mut() }.ok_or_else(|| fail(OzStatus::NullPointer, "out is null"))?;
        if n == 0 || counts.contains(&0) {
            return Err(fail(
                OzStatus::InvalidArgument,
                "candidate counts must be positive and non-empty",
            ));
        }
        let counts: Vec<usize> = counts.iter().map(|&c| c as usize).collect();
        *out = random_mrr(&counts);
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_through_the_c_surface() {
        let mut m = OzKgcMetrics::default();
        let ranks = [2u64, 4];
        assert_eq!(
            unsafe { oz_kgc_metrics(ranks.as_ptr(), 2, &mut m) },
            OzStatus::Ok
        );
        assert_eq!(m.mrr, 0.375);
        assert_eq!(m.hit1, 0.0);
        assert_eq!(m.hit5, 1.0);
        assert!((oz_harmonic_mean(64.90, 49.35) - 56.06).abs() < 0.01);
    }

    #[test]
    fn failures_set_status_and_message() {
        let mut m = OzKgcMetrics::default();
        assert_eq!(
            unsafe { oz_kgc_metrics(ptr::null(), 0, &mut m) },
            OzStatus::NullPointer
        );
        let ranks = [0u64];
        assert_eq!(
            unsafe { oz_kgc_metrics(ranks.as_ptr(), 1, &mut m) },
            OzStatus::InvalidArgument
        );
        let msg = unsafe { CStr::from_ptr(oz_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("1-based"));

        let mut gan = ptr::null_mut();
        let path = CString::new("/nonexistent/gan.ckpt").unwrap();
        assert_eq!(
            unsafe { oz_gan_load(path.as_ptr(), &mut gan) },
            OzStatus::Io
        );
        assert!(gan.is_null());
        assert_eq!(unsafe { oz_gan_feature_dim(gan) }, 0);
        unsafe { oz_gan_free(gan) };
    }

    #[test]
    fn random_mrr_of_single_candidate_is_one() {
        let mut v = 0.0;
        let counts = [1u64, 1];
        assert_eq!(
            unsafe { oz_random_mrr(counts.as_ptr(), 2, &mut v) },
            OzStatus::Ok
        );
        assert_eq!(v, 1.0);
        assert_eq!(
            unsafe { oz_random_mrr(counts.as_ptr(), 0, &mut v) },
            OzStatus::InvalidArgument
        );
    }
}
