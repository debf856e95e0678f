//! C interface to `celab`.
//!
//! Every fallible function returns a [`CelabStatus`]. On failure a message is
//! kept per thread and can be read with [`celab_last_error`]. Objects cross
//! the boundary as opaque handles that must be released with their matching
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use celab::analytics::pearson;
use celab::nn::{hidden_activations, load_checkpoint, predict, NetworkParams, HIDDEN};
use celab::pairs::{generate_synthetic, Dataset, Direction};
use celab::raster::{rasterize, PIXELS};
use celab::repr::{knn_classify, Embedding, Source};
use celab::tsne::{tsne_embed, TsneConfig};
use celab::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CelabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    NotFound = 5,
    Numerical = 6,
    Internal = 7,
}

/// Labeled variable pairs.
pub struct CelabDataset(Dataset);

/// A trained network loaded from a checkpoint.
pub struct CelabNetwork(NetworkParams);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(CelabStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } | Error::Idx(_) | Error::Checkpoint(_) | Error::Json(_) => CelabStatus::Parse,
            Error::InvalidPair { .. } | Error::InvalidArgument(_) | Error::Shape(_) => CelabStatus::InvalidArgument,
            Error::NotFound(_) => CelabStatus::NotFound,
            Error::UndefinedCorrelation(_) | Error::Numerical(_) => CelabStatus::Numerical,
            Error::File { .. } | Error::Io(_) => CelabStatus::Io,
            _ => CelabStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(CelabStatus::InvalidArgument, msg.to_owned())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CelabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CelabStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".to_owned());
            CelabStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(CelabStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    non_null(p, "path")?;
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(Path::new(s))
}

fn rows(x: &[f64], n: usize, dim: usize) -> Vec<Vec<f64>> {
    x.chunks_exact(dim.max(1)).take(n).map(<[f64]>::to_vec).collect()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn celab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn celab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Generates `count` labeled synthetic pairs.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn celab_dataset_generate(count: usize, seed: u64, out: *mut *mut CelabDataset) -> CelabStatus {
    guard(|| {
        non_null(out, "out")?;
        let d = generate_synthetic(count, seed)?;
        *out = Box::into_raw(Box::new(CelabDataset(d)));
        Ok(())
    })
}

/// Reads a pairs file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn celab_dataset_read(path: *const c_char, out: *mut *mut CelabDataset) -> CelabStatus {
    guard(|| {
        non_null(out, "out")?;
        let d = Dataset::read_file(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(CelabDataset(d)));
        Ok(())
    })
}

/// Number of pairs, or 0 for a NULL handle.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn celab_dataset_len(dataset: *const CelabDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// Id and label value (1, -1, 0, or 2 when unlabeled) of the pair at `index`.
///
/// # Safety
/// `dataset` must be a live handle; `id` and `label` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn celab_dataset_pair(
    dataset: *const CelabDataset,
    index: usize,
    id: *mut u64,
    label: *mut i8,
) -> CelabStatus {
    guard(|| {
        non_null(dataset, "dataset")?;
        non_null(id, "id")?;
        non_null(label, "label")?;
        let pair = (*dataset)
            .0
            .pairs()
            .get(index)
            .ok_or_else(|| invalid("index out of range"))?;
        *id = pair.id();
        *label = pair.label().map_or(2, Direction::value);
        Ok(())
    })
}

/// Rasterizes the pair at `index` into 784 row-major pixels in [0, 1].
///
/// # Safety
/// `dataset` must be a live handle and `pixels` writable for 784 doubles.
#[no_mangle]
pub unsafe extern "C" fn celab_dataset_rasterize(
    dataset: *const CelabDataset,
    index: usize,
    pixels: *mut f64,
) -> CelabStatus {
    guard(|| {
        non_null(dataset, "dataset")?;
        let out = output(pixels, PIXELS, "pixels")?;
        let pair = (*dataset)
            .0
            .pairs()
            .get(index)
            .ok_or_else(|| invalid("index out of range"))?;
        out.copy_from_slice(rasterize(pair)?.pixels());
        Ok(())
    })
}

/// # Safety
/// `dataset` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn celab_dataset_free(dataset: *mut CelabDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Loads a network checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn celab_network_load(path: *const c_char, out: *mut *mut CelabNetwork) -> CelabStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let bytes = std::fs::read(path).map_err(|e| Failure(CelabStatus::Io, format!("{}: {e}", path.display())))?;
        *out = Box::into_raw(Box::new(CelabNetwork(load_checkpoint(&bytes)?.params)));
        Ok(())
    })
}

/// Number of output classes, or 0 for a NULL handle.
///
/// # Safety
/// `network` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn celab_network_classes(network: *const CelabNetwork) -> usize {
    network.as_ref().map_or(0, |n| n.0.classes())
}

/// Writes the 128-d hidden representation of each of `count` images
/// (784 doubles each) into `embeddings` (count * 128 doubles).
///
/// # Safety
/// `network` must be a live handle; the buffers must have the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn celab_network_embed(
    network: *const CelabNetwork,
    images: *const f64,
    count: usize,
    embeddings: *mut f64,
) -> CelabStatus {
    guard(|| {
        non_null(network, "network")?;
        let images = input(images, count * PIXELS, "images")?;
        let out = output(embeddings, count * HIDDEN, "embeddings")?;
        let refs: Vec<&[f64]> = images.chunks_exact(PIXELS).collect();
        for (dst, src) in out
            .chunks_exact_mut(HIDDEN)
            .zip(hidden_activations(&(*network).0, &refs)?)
        {
            dst.copy_from_slice(&src);
        }
        Ok(())
    })
}

/// Writes the predicted class index of each image into `classes`.
///
/// # Safety
/// `network` must be a live handle; the buffers must have the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn celab_network_predict(
    network: *const CelabNetwork,
    images: *const f64,
    count: usize,
    classes: *mut usize,
) -> CelabStatus {
    guard(|| {
        non_null(network, "network")?;
        let images = input(images, count * PIXELS, "images")?;
        let out = output(classes, count, "classes")?;
        let refs: Vec<&[f64]> = images.chunks_exact(PIXELS).collect();
        out.copy_from_slice(&predict(&(*network).0, &refs)?);
        Ok(())
    })
}

/// # Safety
/// `network` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn celab_network_free(network: *mut CelabNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}

/// k-nearest-neighbor vote over `n` labeled support vectors of length `dim`.
/// Labels and the result use 1 (A causes B), -1 (B causes A) and 0 (none).
///
/// # Safety
/// `query` holds `dim` doubles, `support` `n * dim`, `labels` `n`; `out` is one byte.
#[no_mangle]
pub unsafe extern "C" fn celab_knn_classify(
    query: *const f64,
    dim: usize,
    support: *const f64,
    labels: *const i8,
    n: usize,
    k: usize,
    out: *mut i8,
) -> CelabStatus {
    guard(|| {
        non_null(out, "out")?;
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let q = input(query, dim, "query")?;
        let s = input(support, n * dim, "support")?;
        let l = input(labels, n, "labels")?;
        let support = rows(s, n, dim)
            .into_iter()
            .zip(l)
            .enumerate()
            .map(|(i, (vector, &v))| {
                let label = Direction::from_value(v.into()).ok_or_else(|| invalid("label must be 1, -1 or 0"))?;
                Ok(Embedding {
                    pair_id: i as u64,
                    label: Some(label),
                    source: Source::CauseEffect,
                    vector,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        *out = knn_classify(q, &support, k)?.value();
        Ok(())
    })
}

/// Exact t-SNE of `n` points of length `dim` into `coords` (n * 2 doubles).
/// `final_kl` may be NULL.
///
/// # Safety
/// `x` holds `n * dim` doubles and `coords` `n * 2`.
#[no_mangle]
pub unsafe extern "C" fn celab_tsne(
    x: *const f64,
    n: usize,
    dim: usize,
    perplexity: f64,
    iterations: usize,
    seed: u64,
    coords: *mut f64,
    final_kl: *mut f64,
) -> CelabStatus {
    guard(|| {
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let x = rows(input(x, n * dim, "x")?, n, dim);
        let out = output(coords, n * 2, "coords")?;
        let config = TsneConfig {
            perplexity,
            iterations,
            seed,
            ..TsneConfig::default()
        };
        let result = tsne_embed(&x, &config)?;
        for (dst, c) in out.chunks_exact_mut(2).zip(&result.coords) {
            dst.copy_from_slice(c);
        }
        if !final_kl.is_null() {
            *final_kl = result.final_kl();
        }
        Ok(())
    })
}

/// Pearson correlation of two length-`n` vectors with its two-sided t-test p-value.
///
/// # Safety
/// `a` and `b` hold `n` doubles; `r` and `p_value` are valid for one write.
#[no_mangle]
pub unsafe extern "C" fn celab_pearson(
    a: *const f64,
    b: *const f64,
    n: usize,
    r: *mut f64,
    p_value: *mut f64,
) -> CelabStatus {
    guard(|| {
        non_null(r, "r")?;
        non_null(p_value, "p_value")?;
        let report = pearson(input(a, n, "a")?, input(b, n, "b")?)?;
        *r = report.r;
        *p_value = report.p_value;
        Ok(())
    })
}
