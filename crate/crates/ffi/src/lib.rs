//! C ABI over the codecurate engine.
//!
//! Every function returns a [`CcStatus`]; on failure the message is available
//! from [`cc_last_error`] on the same thread. Stores and caches are opaque
//! handles released with their `_free` function.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashSet};
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use codecurate::curation::{consistency_filter, DropReason, FilterParams};
use codecurate::embedder::{store_hash, stub_embed, Side, Vector, VectorStore};
use codecurate::ranker::{metric_value, search, MetricSpec};
use codecurate::rerank::parse_and_repair;
use codecurate::sampler::{sample_indices, tau_at, CurriculumSchedule, RngKey};
use codecurate::simgraph::{compute_neighbors, NeighborParams, SimilarityCache};
use codecurate::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Backend = 5,
    Panic = 6,
}

/// Per-row outcome of [`cc_consistency_filter`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CcFilterReason {
    Kept = 0,
    RankFail = 1,
    ThresholdFail = 2,
    Both = 3,
}

/// Unit-normalized vectors with string ids.
pub struct CcVectorStore {
    inner: VectorStore,
}

/// Exact top-K′ neighbor lists of a text store against a code store.
pub struct CcSimilarityCache {
    inner: SimilarityCache,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => CcStatus::Io,
            Error::InvalidParameter(_) | Error::Usage(_) | Error::DimensionMismatch { .. } => {
                CcStatus::InvalidArgument
            }
            Error::Backend(_) | Error::SyntaxHook(_) | Error::EmbedInterrupted { .. } => {
                CcStatus::Backend
            }
            _ => CcStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: CcStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(CcStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn str_array(p: *const *const c_char, n: usize, what: &str) -> Result<Vec<String>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(fail(CcStatus::NullArgument, format!("{what} is null")));
    }
    std::slice::from_raw_parts(p, n)
        .iter()
        .map(|&s| str_arg(s, what).map(str::to_string))
        .collect()
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(CcStatus::NullArgument, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_slice<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(CcStatus::NullArgument, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(CcStatus::NullArgument, format!("{what} is null")))
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn cc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Unit-norm hashed character-trigram embedding of `text` into `out[dim]`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` must hold `dim` floats.
#[no_mangle]
pub unsafe extern "C" fn cc_stub_embed(text: *const c_char, dim: usize, out: *mut f32) -> CcStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let v = stub_embed(text, dim)?;
        out_slice(out, dim, "out")?.copy_from_slice(v.as_slice());
        Ok(())
    })
}

/// Curriculum temperature at `step` of a linear schedule over `total_steps`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_tau_at(
    step: usize,
    total_steps: usize,
    tau_start: f64,
    tau_end: f64,
    out: *mut f64,
) -> CcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = tau_at(
            step,
            &CurriculumSchedule {
                tau_start,
                tau_end,
                total_steps,
            },
        )?;
        Ok(())
    })
}

/// Builds a store from `n` row-major rows of width `dim`; rows are normalized.
///
/// # Safety
/// `ids` must hold `n` NUL-terminated strings, `rows` `n * dim` floats, and
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_store_from_rows(
    ids: *const *const c_char,
    rows: *const f32,
    n: usize,
    dim: usize,
    out: *mut *mut CcVectorStore,
) -> CcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if dim == 0 {
            return Err(fail(CcStatus::InvalidArgument, "dim must be at least 1"));
        }
        let ids = str_array(ids, n, "ids")?;
        let flat = slice_arg(rows, n * dim, "rows")?;
        let rows: Vec<Vec<f32>> = flat.chunks(dim).map(<[f32]>::to_vec).collect();
        let hash = store_hash("ffi", dim, Side::Code, &ids);
        let inner = VectorStore::from_rows(dim, Side::Code, ids, rows, hash)?;
        *out = Box::into_raw(Box::new(CcVectorStore { inner }));
        Ok(())
    })
}

/// Loads a store written by the `embed` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_store_load(
    path: *const c_char,
    out: *mut *mut CcVectorStore,
) -> CcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let inner = VectorStore::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(CcVectorStore { inner }));
        Ok(())
    })
}

/// # Safety
/// `store` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn cc_store_len(store: *const CcVectorStore) -> usize {
    store.as_ref().map_or(0, |s| s.inner.len())
}

/// # Safety
/// `store` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn cc_store_dim(store: *const CcVectorStore) -> usize {
    store.as_ref().map_or(0, |s| s.inner.dim())
}

/// # Safety
/// `store` must come from this library or be NULL; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn cc_store_free(store: *mut CcVectorStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Top-`k` rows of `store` by cosine to `query[dim]` (normalized here), best
/// first, ties by id. Writes row indices and scores and sets `*out_len`.
///
/// # Safety
/// `query` must hold `dim` floats; `out_indices` and `out_scores` must hold `k` entries.
#[no_mangle]
pub unsafe extern "C" fn cc_search(
    store: *const CcVectorStore,
    query: *const f32,
    dim: usize,
    k: usize,
    out_indices: *mut usize,
    out_scores: *mut f32,
    out_len: *mut usize,
) -> CcStatus {
    guard(|| {
        let store = &store
            .as_ref()
            .ok_or_else(|| fail(CcStatus::NullArgument, "store is null"))?
            .inner;
        let out_len = out_ref(out_len, "out_len")?;
        let q = Vector::normalized(slice_arg(query, dim, "query")?.to_vec())?;
        let ranked = search(store, "query", q.as_slice(), k)?;
        let idx = out_slice(out_indices, k, "out_indices")?;
        let scores = out_slice(out_scores, k, "out_scores")?;
        for (j, (id, s)) in ranked.entries.iter().enumerate() {
            idx[j] = store.index_of(id).expect("ranked ids come from the store");
            scores[j] = *s;
        }
        *out_len = ranked.entries.len();
        Ok(())
    })
}

/// Exact top-`k_prime` code neighbors of every text; text `i` pairs with the
/// code of the same id.
///
/// # Safety
/// Both stores must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_cache_compute(
    texts: *const CcVectorStore,
    codes: *const CcVectorStore,
    k_prime: usize,
    out: *mut *mut CcSimilarityCache,
) -> CcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let t = texts
            .as_ref()
            .ok_or_else(|| fail(CcStatus::NullArgument, "texts is null"))?;
        let c = codes
            .as_ref()
            .ok_or_else(|| fail(CcStatus::NullArgument, "codes is null"))?;
        let inner = compute_neighbors(&t.inner, &c.inner, &NeighborParams::new(k_prime, 64))?;
        *out = Box::into_raw(Box::new(CcSimilarityCache { inner }));
        Ok(())
    })
}

/// Loads a cache written by the `neighbors` command (`.bin` or JSONL).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cc_cache_load(
    path: *const c_char,
    out: *mut *mut CcSimilarityCache,
) -> CcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let inner = SimilarityCache::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(CcSimilarityCache { inner }));
        Ok(())
    })
}

/// # Safety
/// `cache` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cc_cache_save(
    cache: *const CcSimilarityCache,
    path: *const c_char,
) -> CcStatus {
    guard(|| {
        let cache = cache
            .as_ref()
            .ok_or_else(|| fail(CcStatus::NullArgument, "cache is null"))?;
        cache.inner.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `cache` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn cc_cache_len(cache: *const CcSimilarityCache) -> usize {
    cache.as_ref().map_or(0, |c| c.inner.len())
}

/// # Safety
/// `cache` must come from this library or be NULL; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn cc_cache_free(cache: *mut CcSimilarityCache) {
    if !cache.is_null() {
        drop(Box::from_raw(cache));
    }
}

/// Dual consistency filter over every cache row. Writes one reason and one
/// positive rank per row (cache order) and the number of kept rows.
///
/// # Safety
/// `out_reasons` and `out_ranks` must hold `cc_cache_len(cache)` entries.
#[no_mangle]
pub unsafe extern "C" fn cc_consistency_filter(
    cache: *const CcSimilarityCache,
    k: usize,
    delta: f32,
    out_reasons: *mut CcFilterReason,
    out_ranks: *mut usize,
    out_kept: *mut usize,
) -> CcStatus {
    guard(|| {
        let cache = &cache
            .as_ref()
            .ok_or_else(|| fail(CcStatus::NullArgument, "cache is null"))?
            .inner;
        let n = cache.len();
        let reasons = out_slice(out_reasons, n, "out_reasons")?;
        let ranks = out_slice(out_ranks, n, "out_ranks")?;
        let kept = out_ref(out_kept, "out_kept")?;
        let ids: HashSet<String> = cache.ids.iter().cloned().collect();
        let outcome = consistency_filter(cache, &ids, &FilterParams { k, delta })?;
        let index = cache.index();
        for p in &outcome.kept {
            let i = index[p.query_id.as_str()];
            reasons[i] = CcFilterReason::Kept;
            ranks[i] = p.rank;
        }
        for d in &outcome.dropped {
            let i = index[d.query_id.as_str()];
            reasons[i] = match d.reason {
                DropReason::RankFail => CcFilterReason::RankFail,
                DropReason::ThresholdFail => CcFilterReason::ThresholdFail,
                DropReason::Both => CcFilterReason::Both,
            };
            ranks[i] = d.rank;
        }
        *kept = outcome.kept.len();
        Ok(())
    })
}

/// Draws `m` distinct pool indices by sequential softmax at temperature
/// `tau`, keyed by (`seed`, `query_id`, `step`) exactly as the batch sampler.
///
/// # Safety
/// `scores` must hold `n` floats, `query_id` must be NUL-terminated and
/// `out_indices` must hold `m` entries.
#[no_mangle]
pub unsafe extern "C" fn cc_sample_negatives(
    scores: *const f32,
    n: usize,
    m: usize,
    tau: f64,
    seed: u64,
    query_id: *const c_char,
    step: u64,
    out_indices: *mut usize,
) -> CcStatus {
    guard(|| {
        let scores = slice_arg(scores, n, "scores")?;
        let query_id = str_arg(query_id, "query_id")?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(fail(CcStatus::InvalidArgument, "tau must be positive"));
        }
        if m > n {
            return Err(fail(
                CcStatus::InvalidArgument,
                format!("cannot draw {m} of {n}"),
            ));
        }
        let key = RngKey {
            seed,
            query_id,
            step,
        };
        let picked = sample_indices(scores, m, tau, &mut key.rng());
        out_slice(out_indices, m, "out_indices")?.copy_from_slice(&picked);
        Ok(())
    })
}

/// Parses a generated ranking such as `[2] > [1]` against the window's
/// identifiers and repairs it into a permutation written to `out[n]`.
///
/// # Safety
/// `raw` must be NUL-terminated; `window` and `out` must hold `n` entries.
#[no_mangle]
pub unsafe extern "C" fn cc_parse_and_repair(
    raw: *const c_char,
    window: *const u32,
    n: usize,
    out: *mut u32,
) -> CcStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        let window = slice_arg(window, n, "window")?;
        let order = parse_and_repair(raw, window);
        out_slice(out, n, "out")?.copy_from_slice(&order);
        Ok(())
    })
}

/// Metric such as `mrr@10`, `ndcg@10` or `recall@100` of one ranked list.
///
/// # Safety
/// `ranked` must hold `n` and `relevant` `r` NUL-terminated strings;
/// `metric` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cc_metric(
    ranked: *const *const c_char,
    n: usize,
    relevant: *const *const c_char,
    r: usize,
    metric: *const c_char,
    out: *mut f64,
) -> CcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let spec: MetricSpec = str_arg(metric, "metric")?.parse()?;
        let ranked = str_array(ranked, n, "ranked")?;
        let relevant: BTreeSet<String> = str_array(relevant, r, "relevant")?.into_iter().collect();
        let ids: Vec<&str> = ranked.iter().map(String::as_str).collect();
        *out = metric_value(&ids, &relevant, spec);
        Ok(())
    })
}
