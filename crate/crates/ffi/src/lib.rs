//! C ABI over the `ma4div` library: load or generate datasets, load trained
//! rankers, rank a query and score a ranking.
//!
//! Every fallible function returns a [`Ma4divStatus`]; on failure the message
//! is kept per thread and readable through [`ma4div_last_error`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ma4div::baselines::{mmr_rank, oracle_greedy_rank, xquad_rank, GreedyConfig};
use ma4div::datamodel::{self, Dataset, GeneratorConfig, QueryDocSet};
use ma4div::diffcore::Checkpoint;
use ma4div::metrics::{alpha_ndcg, err_ia, s_recall, MetricConfig, RankedList};
use ma4div::ranker::greedy_rankings;
use ma4div::trainer::reinforce::SequentialPolicy;
use ma4div::trainer::QmixModel;
use ma4div::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ma4divStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Checkpoint = 5,
    NonFinite = 6,
    /// The output buffer is shorter than the number of documents.
    BufferTooSmall = 7,
    Panic = 8,
}

/// Greedy reranking policies that need no trained model.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ma4divBaseline {
    Mmr = 0,
    Xquad = 1,
    Oracle = 2,
}

/// A loaded or generated dataset.
pub struct Ma4divDataset {
    inner: Dataset,
}

enum Ranker {
    Qmix(Box<QmixModel>),
    Sequential(SequentialPolicy),
}

/// A trained ranker restored from a checkpoint file.
pub struct Ma4divModel {
    inner: Ranker,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> Ma4divStatus {
    match err {
        Error::Io(_) => Ma4divStatus::Io,
        Error::Parse { .. } | Error::Json(_) => Ma4divStatus::Parse,
        Error::Checkpoint(_) => Ma4divStatus::Checkpoint,
        Error::NonFinite(_) | Error::Diverged { .. } => Ma4divStatus::NonFinite,
        _ => Ma4divStatus::InvalidArgument,
    }
}

struct Failure(Ma4divStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: Ma4divStatus, msg: &str) -> Result<T, Failure> {
    Err(Failure(status, msg.to_string()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Ma4divStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            Ma4divStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            Ma4divStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return fail(Ma4divStatus::NullPointer, "path is null");
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(Ma4divStatus::InvalidArgument, "path is not valid UTF-8"),
    }
}

unsafe fn query_arg<'a>(dataset: *const Ma4divDataset, index: usize) -> Result<&'a QueryDocSet, Failure> {
    let Some(ds) = dataset.as_ref() else {
        return fail(Ma4divStatus::NullPointer, "dataset is null");
    };
    match ds.inner.items().get(index) {
        Some(q) => Ok(q),
        None => fail(
            Ma4divStatus::InvalidArgument,
            &format!("query index {index} out of range ({} queries)", ds.inner.len()),
        ),
    }
}

unsafe fn write_order(list: &RankedList, out: *mut usize, capacity: usize) -> Result<(), Failure> {
    if out.is_null() {
        return fail(Ma4divStatus::NullPointer, "output buffer is null");
    }
    if capacity < list.len() {
        return fail(
            Ma4divStatus::BufferTooSmall,
            &format!("output buffer holds {capacity}, ranking has {}", list.len()),
        );
    }
    ptr::copy_nonoverlapping(list.order().as_ptr(), out, list.len());
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ma4div_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a JSON-lines dataset.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ma4div_dataset_load(path: *const c_char, out: *mut *mut Ma4divDataset) -> Ma4divStatus {
    guard(|| {
        if out.is_null() {
            return fail(Ma4divStatus::NullPointer, "out is null");
        }
        let inner = datamodel::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(Ma4divDataset { inner }));
        Ok(())
    })
}

/// Builds a synthetic dataset. A coverage rate or signal strength outside
/// its valid range is rejected.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ma4div_dataset_generate(
    seed: u64,
    queries: usize,
    docs: usize,
    subtopics: usize,
    embed_dim: usize,
    coverage_rate: f64,
    signal_strength: f64,
    out: *mut *mut Ma4divDataset,
) -> Ma4divStatus {
    guard(|| {
        if out.is_null() {
            return fail(Ma4divStatus::NullPointer, "out is null");
        }
        let config = GeneratorConfig {
            seed,
            queries,
            docs,
            subtopics,
            embed_dim,
            coverage_rate,
            signal_strength,
        };
        config.validate()?;
        let inner = datamodel::generate(&config)?;
        *out = Box::into_raw(Box::new(Ma4divDataset { inner }));
        Ok(())
    })
}

/// Writes the dataset as JSON lines.
///
/// # Safety
/// `dataset` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ma4div_dataset_save(dataset: *const Ma4divDataset, path: *const c_char) -> Ma4divStatus {
    guard(|| {
        let Some(ds) = dataset.as_ref() else {
            return fail(Ma4divStatus::NullPointer, "dataset is null");
        };
        datamodel::save(&ds.inner, path_arg(path)?)?;
        Ok(())
    })
}

/// Number of queries; 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ma4div_dataset_len(dataset: *const Ma4divDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// Candidate documents of one query.
///
/// # Safety
/// `dataset` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn ma4div_dataset_num_docs(
    dataset: *const Ma4divDataset,
    query: usize,
    out: *mut usize,
) -> Ma4divStatus {
    guard(|| {
        let q = query_arg(dataset, query)?;
        if out.is_null() {
            return fail(Ma4divStatus::NullPointer, "out is null");
        }
        *out = q.num_docs();
        Ok(())
    })
}

/// # Safety
/// `dataset` must be NULL or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ma4div_dataset_free(dataset: *mut Ma4divDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Restores a trained ranker (multi-agent or sequential) from a checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ma4div_model_load(path: *const c_char, out: *mut *mut Ma4divModel) -> Ma4divStatus {
    guard(|| {
        if out.is_null() {
            return fail(Ma4divStatus::NullPointer, "out is null");
        }
        let ckpt = Checkpoint::load(path_arg(path)?)?;
        let inner = match SequentialPolicy::from_checkpoint(&ckpt) {
            Ok(p) => Ranker::Sequential(p),
            Err(_) => Ranker::Qmix(Box::new(QmixModel::from_checkpoint(&ckpt)?)),
        };
        *out = Box::into_raw(Box::new(Ma4divModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ma4div_model_free(model: *mut Ma4divModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Greedy ranking of one query: writes document indices, best first, into
/// `out[0..n]`.
///
/// # Safety
/// Handles must come from this library; `out` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn ma4div_model_rank(
    model: *const Ma4divModel,
    dataset: *const Ma4divDataset,
    query: usize,
    out: *mut usize,
    capacity: usize,
) -> Ma4divStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(Ma4divStatus::NullPointer, "model is null");
        };
        let q = query_arg(dataset, query)?;
        let list = match &m.inner {
            Ranker::Qmix(net) => greedy_rankings(&net.agent, std::slice::from_ref(q))?.remove(0),
            Ranker::Sequential(p) => p.greedy_rank(q)?,
        };
        write_order(&list, out, capacity)
    })
}

/// Ranks one query with a non-learned policy. `lambda` is ignored by the
/// oracle; `alpha` is used only by the oracle.
///
/// # Safety
/// `dataset` must come from this library; `out` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn ma4div_baseline_rank(
    dataset: *const Ma4divDataset,
    query: usize,
    method: Ma4divBaseline,
    lambda: f64,
    alpha: f64,
    out: *mut usize,
    capacity: usize,
) -> Ma4divStatus {
    guard(|| {
        let q = query_arg(dataset, query)?;
        let list = match method {
            Ma4divBaseline::Mmr => mmr_rank(q, &GreedyConfig::new(lambda)?),
            Ma4divBaseline::Xquad => xquad_rank(q, &GreedyConfig::new(lambda)?),
            Ma4divBaseline::Oracle => oracle_greedy_rank(q, &MetricConfig::new(alpha, q.num_docs())?),
        };
        write_order(&list, out, capacity)
    })
}

/// Diversity scores of a ranking of one query.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Ma4divScores {
    pub alpha_ndcg: f64,
    pub err_ia: f64,
    pub s_recall: f64,
}

/// Scores `order[0..len]`, a permutation of the query's documents, at cutoff
/// `k` (at most the document count).
///
/// # Safety
/// `dataset` must come from this library, `order` must hold `len` values and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma4div_score_ranking(
    dataset: *const Ma4divDataset,
    query: usize,
    order: *const usize,
    len: usize,
    alpha: f64,
    k: usize,
    out: *mut Ma4divScores,
) -> Ma4divStatus {
    guard(|| {
        let q = query_arg(dataset, query)?;
        if order.is_null() || out.is_null() {
            return fail(Ma4divStatus::NullPointer, "order or out is null");
        }
        let list = RankedList::new(std::slice::from_raw_parts(order, len).to_vec())?;
        if list.len() != q.num_docs() {
            return fail(
                Ma4divStatus::InvalidArgument,
                &format!("ranking has {} documents, query has {}", list.len(), q.num_docs()),
            );
        }
        let config = MetricConfig::new(alpha, k)?;
        let j = q.judgments();
        *out = Ma4divScores {
            alpha_ndcg: alpha_ndcg(&list, j, &config)?,
            err_ia: err_ia(&list, j, &config)?,
            s_recall: s_recall(&list, j, k)?,
        };
        Ok(())
    })
}
