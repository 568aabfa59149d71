//! C ABI over the recommender: load a trained checkpoint with its graphs and
//! ask for top-n items per user, plus the metric helpers and the command line.
//!
//! Every function returns an [`LlmrgStatus`]. On failure the message is kept
//! per thread and can be read with [`llmrg_last_error`]. Panics never cross
//! the boundary; they surface as [`LlmrgStatus::Panic`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use llmrg::eval::{hr_at_n, ndcg_at_n};
use llmrg::ingest::Dataset;
use llmrg::recommend::{build_examples, load_checkpoint, DataSources, Example, Model};
use llmrg::{pipeline, Error};

/// Result codes shared by every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlmrgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Checkpoint = 6,
    Backend = 7,
    Training = 8,
    NotFound = 9,
    Panic = 10,
}

impl From<&Error> for LlmrgStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => LlmrgStatus::Io,
            Error::Malformed { .. }
            | Error::EmptyLabel(_)
            | Error::MissingField { .. }
            | Error::NoChains { .. }
            | Error::Json(_) => LlmrgStatus::Parse,
            Error::Invalid(_) => LlmrgStatus::InvalidArgument,
            Error::BackendRejected { .. } | Error::BackendExhausted { .. } | Error::BackendConfig(_) => {
                LlmrgStatus::Backend
            }
            Error::Diverged { .. } => LlmrgStatus::Training,
            Error::Checkpoint(_) => LlmrgStatus::Checkpoint,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(LlmrgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(LlmrgStatus::from(&e), e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure and converts panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LlmrgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LlmrgStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            LlmrgStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(LlmrgStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to a nul-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(LlmrgStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// As for [`str_arg`], but null means "not given".
unsafe fn opt_path(p: *const c_char, what: &str) -> Result<Option<PathBuf>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(|s| Some(PathBuf::from(s)))
    }
}

/// A trained model together with the test view of every user it can score.
pub struct LlmrgRecommender {
    model: Model,
    examples: Vec<Example>,
    users: HashMap<String, usize>,
    item_ids: Vec<CString>,
}

impl LlmrgRecommender {
    fn open(checkpoint: &Path, dataset: Option<PathBuf>, graphs: Option<PathBuf>) -> Result<Self, Failure> {
        let ckpt = load_checkpoint(checkpoint)?;
        let saved = ckpt.sources.clone();
        let graphs = graphs.or_else(|| saved.as_ref().map(|s| s.graphs.clone()));
        let Some(graphs) = graphs else {
            return Err(Failure(
                LlmrgStatus::InvalidArgument,
                "the checkpoint names no graph directory; pass one".into(),
            ));
        };
        let dataset = match dataset {
            Some(d) => d,
            None => match &saved {
                Some(s) => s.dataset.clone(),
                None => pipeline::load_summary(&graphs)?.dataset.ok_or_else(|| {
                    Failure(LlmrgStatus::InvalidArgument, "no dataset directory is known; pass one".into())
                })?,
            },
        };
        let sources = DataSources {
            dataset,
            split: graphs.clone(),
            graphs,
        };
        let ds = Dataset::load(&sources.dataset)?;
        if ckpt.model.config.n_items != ds.catalog.len() {
            return Err(Failure(
                LlmrgStatus::InvalidArgument,
                format!(
                    "model was trained on {} items but the catalog has {}",
                    ckpt.model.config.n_items,
                    ds.catalog.len()
                ),
            ));
        }
        let split = pipeline::load_split(&sources.split)?;
        let g = pipeline::load_graphs(&sources.graphs)?;
        let set = build_examples(&split, &g, &ds.catalog, ckpt.model.config.buckets)?;
        let users = set.test_users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        let item_ids = ds
            .catalog
            .items()
            .iter()
            .map(|it| CString::new(it.id.to_string().replace('\0', " ")).expect("nul bytes replaced"))
            .collect();
        Ok(LlmrgRecommender {
            model: ckpt.model,
            examples: set.test,
            users,
            item_ids,
        })
    }
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn llmrg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn llmrg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Hit rate and NDCG at `n` for a 1-based `rank`.
///
/// # Safety
/// `hr` and `ndcg` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn llmrg_metrics_at(rank: usize, n: usize, hr: *mut f64, ndcg: *mut f64) -> LlmrgStatus {
    guard(|| {
        if hr.is_null() || ndcg.is_null() {
            return Err(null("output pointer"));
        }
        if rank == 0 {
            return Err(Failure(LlmrgStatus::InvalidArgument, "ranks are 1-based".into()));
        }
        *hr = hr_at_n(rank, n);
        *ndcg = ndcg_at_n(rank, n);
        Ok(())
    })
}

/// Loads a checkpoint and the graphs it was trained on. `dataset_dir` and
/// `graphs_dir` may be null to use the locations recorded at training time.
/// On success `*out` owns a handle to release with [`llmrg_recommender_free`].
///
/// # Safety
/// String arguments must be null or nul-terminated; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn llmrg_recommender_open(
    checkpoint: *const c_char,
    dataset_dir: *const c_char,
    graphs_dir: *const c_char,
    out: *mut *mut LlmrgRecommender,
) -> LlmrgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let checkpoint = str_arg(checkpoint, "checkpoint")?;
        let dataset = opt_path(dataset_dir, "dataset_dir")?;
        let graphs = opt_path(graphs_dir, "graphs_dir")?;
        let rec = LlmrgRecommender::open(Path::new(checkpoint), dataset, graphs)?;
        *out = Box::into_raw(Box::new(rec));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `rec` must be null or a handle from [`llmrg_recommender_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn llmrg_recommender_free(rec: *mut LlmrgRecommender) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// Catalog size and number of users with a test view.
///
/// # Safety
/// `rec` must be a live handle; the outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn llmrg_recommender_size(
    rec: *const LlmrgRecommender,
    n_items: *mut usize,
    n_users: *mut usize,
) -> LlmrgStatus {
    guard(|| {
        let rec = rec.as_ref().ok_or_else(|| null("recommender"))?;
        if n_items.is_null() || n_users.is_null() {
            return Err(null("output pointer"));
        }
        *n_items = rec.item_ids.len();
        *n_users = rec.examples.len();
        Ok(())
    })
}

/// Item id at a catalog position. The string is owned by the handle.
///
/// # Safety
/// `rec` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn llmrg_recommender_item_id(
    rec: *const LlmrgRecommender,
    position: usize,
    out: *mut *const c_char,
) -> LlmrgStatus {
    guard(|| {
        let rec = rec.as_ref().ok_or_else(|| null("recommender"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let id = rec.item_ids.get(position).ok_or_else(|| {
            Failure(
                LlmrgStatus::InvalidArgument,
                format!("position {position} outside a catalog of {}", rec.item_ids.len()),
            )
        })?;
        *out = id.as_ptr();
        Ok(())
    })
}

/// Writes the user's top `n` catalog positions and their scores, best first
/// with ties broken by position. Both buffers must hold `n` entries; `written`
/// receives min(n, catalog size).
///
/// # Safety
/// `rec` must be a live handle, `user` nul-terminated, the buffers valid for
/// `n` writes and `written` valid for one.
#[no_mangle]
pub unsafe extern "C" fn llmrg_recommender_top_n(
    rec: *const LlmrgRecommender,
    user: *const c_char,
    n: usize,
    positions: *mut usize,
    scores: *mut f64,
    written: *mut usize,
) -> LlmrgStatus {
    guard(|| {
        let rec = rec.as_ref().ok_or_else(|| null("recommender"))?;
        let user = str_arg(user, "user")?;
        if positions.is_null() || scores.is_null() || written.is_null() {
            return Err(null("output pointer"));
        }
        let &i = rec
            .users
            .get(user)
            .ok_or_else(|| Failure(LlmrgStatus::NotFound, format!("no graphs or split entry for user {user:?}")))?;
        let ex = &rec.examples[i];
        let all = rec.model.scores(ex);
        let top = rec.model.predict_top_n(ex, n);
        for (k, &p) in top.iter().enumerate() {
            *positions.add(k) = p;
            *scores.add(k) = all[p];
        }
        *written = top.len();
        Ok(())
    })
}

/// Runs the command line with `argc` arguments (including the program name)
/// and returns its exit code: 0 success, 1 usage error, 2 runtime error.
/// Output goes to the process's stdout and stderr.
///
/// # Safety
/// `argv` must hold `argc` nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn llmrg_cli_main(argc: c_int, argv: *const *const c_char) -> c_int {
    let args = catch_unwind(AssertUnwindSafe(|| {
        if argv.is_null() || argc < 0 {
            return None;
        }
        (0..argc as usize)
            .map(|i| {
                let p = *argv.add(i);
                (!p.is_null()).then(|| CStr::from_ptr(p).to_string_lossy().into_owned())
            })
            .collect::<Option<Vec<String>>>()
    }));
    match args {
        Ok(Some(args)) => catch_unwind(|| llmrg::cli::run(args)).unwrap_or(2),
        _ => 1,
    }
}
