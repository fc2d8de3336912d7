//! C ABI for fewshot-inspect.
//!
//! Conventions:
//! - Every fallible function returns an `FsiStatus`; on failure a message is
//!   available from `fsi_last_error` on the same thread.
//! - Objects are opaque handles created by `*_load`/`*_parse`/`fsi_select`
//!   and released with the matching `*_free`. Passing NULL to a free function
//!   is a no-op.
//! - Strings returned through `char **out` are owned by the caller and must
//!   be released with `fsi_string_free`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::OnceLock;

use fewshot_inspect::corpus::{ground_truth_answers, load_dataset, Answer, Corpus, DatasetKind};
use fewshot_inspect::embedding::{load_store, EmbeddingStore};
use fewshot_inspect::metrics::{self, ConfusionCounts, MetricValue};
use fewshot_inspect::prompting::build_question;
use fewshot_inspect::runner::{run, RunConfig};
use fewshot_inspect::selector::{select, ExamplePool, PoolCandidate, SelectionResult, ShotPlan, Strategy};
use fewshot_inspect::verdict::{normalize_boxes, parse, Classification, InspectionVerdict};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    /// Dataset, embedding or config file could not be read or is invalid.
    Io = 4,
    /// The value is undefined (e.g. MCC with an empty marginal).
    NotAvailable = 5,
    Selection = 6,
    OutOfRange = 7,
    /// A panic was caught at the boundary.
    Internal = 99,
}

/// Parsed verdict class.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsiClassification {
    NonDefective = 0,
    Defective = 1,
    FormatError = 2,
}

pub struct FsiCorpus {
    corpus: Corpus,
    answers: OnceLock<Result<BTreeMap<String, Answer>, String>>,
}

pub struct FsiStore {
    store: EmbeddingStore,
}

pub struct FsiVerdict {
    verdict: InspectionVerdict,
}

pub struct FsiSelection {
    result: SelectionResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

struct Fail(FsiStatus, String);

impl Fail {
    fn new(status: FsiStatus, msg: impl ToString) -> Self {
        Fail(status, msg.to_string())
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FsiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FsiStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FsiStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(FsiStatus::NullPointer, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::new(FsiStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail::new(FsiStatus::NullPointer, format!("{name} is NULL")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail::new(FsiStatus::NullPointer, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

fn c_string(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

fn put_metric(v: MetricValue, out: *mut f64) -> Result<(), Fail> {
    match v {
        MetricValue::Defined(x) => {
            unsafe { *out = x };
            Ok(())
        }
        MetricValue::NotAvailable => Err(Fail::new(FsiStatus::NotAvailable, "N/A")),
    }
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn fsi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fsi_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The inspection question for `product`.
///
/// # Safety
/// `product` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fsi_build_question(product: *const c_char, out: *mut *mut c_char) -> FsiStatus {
    guard(|| {
        let product = str_arg(product, "product")?;
        out_arg(out, "out")?;
        let q = build_question(product).map_err(|e| Fail::new(FsiStatus::InvalidArgument, e))?;
        *out = c_string(&q);
        Ok(())
    })
}

/// Parse model output and normalize its boxes for a `width` x `height` image.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fsi_verdict_parse(
    text: *const c_char,
    width: u32,
    height: u32,
    out: *mut *mut FsiVerdict,
) -> FsiStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        out_arg(out, "out")?;
        let verdict = normalize_boxes(&parse(text), width, height);
        *out = Box::into_raw(Box::new(FsiVerdict { verdict }));
        Ok(())
    })
}

/// # Safety
/// `v` must be a live verdict handle.
#[no_mangle]
pub unsafe extern "C" fn fsi_verdict_classification(v: *const FsiVerdict) -> FsiClassification {
    match v.as_ref().map(|v| v.verdict.classification) {
        Some(Classification::NonDefective) => FsiClassification::NonDefective,
        Some(Classification::Defective) => FsiClassification::Defective,
        Some(Classification::FormatError) | None => FsiClassification::FormatError,
    }
}

/// # Safety
/// `v` must be a live verdict handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn fsi_verdict_box_count(v: *const FsiVerdict) -> usize {
    v.as_ref().map_or(0, |v| v.verdict.boxes.len())
}

/// Box `index` as `[x1, y1, x2, y2]`, normalized to [0, 1].
///
/// # Safety
/// `v` must be a live verdict handle and `out` point to 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn fsi_verdict_box(v: *const FsiVerdict, index: usize, out: *mut f64) -> FsiStatus {
    guard(|| {
        let v = ref_arg(v, "verdict")?;
        out_arg(out, "out")?;
        let b = v
            .verdict
            .boxes
            .get(index)
            .ok_or_else(|| Fail::new(FsiStatus::OutOfRange, format!("box {index} of {}", v.verdict.boxes.len())))?;
        ptr::copy_nonoverlapping(b.0.as_ptr(), out, 4);
        Ok(())
    })
}

/// Anomaly mode text; `NOT_AVAILABLE` when the answer has none.
///
/// # Safety
/// `v` must be a live verdict handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fsi_verdict_mode(v: *const FsiVerdict, out: *mut *mut c_char) -> FsiStatus {
    guard(|| {
        let v = ref_arg(v, "verdict")?;
        out_arg(out, "out")?;
        let mode = v
            .verdict
            .mode
            .as_deref()
            .ok_or_else(|| Fail::new(FsiStatus::NotAvailable, "verdict has no mode"))?;
        *out = c_string(mode);
        Ok(())
    })
}

/// # Safety
/// `v` must come from `fsi_verdict_parse` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fsi_verdict_free(v: *mut FsiVerdict) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// F1-score; `NOT_AVAILABLE` when undefined.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fsi_f1(tp: u64, fp: u64, tn: u64, fn_: u64, out: *mut f64) -> FsiStatus {
    guard(|| {
        out_arg(out, "out")?;
        put_metric(metrics::f1(&ConfusionCounts::new(tp, fp, tn, fn_)), out)
    })
}

/// Matthews correlation coefficient; `NOT_AVAILABLE` when any marginal is 0.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fsi_mcc(tp: u64, fp: u64, tn: u64, fn_: u64, out: *mut f64) -> FsiStatus {
    guard(|| {
        out_arg(out, "out")?;
        put_metric(metrics::mcc(&ConfusionCounts::new(tp, fp, tn, fn_)), out)
    })
}

/// Rank AUROC of `scores` against binary `labels` (non-zero is positive).
///
/// # Safety
/// `scores` and `labels` must point to `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fsi_auroc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> FsiStatus {
    guard(|| {
        out_arg(out, "out")?;
        if n > 0 && (scores.is_null() || labels.is_null()) {
            return Err(Fail::new(FsiStatus::NullPointer, "scores or labels is NULL"));
        }
        let (s, l) = if n == 0 {
            (&[][..], Vec::new())
        } else {
            let l = std::slice::from_raw_parts(labels, n).iter().map(|&b| b != 0).collect();
            (std::slice::from_raw_parts(scores, n), l)
        };
        let v = metrics::auroc(s, &l).map_err(|e| Fail::new(FsiStatus::InvalidArgument, e))?;
        put_metric(v, out)
    })
}

/// Load a dataset (`kind` is `mvtec`, `visa` or `custom`).
///
/// # Safety
/// `kind` and `root` must be NUL-terminated strings and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fsi_corpus_load(kind: *const c_char, root: *const c_char, out: *mut *mut FsiCorpus) -> FsiStatus {
    guard(|| {
        let kind: DatasetKind = str_arg(kind, "kind")?
            .parse()
            .map_err(|e: String| Fail::new(FsiStatus::InvalidArgument, e))?;
        let root = str_arg(root, "root")?;
        out_arg(out, "out")?;
        let records = load_dataset(kind, Path::new(root)).map_err(|e| Fail::new(FsiStatus::Io, e))?;
        let corpus = Corpus::new(records).map_err(|e| Fail::new(FsiStatus::Io, e))?;
        *out = Box::into_raw(Box::new(FsiCorpus {
            corpus,
            answers: OnceLock::new(),
        }));
        Ok(())
    })
}

/// # Safety
/// `c` must be a live corpus handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn fsi_corpus_len(c: *const FsiCorpus) -> usize {
    c.as_ref().map_or(0, |c| c.corpus.len())
}

/// # Safety
/// `c` must come from `fsi_corpus_load` and not have been freed. Stores
/// loaded against it must be freed first.
#[no_mangle]
pub unsafe extern "C" fn fsi_corpus_free(c: *mut FsiCorpus) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Load a sidecar embedding file and check it against `corpus`.
///
/// # Safety
/// `corpus` must be live, `path` NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fsi_store_load(
    corpus: *const FsiCorpus,
    path: *const c_char,
    out: *mut *mut FsiStore,
) -> FsiStatus {
    guard(|| {
        let corpus = ref_arg(corpus, "corpus")?;
        let path = str_arg(path, "path")?;
        out_arg(out, "out")?;
        let store = load_store(Path::new(path), &corpus.corpus).map_err(|e| Fail::new(FsiStatus::Io, e))?;
        *out = Box::into_raw(Box::new(FsiStore { store }));
        Ok(())
    })
}

/// # Safety
/// `s` must come from `fsi_store_load` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fsi_store_free(s: *mut FsiStore) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, Fail> {
    match s.to_ascii_lowercase().as_str() {
        "ours" => Ok(Strategy::Ours),
        "rices" => Ok(Strategy::Rices),
        "random" => Ok(Strategy::Random),
        other => Err(Fail::new(
            FsiStatus::InvalidArgument,
            format!("unknown strategy {other:?} (ours, rices, random)"),
        )),
    }
}

/// Choose examples for `query_id` from the other annotated images of its
/// category. `store` may be NULL for the `random` strategy.
///
/// # Safety
/// Handles must be live (or `store` NULL), strings NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fsi_select(
    corpus: *const FsiCorpus,
    store: *const FsiStore,
    strategy: *const c_char,
    query_id: *const c_char,
    shot_plan: *const c_char,
    seed: u64,
    out: *mut *mut FsiSelection,
) -> FsiStatus {
    guard(|| {
        let corpus = ref_arg(corpus, "corpus")?;
        let store = store.as_ref().map(|s| &s.store);
        let strategy = parse_strategy(str_arg(strategy, "strategy")?)?;
        let query_id = str_arg(query_id, "query_id")?;
        let plan: ShotPlan = str_arg(shot_plan, "shot_plan")?
            .parse()
            .map_err(|e| Fail::new(FsiStatus::InvalidArgument, e))?;
        out_arg(out, "out")?;

        let query = corpus
            .corpus
            .get(query_id)
            .ok_or_else(|| Fail::new(FsiStatus::InvalidArgument, format!("{query_id} is not in the corpus")))?;
        let answers = corpus
            .answers
            .get_or_init(|| ground_truth_answers(corpus.corpus.records()).map(|(a, _)| a).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Fail::new(FsiStatus::Io, e))?;
        let candidates = answers.iter().filter_map(|(id, answer)| {
            let rec = corpus.corpus.get(id)?;
            let usable = rec.category == query.category && store.is_none_or(|s| s.contains(id));
            usable.then(|| PoolCandidate {
                image_id: id.clone(),
                label: rec.label,
                answer: answer.clone(),
            })
        });
        let pool = ExamplePool::new(query.category.clone(), candidates, query_id);
        let result = select(strategy, query_id, &pool, store, &plan, seed)
            .map_err(|e| Fail::new(FsiStatus::Selection, e))?;
        *out = Box::into_raw(Box::new(FsiSelection { result }));
        Ok(())
    })
}

/// # Safety
/// `s` must be a live selection handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn fsi_selection_len(s: *const FsiSelection) -> usize {
    s.as_ref().map_or(0, |s| s.result.chosen.len())
}

/// Image id of example `index`, in slot order.
///
/// # Safety
/// `s` must be a live selection handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fsi_selection_id(s: *const FsiSelection, index: usize, out: *mut *mut c_char) -> FsiStatus {
    guard(|| {
        let s = ref_arg(s, "selection")?;
        out_arg(out, "out")?;
        let ex = s
            .result
            .chosen
            .get(index)
            .ok_or_else(|| Fail::new(FsiStatus::OutOfRange, format!("example {index} of {}", s.result.chosen.len())))?;
        *out = c_string(&ex.image_id);
        Ok(())
    })
}

/// Selection score of example `index`: distance for `ours`, similarity for
/// `rices`, `NOT_AVAILABLE` for `random`.
///
/// # Safety
/// `s` must be a live selection handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fsi_selection_score(s: *const FsiSelection, index: usize, out: *mut f64) -> FsiStatus {
    guard(|| {
        let s = ref_arg(s, "selection")?;
        out_arg(out, "out")?;
        if index >= s.result.chosen.len() {
            return Err(Fail::new(FsiStatus::OutOfRange, format!("example {index} of {}", s.result.chosen.len())));
        }
        let score = s
            .result
            .scores
            .get(index)
            .ok_or_else(|| Fail::new(FsiStatus::NotAvailable, "strategy has no scores"))?;
        *out = *score;
        Ok(())
    })
}

/// # Safety
/// `s` must come from `fsi_select` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fsi_selection_free(s: *mut FsiSelection) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Run an experiment from a TOML config file and return its report as JSON.
///
/// # Safety
/// `config_path` must be NUL-terminated and `report_json` valid.
#[no_mangle]
pub unsafe extern "C" fn fsi_run(config_path: *const c_char, report_json: *mut *mut c_char) -> FsiStatus {
    guard(|| {
        let path = str_arg(config_path, "config_path")?;
        out_arg(report_json, "report_json")?;
        let cfg = RunConfig::load(Path::new(path)).map_err(|e| Fail::new(FsiStatus::InvalidArgument, e))?;
        let outcome = run(&cfg).map_err(|e| Fail::new(FsiStatus::Io, e))?;
        let json = serde_json::to_string(&outcome.report).map_err(|e| Fail::new(FsiStatus::Internal, e))?;
        *report_json = c_string(&json);
        Ok(())
    })
}
