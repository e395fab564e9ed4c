//! C ABI over `sdoh-core`.
//!
//! Every fallible function returns an [`SdohStatus`]; on failure a
//! message is kept per thread and can be fetched with
//! [`sdoh_last_error`]. Handles are opaque and owned by the caller, who
//! must release them with the matching `*_free` function. Strings
//! returned through out-parameters are allocated here and released with
//! [`sdoh_string_free`]. All offsets are counted in Unicode scalar values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sdoh_core::brat::{brat_to_events, events_to_brat, parse_brat, serialize_brat, RoleMap};
use sdoh_core::codec::{parse_response, render_events_as, Dialect};
use sdoh_core::pipeline::{compile_majority, post_process, ConsistencyConfig, PostProcessConfig, VoteLedger};
use sdoh_core::runner::{convert, Format};
use sdoh_core::scorer::{report_from_table, score_document, CountTable};
use sdoh_core::SdohEvent;

/// Result codes shared by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdohStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidArgument = 4,
    DataError = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdohDialect {
    Tuple = 0,
    Json = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdohFormat {
    Brat = 0,
    Json = 1,
    Tuple = 2,
}

/// Micro-averaged counts and scores.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SdohCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// An owned list of events.
pub struct SdohEvents {
    events: Vec<SdohEvent>,
}

/// Accumulates per-document counts.
pub struct SdohScorer {
    table: CountTable,
    documents: usize,
}

/// Collects sampled responses for one note and votes over them.
pub struct SdohVote {
    samples: Vec<Vec<SdohEvent>>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SdohStatus, String);

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SdohStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdohStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SdohStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SdohStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(SdohStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(SdohStatus::NullArgument, format!("{name} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(SdohStatus::NullArgument, format!("{name} is null")))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(SdohStatus::NullArgument, "output pointer is null".into()));
    }
    let c = CString::new(s).map_err(|_| Failure(SdohStatus::DataError, "output contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn put_events(out: *mut *mut SdohEvents, events: Vec<SdohEvent>) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(SdohStatus::NullArgument, "output pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(SdohEvents { events }));
    Ok(())
}

fn counts(c: sdoh_core::scorer::MatchCounts) -> SdohCounts {
    let prf = c.prf();
    SdohCounts { tp: c.tp, fp: c.fp, fn_: c.fn_, precision: prf.precision, recall: prf.recall, f1: prf.f1 }
}

/// Message for the most recent failure on this thread, or null. The
/// pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn sdoh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sdoh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn sdoh_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a model response. Malformed objects are skipped; the number of
/// syntax repairs applied is written to `repairs` when it is non-null.
///
/// # Safety
/// `raw` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sdoh_events_parse_response(
    raw: *const c_char,
    out: *mut *mut SdohEvents,
    repairs: *mut usize,
) -> SdohStatus {
    guard(|| {
        let raw = text(raw, "raw")?;
        let report =
            parse_response(raw).map_err(|_| Failure(SdohStatus::ParseError, "no annotation list found".into()))?;
        if !repairs.is_null() {
            *repairs = report.repairs;
        }
        put_events(out, report.events)
    })
}

/// Reads events from a BRAT `.ann` body and its note text.
///
/// # Safety
/// `ann` and `note` must be NUL-terminated strings, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_events_from_brat(
    ann: *const c_char,
    note: *const c_char,
    out: *mut *mut SdohEvents,
) -> SdohStatus {
    guard(|| {
        let ann = text(ann, "ann")?;
        let note = text(note, "note")?;
        let doc = parse_brat(ann, note).map_err(|e| Failure(SdohStatus::ParseError, e.to_string()))?;
        let events = brat_to_events(&doc, note, &RoleMap::default())
            .map_err(|e| Failure(SdohStatus::DataError, e.to_string()))?;
        put_events(out, events)
    })
}

/// # Safety
/// `events` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sdoh_events_len(events: *const SdohEvents) -> usize {
    events.as_ref().map_or(0, |e| e.events.len())
}

/// Renders events in the response list format.
///
/// # Safety
/// `events` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_events_render(
    events: *const SdohEvents,
    dialect: SdohDialect,
    out: *mut *mut c_char,
) -> SdohStatus {
    guard(|| {
        let events = handle(events, "events")?;
        let dialect = match dialect {
            SdohDialect::Tuple => Dialect::Tuple,
            SdohDialect::Json => Dialect::Json,
        };
        put_string(out, render_events_as(&events.events, dialect))
    })
}

/// Writes events as a BRAT `.ann` body for `note`.
///
/// # Safety
/// `events` must be a live handle, `note` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_events_to_brat(
    events: *const SdohEvents,
    note: *const c_char,
    out: *mut *mut c_char,
) -> SdohStatus {
    guard(|| {
        let events = handle(events, "events")?;
        let note = text(note, "note")?;
        let doc = events_to_brat(&events.events, note, &RoleMap::default())
            .map_err(|e| Failure(SdohStatus::DataError, e.to_string()))?;
        put_string(out, serialize_brat(&doc))
    })
}

/// Applies post-processing against `note` and returns the kept events
/// as a new handle.
///
/// # Safety
/// `events` must be a live handle, `note` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_events_post_process(
    events: *const SdohEvents,
    note: *const c_char,
    out: *mut *mut SdohEvents,
) -> SdohStatus {
    guard(|| {
        let events = handle(events, "events")?;
        let note = text(note, "note")?;
        let (filtered, _) = post_process(&events.events, note, &PostProcessConfig::default());
        put_events(out, filtered.kept)
    })
}

/// # Safety
/// `events` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sdoh_events_free(events: *mut SdohEvents) {
    if !events.is_null() {
        drop(Box::from_raw(events));
    }
}

/// Converts one annotation body between BRAT and the list formats.
///
/// # Safety
/// `input` and `note` must be NUL-terminated strings, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_convert(
    input: *const c_char,
    from: SdohFormat,
    to: SdohFormat,
    note: *const c_char,
    out: *mut *mut c_char,
) -> SdohStatus {
    let format = |f: SdohFormat| match f {
        SdohFormat::Brat => Format::Brat,
        SdohFormat::Json => Format::Json,
        SdohFormat::Tuple => Format::Tuple,
    };
    guard(|| {
        let input = text(input, "input")?;
        let note = text(note, "note")?;
        let converted = convert(input, format(from), format(to), note, &RoleMap::default())
            .map_err(|e| Failure(SdohStatus::DataError, e.to_string()))?;
        put_string(out, converted)
    })
}

#[no_mangle]
pub extern "C" fn sdoh_scorer_new() -> *mut SdohScorer {
    Box::into_raw(Box::new(SdohScorer { table: CountTable::default(), documents: 0 }))
}

/// Scores one document and adds its counts.
///
/// # Safety
/// All three pointers must be live handles.
#[no_mangle]
pub unsafe extern "C" fn sdoh_scorer_add(
    scorer: *mut SdohScorer,
    pred: *const SdohEvents,
    gold: *const SdohEvents,
) -> SdohStatus {
    guard(|| {
        let scorer = handle_mut(scorer, "scorer")?;
        let pred = handle(pred, "pred")?;
        let gold = handle(gold, "gold")?;
        scorer.table.merge(&score_document(&pred.events, &gold.events));
        scorer.documents += 1;
        Ok(())
    })
}

/// Micro-averaged counts over everything added so far.
///
/// # Safety
/// `scorer` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_scorer_micro(scorer: *const SdohScorer, out: *mut SdohCounts) -> SdohStatus {
    guard(|| {
        let scorer = handle(scorer, "scorer")?;
        let out = out.as_mut().ok_or_else(|| Failure(SdohStatus::NullArgument, "out is null".into()))?;
        *out = counts(scorer.table.total());
        Ok(())
    })
}

/// Full report (per type, per cell and micro) as JSON.
///
/// # Safety
/// `scorer` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_scorer_report_json(scorer: *const SdohScorer, out: *mut *mut c_char) -> SdohStatus {
    guard(|| {
        let scorer = handle(scorer, "scorer")?;
        let report = report_from_table(scorer.table, scorer.documents);
        let json = serde_json::to_string(&report).map_err(|e| Failure(SdohStatus::DataError, e.to_string()))?;
        put_string(out, json)
    })
}

/// # Safety
/// `scorer` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sdoh_scorer_free(scorer: *mut SdohScorer) {
    if !scorer.is_null() {
        drop(Box::from_raw(scorer));
    }
}

#[no_mangle]
pub extern "C" fn sdoh_vote_new() -> *mut SdohVote {
    Box::into_raw(Box::new(SdohVote { samples: Vec::new() }))
}

/// Adds one sample. The events are copied.
///
/// # Safety
/// Both pointers must be live handles.
#[no_mangle]
pub unsafe extern "C" fn sdoh_vote_add_sample(vote: *mut SdohVote, sample: *const SdohEvents) -> SdohStatus {
    guard(|| {
        let vote = handle_mut(vote, "vote")?;
        let sample = handle(sample, "sample")?;
        vote.samples.push(sample.events.clone());
        Ok(())
    })
}

/// Per-event majority over the samples added so far. A `threshold` of
/// zero means a strict majority of the sample count.
///
/// # Safety
/// `vote` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sdoh_vote_compile(
    vote: *const SdohVote,
    threshold: usize,
    out: *mut *mut SdohEvents,
) -> SdohStatus {
    guard(|| {
        let vote = handle(vote, "vote")?;
        let k = vote.samples.len();
        let config = ConsistencyConfig::new(k, (threshold > 0).then_some(threshold))
            .map_err(|e| Failure(SdohStatus::InvalidArgument, e.to_string()))?;
        let ledger = VoteLedger::build(&vote.samples);
        put_events(out, compile_majority(&ledger, &config))
    })
}

/// # Safety
/// `vote` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sdoh_vote_free(vote: *mut SdohVote) {
    if !vote.is_null() {
        drop(Box::from_raw(vote));
    }
}
