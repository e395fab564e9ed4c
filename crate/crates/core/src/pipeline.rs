//! Self-consistency over k sampled responses and post-processing
//! (offset realignment and validity filtering).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::parse_response;
use crate::event::{
    canonical_value, validate_event, ArgKind, EventKey, LabeledArg, NoteDocument, SdohEvent, SdohType, Span,
    ValidationResult, Violation,
};
use crate::gateway::{request_hash, CompletionBackend, GatewayError};
use crate::prompt::{build_prompt, PromptBuilder, PromptError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteStrategy {
    /// Vote on each event, then on each argument of the kept events.
    #[default]
    PerEvent,
    /// Keep the single most common whole response.
    WholeResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub k: usize,
    pub threshold: usize,
    pub strategy: VoteStrategy,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig { k: 3, threshold: 2, strategy: VoteStrategy::PerEvent }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("threshold must satisfy 1 <= threshold <= k (got k={k}, threshold={threshold})")]
pub struct InvalidConsistency {
    pub k: usize,
    pub threshold: usize,
}

impl ConsistencyConfig {
    /// `threshold` defaults to a strict majority, `k/2 + 1`.
    pub fn new(k: usize, threshold: Option<usize>) -> Result<Self, InvalidConsistency> {
        let c = ConsistencyConfig { k, threshold: threshold.unwrap_or(k / 2 + 1), strategy: VoteStrategy::PerEvent };
        c.validate().map(|_| c)
    }

    pub fn validate(&self) -> Result<(), InvalidConsistency> {
        if self.threshold == 0 || self.threshold > self.k {
            return Err(InvalidConsistency { k: self.k, threshold: self.threshold });
        }
        Ok(())
    }
}

/// One observed value of an argument: its span plus the label (if any).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Variant {
    pub span: Span,
    pub value: Option<String>,
    pub count: usize,
    pub first_sample: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    pub key: EventKey,
    pub trigger: Span,
    pub votes: usize,
    pub first_sample: usize,
    /// Variants per argument kind, in first-seen order.
    pub args: BTreeMap<ArgKind, Vec<Variant>>,
}

/// Vote tallies over k samples, keyed by event trigger.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VoteLedger {
    pub k: usize,
    /// Entries in first-seen order over (sample index, position).
    pub entries: Vec<LedgerEntry>,
    /// Events sharing a key with an earlier event of the same sample.
    pub merged_duplicates: usize,
    #[serde(skip)]
    samples: Vec<Vec<SdohEvent>>,
}

fn variant_of(event: &SdohEvent, kind: ArgKind) -> Option<(Span, Option<String>)> {
    let span = event.span_of(kind)?.clone();
    Some((span, event.value_of(kind).map(canonical_value)))
}

impl VoteLedger {
    /// Tallies `samples` (sample i is the parse of response i). Within one
    /// sample only the first event per key votes.
    pub fn build(samples: &[Vec<SdohEvent>]) -> Self {
        let mut ledger = VoteLedger { k: samples.len(), samples: samples.to_vec(), ..Default::default() };
        let mut index: BTreeMap<EventKey, usize> = BTreeMap::new();
        for (si, sample) in samples.iter().enumerate() {
            let mut seen = std::collections::BTreeSet::new();
            for event in sample {
                let key = event.key();
                if !seen.insert(key) {
                    ledger.merged_duplicates += 1;
                    continue;
                }
                let slot = *index.entry(key).or_insert_with(|| {
                    ledger.entries.push(LedgerEntry {
                        key,
                        trigger: event.trigger.clone(),
                        votes: 0,
                        first_sample: si,
                        args: BTreeMap::new(),
                    });
                    ledger.entries.len() - 1
                });
                let entry = &mut ledger.entries[slot];
                entry.votes += 1;
                for kind in ArgKind::ALL.into_iter().filter(|k| *k != ArgKind::Trigger) {
                    let Some((span, value)) = variant_of(event, kind) else { continue };
                    let variants = entry.args.entry(kind).or_default();
                    match variants.iter_mut().find(|v| v.span == span && v.value == value) {
                        Some(v) => v.count += 1,
                        None => variants.push(Variant { span, value, count: 1, first_sample: si }),
                    }
                }
            }
        }
        ledger
    }

    pub fn votes(&self, key: &EventKey) -> usize {
        self.entries.iter().find(|e| &e.key == key).map_or(0, |e| e.votes)
    }
}

/// Most frequent variant, ties to the earliest-seen one.
fn plurality(variants: &[Variant]) -> Option<&Variant> {
    variants.iter().fold(None, |best: Option<&Variant>, v| match best {
        Some(b) if b.count >= v.count => Some(b),
        _ => Some(v),
    })
}

/// Argument kinds whose plurality value was contested by another variant
/// with a different label (e.g. status current vs past).
pub fn value_conflicts(entry: &LedgerEntry) -> Vec<ArgKind> {
    entry
        .args
        .iter()
        .filter(|(_, vs)| vs.iter().any(|v| v.value != vs[0].value))
        .map(|(k, _)| *k)
        .collect()
}

/// Compiles the voted annotation for one prompt family.
pub fn compile_majority(ledger: &VoteLedger, config: &ConsistencyConfig) -> Vec<SdohEvent> {
    match config.strategy {
        VoteStrategy::PerEvent => compile_per_event(ledger, config.threshold),
        VoteStrategy::WholeResponse => compile_whole_response(ledger),
    }
}

fn compile_per_event(ledger: &VoteLedger, threshold: usize) -> Vec<SdohEvent> {
    let mut out = Vec::new();
    for entry in ledger.entries.iter().filter(|e| e.votes >= threshold) {
        let mut event = SdohEvent::new(entry.key.sdoh, entry.trigger.clone());
        for (kind, variants) in &entry.args {
            let Some(best) = plurality(variants).filter(|v| v.count >= threshold) else { continue };
            match kind {
                ArgKind::Status => event.status = Some(LabeledArg { span: best.span.clone(), value: best.value.clone() }),
                ArgKind::Type => event.type_ = Some(LabeledArg { span: best.span.clone(), value: best.value.clone() }),
                k => {
                    if let Some(slot) = event.span_slot_mut(*k) {
                        *slot = Some(best.span.clone());
                    }
                }
            }
        }
        out.push(event);
    }
    out
}

fn canonical_response(sample: &[SdohEvent]) -> Vec<SdohEvent> {
    let mut events: Vec<SdohEvent> = sample
        .iter()
        .cloned()
        .map(|mut e| {
            for arg in [&mut e.status, &mut e.type_].into_iter().flatten() {
                arg.value = arg.value.as_deref().map(canonical_value);
            }
            e
        })
        .collect();
    events.sort_by(|a, b| (a.key(), format!("{a:?}")).cmp(&(b.key(), format!("{b:?}"))));
    events.dedup();
    events
}

fn compile_whole_response(ledger: &VoteLedger) -> Vec<SdohEvent> {
    let canon: Vec<Vec<SdohEvent>> = ledger.samples.iter().map(|s| canonical_response(s)).collect();
    let mut best: Option<(usize, usize)> = None;
    for (i, c) in canon.iter().enumerate() {
        let count = canon.iter().filter(|o| *o == c).count();
        if best.is_none_or(|(_, n)| count > n) {
            best = Some((i, count));
        }
    }
    best.map(|(i, _)| ledger.samples[i].clone()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Realigned {
    pub event: SdohEvent,
    pub moved: Vec<ArgKind>,
    pub irreparable: Vec<ArgKind>,
}

fn chars_eq_ci(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

/// Start offsets (in chars) where `needle` occurs in `hay`.
fn occurrences(hay: &[char], needle: &[char], ignore_case: bool) -> Vec<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Vec::new();
    }
    (0..=hay.len() - needle.len())
        .filter(|&i| {
            hay[i..i + needle.len()]
                .iter()
                .zip(needle)
                .all(|(a, b)| if ignore_case { chars_eq_ci(*a, *b) } else { a == b })
        })
        .collect()
}

/// Moves `span` to the occurrence of its text nearest the claimed start
/// (earlier occurrence on ties). Falls back to a case-insensitive search,
/// taking the note's own spelling. Returns `None` if the text never occurs.
pub fn realign_span(span: &Span, note: &[char]) -> Option<Span> {
    let text = span.text.trim();
    let needle: Vec<char> = text.chars().collect();
    for ignore_case in [false, true] {
        let hits = occurrences(note, &needle, ignore_case);
        if let Some(&start) = hits.iter().min_by_key(|&&s| (s.abs_diff(span.start), s)) {
            let end = start + needle.len();
            return Some(Span::new(start, end, note[start..end].iter().collect::<String>()));
        }
    }
    None
}

/// Repairs character offsets that disagree with the span text.
pub fn realign_spans(event: &SdohEvent, note_text: &str) -> Realigned {
    let note: Vec<char> = note_text.chars().collect();
    let mut out = Realigned { event: event.clone(), moved: Vec::new(), irreparable: Vec::new() };
    for (kind, span) in out.event.spans_mut() {
        if span.check(note_text).is_ok() {
            continue;
        }
        match realign_span(span, &note) {
            Some(fixed) => {
                *span = fixed;
                out.moved.push(kind);
            }
            None => out.irreparable.push(kind),
        }
    }
    out
}

/// Values the guidelines treat as too vague for duration, frequency,
/// history and amount.
pub const NON_SPECIFIC_VALUES: &[&str] = &[
    "often",
    "rarely",
    "in the past",
    "past",
    "a lot",
    "long time ago",
    "a long time ago",
    "sometimes",
    "occasionally",
    "frequently",
    "socially",
    "prior",
    "previously",
    "remote",
    "heavy",
    "light",
];

pub fn is_non_specific(text: &str) -> bool {
    NON_SPECIFIC_VALUES.contains(&canonical_value(text).as_str())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostProcessConfig {
    /// Realign offsets and drop invalid events. When off, only arguments
    /// that cannot be located in the note are removed.
    pub enabled: bool,
    /// Strip vague duration/frequency/history/amount values.
    pub non_specific_filter: bool,
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        PostProcessConfig { enabled: true, non_specific_filter: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedEvent {
    pub event: SdohEvent,
    pub reasons: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StrippedArg {
    pub key: EventKey,
    pub kind: ArgKind,
    pub reason: Violation,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Filtered {
    pub kept: Vec<SdohEvent>,
    pub dropped: Vec<DroppedEvent>,
    pub stripped: Vec<StrippedArg>,
}

fn required(sdoh: SdohType, kind: ArgKind) -> bool {
    matches!(kind, ArgKind::Trigger | ArgKind::Status) || (kind == ArgKind::Type && sdoh == SdohType::LivingStatus)
}

/// Removes events that lack required arguments or carry invalid values;
/// optional arguments that are forbidden or unlocatable are stripped
/// instead. Every kept event validates.
pub fn drop_invalid(events: &[SdohEvent], note_text: &str) -> Filtered {
    let mut out = Filtered::default();
    for original in events {
        let mut event = original.clone();
        let violations = match validate_event(&event, note_text) {
            ValidationResult::Valid => Vec::new(),
            ValidationResult::Invalid(v) => v,
        };
        let mut fatal = Vec::new();
        for v in violations {
            match v {
                Violation::SpanOutOfBounds(k) | Violation::SpanTextMismatch(k) if required(event.sdoh, k) => {
                    fatal.push(v)
                }
                Violation::SpanOutOfBounds(k) | Violation::SpanTextMismatch(k) | Violation::ForbiddenArgument(k) => {
                    event.clear(k);
                    out.stripped.push(StrippedArg { key: event.key(), kind: k, reason: v });
                }
                Violation::UnexpectedTypeValue => {
                    if let Some(t) = event.type_.as_mut() {
                        t.value = None;
                    }
                    out.stripped.push(StrippedArg { key: event.key(), kind: ArgKind::Type, reason: v });
                }
                Violation::MissingStatus
                | Violation::MissingLivingType
                | Violation::InvalidStatusValue
                | Violation::InvalidTypeValue => fatal.push(v),
            }
        }
        if !fatal.is_empty() {
            out.dropped.push(DroppedEvent { event: original.clone(), reasons: fatal });
            continue;
        }
        for arg in [&mut event.status, &mut event.type_].into_iter().flatten() {
            arg.value = arg.value.as_deref().map(canonical_value);
        }
        match validate_event(&event, note_text) {
            ValidationResult::Valid => out.kept.push(event),
            ValidationResult::Invalid(reasons) => out.dropped.push(DroppedEvent { event: original.clone(), reasons }),
        }
    }
    out
}

/// Strips vague span-only values; returns how many were removed.
pub fn filter_non_specific(events: &mut [SdohEvent]) -> usize {
    let mut removed = 0;
    for event in events {
        for kind in [ArgKind::Duration, ArgKind::Frequency, ArgKind::History, ArgKind::Amount] {
            if event.span_of(kind).is_some_and(|s| is_non_specific(&s.text)) {
                event.clear(kind);
                removed += 1;
            }
        }
    }
    removed
}

/// Keeps only what a standoff file can represent: events whose spans lie
/// inside the note with matching text. Labels are left untouched.
pub fn drop_unplaceable(events: &[SdohEvent], note_text: &str) -> Filtered {
    let mut out = Filtered::default();
    for original in events {
        let mut event = original.clone();
        let mut fatal = Vec::new();
        for kind in ArgKind::ALL {
            let Some(span) = event.span_of(kind) else { continue };
            let reason = match span.check(note_text) {
                Ok(()) => continue,
                Err(crate::event::SpanFault::OutOfBounds) => Violation::SpanOutOfBounds(kind),
                Err(crate::event::SpanFault::TextMismatch) => Violation::SpanTextMismatch(kind),
            };
            if kind == ArgKind::Trigger {
                fatal.push(reason);
            } else {
                event.clear(kind);
                out.stripped.push(StrippedArg { key: event.key(), kind, reason });
            }
        }
        if fatal.is_empty() {
            out.kept.push(event);
        } else {
            out.dropped.push(DroppedEvent { event: original.clone(), reasons: fatal });
        }
    }
    out
}

/// Full post-processing of a compiled annotation. Returns the filtered
/// events and how many vague values were stripped.
pub fn post_process(events: &[SdohEvent], note_text: &str, config: &PostProcessConfig) -> (Filtered, usize) {
    if !config.enabled {
        let mut filtered = drop_unplaceable(events, note_text);
        let removed = if config.non_specific_filter { filter_non_specific(&mut filtered.kept) } else { 0 };
        return (filtered, removed);
    }
    let realigned: Vec<SdohEvent> = events.iter().map(|e| realign_spans(e, note_text).event).collect();
    let mut filtered = drop_invalid(&realigned, note_text);
    let removed = if config.non_specific_filter { filter_non_specific(&mut filtered.kept) } else { 0 };
    (filtered, removed)
}

/// Everything fixed across the notes of one run.
pub struct RunPlan {
    pub builder: PromptBuilder,
    pub examples: Vec<NoteDocument>,
    pub consistency: ConsistencyConfig,
    pub post: PostProcessConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum NoteError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SampleLog {
    pub sample_index: usize,
    pub hash: String,
    pub unparseable: bool,
    pub events: usize,
    pub discarded: usize,
    pub dropped_fields: usize,
    pub repairs: usize,
    pub off_target: usize,
    pub realigned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoteLog {
    pub key: EventKey,
    pub trigger: String,
    pub votes: usize,
    pub included: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub value_conflicts: Vec<ArgKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyLog {
    pub sdoh: Option<SdohType>,
    pub samples: Vec<SampleLog>,
    pub votes: Vec<VoteLog>,
    pub compiled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoteLog {
    pub note_id: String,
    pub completions: usize,
    pub families: Vec<FamilyLog>,
    pub dropped: Vec<DroppedEvent>,
    pub stripped: Vec<StrippedArg>,
    pub non_specific_removed: usize,
    pub final_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoteOutcome {
    pub events: Vec<SdohEvent>,
    pub log: NoteLog,
}

fn parse_sample(raw: &str, note_text: &str, target: Option<SdohType>, realign: bool, log: &mut SampleLog) -> Vec<SdohEvent> {
    let report = match parse_response(raw) {
        Ok(r) => r,
        Err(_) => {
            log.unparseable = true;
            return Vec::new();
        }
    };
    log.discarded = report.discarded.len();
    log.dropped_fields = report.dropped_fields.len();
    log.repairs = report.repairs;
    let mut events = Vec::with_capacity(report.events.len());
    for event in report.events {
        if target.is_some_and(|t| t != event.sdoh) {
            log.off_target += 1;
            continue;
        }
        if !realign {
            events.push(event);
            continue;
        }
        let r = realign_spans(&event, note_text);
        if !r.moved.is_empty() {
            log.realigned += 1;
        }
        events.push(r.event);
    }
    log.events = events.len();
    events
}

/// Runs prompting, k-sample voting and post-processing for one note.
pub fn run_note(note: &NoteDocument, plan: &RunPlan, backend: &dyn CompletionBackend) -> Result<NoteOutcome, NoteError> {
    let mode = plan.builder.mode();
    let k = plan.consistency.k;
    let requests = mode
        .families()
        .into_iter()
        .map(|sdoh| build_prompt(&plan.builder, &plan.examples, note, sdoh))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..requests.len()).flat_map(|f| (0..k).map(move |i| (f, i))).collect();
    let raws = jobs
        .par_iter()
        .map(|&(f, i)| backend.complete(&requests[f], i))
        .collect::<Result<Vec<String>, GatewayError>>()?;

    let mut families = Vec::with_capacity(requests.len());
    let mut compiled = Vec::new();
    for (f, request) in requests.iter().enumerate() {
        let mut samples = Vec::with_capacity(k);
        let mut sample_logs = Vec::with_capacity(k);
        for i in 0..k {
            let mut log = SampleLog {
                sample_index: i,
                hash: request_hash(backend.model(), request, i),
                ..Default::default()
            };
            samples.push(parse_sample(&raws[f * k + i], &note.text, request.sdoh, plan.post.enabled, &mut log));
            sample_logs.push(log);
        }
        let ledger = VoteLedger::build(&samples);
        let events = compile_majority(&ledger, &plan.consistency);
        let votes = ledger
            .entries
            .iter()
            .map(|e| VoteLog {
                key: e.key,
                trigger: e.trigger.text.clone(),
                votes: e.votes,
                included: e.votes >= plan.consistency.threshold,
                value_conflicts: value_conflicts(e),
            })
            .collect();
        families.push(FamilyLog { sdoh: request.sdoh, samples: sample_logs, votes, compiled: events.len() });
        compiled.extend(events);
    }

    let (filtered, non_specific_removed) = post_process(&compiled, &note.text, &plan.post);
    let log = NoteLog {
        note_id: note.id.clone(),
        completions: jobs.len(),
        families,
        dropped: filtered.dropped,
        stripped: filtered.stripped,
        non_specific_removed,
        final_events: filtered.kept.len(),
    };
    Ok(NoteOutcome { events: filtered.kept, log })
}
