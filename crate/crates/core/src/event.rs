//! Canonical SDOH event representation, validity rules and voting keys.
//!
//! All offsets are counted in Unicode scalar values (`char`s), never bytes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The five social-history categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SdohType {
    Alcohol,
    Drug,
    Tobacco,
    Employment,
    LivingStatus,
}

impl SdohType {
    pub const ALL: [SdohType; 5] = [
        SdohType::Alcohol,
        SdohType::Drug,
        SdohType::Tobacco,
        SdohType::Employment,
        SdohType::LivingStatus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SdohType::Alcohol => "Alcohol",
            SdohType::Drug => "Drug",
            SdohType::Tobacco => "Tobacco",
            SdohType::Employment => "Employment",
            SdohType::LivingStatus => "LivingStatus",
        }
    }

    /// Human-readable label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            SdohType::LivingStatus => "Living Status",
            other => other.as_str(),
        }
    }

    pub fn is_substance(self) -> bool {
        matches!(self, SdohType::Alcohol | SdohType::Drug | SdohType::Tobacco)
    }

    /// Legal status values for this category.
    pub fn status_values(self) -> &'static [&'static str] {
        match self {
            SdohType::Employment => EMPLOYMENT_STATUS_VALUES,
            _ => TIME_STATUS_VALUES,
        }
    }

    /// Whether an argument kind may appear on events of this category.
    pub fn permits(self, kind: ArgKind) -> bool {
        match kind {
            ArgKind::Frequency | ArgKind::Amount => self.is_substance(),
            ArgKind::Method => matches!(self, SdohType::Drug | SdohType::Tobacco),
            _ => true,
        }
    }
}

impl fmt::Display for SdohType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown SDOH type `{0}`")]
pub struct UnknownSdohType(pub String);

impl FromStr for SdohType {
    type Err = UnknownSdohType;

    /// Case-insensitive; spaces and underscores are ignored so that
    /// `Living Status` and `living_status` both resolve.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded: String = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
            .flat_map(char::to_lowercase)
            .collect();
        match folded.as_str() {
            "alcohol" => Ok(SdohType::Alcohol),
            "drug" => Ok(SdohType::Drug),
            "tobacco" => Ok(SdohType::Tobacco),
            "employment" => Ok(SdohType::Employment),
            "livingstatus" => Ok(SdohType::LivingStatus),
            _ => Err(UnknownSdohType(s.to_string())),
        }
    }
}

pub const TIME_STATUS_VALUES: &[&str] = &["current", "past", "none"];
pub const EMPLOYMENT_STATUS_VALUES: &[&str] =
    &["employed", "unemployed", "retired", "student", "homemaker"];
pub const LIVING_TYPE_VALUES: &[&str] = &["alone", "with_family", "with_others", "homeless"];

/// Every slot an event can carry, trigger included. The order is the
/// field order of the response format and of report columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgKind {
    Trigger,
    Status,
    Duration,
    History,
    Type,
    Amount,
    Frequency,
    Method,
}

impl ArgKind {
    pub const ALL: [ArgKind; 8] = [
        ArgKind::Trigger,
        ArgKind::Status,
        ArgKind::Duration,
        ArgKind::History,
        ArgKind::Type,
        ArgKind::Amount,
        ArgKind::Frequency,
        ArgKind::Method,
    ];

    /// Argument kinds that are plain spans.
    pub const SPAN_ONLY: [ArgKind; 5] = [
        ArgKind::Duration,
        ArgKind::History,
        ArgKind::Amount,
        ArgKind::Frequency,
        ArgKind::Method,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArgKind::Trigger => "trigger",
            ArgKind::Status => "status",
            ArgKind::Duration => "duration",
            ArgKind::History => "history",
            ArgKind::Type => "type",
            ArgKind::Amount => "amount",
            ArgKind::Frequency => "frequency",
            ArgKind::Method => "method",
        }
    }

    pub fn from_key(key: &str) -> Option<ArgKind> {
        ArgKind::ALL.into_iter().find(|k| k.as_str() == key)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ArgKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A character interval of a note together with its surface text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl Span {
    pub fn new(start: usize, end: usize, text: impl Into<String>) -> Self {
        Span { start, end, text: text.into() }
    }

    /// Builds a span from the note itself, so text always agrees with offsets.
    pub fn from_note(note: &str, start: usize, end: usize) -> Option<Span> {
        char_slice(note, start, end).map(|t| Span::new(start, end, t))
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of shared character positions.
    pub fn overlap(&self, other: &Span) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.overlap(other) > 0
    }

    pub fn check(&self, note: &str) -> Result<(), SpanFault> {
        if self.start >= self.end {
            return Err(SpanFault::OutOfBounds);
        }
        match char_slice(note, self.start, self.end) {
            None => Err(SpanFault::OutOfBounds),
            Some(found) if found != self.text => Err(SpanFault::TextMismatch),
            Some(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanFault {
    OutOfBounds,
    TextMismatch,
}

/// `note[start..end]` in character units, or `None` when out of range.
pub fn char_slice(note: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = note.char_indices().map(|(b, _)| b).chain(std::iter::once(note.len()));
    let begin = indices.nth(start)?;
    let finish = if end == start { begin } else { indices.nth(end - start - 1)? };
    Some(&note[begin..finish])
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// A span with an optional categorical label (status and type arguments).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabeledArg {
    pub span: Span,
    pub value: Option<String>,
}

impl LabeledArg {
    pub fn new(span: Span, value: Option<&str>) -> Self {
        LabeledArg { span, value: value.map(canonical_value) }
    }
}

/// Values are compared case-insensitively and stored lowercase.
pub fn canonical_value(raw: &str) -> String {
    raw.trim().to_lowercase()
}

/// One extracted (or gold) social-history event.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SdohEvent {
    pub sdoh: SdohType,
    pub trigger: Span,
    pub status: Option<LabeledArg>,
    pub type_: Option<LabeledArg>,
    pub duration: Option<Span>,
    pub history: Option<Span>,
    pub frequency: Option<Span>,
    pub amount: Option<Span>,
    pub method: Option<Span>,
}

impl SdohEvent {
    pub fn new(sdoh: SdohType, trigger: Span) -> Self {
        SdohEvent {
            sdoh,
            trigger,
            status: None,
            type_: None,
            duration: None,
            history: None,
            frequency: None,
            amount: None,
            method: None,
        }
    }

    pub fn with_status(mut self, span: Span, value: &str) -> Self {
        self.status = Some(LabeledArg::new(span, Some(value)));
        self
    }

    pub fn with_type(mut self, span: Span, value: Option<&str>) -> Self {
        self.type_ = Some(LabeledArg::new(span, value));
        self
    }

    pub fn with_span(mut self, kind: ArgKind, span: Span) -> Self {
        *self.span_slot_mut(kind).expect("span-only argument kind") = Some(span);
        self
    }

    pub fn key(&self) -> EventKey {
        equivalence_key(self)
    }

    /// Mutable access to a plain-span slot; `None` for trigger/status/type.
    pub fn span_slot_mut(&mut self, kind: ArgKind) -> Option<&mut Option<Span>> {
        match kind {
            ArgKind::Duration => Some(&mut self.duration),
            ArgKind::History => Some(&mut self.history),
            ArgKind::Frequency => Some(&mut self.frequency),
            ArgKind::Amount => Some(&mut self.amount),
            ArgKind::Method => Some(&mut self.method),
            _ => None,
        }
    }

    /// The span of an argument, if present.
    pub fn span_of(&self, kind: ArgKind) -> Option<&Span> {
        match kind {
            ArgKind::Trigger => Some(&self.trigger),
            ArgKind::Status => self.status.as_ref().map(|a| &a.span),
            ArgKind::Type => self.type_.as_ref().map(|a| &a.span),
            ArgKind::Duration => self.duration.as_ref(),
            ArgKind::History => self.history.as_ref(),
            ArgKind::Frequency => self.frequency.as_ref(),
            ArgKind::Amount => self.amount.as_ref(),
            ArgKind::Method => self.method.as_ref(),
        }
    }

    /// The label carried by a valued argument, if any.
    pub fn value_of(&self, kind: ArgKind) -> Option<&str> {
        match kind {
            ArgKind::Status => self.status.as_ref().and_then(|a| a.value.as_deref()),
            ArgKind::Type => self.type_.as_ref().and_then(|a| a.value.as_deref()),
            _ => None,
        }
    }

    /// Whether this argument is scored on its label as well as its span.
    pub fn is_valued(&self, kind: ArgKind) -> bool {
        kind == ArgKind::Status || (kind == ArgKind::Type && self.sdoh == SdohType::LivingStatus)
    }

    /// Removes a non-trigger argument.
    pub fn clear(&mut self, kind: ArgKind) {
        match kind {
            ArgKind::Trigger => {}
            ArgKind::Status => self.status = None,
            ArgKind::Type => self.type_ = None,
            other => {
                if let Some(slot) = self.span_slot_mut(other) {
                    *slot = None;
                }
            }
        }
    }

    /// Present argument kinds, trigger first.
    pub fn present_kinds(&self) -> impl Iterator<Item = ArgKind> + '_ {
        ArgKind::ALL.into_iter().filter(move |k| self.span_of(*k).is_some())
    }

    /// Mutable references to every present span, trigger included.
    pub fn spans_mut(&mut self) -> Vec<(ArgKind, &mut Span)> {
        let mut out: Vec<(ArgKind, &mut Span)> = vec![(ArgKind::Trigger, &mut self.trigger)];
        if let Some(a) = self.status.as_mut() {
            out.push((ArgKind::Status, &mut a.span));
        }
        if let Some(s) = self.duration.as_mut() {
            out.push((ArgKind::Duration, s));
        }
        if let Some(s) = self.history.as_mut() {
            out.push((ArgKind::History, s));
        }
        if let Some(a) = self.type_.as_mut() {
            out.push((ArgKind::Type, &mut a.span));
        }
        if let Some(s) = self.amount.as_mut() {
            out.push((ArgKind::Amount, s));
        }
        if let Some(s) = self.frequency.as_mut() {
            out.push((ArgKind::Frequency, s));
        }
        if let Some(s) = self.method.as_mut() {
            out.push((ArgKind::Method, s));
        }
        out
    }
}

/// Identity of an event for voting: category plus exact trigger offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventKey {
    pub sdoh: SdohType,
    pub start: usize,
    pub end: usize,
}

pub fn equivalence_key(event: &SdohEvent) -> EventKey {
    EventKey { sdoh: event.sdoh, start: event.trigger.start, end: event.trigger.end }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "arg")]
pub enum Violation {
    MissingStatus,
    MissingLivingType,
    InvalidStatusValue,
    /// A LivingStatus type whose label is absent or outside the allowed set.
    InvalidTypeValue,
    /// A type label on a category whose type is text-only.
    UnexpectedTypeValue,
    ForbiddenArgument(ArgKind),
    SpanOutOfBounds(ArgKind),
    SpanTextMismatch(ArgKind),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingStatus => f.write_str("missing status"),
            Violation::MissingLivingType => f.write_str("LivingStatus event without type"),
            Violation::InvalidStatusValue => f.write_str("invalid status value"),
            Violation::InvalidTypeValue => f.write_str("invalid living type value"),
            Violation::UnexpectedTypeValue => f.write_str("type value on text-only type"),
            Violation::ForbiddenArgument(k) => write!(f, "{k} not permitted for this category"),
            Violation::SpanOutOfBounds(k) => write!(f, "{k} span out of bounds"),
            Violation::SpanTextMismatch(k) => write!(f, "{k} span text does not match note"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationResult {
    Valid,
    Invalid(Vec<Violation>),
}

impl ValidationResult {
    pub fn is_valid(&self) -> bool {
        matches!(self, ValidationResult::Valid)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            ValidationResult::Valid => &[],
            ValidationResult::Invalid(v) => v,
        }
    }
}

/// Checks an event against the schema and the note it claims to index.
/// Violations are reported in a fixed order: spans, required arguments,
/// values, then forbidden arguments.
pub fn validate_event(event: &SdohEvent, note_text: &str) -> ValidationResult {
    let mut out = Vec::new();
    for kind in ArgKind::ALL {
        if let Some(span) = event.span_of(kind) {
            match span.check(note_text) {
                Ok(()) => {}
                Err(SpanFault::OutOfBounds) => out.push(Violation::SpanOutOfBounds(kind)),
                Err(SpanFault::TextMismatch) => out.push(Violation::SpanTextMismatch(kind)),
            }
        }
    }
    match &event.status {
        None => out.push(Violation::MissingStatus),
        Some(arg) => {
            let ok = arg
                .value
                .as_deref()
                .map(|v| event.sdoh.status_values().contains(&canonical_value(v).as_str()))
                .unwrap_or(false);
            if !ok {
                out.push(Violation::InvalidStatusValue);
            }
        }
    }
    match (&event.type_, event.sdoh) {
        (None, SdohType::LivingStatus) => out.push(Violation::MissingLivingType),
        (Some(arg), SdohType::LivingStatus) => {
            let ok = arg
                .value
                .as_deref()
                .map(|v| LIVING_TYPE_VALUES.contains(&canonical_value(v).as_str()))
                .unwrap_or(false);
            if !ok {
                out.push(Violation::InvalidTypeValue);
            }
        }
        (Some(arg), _) if arg.value.is_some() => out.push(Violation::UnexpectedTypeValue),
        _ => {}
    }
    for kind in ArgKind::SPAN_ONLY {
        if event.span_of(kind).is_some() && !event.sdoh.permits(kind) {
            out.push(Violation::ForbiddenArgument(kind));
        }
    }
    if out.is_empty() {
        ValidationResult::Valid
    } else {
        ValidationResult::Invalid(out)
    }
}

/// A note with its id, body and optional gold annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteDocument {
    pub id: String,
    pub text: String,
    pub gold: Option<Vec<SdohEvent>>,
    pub split: Split,
}

impl NoteDocument {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        NoteDocument { id: id.into(), text: text.into(), gold: None, split: Split::Unknown }
    }

    pub fn with_gold(mut self, gold: Vec<SdohEvent>) -> Self {
        self.gold = Some(gold);
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn gold_events(&self) -> &[SdohEvent] {
        self.gold.as_deref().unwrap_or(&[])
    }
}

/// Corpus partition a note was loaded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
    #[default]
    Unknown,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Unknown => "unknown",
        })
    }
}
