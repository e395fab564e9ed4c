//! Response format: a list of event objects whose spans are written as
//! `(start, end, "text")` or `(start, end, "text", "value")` tuples.
//!
//! Rendering produces that tuple dialect (or strict JSON with arrays).
//! Parsing is deliberately tolerant of model output: prose or code fences
//! around the list, arrays in place of tuples, single quotes, trailing or
//! missing commas, Python literals, stringified offsets, duplicate keys and
//! truncated output are all accepted. Every syntax fix is counted.

use std::fmt::Write as _;

use serde::Serialize;

use crate::event::{ArgKind, LabeledArg, SdohEvent, SdohType, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dialect {
    /// Parenthesized tuples, as shown to the model.
    Tuple,
    /// Strict JSON; tuples become arrays.
    Json,
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization")
}

fn render_span(out: &mut String, span: &Span, value: Option<&str>, dialect: Dialect) {
    let (open, close) = match dialect {
        Dialect::Tuple => ('(', ')'),
        Dialect::Json => ('[', ']'),
    };
    let _ = write!(out, "{open}{}, {}, {}", span.start, span.end, quote(&span.text));
    if let Some(v) = value {
        let _ = write!(out, ", {}", quote(v));
    }
    out.push(close);
}

fn render_object(out: &mut String, event: &SdohEvent, dialect: Dialect) {
    let _ = write!(out, "{{\"sdoh\": {}", quote(event.sdoh.as_str()));
    for kind in event.present_kinds() {
        let span = event.span_of(kind).expect("present");
        let _ = write!(out, ", \"{}\": ", kind.as_str());
        let value = match kind {
            ArgKind::Status => event.status.as_ref().and_then(|a| a.value.as_deref()),
            ArgKind::Type => event.type_.as_ref().and_then(|a| a.value.as_deref()),
            _ => None,
        };
        render_span(out, span, value, dialect);
    }
    out.push('}');
}

/// Renders events in the tuple dialect, one object per line. Absent
/// arguments are omitted.
pub fn render_events(events: &[SdohEvent]) -> String {
    render_events_as(events, Dialect::Tuple)
}

pub fn render_events_as(events: &[SdohEvent], dialect: Dialect) -> String {
    if events.is_empty() {
        return "[]".to_string();
    }
    let mut out = String::from("[\n");
    for (i, event) in events.iter().enumerate() {
        out.push_str("  ");
        render_object(&mut out, event, dialect);
        if i + 1 < events.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push(']');
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", content = "detail")]
pub enum DiscardReason {
    NotAnObject,
    MissingSdoh,
    UnknownSdohType(String),
    MissingTrigger,
    MalformedTrigger,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Discarded {
    pub fragment: String,
    pub reason: DiscardReason,
}

/// An argument that could not be read and was left out of its event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedField {
    pub event_index: usize,
    pub field: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ResponseParseReport {
    pub events: Vec<SdohEvent>,
    pub discarded: Vec<Discarded>,
    pub dropped_fields: Vec<DroppedField>,
    pub repairs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no list of annotations found in response")]
pub struct Unparseable;

#[derive(Debug, Clone, PartialEq)]
enum Loose {
    Null,
    Bool(bool),
    Num(f64),
    Str(String),
    List(Vec<Loose>),
    Obj(Vec<(String, Loose)>),
}

/// Recursive-descent reader over a lenient JSON superset.
struct Reader<'a> {
    chars: &'a [char],
    pos: usize,
    repairs: usize,
    depth: usize,
}

const MAX_DEPTH: usize = 64;

impl<'a> Reader<'a> {
    fn new(chars: &'a [char], pos: usize) -> Self {
        Reader { chars, pos, repairs: 0, depth: 0 }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn value(&mut self) -> Option<Loose> {
        self.skip_ws();
        match self.peek()? {
            '{' => self.nested(Self::object),
            '[' => self.nested(|r| r.list(']')),
            '(' => self.nested(|r| r.list(')')),
            '"' => self.string('"').map(Loose::Str),
            '\'' => {
                self.repairs += 1;
                self.string('\'').map(Loose::Str)
            }
            c if c == '-' || c.is_ascii_digit() => self.number(),
            c if c.is_alphabetic() => self.literal(),
            _ => None,
        }
    }

    fn nested(&mut self, f: impl FnOnce(&mut Self) -> Option<Loose>) -> Option<Loose> {
        if self.depth >= MAX_DEPTH {
            return None;
        }
        self.depth += 1;
        let out = f(self);
        self.depth -= 1;
        out
    }

    fn literal(&mut self) -> Option<Loose> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        let word: String = self.chars[start..self.pos].iter().collect();
        match word.as_str() {
            "null" => Some(Loose::Null),
            "true" => Some(Loose::Bool(true)),
            "false" => Some(Loose::Bool(false)),
            "None" | "undefined" | "nil" => {
                self.repairs += 1;
                Some(Loose::Null)
            }
            "True" => {
                self.repairs += 1;
                Some(Loose::Bool(true))
            }
            "False" => {
                self.repairs += 1;
                Some(Loose::Bool(false))
            }
            _ => None,
        }
    }

    fn number(&mut self) -> Option<Loose> {
        let start = self.pos;
        if self.peek() == Some('-') {
            self.pos += 1;
        }
        while self.peek().is_some_and(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-')) {
            self.pos += 1;
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse::<f64>().ok().filter(|f| f.is_finite()).map(Loose::Num)
    }

    fn string(&mut self, delim: char) -> Option<String> {
        self.pos += 1;
        let mut out = String::new();
        loop {
            let Some(c) = self.peek() else {
                // truncated output
                self.repairs += 1;
                return Some(out);
            };
            self.pos += 1;
            match c {
                c if c == delim => return Some(out),
                '\\' => {
                    let Some(e) = self.peek() else { continue };
                    self.pos += 1;
                    match e {
                        '"' => out.push('"'),
                        '\'' => out.push('\''),
                        '\\' => out.push('\\'),
                        '/' => out.push('/'),
                        'n' => out.push('\n'),
                        't' => out.push('\t'),
                        'r' => out.push('\r'),
                        'b' => out.push('\u{8}'),
                        'f' => out.push('\u{c}'),
                        'u' => match self.unicode_escape() {
                            Some(ch) => out.push(ch),
                            None => {
                                self.repairs += 1;
                                out.push('\u{fffd}');
                            }
                        },
                        other => {
                            self.repairs += 1;
                            out.push(other);
                        }
                    }
                }
                c => out.push(c),
            }
        }
    }

    fn hex4(&mut self) -> Option<u32> {
        let digits: String = self.chars.get(self.pos..self.pos + 4)?.iter().collect();
        let v = u32::from_str_radix(&digits, 16).ok()?;
        self.pos += 4;
        Some(v)
    }

    fn unicode_escape(&mut self) -> Option<char> {
        let hi = self.hex4()?;
        if (0xD800..0xDC00).contains(&hi) {
            if self.chars.get(self.pos) == Some(&'\\') && self.chars.get(self.pos + 1) == Some(&'u') {
                self.pos += 2;
                let lo = self.hex4()?;
                return char::from_u32(0x10000 + ((hi - 0xD800) << 10) + (lo.wrapping_sub(0xDC00) & 0x3FF));
            }
            return None;
        }
        char::from_u32(hi)
    }

    /// Reads a comma-separated sequence, returning whether the container
    /// was closed. `item` parses one element.
    fn sequence(&mut self, close: char, mut item: impl FnMut(&mut Self) -> Option<()>) -> Option<()> {
        self.pos += 1;
        let mut expect_item = true;
        let mut seen_any = false;
        loop {
            self.skip_ws();
            match self.peek() {
                None => {
                    self.repairs += 1;
                    return Some(());
                }
                Some(c) if c == close || matches!(c, ']' | ')' | '}') => {
                    if c != close {
                        self.repairs += 1;
                    }
                    if expect_item && seen_any {
                        // trailing comma
                        self.repairs += 1;
                    }
                    self.pos += 1;
                    return Some(());
                }
                Some(',') => {
                    if expect_item {
                        self.repairs += 1;
                    }
                    self.pos += 1;
                    expect_item = true;
                }
                Some(_) => {
                    if !expect_item {
                        // missing comma
                        self.repairs += 1;
                    }
                    if item(self).is_none() {
                        if self.pos < self.chars.len() {
                            return None;
                        }
                        // output cut off mid-item
                        self.repairs += 1;
                        return Some(());
                    }
                    seen_any = true;
                    expect_item = false;
                }
            }
        }
    }

    fn list(&mut self, close: char) -> Option<Loose> {
        let mut items = Vec::new();
        self.sequence(close, |r| {
            items.push(r.value()?);
            Some(())
        })?;
        Some(Loose::List(items))
    }

    fn key(&mut self) -> Option<String> {
        match self.peek()? {
            '"' => self.string('"'),
            '\'' => {
                self.repairs += 1;
                self.string('\'')
            }
            c if c.is_alphabetic() || c == '_' => {
                self.repairs += 1;
                let start = self.pos;
                while self.peek().is_some_and(|c| c.is_alphanumeric() || c == '_') {
                    self.pos += 1;
                }
                Some(self.chars[start..self.pos].iter().collect())
            }
            _ => None,
        }
    }

    fn object(&mut self) -> Option<Loose> {
        let mut entries: Vec<(String, Loose)> = Vec::new();
        self.sequence('}', |r| {
            let key = r.key()?;
            r.skip_ws();
            if r.peek() == Some(':') {
                r.pos += 1;
            } else {
                r.repairs += 1;
            }
            let value = r.value()?;
            if let Some(slot) = entries.iter_mut().find(|(k, _)| *k == key) {
                // last occurrence wins
                r.repairs += 1;
                slot.1 = value;
            } else {
                entries.push((key, value));
            }
            Some(())
        })?;
        Some(Loose::Obj(entries))
    }
}

const MAX_LIST_ATTEMPTS: usize = 256;

/// Finds the annotation list in arbitrary model output.
fn locate(chars: &[char]) -> Option<(Vec<(Loose, String)>, usize)> {
    let mut fallback = None;
    let mut attempts = 0;
    for start in (0..chars.len()).filter(|&i| chars[i] == '[') {
        attempts += 1;
        if attempts > MAX_LIST_ATTEMPTS {
            break;
        }
        if let Some(found) = read_list_at(chars, start) {
            let useful = found.0.is_empty() || found.0.iter().any(|(v, _)| matches!(v, Loose::Obj(_)));
            if useful {
                return Some(found);
            }
            fallback.get_or_insert(found);
        }
    }
    if fallback.is_some() {
        return fallback;
    }
    // A bare object with no enclosing list.
    let start = chars.iter().position(|&c| c == '{')?;
    let mut reader = Reader::new(chars, start);
    let obj = reader.value()?;
    let fragment: String = chars[start..reader.pos].iter().collect();
    Some((vec![(obj, fragment)], reader.repairs + 1))
}

fn read_list_at(chars: &[char], start: usize) -> Option<(Vec<(Loose, String)>, usize)> {
    let mut reader = Reader::new(chars, start);
    let mut items = Vec::new();
    reader.depth = 1;
    reader.sequence(']', |r| {
        r.skip_ws();
        let begin = r.pos;
        let value = r.value()?;
        let fragment: String = r.chars[begin..r.pos].iter().collect();
        items.push((value, fragment));
        Some(())
    })?;
    Some((items, reader.repairs))
}

/// Parses a model response into events, accounting for every object.
pub fn parse_response(raw: &str) -> Result<ResponseParseReport, Unparseable> {
    let chars: Vec<char> = raw.chars().collect();
    let (items, repairs) = locate(&chars).ok_or(Unparseable)?;
    let mut report = ResponseParseReport { repairs, ..Default::default() };
    for (value, fragment) in items {
        match value {
            Loose::Obj(entries) => match map_object(&entries, &mut report) {
                Ok(event) => report.events.push(event),
                Err(reason) => report.discarded.push(Discarded { fragment, reason }),
            },
            _ => report.discarded.push(Discarded { fragment, reason: DiscardReason::NotAnObject }),
        }
    }
    Ok(report)
}

fn map_object(entries: &[(String, Loose)], report: &mut ResponseParseReport) -> Result<SdohEvent, DiscardReason> {
    let get = |name: &str| {
        entries
            .iter()
            .rev()
            .find(|(k, _)| k.trim().eq_ignore_ascii_case(name))
            .map(|(_, v)| v)
            .filter(|v| !matches!(v, Loose::Null))
    };
    let sdoh = match get("sdoh") {
        Some(Loose::Str(s)) => s.parse::<SdohType>().map_err(|_| DiscardReason::UnknownSdohType(s.clone()))?,
        Some(_) => return Err(DiscardReason::UnknownSdohType(String::new())),
        None => return Err(DiscardReason::MissingSdoh),
    };
    let trigger = get("trigger").ok_or(DiscardReason::MissingTrigger)?;
    let (trigger, _) = read_span(trigger, &mut report.repairs).ok_or(DiscardReason::MalformedTrigger)?;
    let mut event = SdohEvent::new(sdoh, trigger);
    let index = report.events.len();
    for kind in ArgKind::ALL.into_iter().skip(1) {
        let Some(raw) = get(kind.as_str()) else { continue };
        let Some((span, value)) = read_span(raw, &mut report.repairs) else {
            report.dropped_fields.push(DroppedField { event_index: index, field: kind.as_str().to_string() });
            continue;
        };
        match kind {
            ArgKind::Status => event.status = Some(LabeledArg::new(span, value.as_deref())),
            ArgKind::Type => event.type_ = Some(LabeledArg::new(span, value.as_deref())),
            other => event = event.with_span(other, span),
        }
    }
    Ok(event)
}

fn read_offset(v: &Loose, repairs: &mut usize) -> Option<usize> {
    match v {
        Loose::Num(f) if *f >= 0.0 && f.fract() == 0.0 && *f < 1e12 => Some(*f as usize),
        Loose::Str(s) => {
            let n = s.trim().parse::<usize>().ok()?;
            *repairs += 1;
            Some(n)
        }
        _ => None,
    }
}

fn read_text(v: &Loose) -> Option<String> {
    match v {
        Loose::Str(s) => Some(s.clone()),
        _ => None,
    }
}

fn read_value(v: Option<&Loose>) -> Option<Option<String>> {
    match v {
        None | Some(Loose::Null) => Some(None),
        Some(Loose::Str(s)) if s.trim().is_empty() => Some(None),
        Some(Loose::Str(s)) => Some(Some(s.clone())),
        _ => None,
    }
}

/// `(start, end, "text"[, "value"])` or `{"start", "end", "text"[, "value"]}`.
fn read_span(v: &Loose, repairs: &mut usize) -> Option<(Span, Option<String>)> {
    let (start, end, text, value) = match v {
        Loose::List(items) if items.len() == 3 || items.len() == 4 => {
            (&items[0], &items[1], &items[2], items.get(3))
        }
        Loose::Obj(fields) => {
            let f = |n: &str| fields.iter().rev().find(|(k, _)| k.eq_ignore_ascii_case(n)).map(|(_, v)| v);
            (f("start")?, f("end")?, f("text")?, f("value"))
        }
        _ => return None,
    };
    let span = Span::new(read_offset(start, repairs)?, read_offset(end, repairs)?, read_text(text)?);
    Some((span, read_value(value)?))
}
