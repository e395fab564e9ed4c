//! BRAT standoff (`.ann`) parsing, serialization and conversion to events.
//!
//! Only contiguous text-bound annotations (`T`), events (`E`) and
//! attributes (`A`) are interpreted. Any other line is carried verbatim.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::event::{char_len, char_slice, ArgKind, LabeledArg, SdohEvent, SdohType, Span};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BratError {
    #[error("line {line}: malformed record ({reason})")]
    MalformedLine { line: usize, reason: String },
    #[error("dangling reference to `{0}`")]
    DanglingReference(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("{id}: offsets {start}..{end} outside note of length {len}")]
    OffsetOutOfBounds { id: String, start: usize, end: usize, len: usize },
    #[error("{id}: annotation text {found:?} does not match note text {expected:?}")]
    SpanTextMismatch { id: String, expected: String, found: String },
    #[error("unknown argument role `{0}`")]
    UnknownRole(String),
    #[error("unknown trigger label `{0}`")]
    UnknownTriggerLabel(String),
    #[error("{kind} span {start}..{end} is outside the note")]
    SpanOutOfBounds { kind: ArgKind, start: usize, end: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BratEntity {
    pub id: String,
    pub label: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BratEventLine {
    pub id: String,
    /// Event type written before the trigger reference (`Alcohol:T1`).
    pub label: String,
    pub trigger_ref: String,
    pub args: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BratAttribute {
    pub id: String,
    pub name: String,
    pub target: String,
    /// Empty for binary attributes.
    pub value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BratDocument {
    pub doc_id: String,
    pub entities: Vec<BratEntity>,
    pub event_lines: Vec<BratEventLine>,
    pub attributes: Vec<BratAttribute>,
    /// Comments and unsupported record kinds, in file order.
    pub other_lines: Vec<String>,
}

impl BratDocument {
    pub fn record_count(&self) -> usize {
        self.entities.len() + self.event_lines.len() + self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_count() == 0 && self.other_lines.is_empty()
    }

    pub fn entity(&self, id: &str) -> Option<&BratEntity> {
        self.entities.iter().find(|e| e.id == id)
    }
}

/// Names used in `.ann` files for argument entities, event roles and
/// attributes. Defaults follow the SHAC corpus conventions; a TOML file
/// with the same fields can override any subset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleMap {
    pub roles: RoleNames,
    pub entity_labels: EntityLabels,
    pub attributes: AttributeNames,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleNames {
    pub status: String,
    pub type_: String,
    pub duration: String,
    pub history: String,
    pub frequency: String,
    pub amount: String,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntityLabels {
    pub status_time: String,
    pub status_employ: String,
    pub type_living: String,
    pub type_: String,
    pub duration: String,
    pub history: String,
    pub frequency: String,
    pub amount: String,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeNames {
    pub status_time: String,
    pub status_employ: String,
    pub type_living: String,
}

impl Default for RoleNames {
    fn default() -> Self {
        RoleNames {
            status: "Status".into(),
            type_: "Type".into(),
            duration: "Duration".into(),
            history: "History".into(),
            frequency: "Frequency".into(),
            amount: "Amount".into(),
            method: "Method".into(),
        }
    }
}

impl Default for EntityLabels {
    fn default() -> Self {
        EntityLabels {
            status_time: "StatusTime".into(),
            status_employ: "StatusEmploy".into(),
            type_living: "TypeLiving".into(),
            type_: "Type".into(),
            duration: "Duration".into(),
            history: "History".into(),
            frequency: "Frequency".into(),
            amount: "Amount".into(),
            method: "Method".into(),
        }
    }
}

impl Default for AttributeNames {
    fn default() -> Self {
        AttributeNames {
            status_time: "StatusTimeVal".into(),
            status_employ: "StatusEmployVal".into(),
            type_living: "TypeLivingVal".into(),
        }
    }
}

impl RoleMap {
    pub fn from_toml(text: &str) -> Result<RoleMap, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> std::io::Result<RoleMap> {
        let text = std::fs::read_to_string(path)?;
        RoleMap::from_toml(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    fn role_name(&self, kind: ArgKind) -> &str {
        let r = &self.roles;
        match kind {
            ArgKind::Status => &r.status,
            ArgKind::Type => &r.type_,
            ArgKind::Duration => &r.duration,
            ArgKind::History => &r.history,
            ArgKind::Frequency => &r.frequency,
            ArgKind::Amount => &r.amount,
            ArgKind::Method => &r.method,
            ArgKind::Trigger => "",
        }
    }

    fn role_kind(&self, role: &str) -> Option<ArgKind> {
        ArgKind::ALL[1..].iter().copied().find(|k| self.role_name(*k) == role)
    }

    fn entity_label(&self, sdoh: SdohType, kind: ArgKind) -> String {
        let l = &self.entity_labels;
        match kind {
            ArgKind::Trigger => sdoh.as_str().to_string(),
            ArgKind::Status if sdoh == SdohType::Employment => l.status_employ.clone(),
            ArgKind::Status => l.status_time.clone(),
            ArgKind::Type if sdoh == SdohType::LivingStatus => l.type_living.clone(),
            ArgKind::Type => l.type_.clone(),
            ArgKind::Duration => l.duration.clone(),
            ArgKind::History => l.history.clone(),
            ArgKind::Frequency => l.frequency.clone(),
            ArgKind::Amount => l.amount.clone(),
            ArgKind::Method => l.method.clone(),
        }
    }

    fn value_attribute(&self, sdoh: SdohType, kind: ArgKind) -> Option<&str> {
        let a = &self.attributes;
        match kind {
            ArgKind::Status if sdoh == SdohType::Employment => Some(&a.status_employ),
            ArgKind::Status => Some(&a.status_time),
            ArgKind::Type if sdoh == SdohType::LivingStatus => Some(&a.type_living),
            _ => None,
        }
    }

    fn is_value_attribute(&self, name: &str) -> bool {
        let a = &self.attributes;
        name == a.status_time || name == a.status_employ || name == a.type_living
    }
}

fn malformed(line: usize, reason: impl Into<String>) -> BratError {
    BratError::MalformedLine { line, reason: reason.into() }
}

/// Text fields in `.ann` files cannot hold line breaks or tabs; BRAT
/// writes them as spaces.
fn ann_text(raw: &str) -> String {
    raw.chars().map(|c| if matches!(c, '\n' | '\r' | '\t') { ' ' } else { c }).collect()
}

fn id_number(id: &str) -> u64 {
    id[1..].parse().unwrap_or(u64::MAX)
}

fn valid_id(id: &str, prefix: char) -> bool {
    id.len() > 1 && id.starts_with(prefix) && id[1..].chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses a standoff file and checks it against its companion note.
pub fn parse_brat(ann_text: &str, note_text: &str) -> Result<BratDocument, BratError> {
    let mut doc = BratDocument::default();
    let note_len = char_len(note_text);
    let mut seen = HashSet::new();

    for (idx, raw) in ann_text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let first = line.chars().next().unwrap_or(' ');
        match first {
            'T' | 'E' | 'A' => {}
            _ => {
                doc.other_lines.push(line.to_string());
                continue;
            }
        }
        let mut fields = line.splitn(3, '\t');
        let id = fields.next().unwrap_or_default();
        let body = fields.next().ok_or_else(|| malformed(line_no, "missing tab separator"))?;
        if !valid_id(id, first) {
            return Err(malformed(line_no, format!("bad id `{id}`")));
        }
        if !seen.insert(id.to_string()) {
            return Err(BratError::DuplicateId(id.to_string()));
        }
        match first {
            'T' => {
                let text = fields.next().ok_or_else(|| malformed(line_no, "missing text field"))?;
                if body.contains(';') {
                    return Err(malformed(line_no, "discontinuous spans are not supported"));
                }
                let parts: Vec<&str> = body.split(' ').collect();
                if parts.len() != 3 || parts[0].is_empty() {
                    return Err(malformed(line_no, "expected `<label> <start> <end>`"));
                }
                let start: usize = parts[1].parse().map_err(|_| malformed(line_no, "bad start offset"))?;
                let end: usize = parts[2].parse().map_err(|_| malformed(line_no, "bad end offset"))?;
                if start >= end || end > note_len {
                    return Err(BratError::OffsetOutOfBounds { id: id.to_string(), start, end, len: note_len });
                }
                let expected = char_slice(note_text, start, end).unwrap_or_default();
                if ann_text_eq(text, expected) {
                    doc.entities.push(BratEntity {
                        id: id.to_string(),
                        label: parts[0].to_string(),
                        start,
                        end,
                        text: text.to_string(),
                    });
                } else {
                    return Err(BratError::SpanTextMismatch {
                        id: id.to_string(),
                        expected: expected.to_string(),
                        found: text.to_string(),
                    });
                }
            }
            'E' => {
                if fields.next().is_some_and(|rest| !rest.trim().is_empty()) {
                    return Err(malformed(line_no, "unexpected trailing field"));
                }
                let mut pairs = body.split_whitespace().map(|tok| {
                    tok.split_once(':')
                        .filter(|(r, t)| !r.is_empty() && !t.is_empty())
                        .ok_or_else(|| malformed(line_no, format!("bad role token `{tok}`")))
                });
                let (label, trigger) = pairs.next().ok_or_else(|| malformed(line_no, "empty event"))??;
                let args = pairs
                    .map(|p| p.map(|(r, t)| (r.to_string(), t.to_string())))
                    .collect::<Result<Vec<_>, _>>()?;
                doc.event_lines.push(BratEventLine {
                    id: id.to_string(),
                    label: label.to_string(),
                    trigger_ref: trigger.to_string(),
                    args,
                });
            }
            _ => {
                if fields.next().is_some_and(|rest| !rest.trim().is_empty()) {
                    return Err(malformed(line_no, "unexpected trailing field"));
                }
                let parts: Vec<&str> = body.split(' ').collect();
                let (name, target, value) = match parts.as_slice() {
                    [n, t] => (*n, *t, ""),
                    [n, t, v] => (*n, *t, *v),
                    _ => return Err(malformed(line_no, "expected `<name> <target> [<value>]`")),
                };
                if name.is_empty() || target.is_empty() || (parts.len() == 3 && value.is_empty()) {
                    return Err(malformed(line_no, "empty attribute field"));
                }
                doc.attributes.push(BratAttribute {
                    id: id.to_string(),
                    name: name.to_string(),
                    target: target.to_string(),
                    value: value.to_string(),
                });
            }
        }
    }
    check_references(&doc)?;
    Ok(doc)
}

fn ann_text_eq(found: &str, expected: &str) -> bool {
    found == expected || found == ann_text(expected)
}

fn check_references(doc: &BratDocument) -> Result<(), BratError> {
    let entity_ids: HashSet<&str> = doc.entities.iter().map(|e| e.id.as_str()).collect();
    let event_ids: HashSet<&str> = doc.event_lines.iter().map(|e| e.id.as_str()).collect();
    for ev in &doc.event_lines {
        if !entity_ids.contains(ev.trigger_ref.as_str()) {
            return Err(BratError::DanglingReference(ev.trigger_ref.clone()));
        }
        for (_, target) in &ev.args {
            // BRAT allows events as arguments of other events.
            if !entity_ids.contains(target.as_str()) && !event_ids.contains(target.as_str()) {
                return Err(BratError::DanglingReference(target.clone()));
            }
        }
    }
    let mut attr_keys = HashSet::new();
    for attr in &doc.attributes {
        if !entity_ids.contains(attr.target.as_str()) && !event_ids.contains(attr.target.as_str()) {
            return Err(BratError::DanglingReference(attr.target.clone()));
        }
        if !attr_keys.insert((attr.name.as_str(), attr.target.as_str())) {
            return Err(BratError::DuplicateId(format!("{} on {}", attr.name, attr.target)));
        }
    }
    Ok(())
}

/// Writes a document as tab-separated standoff lines: entities, events
/// and attributes each in ascending id order, then carried-over lines.
pub fn serialize_brat(doc: &BratDocument) -> String {
    let mut out = String::new();
    let mut entities: Vec<&BratEntity> = doc.entities.iter().collect();
    entities.sort_by_key(|e| (id_number(&e.id), e.id.clone()));
    for e in entities {
        let _ = writeln!(out, "{}\t{} {} {}\t{}", e.id, e.label, e.start, e.end, ann_text(&e.text));
    }
    let mut events: Vec<&BratEventLine> = doc.event_lines.iter().collect();
    events.sort_by_key(|e| (id_number(&e.id), e.id.clone()));
    for e in events {
        let _ = write!(out, "{}\t{}:{}", e.id, e.label, e.trigger_ref);
        for (role, target) in &e.args {
            let _ = write!(out, " {role}:{target}");
        }
        out.push('\n');
    }
    let mut attrs: Vec<&BratAttribute> = doc.attributes.iter().collect();
    attrs.sort_by_key(|a| (id_number(&a.id), a.id.clone()));
    for a in attrs {
        if a.value.is_empty() {
            let _ = writeln!(out, "{}\t{} {}", a.id, a.name, a.target);
        } else {
            let _ = writeln!(out, "{}\t{} {} {}", a.id, a.name, a.target, a.value);
        }
    }
    for line in &doc.other_lines {
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// `Type2` -> `Type`: BRAT numbers repeated roles within one event.
fn base_role(role: &str) -> &str {
    role.trim_end_matches(|c: char| c.is_ascii_digit())
}

/// One event per `E` line. When a role repeats within an event only its
/// first occurrence is kept, since events hold one argument per kind.
pub fn brat_to_events(doc: &BratDocument, note_text: &str, roles: &RoleMap) -> Result<Vec<SdohEvent>, BratError> {
    let entities: HashMap<&str, &BratEntity> = doc.entities.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut values: HashMap<&str, Vec<&BratAttribute>> = HashMap::new();
    for attr in &doc.attributes {
        values.entry(attr.target.as_str()).or_default().push(attr);
    }
    let span_of = |id: &str| -> Result<Span, BratError> {
        let ent = entities.get(id).ok_or_else(|| BratError::DanglingReference(id.to_string()))?;
        Span::from_note(note_text, ent.start, ent.end).ok_or_else(|| BratError::OffsetOutOfBounds {
            id: id.to_string(),
            start: ent.start,
            end: ent.end,
            len: char_len(note_text),
        })
    };
    let value_of = |id: &str, wanted: Option<&str>| -> Option<String> {
        let attrs = values.get(id)?;
        attrs
            .iter()
            .find(|a| wanted.map_or(roles.is_value_attribute(&a.name), |w| a.name == w))
            .or_else(|| attrs.iter().find(|a| roles.is_value_attribute(&a.name)))
            .map(|a| a.value.clone())
    };

    let mut events = Vec::with_capacity(doc.event_lines.len());
    let mut lines: Vec<&BratEventLine> = doc.event_lines.iter().collect();
    lines.sort_by_key(|e| (id_number(&e.id), e.id.clone()));
    for line in lines {
        let trigger_ent =
            entities.get(line.trigger_ref.as_str()).ok_or_else(|| BratError::DanglingReference(line.trigger_ref.clone()))?;
        let sdoh: SdohType = trigger_ent
            .label
            .parse()
            .map_err(|_| BratError::UnknownTriggerLabel(trigger_ent.label.clone()))?;
        let mut event = SdohEvent::new(sdoh, span_of(&line.trigger_ref)?);
        for (role, target) in &line.args {
            let kind = roles.role_kind(base_role(role)).ok_or_else(|| BratError::UnknownRole(role.clone()))?;
            if event.span_of(kind).is_some() {
                log::warn!("{}: repeated role `{role}` ignored", line.id);
                continue;
            }
            let span = span_of(target)?;
            match kind {
                ArgKind::Status | ArgKind::Type => {
                    let value = value_of(target, roles.value_attribute(sdoh, kind));
                    let arg = LabeledArg::new(span, value.as_deref().filter(|v| !v.is_empty()));
                    if kind == ArgKind::Status {
                        event.status = Some(arg);
                    } else {
                        event.type_ = Some(arg);
                    }
                }
                other => event = event.with_span(other, span),
            }
        }
        events.push(event);
    }
    Ok(events)
}

/// Encodes events as standoff records. Ids are assigned in event order,
/// trigger entity first; spans shared between events are not merged.
pub fn events_to_brat(events: &[SdohEvent], note_text: &str, roles: &RoleMap) -> Result<BratDocument, BratError> {
    let mut doc = BratDocument::default();
    let (mut t, mut a) = (0usize, 0usize);
    for (i, event) in events.iter().enumerate() {
        let mut args = Vec::new();
        let mut trigger_ref = String::new();
        for kind in event.present_kinds() {
            let span = event.span_of(kind).expect("present kind");
            let text = char_slice(note_text, span.start, span.end)
                .filter(|_| span.start < span.end)
                .ok_or(BratError::SpanOutOfBounds { kind, start: span.start, end: span.end })?;
            t += 1;
            let id = format!("T{t}");
            doc.entities.push(BratEntity {
                id: id.clone(),
                label: roles.entity_label(event.sdoh, kind),
                start: span.start,
                end: span.end,
                text: ann_text(text),
            });
            if kind == ArgKind::Trigger {
                trigger_ref = id.clone();
            } else {
                args.push((roles.role_name(kind).to_string(), id.clone()));
            }
            if let (Some(name), Some(value)) = (roles.value_attribute(event.sdoh, kind), event.value_of(kind)) {
                a += 1;
                doc.attributes.push(BratAttribute {
                    id: format!("A{a}"),
                    name: name.to_string(),
                    target: id,
                    value: value.to_string(),
                });
            }
        }
        doc.event_lines.push(BratEventLine {
            id: format!("E{}", i + 1),
            label: event.sdoh.as_str().to_string(),
            trigger_ref,
            args,
        });
    }
    Ok(doc)
}

/// A record-set view for order-insensitive comparison.
pub fn record_set(doc: &BratDocument) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for e in &doc.entities {
        out.insert(e.id.clone(), format!("{} {} {} {}", e.label, e.start, e.end, e.text));
    }
    for e in &doc.event_lines {
        let args: Vec<String> = e.args.iter().map(|(r, t)| format!("{r}:{t}")).collect();
        out.insert(e.id.clone(), format!("{}:{} {}", e.label, e.trigger_ref, args.join(" ")));
    }
    for a in &doc.attributes {
        out.insert(a.id.clone(), format!("{} {} {}", a.name, a.target, a.value));
    }
    for (i, l) in doc.other_lines.iter().enumerate() {
        out.insert(format!("#{i}"), l.clone());
    }
    out
}
