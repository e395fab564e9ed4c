//! Shared helpers for integration tests: the synthetic fixture corpus,
//! its scripted responses and the generator for the checked-in replay
//! store and prompt goldens.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use sdoh_core::brat::RoleMap;
use sdoh_core::codec::{parse_response, render_events_as, Dialect};
use sdoh_core::corpus::write_ann;
use sdoh_core::gateway::{request_hash, Exchange, ReplayStore};
use sdoh_core::manifest::RunManifest;
use sdoh_core::prompt::{build_prompt, PromptMode};
use sdoh_core::runner::prepare;
use sdoh_core::{ArgKind, SdohEvent, SdohType, Span};

pub const MODEL: &str = "fixture-model";
pub const SAMPLES: usize = 3;
/// n-shot values with recorded responses in per-sdoh mode.
pub const RECORDED_N: [usize; 3] = [0, 2, 10];

pub fn fixture_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub const MANIFEST: &str = r#"version = 1

[corpus]
train = "corpus/train"
test = "corpus/test"
target = "test"

[prompt]
mode = "per-sdoh"

[few_shot]
n = 2
seed = 7

[consistency]
k = 3
threshold = 2

[backend]
kind = "replay"
model = "fixture-model"
store = "store"

[output]
dir = "runs"
"#;

/// One annotated event, located by substrings of its sentence.
pub struct Ev {
    pub sdoh: SdohType,
    pub trigger: &'static str,
    pub status: (&'static str, &'static str),
    pub type_: Option<(&'static str, Option<&'static str>)>,
    pub args: &'static [(ArgKind, &'static str)],
}

const fn ev(sdoh: SdohType, trigger: &'static str, status: (&'static str, &'static str)) -> Ev {
    Ev { sdoh, trigger, status, type_: None, args: &[] }
}

impl Ev {
    const fn ty(mut self, text: &'static str, value: Option<&'static str>) -> Ev {
        self.type_ = Some((text, value));
        self
    }

    const fn args(mut self, args: &'static [(ArgKind, &'static str)]) -> Ev {
        self.args = args;
        self
    }
}

pub struct Sentence(pub &'static str, pub Vec<Ev>);

pub struct FixtureNote {
    pub id: String,
    pub text: String,
    pub gold: Vec<SdohEvent>,
    /// Events with an illegal status value that every response but one
    /// contains; post-processing must remove them.
    pub noise: Vec<SdohEvent>,
    pub annotated: bool,
}

const PREFIX: &str = "SOCIAL HISTORY: ";

fn chars_before(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

fn locate(text: &str, sentence_start: usize, needle: &str) -> Span {
    let rel = text[sentence_start..].find(needle).unwrap_or_else(|| panic!("{needle:?} not in {text:?}"));
    let start = chars_before(text, sentence_start + rel);
    Span::new(start, start + needle.chars().count(), needle)
}

fn to_event(text: &str, at: usize, e: &Ev) -> SdohEvent {
    let mut event = SdohEvent::new(e.sdoh, locate(text, at, e.trigger)).with_status(locate(text, at, e.status.0), e.status.1);
    if let Some((t, v)) = e.type_ {
        event = event.with_type(locate(text, at, t), v);
    }
    for &(kind, needle) in e.args {
        event = event.with_span(kind, locate(text, at, needle));
    }
    event
}

fn compose(id: &str, sentences: Vec<Sentence>, noise: Vec<Sentence>, annotated: bool) -> FixtureNote {
    let mut text = PREFIX.to_string();
    let mut starts = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            text.push(' ');
        }
        starts.push(text.len());
        text.push_str(s.0);
    }
    let mut gold = Vec::new();
    for (s, &at) in sentences.iter().zip(&starts) {
        gold.extend(s.1.iter().map(|e| to_event(&text, at, e)));
    }
    let noise = noise
        .iter()
        .flat_map(|s| {
            let at = text.find(s.0).expect("noise sentence is part of the note");
            s.1.iter().map(|e| to_event(&text, at, e)).collect::<Vec<_>>()
        })
        .collect();
    FixtureNote { id: id.to_string(), text, gold, noise, annotated }
}

use ArgKind::{Amount, Frequency, History, Method};
use SdohType::{Alcohol, Drug, Employment, LivingStatus, Tobacco};

pub fn test_notes() -> Vec<FixtureNote> {
    vec![
        compose(
            "note-01",
            vec![
                Sentence(
                    "Lives with his wife in Seattle.",
                    vec![ev(LivingStatus, "Lives", ("Lives", "current")).ty("with his wife", Some("with_family"))],
                ),
                Sentence("Works as a carpenter.", vec![ev(Employment, "Works", ("Works", "employed")).ty("carpenter", None)]),
                Sentence(
                    "Smokes 1 ppd for 20 years.",
                    vec![ev(Tobacco, "Smokes", ("Smokes", "current"))
                        .args(&[(Amount, "1 ppd"), (ArgKind::Duration, "for 20 years")])],
                ),
                Sentence(
                    "Drinks 2 beers daily.",
                    vec![ev(Alcohol, "Drinks", ("Drinks", "current")).args(&[(Amount, "2 beers"), (Frequency, "daily")])],
                ),
                Sentence("Denies illicit drug use.", vec![ev(Drug, "illicit drug use", ("Denies", "none"))]),
            ],
            vec![],
            true,
        ),
        compose(
            "note-02",
            vec![
                Sentence(
                    "Retired teacher, lives alone in an apartment.",
                    vec![
                        ev(Employment, "teacher", ("Retired", "retired")),
                        ev(LivingStatus, "lives", ("lives", "current")).ty("alone", Some("alone")),
                    ],
                ),
                Sentence(
                    "Former smoker, quit 10 years ago.",
                    vec![ev(Tobacco, "smoker", ("Former", "past")).args(&[(History, "10 years ago")])],
                ),
                Sentence("Occasional wine.", vec![ev(Alcohol, "wine", ("wine", "current")).args(&[(Frequency, "Occasional")])]),
                Sentence("No drug use.", vec![ev(Drug, "drug use", ("No", "none"))]),
            ],
            vec![],
            true,
        ),
        compose(
            "note-03",
            vec![
                Sentence(
                    "Homeless, staying at a shelter.",
                    vec![ev(LivingStatus, "staying", ("staying", "current")).ty("Homeless", Some("homeless"))],
                ),
                Sentence("Unemployed.", vec![ev(Employment, "Unemployed", ("Unemployed", "unemployed"))]),
                Sentence(
                    "Uses IV heroin daily.",
                    vec![ev(Drug, "Uses", ("Uses", "current")).ty("heroin", None).args(&[(Method, "IV"), (Frequency, "daily")])],
                ),
                Sentence(
                    "Drinks a pint of vodka every day.",
                    vec![ev(Alcohol, "Drinks", ("Drinks", "current"))
                        .ty("vodka", None)
                        .args(&[(Amount, "a pint"), (Frequency, "every day")])],
                ),
            ],
            vec![],
            true,
        ),
        compose(
            "note-04",
            vec![
                Sentence(
                    "College student living with roommates.",
                    vec![
                        ev(Employment, "student", ("student", "student")),
                        ev(LivingStatus, "living", ("living", "current")).ty("with roommates", Some("with_others")),
                    ],
                ),
                Sentence("Never smoked.", vec![ev(Tobacco, "smoked", ("Never", "none"))]),
                Sentence("Social drinker.", vec![ev(Alcohol, "drinker", ("drinker", "current")).args(&[(Frequency, "Social")])]),
            ],
            vec![Sentence("College student", vec![ev(Drug, "College", ("College", "unknown"))])],
            true,
        ),
        compose(
            "note-05",
            vec![
                Sentence(
                    "Homemaker, lives with husband and two children.",
                    vec![
                        ev(Employment, "Homemaker", ("Homemaker", "homemaker")),
                        ev(LivingStatus, "lives", ("lives", "current")).ty("with husband and two children", Some("with_family")),
                    ],
                ),
                Sentence("Quit cocaine in 2005.", vec![ev(Drug, "cocaine", ("Quit", "past")).args(&[(History, "in 2005")])]),
                Sentence("Chews tobacco.", vec![ev(Tobacco, "Chews", ("Chews", "current")).ty("tobacco", None)]),
            ],
            vec![],
            true,
        ),
    ]
}

fn living(i: usize) -> Sentence {
    match i % 4 {
        0 => Sentence("Lives alone.", vec![ev(LivingStatus, "Lives", ("Lives", "current")).ty("alone", Some("alone"))]),
        1 => Sentence(
            "Lives with her husband.",
            vec![ev(LivingStatus, "Lives", ("Lives", "current")).ty("with her husband", Some("with_family"))],
        ),
        2 => Sentence(
            "Lives with two roommates.",
            vec![ev(LivingStatus, "Lives", ("Lives", "current")).ty("with two roommates", Some("with_others"))],
        ),
        _ => Sentence(
            "Currently homeless.",
            vec![ev(LivingStatus, "Currently", ("Currently", "current")).ty("homeless", Some("homeless"))],
        ),
    }
}

fn employment(i: usize) -> Sentence {
    match i % 4 {
        0 => Sentence("Works as a nurse.", vec![ev(Employment, "Works", ("Works", "employed")).ty("nurse", None)]),
        1 => Sentence("Retired mechanic.", vec![ev(Employment, "mechanic", ("Retired", "retired"))]),
        2 => Sentence("Unemployed.", vec![ev(Employment, "Unemployed", ("Unemployed", "unemployed"))]),
        _ => Sentence("Full-time student.", vec![ev(Employment, "student", ("student", "student"))]),
    }
}

fn tobacco(i: usize) -> Sentence {
    match i % 3 {
        0 => Sentence(
            "Smokes half a pack daily.",
            vec![ev(Tobacco, "Smokes", ("Smokes", "current")).args(&[(Amount, "half a pack"), (Frequency, "daily")])],
        ),
        1 => Sentence("Quit smoking in 2010.", vec![ev(Tobacco, "smoking", ("Quit", "past")).args(&[(History, "in 2010")])]),
        _ => Sentence("Never smoker.", vec![ev(Tobacco, "smoker", ("Never", "none"))]),
    }
}

fn alcohol(i: usize) -> Sentence {
    match i % 2 {
        0 => Sentence(
            "Drinks wine on weekends.",
            vec![ev(Alcohol, "Drinks", ("Drinks", "current")).ty("wine", None).args(&[(Frequency, "on weekends")])],
        ),
        _ => Sentence("Denies alcohol use.", vec![ev(Alcohol, "alcohol use", ("Denies", "none"))]),
    }
}

fn drug(i: usize) -> Sentence {
    match (i / 2) % 2 {
        0 => Sentence("Denies drug use.", vec![ev(Drug, "drug use", ("Denies", "none"))]),
        _ => Sentence(
            "Smokes marijuana occasionally.",
            vec![ev(Drug, "marijuana", ("Smokes", "current")).args(&[(Method, "Smokes"), (Frequency, "occasionally")])],
        ),
    }
}

/// Twelve training notes; the last one has no annotation file.
pub fn train_notes() -> Vec<FixtureNote> {
    (0..12)
        .map(|i| {
            let sentences = vec![living(i), employment(i + 1), tobacco(i), alcohol(i), drug(i)];
            compose(&format!("train-{:02}", i + 1), sentences, vec![], i < 11)
        })
        .collect()
}

fn shifted(event: &SdohEvent) -> SdohEvent {
    let mut e = event.clone();
    for (_, span) in e.spans_mut() {
        span.start += 1;
        span.end += 1;
    }
    e
}

fn without_optional_args(event: &SdohEvent) -> SdohEvent {
    let mut e = event.clone();
    for kind in ArgKind::SPAN_ONLY {
        e.clear(kind);
    }
    e
}

/// Scripted completion for one note, prompt family and sample index.
///
/// * sample 0: tuple dialect, every event plus the noise events;
/// * sample 1: fenced JSON, the first event's offsets one character to
///   the right, plus a spurious event nobody else proposes;
/// * sample 2: prose preface, the first event without its span-only
///   arguments, the noise events, and the closing bracket cut off.
///
/// Zero-shot responses consistently omit span-only arguments.
pub fn scripted_response(note: &FixtureNote, family: Option<SdohType>, sample: usize, n_shot: usize) -> String {
    let in_family = |e: &&SdohEvent| family.is_none_or(|f| e.sdoh == f);
    let mut events: Vec<SdohEvent> = note.gold.iter().filter(in_family).cloned().collect();
    if n_shot == 0 {
        events = events.iter().map(without_optional_args).collect();
    }
    let noise: Vec<SdohEvent> = note.noise.iter().filter(in_family).cloned().collect();
    match sample {
        0 => {
            events.extend(noise);
            render_events_as(&events, Dialect::Tuple)
        }
        1 => {
            if let Some(first) = events.first_mut() {
                *first = shifted(first);
            }
            // "HISTORY" in the shared prefix is never a gold trigger
            let sdoh = family.unwrap_or(SdohType::Drug);
            let span = Span::new(7, 14, "HISTORY");
            events.push(SdohEvent::new(sdoh, span.clone()).with_status(span, sdoh.status_values()[0]));
            format!("```json\n{}\n```\n", render_events_as(&events, Dialect::Json))
        }
        _ => {
            if let Some(first) = events.first_mut() {
                *first = without_optional_args(first);
            }
            events.extend(noise);
            let body = render_events_as(&events, Dialect::Tuple);
            let cut = body.trim_end().strip_suffix(']').unwrap_or(&body).to_string();
            format!("Here are the annotations for this note:\n\n{cut}")
        }
    }
}

fn write_notes(dir: &Path, notes: &[FixtureNote]) {
    fs::create_dir_all(dir).unwrap();
    let roles = RoleMap::default();
    for n in notes {
        fs::write(dir.join(format!("{}.txt", n.id)), &n.text).unwrap();
        if n.annotated {
            write_ann(dir, &n.id, &n.gold, &n.text, &roles).unwrap();
        }
    }
}

pub fn manifest_at(root: &Path) -> RunManifest {
    RunManifest::load(&root.join("manifest.toml")).unwrap()
}

/// Writes the whole fixture tree (corpus, manifest, replay store and
/// prompt goldens) under `root`.
pub fn generate_fixture(root: &Path) {
    write_notes(&root.join("corpus/train"), &train_notes());
    write_notes(&root.join("corpus/test"), &test_notes());
    fs::write(root.join("manifest.toml"), MANIFEST).unwrap();
    fs::write(root.join(".gitignore"), "runs/\n").unwrap();
    let notes = test_notes();
    let base = manifest_at(root);
    let store = ReplayStore::open(&root.join("store")).unwrap();

    let mut variants: Vec<(PromptMode, usize)> = RECORDED_N.iter().map(|&n| (PromptMode::PerSdoh, n)).collect();
    variants.push((PromptMode::AllAtOnce, 2));
    for (mode, n) in variants {
        let mut m = base.clone();
        m.prompt.mode = mode;
        m.few_shot.n = n;
        let prepared = prepare(&m).unwrap();
        let mut exchanges = Vec::new();
        for doc in &prepared.notes {
            let note = notes.iter().find(|f| f.id == doc.id).unwrap();
            for family in mode.families() {
                let request = build_prompt(&prepared.plan.builder, &prepared.plan.examples, doc, family).unwrap();
                for sample in 0..SAMPLES {
                    let response = scripted_response(note, family, sample, n);
                    assert!(parse_response(&response).is_ok(), "scripted response must parse: {response}");
                    exchanges.push(Exchange {
                        hash: request_hash(MODEL, &request, sample),
                        model: MODEL.into(),
                        note_id: doc.id.clone(),
                        sdoh: family.map(|f| f.to_string()),
                        sample_index: sample,
                        response,
                        latency_ms: 0,
                        timestamp: 0,
                    });
                }
            }
        }
        store.record_run(&exchanges).unwrap();
    }

    let golden = root.join("golden");
    fs::create_dir_all(&golden).unwrap();
    for (name, text) in golden_prompts(root) {
        fs::write(golden.join(name), text).unwrap();
    }
}

/// The two pinned prompts: all-at-once zero-shot and per-sdoh Drug
/// two-shot, both for the first test note.
pub fn golden_prompts(root: &Path) -> Vec<(&'static str, String)> {
    let base = manifest_at(root);
    let mut out = Vec::new();
    for (name, mode, n, family) in [
        ("all_at_once_n0.txt", PromptMode::AllAtOnce, 0, None),
        ("per_sdoh_drug_n2.txt", PromptMode::PerSdoh, 2, Some(SdohType::Drug)),
    ] {
        let mut m = base.clone();
        m.prompt.mode = mode;
        m.few_shot.n = n;
        let prepared = prepare(&m).unwrap();
        let note = &prepared.notes[0];
        let request = build_prompt(&prepared.plan.builder, &prepared.plan.examples, note, family).unwrap();
        out.push((name, request.rendered_text));
    }
    out
}

/// Every file under `root`, as (relative path, bytes), sorted.
pub fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    if root.exists() {
        walk(root, root, &mut out);
    }
    out.sort();
    out
}
