//! Corpus-level workflows behind the command line: extract, score, sweep
//! and format conversion.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::brat::{brat_to_events, events_to_brat, parse_brat, serialize_brat, RoleMap};
use crate::codec::{parse_response, render_events_as, Dialect};
use crate::corpus::{load_corpus, load_predictions, write_ann, CorpusError};
use crate::event::{validate_event, NoteDocument, SdohEvent, Split};
use crate::gateway::{connect, CompletionBackend};
use crate::manifest::{ManifestError, RunManifest};
use crate::pipeline::{run_note, NoteError, NoteLog, RunPlan};
use crate::prompt::{select_few_shot, FewShotConfig, PromptMode};
use crate::scorer::{aggregate, error_report, score_document, summarize_errors, CountTable, ErrorTag, ScoreReport};

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("backend: {0}")]
    Backend(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Data(_) => 2,
            RunError::Backend(_) => 3,
        }
    }
}

impl From<ManifestError> for RunError {
    fn from(e: ManifestError) -> Self {
        RunError::Config(e.to_string())
    }
}

impl From<CorpusError> for RunError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Missing(_) => RunError::Config(e.to_string()),
            other => RunError::Data(other.to_string()),
        }
    }
}

fn io_data(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |e| RunError::Data(format!("{}: {e}", path.display()))
}

/// Creates `<root>/<base>`, or `<base>-2`, `<base>-3`, ... if taken.
pub fn create_run_dir(root: &Path, base: &str) -> Result<(String, PathBuf), RunError> {
    fs::create_dir_all(root).map_err(io_data(root))?;
    for i in 1.. {
        let id = if i == 1 { base.to_string() } else { format!("{base}-{i}") };
        let dir = root.join(&id);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((id, dir)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_data(&dir)(e)),
        }
    }
    unreachable!()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FailedNote {
    pub note_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub manifest_hash: String,
    #[serde(skip)]
    pub out_dir: PathBuf,
    pub mode: PromptMode,
    pub n_shot: usize,
    pub examples: Vec<String>,
    pub unannotated_examples: usize,
    pub notes: usize,
    pub succeeded: usize,
    pub failed: Vec<FailedNote>,
    pub completions: usize,
    #[serde(skip)]
    pub report: Option<ScoreReport>,
    #[serde(skip)]
    pub predictions: BTreeMap<String, Vec<SdohEvent>>,
}

impl RunSummary {
    /// Exit code for a finished run: backend failures on any note make it 3.
    pub fn exit_code(&self) -> i32 {
        if self.failed.is_empty() {
            0
        } else {
            3
        }
    }
}

/// Everything loaded and checked before the first completion request.
pub struct Prepared {
    pub manifest: RunManifest,
    pub roles: RoleMap,
    pub notes: Vec<NoteDocument>,
    pub plan: RunPlan,
    pub unannotated_examples: usize,
}

pub fn prepare(manifest: &RunManifest) -> Result<Prepared, RunError> {
    manifest.validate()?;
    let roles = manifest.role_map()?;
    let target = manifest.corpus.target;
    let dir = manifest.split_dir(target).expect("validated");
    let notes = load_corpus(&dir, target, &roles)?;
    let (examples, unannotated) = if manifest.few_shot.n == 0 {
        (Vec::new(), 0)
    } else {
        let source = manifest.few_shot_source().expect("validated");
        let pool = load_corpus(&source, Split::Train, &roles)?;
        let config = FewShotConfig {
            n: manifest.few_shot.n,
            seed: manifest.few_shot.seed,
            allowlist: manifest.few_shot.allowlist.clone(),
        };
        let sel = select_few_shot(&config, &pool).map_err(|e| RunError::Config(e.to_string()))?;
        if sel.unannotated > 0 {
            log::warn!("{} few-shot examples have no gold events", sel.unannotated);
        }
        (sel.examples, sel.unannotated)
    };
    let plan = RunPlan {
        builder: manifest.prompt_builder()?,
        examples,
        consistency: manifest.consistency,
        post: manifest.postprocess,
    };
    Ok(Prepared { manifest: manifest.clone(), roles, notes, plan, unannotated_examples: unannotated })
}

/// Runs the pipeline over the target split with the manifest's backend.
pub fn extract(manifest: &RunManifest) -> Result<RunSummary, RunError> {
    let prepared = prepare(manifest)?;
    let backend = connect(&manifest.backend_config()).map_err(|e| match e {
        crate::gateway::GatewayError::Config(m) => RunError::Config(m),
        other => RunError::Backend(other.to_string()),
    })?;
    extract_with(&prepared, backend.as_ref())
}

/// [`extract`] with a caller-supplied backend.
pub fn extract_with(prepared: &Prepared, backend: &dyn CompletionBackend) -> Result<RunSummary, RunError> {
    let manifest = &prepared.manifest;
    let hash = manifest.hash();
    let root = manifest.resolve(&manifest.output.dir);
    let (run_id, out_dir) = create_run_dir(&root, &hash[..12])?;
    let ann_dir = out_dir.join("ann");
    fs::create_dir_all(&ann_dir).map_err(io_data(&ann_dir))?;

    let results: Vec<Result<(Vec<SdohEvent>, NoteLog), NoteError>> = prepared
        .notes
        .par_iter()
        .map(|note| run_note(note, &prepared.plan, backend).map(|o| (o.events, o.log)))
        .collect();

    let log_path = out_dir.join("run_log.jsonl");
    let mut log_file = fs::File::create(&log_path).map_err(io_data(&log_path))?;
    let mut failed = Vec::new();
    let mut predictions = BTreeMap::new();
    let mut completions = 0;
    for (note, result) in prepared.notes.iter().zip(results) {
        match result {
            Ok((events, log)) => {
                completions += log.completions;
                write_ann(&ann_dir, &note.id, &events, &note.text, &prepared.roles)?;
                let line = serde_json::to_string(&log).expect("log serializes");
                writeln!(log_file, "{line}").map_err(io_data(&log_path))?;
                predictions.insert(note.id.clone(), events);
            }
            Err(e) => {
                log::error!("note {} failed: {e}", note.id);
                failed.push(FailedNote { note_id: note.id.clone(), error: e.to_string() });
            }
        }
    }

    let gold: Vec<&NoteDocument> = prepared.notes.iter().filter(|n| n.gold.is_some()).collect();
    let report = if gold.is_empty() {
        None
    } else {
        let tables: Vec<CountTable> = gold
            .iter()
            .map(|n| score_document(predictions.get(&n.id).map_or(&[][..], Vec::as_slice), n.gold_events()))
            .collect();
        let tags: Vec<ErrorTag> = gold
            .iter()
            .flat_map(|n| error_report(&n.id, predictions.get(&n.id).map_or(&[][..], Vec::as_slice), n.gold_events()))
            .collect();
        let report = aggregate(&tables);
        write_report(&out_dir, &report, &tags)?;
        Some(report)
    };

    let summary = RunSummary {
        run_id,
        manifest_hash: hash,
        out_dir: out_dir.clone(),
        mode: manifest.prompt.mode,
        n_shot: manifest.few_shot.n,
        examples: prepared.plan.examples.iter().map(|e| e.id.clone()).collect(),
        unannotated_examples: prepared.unannotated_examples,
        notes: prepared.notes.len(),
        succeeded: predictions.len(),
        failed,
        completions,
        report,
        predictions,
    };
    let run_json = out_dir.join("run.json");
    let body = serde_json::json!({ "summary": &summary, "manifest": manifest });
    fs::write(&run_json, serde_json::to_string_pretty(&body).expect("serializes") + "\n").map_err(io_data(&run_json))?;
    Ok(summary)
}

fn write_report(dir: &Path, report: &ScoreReport, tags: &[ErrorTag]) -> Result<(), RunError> {
    let files = [
        ("scores.txt", report.render_table(true)),
        ("scores.json", serde_json::to_string_pretty(report).expect("serializes") + "\n"),
        (
            "errors.json",
            serde_json::to_string_pretty(&serde_json::json!({ "summary": summarize_errors(tags), "tags": tags }))
                .expect("serializes")
                + "\n",
        ),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_data(&path))?;
    }
    Ok(())
}

/// What to do with a note present on only one side when scoring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MissingPolicy {
    /// Score it: absent predictions are all FN, absent gold all FP.
    #[default]
    Score,
    /// Leave it out of the totals.
    Skip,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreOutcome {
    pub report: ScoreReport,
    pub missing_pred: Vec<String>,
    pub missing_gold: Vec<String>,
    pub errors: Vec<ErrorTag>,
}

/// Scores a directory of predicted `.ann` files against a gold corpus
/// directory (`.txt` + `.ann`).
pub fn score_dirs(pred_dir: &Path, gold_dir: &Path, policy: MissingPolicy, roles: &RoleMap) -> Result<ScoreOutcome, RunError> {
    let gold_notes = load_corpus(gold_dir, Split::Unknown, roles)?;
    let texts: BTreeMap<String, String> = gold_notes.iter().map(|n| (n.id.clone(), n.text.clone())).collect();
    let preds = if pred_dir.is_dir() {
        load_predictions(pred_dir, &texts, roles)?
    } else {
        return Err(RunError::Config(format!("prediction directory {} does not exist", pred_dir.display())));
    };
    let mut tables = Vec::new();
    let mut errors = Vec::new();
    let mut missing_pred = Vec::new();
    let mut missing_gold = Vec::new();
    for note in &gold_notes {
        let pred = preds.get(&note.id);
        match (pred, &note.gold) {
            (None, None) => continue,
            (None, Some(_)) => missing_pred.push(note.id.clone()),
            (Some(_), None) => missing_gold.push(note.id.clone()),
            (Some(_), Some(_)) => {}
        }
        if policy == MissingPolicy::Skip && (pred.is_none() || note.gold.is_none()) {
            continue;
        }
        let p = pred.map_or(&[][..], Vec::as_slice);
        tables.push(score_document(p, note.gold_events()));
        errors.extend(error_report(&note.id, p, note.gold_events()));
    }
    for (id, p) in preds.iter().filter(|(id, _)| !texts.contains_key(*id)) {
        missing_gold.push(id.clone());
        if policy == MissingPolicy::Score {
            tables.push(score_document(p, &[]));
            errors.extend(error_report(id, p, &[]));
        }
    }
    Ok(ScoreOutcome { report: aggregate(&tables), missing_pred, missing_gold, errors })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub label: String,
    pub run_id: String,
    pub notes: usize,
    pub failed: usize,
    #[serde(flatten)]
    pub score: Option<crate::scorer::ScoreRow>,
}

fn row_from(label: String, summary: &RunSummary) -> SweepRow {
    SweepRow {
        label,
        run_id: summary.run_id.clone(),
        notes: summary.notes,
        failed: summary.failed.len(),
        score: summary.report.as_ref().map(|r| r.micro.clone()),
    }
}

/// One extract-and-score run per n-shot value, in the given order.
pub fn sweep_n(manifest: &RunManifest, n_values: &[usize]) -> Result<Vec<SweepRow>, RunError> {
    n_values
        .iter()
        .map(|&n| {
            let mut m = manifest.clone();
            m.few_shot.n = n;
            extract(&m).map(|s| row_from(n.to_string(), &s))
        })
        .collect()
}

/// Self-consistency and post-processing ablation: single sample without
/// post-processing, k samples without it, k samples with it, and the
/// single-prompt mode.
pub fn sweep_ablation(manifest: &RunManifest) -> Result<Vec<SweepRow>, RunError> {
    let mut variants = Vec::new();
    let mut base = manifest.clone();
    base.consistency.k = 1;
    base.consistency.threshold = 1;
    base.postprocess.enabled = false;
    variants.push(("Few-shot prompt".to_string(), base));
    let mut sc = manifest.clone();
    sc.postprocess.enabled = false;
    variants.push(("+ self-consistency".to_string(), sc));
    let mut full = manifest.clone();
    full.postprocess.enabled = true;
    variants.push(("+ self-consistency & post-processing".to_string(), full.clone()));
    if manifest.prompt.mode == PromptMode::PerSdoh && manifest.prompt.template.is_none() {
        let mut all = full;
        all.prompt.mode = PromptMode::AllAtOnce;
        variants.push(("Generating all SDOH types at once".to_string(), all));
    }
    variants.into_iter().map(|(label, m)| extract(&m).map(|s| row_from(label, &s))).collect()
}

pub fn render_sweep(header: &str, rows: &[SweepRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).chain([header.len()]).max().unwrap_or(8);
    let mut s = format!("{header:<width$}  Precision  Recall  Micro-F1\n");
    for r in rows {
        match &r.score {
            Some(row) => s.push_str(&format!(
                "{:<width$}  {:>9.3}  {:>6.3}  {:>8.3}\n",
                r.label, row.prf.precision, row.prf.recall, row.prf.f1
            )),
            None => s.push_str(&format!("{:<width$}  {:>9}  {:>6}  {:>8}\n", r.label, "-", "-", "-")),
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Brat,
    Json,
    Tuple,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "brat" | "ann" => Ok(Format::Brat),
            "json" => Ok(Format::Json),
            "tuple" | "response" => Ok(Format::Tuple),
            other => Err(format!("unknown format `{other}` (expected brat, json or tuple)")),
        }
    }
}

/// Converts one annotation file between standoff and the list format.
/// `note_text` is the companion note.
pub fn convert(input: &str, from: Format, to: Format, note_text: &str, roles: &RoleMap) -> Result<String, RunError> {
    let events = match from {
        Format::Brat => {
            let doc = parse_brat(input, note_text).map_err(|e| RunError::Data(e.to_string()))?;
            brat_to_events(&doc, note_text, roles).map_err(|e| RunError::Data(e.to_string()))?
        }
        Format::Json | Format::Tuple => {
            if input.trim().is_empty() {
                Vec::new()
            } else {
                let report = parse_response(input).map_err(|_| RunError::Data("no annotation list found".into()))?;
                if let Some(d) = report.discarded.first() {
                    return Err(RunError::Data(format!("unusable object ({:?}): {}", d.reason, d.fragment)));
                }
                report.events
            }
        }
    };
    for (i, e) in events.iter().enumerate() {
        let v = validate_event(e, note_text);
        let span_fault = v.violations().iter().find(|v| {
            matches!(v, crate::event::Violation::SpanOutOfBounds(_) | crate::event::Violation::SpanTextMismatch(_))
        });
        if let Some(fault) = span_fault {
            return Err(RunError::Data(format!("event {} ({} '{}'): {fault}", i + 1, e.sdoh, e.trigger.text)));
        }
    }
    Ok(match to {
        Format::Brat => {
            let doc = events_to_brat(&events, note_text, roles).map_err(|e| RunError::Data(e.to_string()))?;
            serialize_brat(&doc)
        }
        Format::Json => render_events_as(&events, Dialect::Json),
        Format::Tuple => render_events_as(&events, Dialect::Tuple),
    })
}
