//! Prompt construction for the single-prompt and per-category modes, with
//! guideline attachment and seeded few-shot example selection.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::render_events;
use crate::event::{NoteDocument, SdohEvent, SdohType, Split};

pub const ALL_AT_ONCE_TEMPLATE: &str = include_str!("../templates/all_at_once.txt");
pub const ALL_AT_ONCE_DETAILED_TEMPLATE: &str = include_str!("../templates/all_at_once_detailed.txt");
pub const PER_SDOH_TEMPLATE: &str = include_str!("../templates/per_sdoh.txt");
pub const SCHEMA_BLOCK: &str = include_str!("../templates/schema.txt");
pub const DEFAULT_RULES: &str = include_str!("../templates/rules.txt");

const SLOTS: [&str; 6] = ["guidelines_ref", "schema_block", "rules_block", "examples_block", "note", "sdoh"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    /// One prompt asks for every category.
    #[serde(alias = "all")]
    AllAtOnce,
    /// One prompt per category, each restricted to that category.
    #[serde(alias = "per-sdoh-type")]
    PerSdoh,
}

impl PromptMode {
    /// The categories prompted for, or `None` for a single combined prompt.
    pub fn families(self) -> Vec<Option<SdohType>> {
        match self {
            PromptMode::AllAtOnce => vec![None],
            PromptMode::PerSdoh => SdohType::ALL.into_iter().map(Some).collect(),
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::AllAtOnce => "all",
            PromptMode::PerSdoh => "per-sdoh",
        })
    }
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" | "all-at-once" => Ok(PromptMode::AllAtOnce),
            "per-sdoh" | "per-sdoh-type" => Ok(PromptMode::PerSdoh),
            other => Err(format!("unknown mode `{other}` (expected `all` or `per-sdoh`)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template is missing the {{{0}}} slot")]
    TemplateSlotMissing(&'static str),
    #[error("template for mode `{0}` must not contain the {{sdoh}} slot")]
    UnexpectedSdohSlot(PromptMode),
    #[error("mode `{mode}` called with sdoh {sdoh:?}")]
    ModeMismatch { mode: PromptMode, sdoh: Option<SdohType> },
    #[error("few-shot source contains note `{0}` outside the training split")]
    SplitLeakage(String),
    #[error("requested {requested} few-shot examples but only {available} are available")]
    InsufficientCorpus { requested: usize, available: usize },
    #[error("few-shot allowlist names unknown note `{0}`")]
    UnknownExample(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub mode: PromptMode,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(mode: PromptMode, body: impl Into<String>) -> Result<Self, PromptError> {
        let body = body.into();
        let has_sdoh = body.contains("{sdoh}");
        match mode {
            PromptMode::AllAtOnce if has_sdoh => return Err(PromptError::UnexpectedSdohSlot(mode)),
            PromptMode::PerSdoh if !has_sdoh => return Err(PromptError::TemplateSlotMissing("sdoh")),
            _ => {}
        }
        if !body.contains("{note}") {
            return Err(PromptError::TemplateSlotMissing("note"));
        }
        Ok(PromptTemplate { mode, body })
    }

    pub fn builtin(mode: PromptMode) -> Self {
        let body = match mode {
            PromptMode::AllAtOnce => ALL_AT_ONCE_TEMPLATE,
            PromptMode::PerSdoh => PER_SDOH_TEMPLATE,
        };
        PromptTemplate { mode, body: body.to_string() }
    }

    fn has(&self, slot: &str) -> bool {
        self.body.contains(&format!("{{{slot}}}"))
    }
}

/// How the annotation guidelines reach the model.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum Guidelines {
    #[default]
    None,
    /// Prepended to the prompt between delimiters.
    Inline(String),
    /// Sent as a file alongside the prompt by backends that support it.
    Attachment { path: PathBuf, bytes: Vec<u8> },
}

impl Guidelines {
    pub fn attach(path: &Path) -> std::io::Result<Self> {
        Ok(Guidelines::Attachment { path: path.to_path_buf(), bytes: std::fs::read(path)? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Attachment {
    pub filename: String,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

/// Everything fixed across notes: template, rules lines and guidelines.
#[derive(Debug, Clone)]
pub struct PromptBuilder {
    pub template: PromptTemplate,
    pub rules: String,
    pub guidelines: Guidelines,
}

impl PromptBuilder {
    pub fn new(template: PromptTemplate) -> Self {
        PromptBuilder { template, rules: DEFAULT_RULES.to_string(), guidelines: Guidelines::None }
    }

    pub fn with_rules(mut self, rules: impl Into<String>) -> Self {
        self.rules = rules.into();
        self
    }

    pub fn with_guidelines(mut self, guidelines: Guidelines) -> Self {
        self.guidelines = guidelines;
        self
    }

    pub fn mode(&self) -> PromptMode {
        self.template.mode
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptRequest {
    pub rendered_text: String,
    pub mode: PromptMode,
    pub sdoh: Option<SdohType>,
    pub note_id: String,
    pub attachment: Option<Attachment>,
}

fn examples_block(examples: &[NoteDocument], sdoh: Option<SdohType>) -> String {
    if examples.is_empty() {
        return String::new();
    }
    let blocks: Vec<String> = examples
        .iter()
        .map(|ex| {
            let events: Vec<SdohEvent> = ex
                .gold_events()
                .iter()
                .filter(|e| sdoh.is_none_or(|s| e.sdoh == s))
                .cloned()
                .collect();
            format!("Notes: {}\n\nAnnotations:\n{}", ex.text, render_events(&events))
        })
        .collect();
    format!("\nHere are some examples:\n\n{}\n", blocks.join("\n\n"))
}

/// Substitutes every known `{slot}` in one pass, so slot contents (notes,
/// examples) are never re-scanned for slot names.
fn fill(body: &str, lookup: impl Fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after
            .find('}')
            .map(|close| (&after[..close], close))
            .filter(|(name, _)| SLOTS.contains(name))
            .and_then(|(name, close)| lookup(name).map(|v| (v, close)));
        match hit {
            Some((value, close)) => {
                out.push_str(&value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Renders the full prompt for one note (and one category in per-category
/// mode). Example annotations are filtered to that category.
pub fn build_prompt(
    builder: &PromptBuilder,
    examples: &[NoteDocument],
    note: &NoteDocument,
    sdoh: Option<SdohType>,
) -> Result<PromptRequest, PromptError> {
    let template = &builder.template;
    let mode = template.mode;
    if (mode == PromptMode::PerSdoh) != sdoh.is_some() {
        return Err(PromptError::ModeMismatch { mode, sdoh });
    }
    if !examples.is_empty() && !template.has("examples_block") {
        return Err(PromptError::TemplateSlotMissing("examples_block"));
    }
    if !builder.rules.trim().is_empty() && !template.has("rules_block") {
        return Err(PromptError::TemplateSlotMissing("rules_block"));
    }
    if !matches!(builder.guidelines, Guidelines::None) && !template.has("guidelines_ref") {
        return Err(PromptError::TemplateSlotMissing("guidelines_ref"));
    }

    let guidelines_ref = match &builder.guidelines {
        Guidelines::Inline(text) => format!(
            "=== ANNOTATION GUIDELINES ===\n{}\n=== END OF ANNOTATION GUIDELINES ===\n\n",
            text.trim_end()
        ),
        _ => String::new(),
    };
    let rules_block = match builder.rules.trim_end() {
        "" => String::new(),
        rules => format!("\n\n{rules}"),
    };
    let examples_block = examples_block(examples, sdoh);
    let schema = SCHEMA_BLOCK.trim_end().to_string();
    let rendered_text = fill(&template.body, |slot| {
        Some(match slot {
            "guidelines_ref" => guidelines_ref.clone(),
            "schema_block" => schema.clone(),
            "rules_block" => rules_block.clone(),
            "examples_block" => examples_block.clone(),
            "note" => note.text.clone(),
            "sdoh" => sdoh?.as_str().to_string(),
            _ => return None,
        })
    });
    let attachment = match &builder.guidelines {
        Guidelines::Attachment { path, bytes } => Some(Attachment {
            filename: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            bytes: bytes.clone(),
        }),
        _ => None,
    };
    Ok(PromptRequest { rendered_text, mode, sdoh, note_id: note.id.clone(), attachment })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotConfig {
    pub n: usize,
    pub seed: u64,
    /// Explicit example ids, used in the given order instead of sampling.
    #[serde(default)]
    pub allowlist: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotSelection {
    pub examples: Vec<NoteDocument>,
    /// How many selected notes carry no gold events (used only when the
    /// corpus has too few annotated notes).
    pub unannotated: usize,
}

/// Seeded selection of `n` training notes, preferring annotated ones.
/// The result depends only on `(n, seed)` and the set of notes, not on
/// their input order.
pub fn select_few_shot(config: &FewShotConfig, corpus: &[NoteDocument]) -> Result<FewShotSelection, PromptError> {
    if let Some(bad) = corpus.iter().find(|n| n.split != Split::Train) {
        return Err(PromptError::SplitLeakage(bad.id.clone()));
    }
    if config.n == 0 {
        return Ok(FewShotSelection { examples: Vec::new(), unannotated: 0 });
    }
    if let Some(ids) = &config.allowlist {
        if ids.len() < config.n {
            return Err(PromptError::InsufficientCorpus { requested: config.n, available: ids.len() });
        }
        let examples = ids[..config.n]
            .iter()
            .map(|id| {
                corpus.iter().find(|n| &n.id == id).cloned().ok_or_else(|| PromptError::UnknownExample(id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let unannotated = examples.iter().filter(|n| n.gold_events().is_empty()).count();
        return Ok(FewShotSelection { examples, unannotated });
    }
    if corpus.len() < config.n {
        return Err(PromptError::InsufficientCorpus { requested: config.n, available: corpus.len() });
    }
    let mut sorted: Vec<&NoteDocument> = corpus.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let (mut annotated, mut bare): (Vec<&NoteDocument>, Vec<&NoteDocument>) =
        sorted.into_iter().partition(|n| !n.gold_events().is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    annotated.shuffle(&mut rng);
    bare.shuffle(&mut rng);
    let take_bare = config.n.saturating_sub(annotated.len());
    let examples: Vec<NoteDocument> =
        annotated.into_iter().chain(bare).take(config.n).cloned().collect();
    Ok(FewShotSelection { examples, unannotated: take_bare })
}
