//! Versioned TOML run manifest.
//!
//! ```toml
//! version = 1
//!
//! [corpus]
//! train = "corpus/train"
//! test = "corpus/test"
//! target = "test"            # split to extract: train | dev | test
//!
//! [prompt]
//! mode = "per-sdoh"          # or "all"
//! # template = "my_template.txt"
//! # rules = "rules.txt"
//! # guidelines = "guidelines.pdf"
//! # guidelines_delivery = "attachment"   # or "inline"
//!
//! [few_shot]
//! n = 50
//! seed = 13
//!
//! [consistency]
//! k = 3
//! threshold = 2
//!
//! [backend]
//! kind = "replay"
//! model = "o4-mini"
//! store = "replay"
//!
//! [output]
//! dir = "runs"
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::brat::RoleMap;
use crate::event::Split;
use crate::gateway::BackendConfig;
use crate::pipeline::{ConsistencyConfig, PostProcessConfig};
use crate::prompt::{Guidelines, PromptBuilder, PromptMode, PromptTemplate};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("unsupported manifest version {0} (expected {MANIFEST_VERSION})")]
    Version(u32),
    #[error("few-shot source {source_dir} overlaps the test split {test}")]
    Leakage { source_dir: PathBuf, test: PathBuf },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default = "default_target")]
    pub target: Split,
}

fn default_target() -> Split {
    Split::Test
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidelinesDelivery {
    #[default]
    Attachment,
    Inline,
}

fn default_mode() -> PromptMode {
    PromptMode::PerSdoh
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSection {
    #[serde(default = "default_mode")]
    pub mode: PromptMode,
    #[serde(default)]
    pub template: Option<PathBuf>,
    /// Rules lines appended to every prompt; the built-in set when absent.
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default)]
    pub no_rules: bool,
    #[serde(default)]
    pub guidelines: Option<PathBuf>,
    #[serde(default)]
    pub guidelines_delivery: GuidelinesDelivery,
}

impl Default for PromptSection {
    fn default() -> Self {
        PromptSection {
            mode: default_mode(),
            template: None,
            rules: None,
            no_rules: false,
            guidelines: None,
            guidelines_delivery: GuidelinesDelivery::default(),
        }
    }
}

fn default_n() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FewShotSection {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Example pool; defaults to the train split.
    #[serde(default)]
    pub source: Option<PathBuf>,
    #[serde(default)]
    pub allowlist: Option<Vec<String>>,
}

impl Default for FewShotSection {
    fn default() -> Self {
        FewShotSection { n: default_n(), seed: 0, source: None, allowlist: None }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    #[serde(default)]
    pub role_map: Option<PathBuf>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_out(), role_map: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: u32,
    pub corpus: CorpusPaths,
    #[serde(default)]
    pub prompt: PromptSection,
    #[serde(default)]
    pub few_shot: FewShotSection,
    #[serde(default)]
    pub consistency: ConsistencyConfig,
    #[serde(default)]
    pub postprocess: PostProcessConfig,
    pub backend: BackendConfig,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn overlaps(a: &Path, b: &Path) -> bool {
    let norm = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.components().collect());
    let (a, b) = (norm(a), norm(b));
    a.starts_with(&b) || b.starts_with(&a)
}

impl RunManifest {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ManifestError> {
        Self::parse(text, base_dir, base_dir)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base, path)
    }

    fn parse(text: &str, base_dir: &Path, origin: &Path) -> Result<Self, ManifestError> {
        let mut m: RunManifest =
            toml::from_str(text).map_err(|source| ManifestError::Parse { path: origin.to_path_buf(), source })?;
        m.base_dir = base_dir.to_path_buf();
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Backend settings with the store path resolved against the
    /// manifest directory.
    pub fn backend_config(&self) -> BackendConfig {
        let mut config = self.backend.clone();
        config.store = config.store.map(|s| self.resolve(&s));
        config
    }

    pub fn split_dir(&self, split: Split) -> Option<PathBuf> {
        let p = match split {
            Split::Train => self.corpus.train.as_ref(),
            Split::Dev => self.corpus.dev.as_ref(),
            Split::Test => self.corpus.test.as_ref(),
            Split::Unknown => None,
        };
        p.map(|p| self.resolve(p))
    }

    pub fn few_shot_source(&self) -> Option<PathBuf> {
        match &self.few_shot.source {
            Some(p) => Some(self.resolve(p)),
            None => self.split_dir(Split::Train),
        }
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.version != MANIFEST_VERSION {
            return Err(ManifestError::Version(self.version));
        }
        self.consistency.validate().map_err(|e| ManifestError::Invalid(e.to_string()))?;
        self.backend.validate().map_err(|e| ManifestError::Invalid(e.to_string()))?;
        if self.corpus.target == Split::Unknown {
            return Err(ManifestError::Invalid("corpus.target must be train, dev or test".into()));
        }
        if self.split_dir(self.corpus.target).is_none() {
            return Err(ManifestError::Invalid(format!("corpus.{} is required as the target split", self.corpus.target)));
        }
        if self.few_shot.n > 0 {
            let source = self
                .few_shot_source()
                .ok_or_else(|| ManifestError::Invalid("few_shot.n > 0 requires corpus.train or few_shot.source".into()))?;
            if let Some(test) = self.split_dir(Split::Test) {
                if overlaps(&source, &test) {
                    return Err(ManifestError::Leakage { source_dir: source, test });
                }
            }
        }
        Ok(())
    }

    /// Provenance hash over the manifest as written (paths unresolved),
    /// after command-line overrides.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("manifest serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn role_map(&self) -> Result<RoleMap, ManifestError> {
        match &self.output.role_map {
            None => Ok(RoleMap::default()),
            Some(p) => {
                let path = self.resolve(p);
                let text = fs::read_to_string(&path).map_err(|source| ManifestError::Io { path: path.clone(), source })?;
                RoleMap::from_toml(&text).map_err(|source| ManifestError::Parse { path, source })
            }
        }
    }

    fn read(&self, p: &Path) -> Result<String, ManifestError> {
        let path = self.resolve(p);
        fs::read_to_string(&path).map_err(|source| ManifestError::Io { path, source })
    }

    /// Template, rules and guidelines as configured.
    pub fn prompt_builder(&self) -> Result<PromptBuilder, ManifestError> {
        let mode = self.prompt.mode;
        let template = match &self.prompt.template {
            None => PromptTemplate::builtin(mode),
            Some(p) => PromptTemplate::new(mode, self.read(p)?).map_err(|e| ManifestError::Invalid(e.to_string()))?,
        };
        let mut builder = PromptBuilder::new(template);
        if self.prompt.no_rules {
            builder = builder.with_rules("");
        } else if let Some(p) = &self.prompt.rules {
            builder = builder.with_rules(self.read(p)?);
        }
        if let Some(p) = &self.prompt.guidelines {
            let guidelines = match self.prompt.guidelines_delivery {
                GuidelinesDelivery::Inline => Guidelines::Inline(self.read(p)?),
                GuidelinesDelivery::Attachment => {
                    let path = self.resolve(p);
                    Guidelines::attach(&path).map_err(|source| ManifestError::Io { path, source })?
                }
            };
            builder = builder.with_guidelines(guidelines);
        }
        Ok(builder)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1
[corpus]
train = "train"
test = "test"
[backend]
kind = "replay"
model = "m"
store = "store"
"#;

    #[test]
    fn defaults() {
        let m = RunManifest::from_toml(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(m.prompt.mode, PromptMode::PerSdoh);
        assert_eq!(m.few_shot.n, 50);
        assert_eq!(m.consistency, ConsistencyConfig::default());
        assert_eq!(m.corpus.target, Split::Test);
        assert_eq!(m.split_dir(Split::Test), Some(PathBuf::from("/base/test")));
        assert!(m.validate().is_ok());
    }

    #[test]
    fn leakage_is_refused() {
        let mut m = RunManifest::from_toml(MINIMAL, Path::new("/base")).unwrap();
        m.few_shot.source = Some("test".into());
        assert!(matches!(m.validate(), Err(ManifestError::Leakage { .. })));
        m.few_shot.source = Some("test/sub".into());
        assert!(matches!(m.validate(), Err(ManifestError::Leakage { .. })));
        m.few_shot.n = 0;
        assert!(m.validate().is_ok());
    }

    #[test]
    fn version_and_fields_are_checked() {
        let bad = MINIMAL.replace("version = 1", "version = 2");
        let m = RunManifest::from_toml(&bad, Path::new("/")).unwrap();
        assert!(matches!(m.validate(), Err(ManifestError::Version(2))));
        let unknown = format!("{MINIMAL}\n[output]\nbogus = 1\n");
        assert!(matches!(RunManifest::from_toml(&unknown, Path::new("/")), Err(ManifestError::Parse { .. })));
    }

    #[test]
    fn hash_tracks_overrides_not_location() {
        let a = RunManifest::from_toml(MINIMAL, Path::new("/a")).unwrap();
        let b = RunManifest::from_toml(MINIMAL, Path::new("/b")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.backend_config().store, Some(PathBuf::from("/a/store")));
        let mut c = a.clone();
        c.few_shot.n = 10;
        assert_ne!(a.hash(), c.hash());
    }
}
