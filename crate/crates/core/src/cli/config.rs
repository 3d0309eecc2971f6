use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SplitRatios;
use crate::error::{Error, Result};
use crate::models::{DecodeMode, ModelConfig, PriorFamily, PriorSpec};
use crate::teacher::{DEFAULT_HYPOTHESIS_LEN, DEFAULT_TOP_P};
use crate::training::TrainSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Raw corpus: one `{session_id, utterances}` record per line.
    pub raw: Option<PathBuf>,
    pub history: usize,
    pub max_len: usize,
    pub min_count: u64,
    pub split: SplitRatios,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self { raw: None, history: 5, max_len: 40, min_count: 1, split: SplitRatios::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedTeacherBlock {
    pub script: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelTeacherBlock {
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    /// Selects one of the blocks below: `scripted` or `model`.
    pub name: String,
    pub n: usize,
    pub include_gt: bool,
    pub top_p: f64,
    pub max_len: usize,
    pub scripted: Option<ScriptedTeacherBlock>,
    pub model: Option<ModelTeacherBlock>,
}

impl Default for TeacherSection {
    fn default() -> Self {
        Self {
            name: "scripted".into(),
            n: 5,
            include_gt: false,
            top_p: DEFAULT_TOP_P,
            max_len: DEFAULT_HYPOTHESIS_LEN,
            scripted: None,
            model: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Ground-truth responses only.
    #[default]
    Gt,
    /// N teacher hypotheses per context.
    Hyp,
    /// N hypotheses plus the ground truth.
    Mixed,
    /// Ground truth with teacher next-token distributions as soft targets.
    TokenKd,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(Self::Gt),
            "hyp" => Ok(Self::Hyp),
            "mixed" => Ok(Self::Mixed),
            "token-kd" => Ok(Self::TokenKd),
            other => Err(Error::Config(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mode: TrainMode,
    /// Caps epochs by the table for the data setting unless the schedule
    /// sets `max_epochs` itself.
    pub epoch_budget: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { mode: TrainMode::Gt, epoch_budget: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub decode: DecodeMode,
    pub batch_size: usize,
    /// Report embedding similarities; needs an embedding table.
    pub similarity: bool,
    /// Defaults to the table preprocessing builds from the training split.
    pub embeddings: Option<PathBuf>,
    pub embedding_dim: usize,
    pub embedding_window: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            decode: DecodeMode::Greedy,
            batch_size: 30,
            similarity: true,
            embeddings: None,
            embedding_dim: 50,
            embedding_window: 2,
        }
    }
}

/// Everything one experiment needs. Relative paths in a config file are
/// resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub corpus: CorpusSection,
    pub teacher: TeacherSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub schedule: TrainSchedule,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("experiment"),
            corpus: CorpusSection::default(),
            teacher: TeacherSection::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            schedule: TrainSchedule::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub teacher: Option<String>,
    pub n_refs: Option<usize>,
    pub include_gt: Option<bool>,
    pub top_p: Option<f64>,
    pub mode: Option<TrainMode>,
    pub prior: Option<PriorFamily>,
    pub k: Option<usize>,
    pub schedule: Option<PathBuf>,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        rebase(base, &mut cfg.out);
        if let Some(p) = cfg.corpus.raw.as_mut() {
            rebase(base, p);
        }
        if let Some(b) = cfg.teacher.scripted.as_mut() {
            rebase(base, &mut b.script);
        }
        if let Some(b) = cfg.teacher.model.as_mut() {
            rebase(base, &mut b.checkpoint);
        }
        if let Some(p) = cfg.eval.embeddings.as_mut() {
            rebase(base, p);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(path) = &o.schedule {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            self.schedule = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = &o.teacher {
            self.teacher.name = v.clone();
        }
        if let Some(v) = o.n_refs {
            self.teacher.n = v;
        }
        if let Some(v) = o.include_gt {
            self.teacher.include_gt = v;
        }
        if let Some(v) = o.top_p {
            self.teacher.top_p = v;
        }
        if let Some(v) = o.mode {
            self.train.mode = v;
        }
        if o.prior.is_some() || o.k.is_some() {
            let family = o.prior.unwrap_or(self.model.prior.family);
            let k = match family {
                PriorFamily::None => 0,
                PriorFamily::Unimodal => 1,
                _ => o.k.unwrap_or(self.model.prior.k),
            };
            self.model.prior = PriorSpec { family, k };
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.teacher.n == 0 {
            return Err(Error::Config("teacher.n must be at least 1".into()));
        }
        if !(self.teacher.top_p > 0.0 && self.teacher.top_p <= 1.0) {
            return Err(Error::Config("teacher.top_p must lie in (0, 1]".into()));
        }
        if self.corpus.history == 0 || self.corpus.max_len == 0 {
            return Err(Error::Config("corpus.history and corpus.max_len must be positive".into()));
        }
        if self.eval.batch_size == 0 {
            return Err(Error::Config("eval.batch_size must be positive".into()));
        }
        self.model.prior.validate()?;
        self.schedule.validate()
    }
}
