//! Pipeline commands behind the `multiref` binary: preprocess, gen-hyps,
//! train, evaluate and analyze-latents over one experiment directory.
//!
//! Layout under `out`: `data/` (splits, vocabulary, embeddings), `hyps/`,
//! `ckpt/`, `reports/` and `manifest.json`.

mod config;

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::corpus::{
    build_all_pairs, build_vocab, deduplicate_sessions, read_sessions, session_from_raw, split_sessions, write_jsonl,
    write_sessions, ContextResponsePair, DialogueSession, Normalizer, RawSession, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, per_variable_report, EvalOptions, EvalSet, MetricReport, WordEmbeddingTable};
use crate::models::{DialogueModel, EncodedPair, PriorFamily};
use crate::rng::derive_seed;
use crate::teacher::{
    build_multiref_dataset, epoch_budget, read_multiref, write_multiref, DataSetting, HypothesisSettings, ModelTeacher,
    MultiRefExample, RefSource, ScriptedTeacher, Teacher,
};
use crate::training::{distillation_instances, fit, load_checkpoint, replicate_references, FitOptions, TrainInstance};

pub use config::{
    CorpusSection, EvalSection, ExperimentConfig, ModelTeacherBlock, Overrides, ScriptedTeacherBlock, TeacherSection,
    TrainMode, TrainSection,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Process exit code for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidInput(_) => EXIT_USAGE,
        Error::Data(_)
        | Error::VocabMismatch(_)
        | Error::EmptyUtterance
        | Error::Checkpoint(_)
        | Error::Json(_)
        | Error::Io(_) => EXIT_DATA,
        Error::Teacher(_) | Error::Tensor(_) => EXIT_RUNTIME,
    }
}

/// Paths inside an experiment directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn split(&self, name: &str) -> PathBuf {
        self.data().join(format!("{name}.jsonl"))
    }

    pub fn vocab(&self) -> PathBuf {
        self.data().join("vocab.tsv")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.data().join("embeddings.txt")
    }

    pub fn record_errors(&self) -> PathBuf {
        self.data().join("record_errors.jsonl")
    }

    pub fn hyps(&self) -> PathBuf {
        self.root.join("hyps").join("train.jsonl")
    }

    pub fn ckpt(&self) -> PathBuf {
        self.root.join("ckpt")
    }

    pub fn best(&self) -> PathBuf {
        self.ckpt().join("best.safetensors")
    }

    pub fn last(&self) -> PathBuf {
        self.ckpt().join("last.safetensors")
    }

    pub fn train_log(&self) -> PathBuf {
        self.ckpt().join("log.jsonl")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

fn layout(cfg: &ExperimentConfig) -> Layout {
    Layout::new(&cfg.out)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Data(format!("{what} not found at {}", path.display())))
    }
}

fn read_manifest(l: &Layout) -> Result<Value> {
    match std::fs::read_to_string(l.manifest()) {
        Ok(text) => Ok(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(json!({})),
        Err(e) => Err(e.into()),
    }
}

/// Records the full config and one stage's summary in the manifest.
fn update_manifest(l: &Layout, cfg: &ExperimentConfig, stage: &str, summary: Value) -> Result<()> {
    let mut manifest = read_manifest(l)?;
    let obj = manifest.as_object_mut().ok_or_else(|| Error::Data("manifest is not an object".into()))?;
    obj.insert("seed".into(), json!(cfg.seed));
    obj.insert("config".into(), serde_json::to_value(cfg)?);
    obj.insert(stage.into(), summary);
    std::fs::write(l.manifest(), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn load_split(l: &Layout, name: &str) -> Result<Vec<DialogueSession>> {
    let path = l.split(name);
    require(&path, &format!("{name} split (run preprocess first)"))?;
    let (raw, errors) = read_sessions(&path)?;
    if let Some(e) = errors.first() {
        return Err(Error::Data(format!("{}:{}: {}", path.display(), e.line, e.message)));
    }
    Ok(raw
        .iter()
        .map(|r| DialogueSession {
            session_id: r.session_id.clone(),
            utterances: r.utterances.iter().map(|u| crate::corpus::Utterance::from_text(&u.text, u.floor)).collect(),
        })
        .collect())
}

fn load_pairs(l: &Layout, cfg: &ExperimentConfig, name: &str) -> Result<Vec<ContextResponsePair>> {
    Ok(build_all_pairs(&load_split(l, name)?, cfg.corpus.history, cfg.corpus.max_len))
}

fn load_vocab(l: &Layout) -> Result<Vocabulary> {
    require(&l.vocab(), "vocabulary (run preprocess first)")?;
    Vocabulary::load(&l.vocab())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreprocessSummary {
    pub raw_sessions: usize,
    pub short_sessions: usize,
    pub duplicate_sessions: usize,
    pub sessions: [usize; 3],
    pub pairs: [usize; 3],
    pub vocab_size: usize,
}

/// normalize, dedup, split, pair and build the vocabulary plus the default
/// embedding table. Schema violations are written to
/// `data/record_errors.jsonl` and fail the command.
pub fn cmd_preprocess(cfg: &ExperimentConfig) -> Result<PreprocessSummary> {
    let raw_path = cfg.corpus.raw.as_ref().ok_or_else(|| Error::Config("corpus.raw is not set".into()))?;
    require(raw_path, "raw corpus")?;
    let l = layout(cfg);
    std::fs::create_dir_all(l.data())?;
    let (raw, errors) = read_sessions(raw_path)?;
    if !errors.is_empty() {
        write_jsonl(&l.record_errors(), &errors)?;
        return Err(Error::Data(format!(
            "{} malformed records in {}, see {}",
            errors.len(),
            raw_path.display(),
            l.record_errors().display()
        )));
    }
    if raw.is_empty() {
        return Err(Error::Data(format!("corpus {} is empty", raw_path.display())));
    }
    let normalizer = Normalizer::default();
    let sessions: Vec<DialogueSession> = raw.iter().filter_map(|s| session_from_raw(s, &normalizer)).collect();
    let deduped = deduplicate_sessions(&sessions);
    let splits = split_sessions(&deduped, cfg.corpus.split, cfg.seed)?;
    let (h, len) = (cfg.corpus.history, cfg.corpus.max_len);
    let pairs = [&splits.train, &splits.valid, &splits.test].map(|s| build_all_pairs(s, h, len));
    let vocab = build_vocab(&pairs[0], cfg.corpus.min_count)?;

    write_sessions(&l.split("train"), &splits.train)?;
    write_sessions(&l.split("valid"), &splits.valid)?;
    write_sessions(&l.split("test"), &splits.test)?;
    vocab.save(&l.vocab())?;
    let sentences: Vec<Vec<String>> =
        splits.train.iter().flat_map(|s| s.utterances.iter().map(|u| u.tokens.clone())).collect();
    let table = WordEmbeddingTable::from_corpus(
        &sentences,
        cfg.eval.embedding_dim,
        cfg.eval.embedding_window,
        derive_seed(cfg.seed, "embeddings"),
    )?;
    table.save(&l.embeddings())?;

    let summary = PreprocessSummary {
        raw_sessions: raw.len(),
        short_sessions: raw.len() - sessions.len(),
        duplicate_sessions: sessions.len() - deduped.len(),
        sessions: [splits.train.len(), splits.valid.len(), splits.test.len()],
        pairs: pairs.each_ref().map(Vec::len),
        vocab_size: vocab.len(),
    };
    update_manifest(
        &l,
        cfg,
        "preprocess",
        json!({
            "raw_sessions": summary.raw_sessions,
            "short_sessions": summary.short_sessions,
            "duplicate_sessions": summary.duplicate_sessions,
            "sessions": {"train": summary.sessions[0], "valid": summary.sessions[1], "test": summary.sessions[2]},
            "pairs": {"train": summary.pairs[0], "valid": summary.pairs[1], "test": summary.pairs[2]},
            "vocab_size": summary.vocab_size,
            "vocab_hash": vocab.hash(),
        }),
    )?;
    Ok(summary)
}

/// Instantiates the teacher named in the config over the experiment
/// vocabulary.
pub fn load_teacher(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<Box<dyn Teacher>> {
    let name = cfg.teacher.name.as_str();
    match name {
        "scripted" => {
            let block = cfg
                .teacher
                .scripted
                .as_ref()
                .ok_or_else(|| Error::Config("teacher \"scripted\" needs a [teacher.scripted] block".into()))?;
            require(&block.script, "teacher script")?;
            Ok(Box::new(ScriptedTeacher::load(name, vocab.clone(), &block.script)?))
        }
        "model" => {
            let block = cfg
                .teacher
                .model
                .as_ref()
                .ok_or_else(|| Error::Config("teacher \"model\" needs a [teacher.model] block".into()))?;
            require(&block.checkpoint, "teacher checkpoint")?;
            let ckpt = load_checkpoint(&block.checkpoint)?;
            if ckpt.vocab_hash != vocab.hash() {
                return Err(Error::VocabMismatch(format!(
                    "teacher checkpoint {} was trained on another vocabulary",
                    block.checkpoint.display()
                )));
            }
            Ok(Box::new(ModelTeacher::new(name, ckpt.model, vocab.clone())))
        }
        other => Err(Error::Config(format!("unknown teacher {other:?}; expected \"scripted\" or \"model\""))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisSummary {
    pub examples: usize,
    pub hypothesis_rows: usize,
    pub skipped_pairs: usize,
}

/// Samples N hypotheses per training pair into `hyps/train.jsonl`.
pub fn cmd_generate_hypotheses(cfg: &ExperimentConfig) -> Result<HypothesisSummary> {
    let l = layout(cfg);
    let vocab = load_vocab(&l)?;
    let pairs = load_pairs(&l, cfg, "train")?;
    let teacher = load_teacher(cfg, &vocab)?;
    let seed = derive_seed(cfg.seed, "hypotheses");
    let settings = HypothesisSettings {
        n: cfg.teacher.n,
        include_gt: cfg.teacher.include_gt,
        top_p: cfg.teacher.top_p,
        max_len: cfg.teacher.max_len,
        seed,
    };
    let examples = build_multiref_dataset(&pairs, teacher.as_ref(), &settings)?;
    if examples.is_empty() {
        return Err(Error::Teacher(format!("teacher {} produced no usable examples", teacher.name())));
    }
    std::fs::create_dir_all(l.hyps().parent().expect("hyps file has a parent"))?;
    write_multiref(&l.hyps(), &examples)?;
    let summary = HypothesisSummary {
        examples: examples.len(),
        hypothesis_rows: examples
            .iter()
            .flat_map(|e| &e.references)
            .filter(|r| r.source == RefSource::Hypothesis)
            .count(),
        skipped_pairs: pairs.len() - examples.len(),
    };
    update_manifest(
        &l,
        cfg,
        "gen_hyps",
        json!({
            "teacher": teacher.name(),
            "n": settings.n,
            "include_gt": settings.include_gt,
            "top_p": settings.top_p,
            "max_len": settings.max_len,
            "seed": seed,
            "examples": summary.examples,
            "hypothesis_rows": summary.hypothesis_rows,
            "skipped_pairs": summary.skipped_pairs,
        }),
    )?;
    Ok(summary)
}

/// Rebuilds the examples a training mode asks for: the first `n`
/// hypotheses of each record, plus the ground truth in mixed mode.
fn select_references(records: &[MultiRefExample], n: usize, with_gt: bool) -> Result<Vec<MultiRefExample>> {
    records
        .iter()
        .map(|e| {
            let mut refs: Vec<_> = e
                .references
                .iter()
                .filter(|r| r.source == RefSource::Hypothesis)
                .take(n)
                .map(|r| (r.utterance.clone(), RefSource::Hypothesis))
                .collect();
            if refs.len() < n {
                return Err(Error::Data(format!(
                    "{} has {} hypotheses, training asks for {n}; rerun gen-hyps",
                    e.pair_id,
                    refs.len()
                )));
            }
            if with_gt {
                let gt = e.references.iter().find(|r| r.source == RefSource::GroundTruth).ok_or_else(|| {
                    Error::Data(format!("{} has no ground truth; generate with include_gt", e.pair_id))
                })?;
                refs.push((gt.utterance.clone(), RefSource::GroundTruth));
            }
            MultiRefExample::uniform(e.pair_id.clone(), e.context.clone(), refs)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub instances: usize,
    pub steps: u64,
    pub epochs: usize,
    pub best_val: f64,
}

/// Trains a model for the configured mode. With `resume`, continues from
/// `ckpt/last.safetensors` and appends to the existing log.
pub fn cmd_train(cfg: &ExperimentConfig, resume: bool) -> Result<TrainSummary> {
    let l = layout(cfg);
    let vocab = load_vocab(&l)?;
    let train_pairs = load_pairs(&l, cfg, "train")?;
    let valid: Vec<EncodedPair> =
        load_pairs(&l, cfg, "valid")?.iter().map(|p| EncodedPair::encode(&vocab, p)).collect();

    let mut model_cfg = cfg.model.clone();
    if model_cfg.vocab_size != 0 && model_cfg.vocab_size != vocab.len() {
        return Err(Error::VocabMismatch(format!(
            "model.vocab_size = {} but the vocabulary has {} entries",
            model_cfg.vocab_size,
            vocab.len()
        )));
    }
    model_cfg.vocab_size = vocab.len();

    let n = cfg.teacher.n;
    let gt_examples = || train_pairs.iter().map(MultiRefExample::ground_truth).collect::<Vec<_>>();
    let (instances, setting): (Vec<TrainInstance>, DataSetting) = match cfg.train.mode {
        TrainMode::Gt => (replicate_references(&gt_examples(), &vocab), DataSetting::ground_truth()),
        TrainMode::Hyp | TrainMode::Mixed => {
            require(&l.hyps(), "hypotheses (run gen-hyps first)")?;
            let mixed = cfg.train.mode == TrainMode::Mixed;
            let examples = select_references(&read_multiref(&l.hyps())?, n, mixed)?;
            let setting = if mixed { DataSetting::mixed(n) } else { DataSetting::hypotheses(n) };
            (replicate_references(&examples, &vocab), setting)
        }
        TrainMode::TokenKd => {
            let teacher = load_teacher(cfg, &vocab)?;
            (distillation_instances(&gt_examples(), teacher.as_ref(), &vocab)?, DataSetting::ground_truth())
        }
    };

    let mut schedule = cfg.schedule.clone();
    if cfg.train.epoch_budget && schedule.max_epochs.is_none() {
        schedule.max_epochs = Some(epoch_budget(setting)?.max_epochs);
    }
    std::fs::create_dir_all(l.ckpt())?;
    let (model, state) = if resume {
        require(&l.last(), "checkpoint to resume from")?;
        let ckpt = load_checkpoint(&l.last())?;
        if ckpt.vocab_hash != vocab.hash() {
            return Err(Error::VocabMismatch("checkpoint was trained on another vocabulary".into()));
        }
        if ckpt.model.config() != &model_cfg {
            return Err(Error::Config("checkpoint config differs from the experiment config".into()));
        }
        let state = ckpt
            .train_state(&schedule)
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no training state".into()))?;
        (ckpt.model, Some(state))
    } else {
        if l.train_log().exists() {
            std::fs::remove_file(l.train_log())?;
        }
        (DialogueModel::new(model_cfg, derive_seed(cfg.seed, "model"))?, None)
    };
    let options = FitOptions {
        log_path: Some(l.train_log()),
        checkpoint_dir: Some(l.ckpt()),
        vocab_hash: vocab.hash(),
        resume: state,
    };
    let outcome = fit(&model, &instances, &valid, &schedule, derive_seed(cfg.seed, "train"), options)?;
    let summary = TrainSummary {
        instances: instances.len(),
        steps: outcome.state.step,
        epochs: outcome.state.epoch,
        best_val: outcome.best_val,
    };
    update_manifest(
        &l,
        cfg,
        "train",
        json!({
            "mode": cfg.train.mode,
            "references": setting.references(),
            "instances": summary.instances,
            "max_epochs": schedule.max_epochs,
            "steps": summary.steps,
            "epochs": summary.epochs,
            "best_val": summary.best_val,
            "checkpoint": "ckpt/best.safetensors",
        }),
    )?;
    Ok(summary)
}

struct Evaluation {
    model: DialogueModel,
    vocab: Vocabulary,
    set: EvalSet,
    table: Option<WordEmbeddingTable>,
}

fn prepare_evaluation(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Evaluation> {
    let l = layout(cfg);
    let vocab = load_vocab(&l)?;
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| l.best());
    require(&path, "checkpoint")?;
    let ckpt = load_checkpoint(&path)?;
    if ckpt.vocab_hash != vocab.hash() {
        return Err(Error::VocabMismatch(format!("{} was trained on another vocabulary", path.display())));
    }
    let set = EvalSet::new(&load_pairs(&l, cfg, "test")?, &vocab)?;
    let table = if cfg.eval.similarity {
        let p = cfg.eval.embeddings.clone().unwrap_or_else(|| l.embeddings());
        if !p.exists() {
            return Err(Error::Data(format!(
                "embedding similarity requested but no embedding table at {}",
                p.display()
            )));
        }
        Some(WordEmbeddingTable::load(&p)?)
    } else {
        None
    };
    Ok(Evaluation { model: ckpt.model, vocab, set, table })
}

#[derive(Serialize)]
struct ReportFile<'a> {
    seed: u64,
    checkpoint: String,
    report: &'a MetricReport,
}

fn write_report(cfg: &ExperimentConfig, name: &str, checkpoint: Option<&Path>, report: &MetricReport) -> Result<()> {
    let l = layout(cfg);
    std::fs::create_dir_all(l.reports())?;
    let file = ReportFile {
        seed: cfg.seed,
        checkpoint: checkpoint.map_or_else(|| "ckpt/best.safetensors".into(), |p| p.display().to_string()),
        report,
    };
    std::fs::write(l.reports().join(format!("{name}.json")), serde_json::to_string_pretty(&file)? + "\n")?;
    std::fs::write(l.reports().join(format!("{name}.txt")), report.to_table())?;
    Ok(())
}

fn eval_options<'a>(cfg: &ExperimentConfig, table: Option<&'a WordEmbeddingTable>) -> EvalOptions<'a> {
    EvalOptions {
        mode: cfg.eval.decode,
        seed: derive_seed(cfg.seed, "eval"),
        batch_size: cfg.eval.batch_size,
        embeddings: table,
        scorer: None,
    }
}

/// Scores the checkpoint (default `ckpt/best.safetensors`) on the test
/// split into `reports/metrics.{json,txt}`.
pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: Option<&Path>, per_variable: bool) -> Result<MetricReport> {
    let ev = prepare_evaluation(cfg, checkpoint)?;
    let opts = eval_options(cfg, ev.table.as_ref());
    let mut report = evaluate(&ev.model, &ev.set, &ev.vocab, &opts)?;
    if per_variable {
        report.per_variable = per_variable_report(&ev.model, &ev.set, &ev.vocab, &opts)?;
    }
    write_report(cfg, "metrics", checkpoint, &report)?;
    update_manifest(
        &layout(cfg),
        cfg,
        "evaluate",
        json!({"perplexity": report.perplexity, "bleu2": report.scores.bleu2, "per_variable": per_variable}),
    )?;
    Ok(report)
}

/// Per-variable table (one row per prior component plus the mixture) into
/// `reports/latents.{json,txt}`.
pub fn cmd_analyze_latents(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<MetricReport> {
    let ev = prepare_evaluation(cfg, checkpoint)?;
    if ev.model.config().prior.family == PriorFamily::None {
        return Err(Error::InvalidInput("latent analysis needs a variational checkpoint".into()));
    }
    let opts = eval_options(cfg, ev.table.as_ref());
    let mut report = evaluate(&ev.model, &ev.set, &ev.vocab, &opts)?;
    report.per_variable = per_variable_report(&ev.model, &ev.set, &ev.vocab, &opts)?;
    write_report(cfg, "latents", checkpoint, &report)?;
    update_manifest(&layout(cfg), cfg, "analyze_latents", json!({"components": report.per_variable.len()}))?;
    Ok(report)
}

/// Writes a raw corpus file in the ingest format.
pub fn write_raw_corpus(path: &Path, sessions: &[RawSession]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_jsonl(path, sessions)
}

#[cfg(test)]
mod tests;
