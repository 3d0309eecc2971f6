//! Pluggable teacher generators, nucleus-sampled hypotheses and
//! multi-referenced datasets.

mod budget;
mod model_teacher;
mod nucleus;
mod scripted;

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl, ContextResponsePair, RawUtterance, TokenId, Utterance, Vocabulary, EOS};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, sample_categorical, seeded};

pub use budget::{epoch_budget, DataSetting, EpochBudget, REFERENCE_TRAIN_PAIRS};
pub use model_teacher::ModelTeacher;
pub use nucleus::{check_distribution, nucleus_filter};
pub use scripted::{ScriptEntry, ScriptedContinuation, ScriptedTeacher};

pub const DEFAULT_TOP_P: f64 = 0.95;
pub const DEFAULT_HYPOTHESIS_LEN: usize = 40;
const EMPTY_DRAW_RETRIES: usize = 8;

/// An autoregressive generator queried one next-token distribution at a
/// time. Implementations answer concurrent read-only queries.
pub trait Teacher: Send + Sync {
    fn name(&self) -> &str;

    fn vocabulary(&self) -> &Vocabulary;

    /// Probability vector over `vocabulary()` for the token following
    /// `prefix` (which excludes the begin-of-sequence marker).
    fn next_token_dist(&self, context: &[Utterance], prefix: &[TokenId]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefSource {
    GroundTruth,
    Hypothesis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub utterance: Utterance,
    pub weight: f64,
    pub source: RefSource,
}

/// A context with N uniformly weighted references.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiRefExample {
    pub pair_id: String,
    pub context: Vec<Utterance>,
    pub references: Vec<Reference>,
}

impl MultiRefExample {
    /// Assigns uniform weights `1/N` to the given references.
    pub fn uniform(
        pair_id: impl Into<String>,
        context: Vec<Utterance>,
        refs: Vec<(Utterance, RefSource)>,
    ) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::invalid("a multi-reference example needs N >= 1"));
        }
        let weight = 1.0 / refs.len() as f64;
        Ok(Self {
            pair_id: pair_id.into(),
            context,
            references: refs.into_iter().map(|(utterance, source)| Reference { utterance, weight, source }).collect(),
        })
    }

    /// The ground-truth-only example of a pair.
    pub fn ground_truth(pair: &ContextResponsePair) -> Self {
        Self {
            pair_id: pair.pair_id.clone(),
            context: pair.context.clone(),
            references: vec![Reference {
                utterance: pair.response.clone(),
                weight: 1.0,
                source: RefSource::GroundTruth,
            }],
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.references.iter().map(|r| r.weight).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSettings {
    pub n: usize,
    pub include_gt: bool,
    pub top_p: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl HypothesisSettings {
    pub fn new(n: usize, include_gt: bool, seed: u64) -> Self {
        Self { n, include_gt, top_p: DEFAULT_TOP_P, max_len: DEFAULT_HYPOTHESIS_LEN, seed }
    }
}

/// Samples one response token by token from the nucleus of the teacher's
/// next-token distributions, until end-of-sequence or `max_len` tokens.
/// The response takes the floor opposite to the last context utterance.
pub fn sample_response<R: Rng + ?Sized>(
    teacher: &dyn Teacher,
    context: &[Utterance],
    top_p: f64,
    max_len: usize,
    rng: &mut R,
) -> Result<Utterance> {
    let last = context.last().ok_or_else(|| Error::invalid("empty context"))?;
    let mut prefix: Vec<TokenId> = Vec::new();
    while prefix.len() < max_len {
        let dist = teacher.next_token_dist(context, &prefix)?;
        if dist.len() != teacher.vocabulary().len() {
            return Err(Error::Teacher(format!(
                "distribution has {} entries for a vocabulary of {}",
                dist.len(),
                teacher.vocabulary().len()
            )));
        }
        let filtered = nucleus_filter(&dist, top_p)?;
        let tok = sample_categorical(&filtered, rng) as TokenId;
        if tok == EOS {
            break;
        }
        prefix.push(tok);
    }
    if prefix.is_empty() {
        return Err(Error::EmptyUtterance);
    }
    Ok(Utterance::new(teacher.vocabulary().decode(&prefix), last.floor.other()))
}

/// Draws `n` hypotheses for one context; empty draws are redrawn a few times.
fn sample_hypotheses(
    teacher: &dyn Teacher,
    context: &[Utterance],
    settings: &HypothesisSettings,
    seed: u64,
) -> Result<Vec<Utterance>> {
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(settings.n);
    while out.len() < settings.n {
        let mut attempt = 0;
        let hyp = loop {
            match sample_response(teacher, context, settings.top_p, settings.max_len, &mut rng) {
                Err(Error::EmptyUtterance) if attempt < EMPTY_DRAW_RETRIES => attempt += 1,
                other => break other?,
            }
        };
        out.push(hyp);
    }
    Ok(out)
}

/// Builds one multi-reference example per pair: `n` sampled hypotheses,
/// plus the ground truth when `include_gt`. Each pair draws from its own
/// seed stream, so the result does not depend on scheduling. Pairs on which
/// the teacher fails are skipped with a warning.
pub fn build_multiref_dataset(
    pairs: &[ContextResponsePair],
    teacher: &dyn Teacher,
    settings: &HypothesisSettings,
) -> Result<Vec<MultiRefExample>> {
    if settings.n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    let built: Vec<Option<MultiRefExample>> = pairs
        .par_iter()
        .map(|pair| {
            let seed = derive_seed(settings.seed, &pair.pair_id);
            match sample_hypotheses(teacher, &pair.context, settings, seed) {
                Ok(hyps) => {
                    let mut refs: Vec<_> = hyps.into_iter().map(|h| (h, RefSource::Hypothesis)).collect();
                    if settings.include_gt {
                        refs.push((pair.response.clone(), RefSource::GroundTruth));
                    }
                    MultiRefExample::uniform(pair.pair_id.clone(), pair.context.clone(), refs).ok()
                }
                Err(e) => {
                    log::warn!("skipping pair {}: {e}", pair.pair_id);
                    None
                }
            }
        })
        .collect();
    Ok(built.into_iter().flatten().collect())
}

/// Teacher next-token distributions at every position of `reference`
/// (without end-of-sequence): entry `l` conditions on `reference[..l]`.
pub fn token_distill_targets(
    teacher: &dyn Teacher,
    student_vocab: &Vocabulary,
    context: &[Utterance],
    reference: &[TokenId],
) -> Result<Vec<Vec<f64>>> {
    if teacher.vocabulary() != student_vocab {
        return Err(Error::VocabMismatch(format!(
            "teacher {} has {} entries (hash {}), student has {} (hash {})",
            teacher.name(),
            teacher.vocabulary().len(),
            teacher.vocabulary().hash(),
            student_vocab.len(),
            student_vocab.hash()
        )));
    }
    (0..reference.len())
        .map(|l| {
            let dist = teacher.next_token_dist(context, &reference[..l])?;
            check_distribution(&dist)?;
            Ok(dist)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub text: String,
    pub weight: f64,
    pub source: RefSource,
    /// Floor of the reference utterance; defaults to the opposite of the
    /// last context floor when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<crate::corpus::Floor>,
}

/// On-disk form: `{pair_id, context: [{floor, text}], references: [{text, weight, source}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRefRecord {
    pub pair_id: String,
    pub context: Vec<RawUtterance>,
    pub references: Vec<ReferenceRecord>,
}

impl From<&MultiRefExample> for MultiRefRecord {
    fn from(e: &MultiRefExample) -> Self {
        let default_floor = e.context.last().map(|u| u.floor.other());
        Self {
            pair_id: e.pair_id.clone(),
            context: e.context.iter().map(|u| RawUtterance { floor: u.floor, text: u.text() }).collect(),
            references: e
                .references
                .iter()
                .map(|r| ReferenceRecord {
                    text: r.utterance.text(),
                    weight: r.weight,
                    source: r.source,
                    floor: (Some(r.utterance.floor) != default_floor).then_some(r.utterance.floor),
                })
                .collect(),
        }
    }
}

impl TryFrom<MultiRefRecord> for MultiRefExample {
    type Error = Error;

    fn try_from(r: MultiRefRecord) -> Result<Self> {
        let context: Vec<Utterance> = r.context.iter().map(|u| Utterance::from_text(&u.text, u.floor)).collect();
        let last = context.last().ok_or_else(|| Error::Data(format!("{}: empty context", r.pair_id)))?.floor;
        if r.references.is_empty() {
            return Err(Error::Data(format!("{}: no references", r.pair_id)));
        }
        let references = r
            .references
            .into_iter()
            .map(|x| Reference {
                utterance: Utterance::from_text(&x.text, x.floor.unwrap_or(last.other())),
                weight: x.weight,
                source: x.source,
            })
            .collect();
        Ok(Self { pair_id: r.pair_id, context, references })
    }
}

pub fn write_multiref(path: &Path, examples: &[MultiRefExample]) -> Result<()> {
    write_jsonl(path, examples.iter().map(MultiRefRecord::from))
}

pub fn read_multiref(path: &Path) -> Result<Vec<MultiRefExample>> {
    read_jsonl::<MultiRefRecord>(path)?.into_iter().map(MultiRefExample::try_from).collect()
}

#[cfg(test)]
mod tests;
