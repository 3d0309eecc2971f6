//! Automated metrics and latent-variable analyses.

mod embedding;
mod text;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{ContextResponsePair, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{encode_context, DecodeMode, DialogueModel, EncodedPair, EncodedUtterance, LatentChoice};
use crate::rng::derive_seed_index;
use crate::training::per_token_nll;

pub use embedding::{cosine, embedding_similarity, Similarity, SimilarityMode, WordEmbeddingTable};
pub use text::{bleu2, corpus_bleu2, distinct_n};

/// External learned scorer hook (for example a trained response evaluator).
pub trait ResponseScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, context: &[String], hypothesis: &[String]) -> Result<f64>;
}

/// Test pairs prepared for scoring and generation.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub pair_ids: Vec<String>,
    pub contexts: Vec<Vec<EncodedUtterance>>,
    pub context_text: Vec<Vec<String>>,
    pub pairs: Vec<EncodedPair>,
    /// Reference tokens as written, unknown words included.
    pub references: Vec<Vec<String>>,
}

impl EvalSet {
    pub fn new(pairs: &[ContextResponsePair], vocab: &Vocabulary) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Data("evaluation set is empty".into()));
        }
        Ok(Self {
            pair_ids: pairs.iter().map(|p| p.pair_id.clone()).collect(),
            contexts: pairs.iter().map(|p| encode_context(vocab, &p.context)).collect(),
            context_text: pairs.iter().map(|p| p.context.iter().map(|u| u.text()).collect()).collect(),
            pairs: pairs.iter().map(|p| EncodedPair::encode(vocab, p)).collect(),
            references: pairs.iter().map(|p| p.response.tokens.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Clone, Copy)]
pub struct EvalOptions<'a> {
    pub mode: DecodeMode,
    pub seed: u64,
    pub batch_size: usize,
    pub embeddings: Option<&'a WordEmbeddingTable>,
    pub scorer: Option<&'a dyn ResponseScorer>,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        Self { mode: DecodeMode::Greedy, seed: 0, batch_size: 30, embeddings: None, scorer: None }
    }
}

/// Generation-based scores shared by the full report and per-variable rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextScores {
    pub bleu2: f64,
    pub emb_extrema: Option<f64>,
    pub emb_average: Option<f64>,
    pub emb_greedy: Option<f64>,
    pub distinct_1: usize,
    pub distinct_2: usize,
    /// Pairs where a side had no token in the embedding table.
    pub embedding_misses: usize,
    pub reval: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableRow {
    pub k: usize,
    pub avg_pi: f64,
    pub perplexity: f64,
    #[serde(flatten)]
    pub scores: TextScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub perplexity: f64,
    #[serde(flatten)]
    pub scores: TextScores,
    pub per_variable: Vec<VariableRow>,
}

/// `exp` of the mean per-token negative log-likelihood, end-of-sequence
/// included; variational models use the prior-mean latent.
pub fn perplexity(model: &DialogueModel, pairs: &[EncodedPair], batch_size: usize) -> Result<f64> {
    Ok(per_token_nll(model, pairs, batch_size)?.exp())
}

fn perplexity_with(
    model: &DialogueModel,
    pairs: &[EncodedPair],
    choice: &LatentChoice,
    batch_size: usize,
) -> Result<f64> {
    let (lp, tokens) = model.corpus_logprob(pairs, choice, batch_size)?;
    Ok((-lp / tokens as f64).exp())
}

/// Mean prior weight vector over the contexts.
pub fn avg_selection_prob(
    model: &DialogueModel,
    contexts: &[Vec<EncodedUtterance>],
    batch_size: usize,
) -> Result<Vec<f64>> {
    let refs: Vec<&[EncodedUtterance]> = contexts.iter().map(Vec::as_slice).collect();
    model.average_selection(&refs, batch_size)
}

/// Decodes one response per context; row `i` uses seed `(seed, i)`.
pub fn generate_responses(
    model: &DialogueModel,
    set: &EvalSet,
    vocab: &Vocabulary,
    options: &EvalOptions,
    forced: Option<usize>,
) -> Result<Vec<Vec<String>>> {
    let bs = options.batch_size.max(1);
    let mut out = Vec::with_capacity(set.len());
    for (chunk_idx, chunk) in set.contexts.chunks(bs).enumerate() {
        let refs: Vec<&[EncodedUtterance]> = chunk.iter().map(Vec::as_slice).collect();
        let seeds: Vec<u64> =
            (0..chunk.len()).map(|i| derive_seed_index(options.seed, (chunk_idx * bs + i) as u64)).collect();
        for g in model.generate_batch(&refs, options.mode, &seeds, forced)? {
            out.push(vocab.decode(&g.ids));
        }
    }
    Ok(out)
}

/// BLEU-2, the three embedding similarities (x100), distinct-1/2 and the
/// optional external score.
pub fn score_responses(hyps: &[Vec<String>], set: &EvalSet, options: &EvalOptions) -> Result<TextScores> {
    let n = hyps.len().max(1) as f64;
    let mut scores = TextScores {
        bleu2: corpus_bleu2(hyps, &set.references),
        emb_extrema: None,
        emb_average: None,
        emb_greedy: None,
        distinct_1: distinct_n(hyps, 1),
        distinct_2: distinct_n(hyps, 2),
        embedding_misses: 0,
        reval: None,
    };
    if let Some(table) = options.embeddings {
        let mut sums = [0.0; 3];
        for (h, r) in hyps.iter().zip(&set.references) {
            let modes = [SimilarityMode::Extrema, SimilarityMode::Average, SimilarityMode::Greedy];
            for (s, mode) in sums.iter_mut().zip(modes) {
                let sim = embedding_similarity(h, r, table, mode);
                *s += sim.score;
                if sim.missing && mode == SimilarityMode::Average {
                    scores.embedding_misses += 1;
                }
            }
        }
        scores.emb_extrema = Some(100.0 * sums[0] / n);
        scores.emb_average = Some(100.0 * sums[1] / n);
        scores.emb_greedy = Some(100.0 * sums[2] / n);
    }
    if let Some(scorer) = options.scorer {
        let mut total = 0.0;
        for (h, c) in hyps.iter().zip(&set.context_text) {
            total += scorer.score(c, h)?;
        }
        scores.reval = Some(total / n);
    }
    Ok(scores)
}

/// Perplexity plus generation-based scores of the unforced model.
pub fn evaluate(
    model: &DialogueModel,
    set: &EvalSet,
    vocab: &Vocabulary,
    options: &EvalOptions,
) -> Result<MetricReport> {
    let hyps = generate_responses(model, set, vocab, options, None)?;
    Ok(MetricReport {
        perplexity: perplexity(model, &set.pairs, options.batch_size)?,
        scores: score_responses(&hyps, set, options)?,
        per_variable: Vec::new(),
    })
}

/// One row per prior component: decoding with that variable alone, and
/// perplexity with its mean as the latent.
pub fn per_variable_report(
    model: &DialogueModel,
    set: &EvalSet,
    vocab: &Vocabulary,
    options: &EvalOptions,
) -> Result<Vec<VariableRow>> {
    let k = model.num_components();
    if k == 0 {
        return Err(Error::invalid("per-variable analysis needs a latent prior"));
    }
    let pi = avg_selection_prob(model, &set.contexts, options.batch_size)?;
    (0..k)
        .map(|j| {
            let hyps = generate_responses(model, set, vocab, options, Some(j))?;
            Ok(VariableRow {
                k: j,
                avg_pi: pi[j],
                perplexity: perplexity_with(model, &set.pairs, &LatentChoice::Component(j), options.batch_size)?,
                scores: score_responses(&hyps, set, options)?,
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

fn row_cells(scores: &TextScores) -> String {
    format!(
        "{:>8.2} {:>8} {:>8} {:>8} {:>7} {:>7} {:>6}",
        scores.bleu2,
        opt(scores.emb_extrema),
        opt(scores.emb_average),
        opt(scores.emb_greedy),
        scores.distinct_1,
        scores.distinct_2,
        opt(scores.reval)
    )
}

impl MetricReport {
    /// Aligned plain-text rendering; per-variable rows follow the overall row.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let header = format!(
            "{:>5} {:>8} {:>10} {:>8} {:>8} {:>8} {:>8} {:>7} {:>7} {:>6}",
            "k", "pi_k(%)", "ppl", "bleu2", "extrema", "average", "greedy", "dist1", "dist2", "reval"
        );
        writeln!(out, "{header}").expect("write to string");
        for r in &self.per_variable {
            writeln!(out, "{:>5} {:>8.2} {:>10.2} {}", r.k + 1, 100.0 * r.avg_pi, r.perplexity, row_cells(&r.scores))
                .expect("write to string");
        }
        writeln!(out, "{:>5} {:>8} {:>10.2} {}", "mix", "-", self.perplexity, row_cells(&self.scores))
            .expect("write to string");
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests;
