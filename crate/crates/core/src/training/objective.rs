use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, Vocabulary, EOS};
use crate::error::{Error, Result};
use crate::models::{Batch, DialogueModel, Dropout, EncodedPair, LatentChoice, PriorFamily};
use crate::rng::SeededRng;
use crate::teacher::{token_distill_targets, MultiRefExample, Teacher};
use crate::training::losses::{bow_loss_t, nll_t, noise_tensor, prior_kl_t, token_kd_t};

/// Non-zero entries of a next-token distribution.
pub type SparseDist = Vec<(TokenId, f64)>;

/// One training sequence. Multi-reference examples are replicated, one
/// instance per reference, which realizes their uniform weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainInstance {
    pub pair: EncodedPair,
    /// Teacher distributions for every target position (end-of-sequence
    /// included) in token-level distillation.
    pub soft_targets: Option<Vec<SparseDist>>,
}

impl TrainInstance {
    pub fn hard(pair: EncodedPair) -> Self {
        Self { pair, soft_targets: None }
    }
}

/// One instance per reference of every example.
pub fn replicate_references(examples: &[MultiRefExample], vocab: &Vocabulary) -> Vec<TrainInstance> {
    examples
        .iter()
        .flat_map(|e| {
            let context = crate::models::encode_context(vocab, &e.context);
            e.references.iter().map(move |r| {
                TrainInstance::hard(EncodedPair {
                    context: context.clone(),
                    response: vocab.encode(&r.utterance.tokens),
                })
            })
        })
        .collect()
}

/// Attaches teacher distributions at every position of each reference.
pub fn distillation_instances(
    examples: &[MultiRefExample],
    teacher: &dyn Teacher,
    vocab: &Vocabulary,
) -> Result<Vec<TrainInstance>> {
    let mut out = Vec::new();
    for e in examples {
        for r in &e.references {
            let response = vocab.encode(&r.utterance.tokens);
            let mut with_eos = response.clone();
            with_eos.push(EOS);
            let dense = token_distill_targets(teacher, vocab, &e.context, &with_eos)?;
            let sparse = dense
                .into_iter()
                .map(|d| d.into_iter().enumerate().filter(|(_, p)| *p > 0.0).map(|(i, p)| (i as TokenId, p)).collect())
                .collect();
            out.push(TrainInstance {
                pair: EncodedPair { context: crate::models::encode_context(vocab, &e.context), response },
                soft_targets: Some(sparse),
            });
        }
    }
    Ok(out)
}

/// Dense (B, T, V) soft-target tensor, zero on padding positions.
pub fn dense_targets(instances: &[&TrainInstance], width: usize, vocab_size: usize, like: &Tensor) -> Result<Tensor> {
    let b = instances.len();
    let mut data = vec![0.0; b * width * vocab_size];
    for (row, inst) in instances.iter().enumerate() {
        let targets = inst.soft_targets.as_ref().ok_or_else(|| Error::invalid("instance has no soft targets"))?;
        if targets.len() != inst.pair.target_len() {
            return Err(Error::invalid("soft targets must cover every target position"));
        }
        for (t, dist) in targets.iter().enumerate() {
            for &(id, p) in dist {
                if id as usize >= vocab_size {
                    return Err(Error::VocabMismatch(format!("target id {id} outside vocabulary")));
                }
                data[(row * width + t) * vocab_size + id as usize] = p;
            }
        }
    }
    crate::models::from_host(data, &[b, width, vocab_size], like.dtype(), like.device())
}

/// Noise for one batch: the posterior draw and the mixture-KL samples.
pub struct LatentNoise {
    pub posterior: Tensor,
    pub kl_samples: Vec<Tensor>,
}

impl LatentNoise {
    pub fn draw(model: &DialogueModel, rows: usize, kl_samples: usize, rng: &mut SeededRng) -> Result<Self> {
        let d = model.config().latent_dim;
        let like = Tensor::zeros(1, model.dtype(), model.device())?;
        let posterior = noise_tensor(rows, d, &like, rng)?;
        let kl_samples = if model.config().prior.family == PriorFamily::Gmm {
            (0..kl_samples).map(|_| noise_tensor(rows, d, &like, rng)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Self { posterior, kl_samples })
    }
}

/// Per-row loss terms, each (B,).
pub struct LossTerms {
    /// Negative log-likelihood, or soft-target cross-entropy in distillation.
    pub recon: Tensor,
    pub kl: Option<Tensor>,
    pub bow: Option<Tensor>,
}

/// Batch-mean loss components; each term is a per-sequence sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub bow: f64,
    pub anneal: f64,
    pub total: f64,
}

/// Computes the per-row terms. Variational models decode from a posterior
/// draw `z = mu_q + sigma_q * noise`.
pub fn loss_terms(
    model: &DialogueModel,
    batch: &Batch,
    soft_targets: Option<&Tensor>,
    noise: Option<&LatentNoise>,
    dropout: &mut Dropout,
) -> Result<LossTerms> {
    let enc = model.encode_context(&batch.context, dropout)?;
    let (z, kl, bow_z) = if model.is_variational() {
        let noise = noise.ok_or_else(|| Error::invalid("variational objective needs latent noise"))?;
        let response = model.encode_responses(&batch.response, dropout)?;
        let q = model.posterior_params(&enc.summary, &response)?;
        let z = crate::models::tensor_ops::sample_gaussian_t(&q, &noise.posterior)?;
        let prior = model.prior_params(&enc.summary)?;
        let kl = prior_kl_t(&q, &prior, model.config().prior.family, &noise.kl_samples)?;
        (Some(z.clone()), Some(kl), Some(z))
    } else {
        (None, None, None)
    };
    let logprobs = model.teacher_forced(&enc, z.as_ref(), &batch.response, dropout)?;
    let recon = match soft_targets {
        Some(t) => token_kd_t(&logprobs, t, &batch.response)?,
        None => nll_t(&logprobs, &batch.response)?,
    };
    let bow = match bow_z {
        Some(z) => Some(bow_loss_t(&model.bow_logprobs(&z, &enc.summary)?, &batch.response)?),
        None => None,
    };
    Ok(LossTerms { recon, kl, bow })
}

fn host_mean(t: &Tensor) -> Result<f64> {
    Ok(t.mean_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

/// `recon + anneal * kl + bow_weight * bow`, averaged over the batch.
pub fn combine(terms: &LossTerms, anneal: f64, bow_weight: f64) -> Result<(Tensor, LossBreakdown)> {
    let mut total = terms.recon.clone();
    let mut out = LossBreakdown { recon: host_mean(&terms.recon)?, anneal, ..Default::default() };
    if let Some(kl) = &terms.kl {
        total = (total + (kl * anneal)?)?;
        out.kl = host_mean(kl)?;
    }
    if let Some(bow) = &terms.bow {
        total = (total + (bow * bow_weight)?)?;
        out.bow = host_mean(bow)?;
    }
    let total = total.mean_all()?;
    out.total = total.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    Ok((total, out))
}

/// Summed negative log-likelihood of one pair, scored with the prior-mean
/// latent for variational models.
pub fn nll_loss(model: &DialogueModel, pair: &EncodedPair) -> Result<f64> {
    Ok(-model.sequence_logprob(&pair.context, &pair.response, &LatentChoice::PriorMean)?)
}

/// `sum_i w_i * nll(Y_i)` over weighted references of one context.
pub fn multi_ref_loss(
    model: &DialogueModel,
    context: &[crate::models::EncodedUtterance],
    references: &[(Vec<TokenId>, f64)],
) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::invalid("need at least one reference"));
    }
    let mut total = 0.0;
    for (response, weight) in references {
        let pair = EncodedPair { context: context.to_vec(), response: response.clone() };
        total += weight * nll_loss(model, &pair)?;
    }
    Ok(total)
}

/// Differentiable multi-reference loss: the references are decoded as one
/// batch sharing the context. HRED only.
pub fn multi_ref_loss_t(
    model: &DialogueModel,
    context: &[crate::models::EncodedUtterance],
    references: &[(Vec<TokenId>, f64)],
) -> Result<Tensor> {
    if model.is_variational() {
        return Err(Error::invalid("use the variational objective for latent models"));
    }
    let pairs: Vec<EncodedPair> =
        references.iter().map(|(r, _)| EncodedPair { context: context.to_vec(), response: r.clone() }).collect();
    let refs: Vec<&EncodedPair> = pairs.iter().collect();
    let batch = model.batch(&refs)?;
    let terms = loss_terms(model, &batch, None, None, &mut Dropout::eval())?;
    let weights = crate::models::from_host(
        references.iter().map(|(_, w)| *w).collect(),
        &[references.len()],
        model.dtype(),
        model.device(),
    )?;
    Ok((terms.recon * weights)?.sum_all()?)
}

/// Mean per-token negative log-likelihood over `pairs`, end-of-sequence
/// tokens included. Validation and perplexity share this path.
pub fn per_token_nll(model: &DialogueModel, pairs: &[EncodedPair], batch_size: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("cannot score an empty set of pairs"));
    }
    let (logprob, tokens) = model.corpus_logprob(pairs, &LatentChoice::PriorMean, batch_size)?;
    Ok(-logprob / tokens as f64)
}
