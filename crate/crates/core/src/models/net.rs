use std::sync::atomic::{AtomicUsize, Ordering};

use candle_core::{DType, Device, Tensor, D};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::models::batch::{Batch, ContextBatch, EncodedPair, EncodedUtterance, ResponseBatch};
use crate::models::config::{ModelConfig, PriorFamily};
use crate::models::latent::GaussianParams;
use crate::models::layers::{from_host, log_softmax, softmax, softplus, BiGru, Dropout, Gru, Linear};
use crate::models::params::ParamStore;
use crate::rng;

/// Batched diagonal Gaussian, mean and stddev of shape (B, D).
#[derive(Clone, Debug)]
pub struct TensorGaussian {
    pub mean: Tensor,
    pub stddev: Tensor,
}

impl TensorGaussian {
    pub fn to_host(&self) -> Result<Vec<GaussianParams>> {
        let mean: Vec<Vec<f64>> = self.mean.to_dtype(DType::F64)?.to_vec2()?;
        let sd: Vec<Vec<f64>> = self.stddev.to_dtype(DType::F64)?.to_vec2()?;
        mean.into_iter().zip(sd).map(|(m, s)| GaussianParams::new(m, s)).collect()
    }
}

/// Prior components and their weights `pi` of shape (B, K).
#[derive(Clone, Debug)]
pub struct PriorOutput {
    pub components: Vec<TensorGaussian>,
    pub weights: Tensor,
}

impl PriorOutput {
    /// Per-row host copies: (components, weights).
    pub fn to_host(&self) -> Result<Vec<(Vec<GaussianParams>, Vec<f64>)>> {
        let per_k: Vec<Vec<GaussianParams>> =
            self.components.iter().map(TensorGaussian::to_host).collect::<Result<_>>()?;
        let weights: Vec<Vec<f64>> = self.weights.to_dtype(DType::F64)?.to_vec2()?;
        Ok(weights.into_iter().enumerate().map(|(b, pi)| (per_k.iter().map(|c| c[b].clone()).collect(), pi)).collect())
    }

    /// `sum_k pi_k mu_k`: the aggregate mean for the linear prior and the
    /// mixture mean for the mixture prior.
    pub fn weighted_mean(&self) -> Result<Tensor> {
        let mut acc: Option<Tensor> = None;
        for (k, c) in self.components.iter().enumerate() {
            let term = c.mean.broadcast_mul(&self.weights.narrow(1, k, 1)?)?;
            acc = Some(match acc {
                Some(a) => (a + term)?,
                None => term,
            });
        }
        acc.ok_or_else(|| Error::invalid("prior has no components"))
    }
}

/// Output of the hierarchical context encoder.
#[derive(Clone, Debug)]
pub struct ContextEncoding {
    /// Final dialogue-level state `c`, (B, H).
    pub summary: Tensor,
    /// Dialogue-level state after each context utterance, (B, N, H).
    pub annotations: Tensor,
    /// 0 on real positions, -1e9 on padding, (B, N).
    pub mask_bias: Tensor,
}

/// Which latent vector to condition the decoder on when scoring.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentChoice {
    /// `sum_k pi_k mu_k` from the prior.
    PriorMean,
    /// Mean of prior component `k`.
    Component(usize),
    /// Explicit per-row latent vectors.
    Given(Vec<Vec<f64>>),
}

#[derive(Clone)]
struct GaussianHead {
    hidden: Linear,
    mean: Linear,
    stddev: Linear,
    logit: Option<Linear>,
}

impl GaussianHead {
    fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        cfg: &ModelConfig,
        with_logit: bool,
        rng: &mut rng::SeededRng,
    ) -> Result<Self> {
        let (h, d, r) = (cfg.hidden_size, cfg.latent_dim, cfg.init_range);
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), input, h, r, rng)?,
            mean: Linear::new(store, &format!("{name}.mean"), h, d, r, rng)?,
            stddev: Linear::new(store, &format!("{name}.stddev"), h, d, r, rng)?,
            logit: if with_logit { Some(Linear::new(store, &format!("{name}.logit"), h, 1, r, rng)?) } else { None },
        })
    }

    fn forward(&self, x: &Tensor, floor: f64) -> Result<(TensorGaussian, Option<Tensor>)> {
        let h = self.hidden.forward(x)?.tanh()?;
        let mean = self.mean.forward(&h)?;
        let stddev = (softplus(&self.stddev.forward(&h)?)? + floor)?;
        let logit = self.logit.as_ref().map(|l| l.forward(&h)).transpose()?;
        Ok((TensorGaussian { mean, stddev }, logit))
    }
}

pub(crate) struct DecoderState {
    pub hidden: Vec<Tensor>,
    pub latent: Option<Tensor>,
    pub annotations: Tensor,
    pub mask_bias: Tensor,
}

/// Hierarchical recurrent encoder-decoder with an optional latent variable.
///
/// Utterances are encoded by a bidirectional GRU; the sentence vectors,
/// each joined with a floor embedding, feed a unidirectional dialogue-level
/// GRU whose final state is the context encoding `c`. The decoder is a GRU
/// with attention over the dialogue-level states. With a latent variable,
/// `z` enters the decoder twice: through the initial-state projection of
/// `[c; z]` and appended to every step's input embedding.
pub struct DialogueModel {
    config: ModelConfig,
    params: ParamStore,
    embedding: Tensor,
    floor_embedding: Tensor,
    utterance_encoder: BiGru,
    context_encoder: Gru,
    prior_heads: Vec<GaussianHead>,
    posterior: Option<GaussianHead>,
    bow: Option<(Linear, Linear)>,
    decoder_init: Vec<Linear>,
    decoder: Gru,
    attention: Linear,
    combine: Linear,
    output: Linear,
    posterior_calls: AtomicUsize,
}

impl DialogueModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_dtype(config, seed, DType::F32)
    }

    pub fn with_dtype(config: ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype, Device::Cpu);
        let mut rng = rng::seeded(rng::derive_seed(seed, "init"));
        let cfg = &config;
        let (h, e, r, layers) = (cfg.hidden_size, cfg.embedding_dim, cfg.init_range, cfg.num_layers);
        let variational = cfg.prior.is_variational();
        let zd = if variational { cfg.latent_dim } else { 0 };

        let embedding = store.uniform("embedding", &[cfg.vocab_size, e], r, &mut rng)?;
        // rows: floor A, floor B, padding
        let floor_embedding = store.uniform("floor_embedding", &[3, cfg.floor_embedding_dim], r, &mut rng)?;
        let utterance_encoder = BiGru::new(&mut store, "utterance_encoder", e, h, layers, r, &mut rng)?;
        let context_encoder =
            Gru::new(&mut store, "context_encoder", 2 * h + cfg.floor_embedding_dim, h, layers, r, &mut rng)?;

        let mut prior_heads = Vec::new();
        let (mut posterior, mut bow) = (None, None);
        if variational {
            let with_logit = cfg.prior.family != PriorFamily::Unimodal;
            for k in 0..cfg.prior.components() {
                prior_heads.push(GaussianHead::new(&mut store, &format!("prior.{k}"), h, cfg, with_logit, &mut rng)?);
            }
            posterior = Some(GaussianHead::new(&mut store, "posterior", 3 * h, cfg, false, &mut rng)?);
            bow = Some((
                Linear::new(&mut store, "bow.hidden", zd + h, h, r, &mut rng)?,
                Linear::new(&mut store, "bow.output", h, cfg.vocab_size, r, &mut rng)?,
            ));
        }
        let decoder_init = (0..layers)
            .map(|l| Linear::new(&mut store, &format!("decoder_init.{l}"), h + zd, h, r, &mut rng))
            .collect::<Result<_>>()?;
        let decoder = Gru::new(&mut store, "decoder", e + zd, h, layers, r, &mut rng)?;
        let attention = Linear::no_bias(&mut store, "attention", h, h, r, &mut rng)?;
        let combine = Linear::new(&mut store, "combine", 2 * h, h, r, &mut rng)?;
        let output = Linear::new(&mut store, "output", h, cfg.vocab_size, r, &mut rng)?;

        Ok(Self {
            config,
            params: store,
            embedding,
            floor_embedding,
            utterance_encoder,
            context_encoder,
            prior_heads,
            posterior,
            bow,
            decoder_init,
            decoder,
            attention,
            combine,
            output,
            posterior_calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    pub fn is_variational(&self) -> bool {
        self.config.prior.is_variational()
    }

    pub fn num_components(&self) -> usize {
        self.prior_heads.len()
    }

    /// How many times the recognition network has run.
    pub fn posterior_calls(&self) -> usize {
        self.posterior_calls.load(Ordering::Relaxed)
    }

    pub fn batch(&self, pairs: &[&EncodedPair]) -> Result<Batch> {
        Batch::new(pairs, self.dtype(), self.device())
    }

    pub fn context_batch(&self, contexts: &[&[EncodedUtterance]]) -> Result<ContextBatch> {
        ContextBatch::new(contexts, self.dtype(), self.device())
    }

    fn embed(&self, ids: &Tensor) -> Result<Tensor> {
        let dims = ids.dims().to_vec();
        let flat = self.embedding.index_select(&ids.flatten_all()?, 0)?;
        let mut shape = dims;
        shape.push(self.config.embedding_dim);
        Ok(flat.reshape(shape)?)
    }

    fn encode_sentences(&self, ids: &Tensor, mask: &Tensor, dropout: &mut Dropout) -> Result<Tensor> {
        let emb = dropout.apply(&self.embed(ids)?)?;
        self.utterance_encoder.encode(&emb, mask, dropout)
    }

    /// Hierarchical context encoding `c` plus attention annotations.
    pub fn encode_context(&self, batch: &ContextBatch, dropout: &mut Dropout) -> Result<ContextEncoding> {
        let h = self.config.hidden_size;
        let sentences = self.encode_sentences(&batch.utt_ids, &batch.utt_mask, dropout)?;
        let zero = Tensor::zeros((1, 2 * h), sentences.dtype(), sentences.device())?;
        let table = Tensor::cat(&[sentences, zero], 0)?;
        let (b, n) = (batch.size, batch.history);
        let slots = table.index_select(&batch.slot_index, 0)?.reshape((b, n, 2 * h))?;
        let floors = self.floor_embedding.index_select(&batch.slot_floor, 0)?.reshape((
            b,
            n,
            self.config.floor_embedding_dim,
        ))?;
        let input = Tensor::cat(&[slots, floors], 2)?;
        let (annotations, summary) = self.context_encoder.run(&input, &batch.slot_mask, dropout)?;
        let mask_bias = batch.slot_mask.affine(1e9, -1e9)?;
        Ok(ContextEncoding { summary, annotations, mask_bias })
    }

    /// Bidirectional sentence encoding of each response, (B, 2H).
    pub fn encode_responses(&self, batch: &ResponseBatch, dropout: &mut Dropout) -> Result<Tensor> {
        self.encode_sentences(&batch.bare_ids, &batch.bare_mask, dropout)
    }

    /// Prior components and weights from the context encoding.
    pub fn prior_params(&self, c: &Tensor) -> Result<PriorOutput> {
        if self.prior_heads.is_empty() {
            return Err(Error::invalid("model has no latent prior"));
        }
        let mut components = Vec::with_capacity(self.prior_heads.len());
        let mut logits = Vec::new();
        for head in &self.prior_heads {
            let (g, logit) = head.forward(c, self.config.stddev_floor)?;
            components.push(g);
            logits.extend(logit);
        }
        let weights = if logits.is_empty() {
            Tensor::ones((c.dim(0)?, 1), c.dtype(), c.device())?
        } else {
            softmax(&Tensor::cat(&logits, 1)?, 1)?
        };
        Ok(PriorOutput { components, weights })
    }

    /// Recognition network q(z | c, response).
    pub fn posterior_params(&self, c: &Tensor, response_encoding: &Tensor) -> Result<TensorGaussian> {
        let head = self.posterior.as_ref().ok_or_else(|| Error::invalid("model has no latent prior"))?;
        self.posterior_calls.fetch_add(1, Ordering::Relaxed);
        Ok(head.forward(&Tensor::cat(&[c, response_encoding], 1)?, self.config.stddev_floor)?.0)
    }

    /// Bag-of-words log-distribution over the vocabulary from `[z; c]`, (B, V).
    pub fn bow_logprobs(&self, z: &Tensor, c: &Tensor) -> Result<Tensor> {
        let (hidden, out) = self.bow.as_ref().ok_or_else(|| Error::invalid("model has no latent prior"))?;
        let h = hidden.forward(&Tensor::cat(&[z, c], 1)?)?.tanh()?;
        log_softmax(&out.forward(&h)?, 1)
    }

    /// The latent tensor selected by `choice`, or `None` for HRED.
    pub fn latent_for(&self, enc: &ContextEncoding, choice: &LatentChoice) -> Result<Option<Tensor>> {
        if !self.is_variational() {
            return Ok(None);
        }
        Ok(Some(match choice {
            LatentChoice::PriorMean => self.prior_params(&enc.summary)?.weighted_mean()?,
            LatentChoice::Component(k) => {
                let prior = self.prior_params(&enc.summary)?;
                prior
                    .components
                    .get(*k)
                    .ok_or_else(|| Error::invalid(format!("component {k} out of range")))?
                    .mean
                    .clone()
            }
            LatentChoice::Given(rows) => {
                let b = rows.len();
                let data: Vec<f64> = rows.iter().flatten().copied().collect();
                if data.len() != b * self.config.latent_dim {
                    return Err(Error::invalid("latent vectors have the wrong dimension"));
                }
                from_host(data, &[b, self.config.latent_dim], self.dtype(), self.device())?
            }
        }))
    }

    pub(crate) fn decoder_start(&self, enc: &ContextEncoding, z: Option<&Tensor>) -> Result<DecoderState> {
        let init_input = match z {
            Some(z) => Tensor::cat(&[&enc.summary, z], 1)?,
            None => enc.summary.clone(),
        };
        let hidden = self.decoder_init.iter().map(|l| Ok(l.forward(&init_input)?.tanh()?)).collect::<Result<_>>()?;
        Ok(DecoderState {
            hidden,
            latent: z.cloned(),
            annotations: enc.annotations.clone(),
            mask_bias: enc.mask_bias.clone(),
        })
    }

    /// Advances every decoder layer given layer-0's input projection and
    /// returns the attention-combined output features (B, H).
    fn advance(&self, state: &mut DecoderState, first_gx: &Tensor, dropout: &mut Dropout) -> Result<Tensor> {
        let cells = self.decoder.layers();
        let mut below = None;
        for (l, cell) in cells.iter().enumerate() {
            let gx = match &below {
                None => first_gx.clone(),
                Some(x) => cell.project_input(&dropout.apply(x)?)?,
            };
            let h = cell.step(&gx, &state.hidden[l])?;
            state.hidden[l] = h.clone();
            below = Some(h);
        }
        let top = below.expect("decoder has layers");
        let query = self.attention.forward(&top)?.unsqueeze(2)?;
        let scores = state.annotations.matmul(&query)?.squeeze(2)?;
        let alpha = softmax(&(scores + &state.mask_bias)?, 1)?;
        let attended = alpha.unsqueeze(1)?.matmul(&state.annotations)?.squeeze(1)?;
        let combined = self.combine.forward(&Tensor::cat(&[top, attended], 1)?)?.tanh()?;
        dropout.apply(&combined)
    }

    fn step_input(&self, emb: &Tensor, z: Option<&Tensor>) -> Result<Tensor> {
        Ok(match z {
            Some(z) => {
                let z = match emb.rank() {
                    3 => z.unsqueeze(1)?.broadcast_as((emb.dim(0)?, emb.dim(1)?, z.dim(1)?))?.contiguous()?,
                    _ => z.clone(),
                };
                Tensor::cat(&[emb, &z], D::Minus1)?
            }
            None => emb.clone(),
        })
    }

    /// Teacher-forced log-distributions over the vocabulary, (B, T, V).
    pub fn teacher_forced(
        &self,
        enc: &ContextEncoding,
        z: Option<&Tensor>,
        batch: &ResponseBatch,
        dropout: &mut Dropout,
    ) -> Result<Tensor> {
        let mut state = self.decoder_start(enc, z)?;
        let emb = dropout.apply(&self.embed(&batch.inputs)?)?;
        let gx = self.decoder.layers()[0].project_input(&self.step_input(&emb, z)?)?;
        let steps = batch.inputs.dim(1)?;
        let mut features = Vec::with_capacity(steps);
        for t in 0..steps {
            features.push(self.advance(&mut state, &gx.narrow(1, t, 1)?.squeeze(1)?, dropout)?);
        }
        let features = Tensor::stack(&features, 1)?;
        log_softmax(&self.output.forward(&features)?, 2)
    }

    /// Sum of masked target log-probabilities per row, (B,).
    pub fn target_logprob(logprobs: &Tensor, batch: &ResponseBatch) -> Result<Tensor> {
        let picked = logprobs.gather(&batch.targets.unsqueeze(2)?, 2)?.squeeze(2)?;
        Ok((picked * &batch.mask)?.sum(1)?)
    }

    /// One decoding step from the previous tokens; returns (B, V) log-probabilities.
    pub(crate) fn decode_step(&self, state: &mut DecoderState, prev: &[TokenId]) -> Result<Tensor> {
        let ids = Tensor::from_vec(prev.to_vec(), prev.len(), self.device())?;
        let emb = self.embed(&ids)?;
        let gx = self.decoder.layers()[0].project_input(&self.step_input(&emb, state.latent.as_ref())?)?;
        let features = self.advance(state, &gx, &mut Dropout::eval())?;
        log_softmax(&self.output.forward(&features)?, 1)
    }

    /// Next-token distribution after `prefix`, given a context and an
    /// optional explicit latent (prior mean otherwise).
    pub fn next_token_probs(
        &self,
        context: &[EncodedUtterance],
        z: Option<&[f64]>,
        prefix: &[TokenId],
    ) -> Result<Vec<f64>> {
        let batch = self.context_batch(&[context])?;
        let enc = self.encode_context(&batch, &mut Dropout::eval())?;
        let choice = match z {
            Some(z) => LatentChoice::Given(vec![z.to_vec()]),
            None => LatentChoice::PriorMean,
        };
        let z = self.latent_for(&enc, &choice)?;
        let mut state = self.decoder_start(&enc, z.as_ref())?;
        let mut logp = self.decode_step(&mut state, &[crate::corpus::BOS])?;
        for &tok in prefix {
            logp = self.decode_step(&mut state, &[tok])?;
        }
        let logp: Vec<f64> = logp.squeeze(0)?.to_dtype(DType::F64)?.to_vec1()?;
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let total: f64 = probs.iter().sum();
        Ok(probs.into_iter().map(|p| p / total).collect())
    }

    /// `log P(Y | X)` under teacher forcing, end-of-sequence included.
    pub fn sequence_logprob(
        &self,
        context: &[EncodedUtterance],
        response: &[TokenId],
        choice: &LatentChoice,
    ) -> Result<f64> {
        let pair = EncodedPair { context: context.to_vec(), response: response.to_vec() };
        let (total, _) = self.corpus_logprob(std::slice::from_ref(&pair), choice, 1)?;
        Ok(total)
    }

    /// Summed log-probability and target-token count over `pairs`, scored in
    /// fixed-size batches in order.
    pub fn corpus_logprob(
        &self,
        pairs: &[EncodedPair],
        choice: &LatentChoice,
        batch_size: usize,
    ) -> Result<(f64, usize)> {
        let mut total = 0.0;
        let mut tokens = 0;
        for (chunk_idx, chunk) in pairs.chunks(batch_size.max(1)).enumerate() {
            let refs: Vec<&EncodedPair> = chunk.iter().collect();
            let batch = self.batch(&refs)?;
            let enc = self.encode_context(&batch.context, &mut Dropout::eval())?;
            let choice = match choice {
                LatentChoice::Given(rows) => {
                    let start = chunk_idx * batch_size.max(1);
                    LatentChoice::Given(rows[start..start + chunk.len()].to_vec())
                }
                other => other.clone(),
            };
            let z = self.latent_for(&enc, &choice)?;
            let logp = self.teacher_forced(&enc, z.as_ref(), &batch.response, &mut Dropout::eval())?;
            let rows: Vec<f64> = Self::target_logprob(&logp, &batch.response)?.to_dtype(DType::F64)?.to_vec1()?;
            total += rows.iter().sum::<f64>();
            tokens += batch.response.lengths.iter().sum::<usize>();
        }
        Ok((total, tokens))
    }

    /// Mean prior weight vector over the given contexts.
    pub fn average_selection(&self, contexts: &[&[EncodedUtterance]], batch_size: usize) -> Result<Vec<f64>> {
        let k = self.num_components();
        if k == 0 {
            return Err(Error::invalid("model has no prior components"));
        }
        let mut sums = vec![0.0; k];
        for chunk in contexts.chunks(batch_size.max(1)) {
            let batch = self.context_batch(chunk)?;
            let enc = self.encode_context(&batch, &mut Dropout::eval())?;
            let pi: Vec<Vec<f64>> = self.prior_params(&enc.summary)?.weights.to_dtype(DType::F64)?.to_vec2()?;
            for row in pi {
                for (s, p) in sums.iter_mut().zip(row) {
                    *s += p;
                }
            }
        }
        let n = contexts.len().max(1) as f64;
        Ok(sums.into_iter().map(|s| s / n).collect())
    }
}
