use candle_core::{DType, Device, Tensor};

use crate::corpus::{ContextResponsePair, Floor, TokenId, Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::models::layers::from_host;

/// Vocabulary ids of one utterance plus its speaker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedUtterance {
    pub ids: Vec<TokenId>,
    pub floor: Floor,
}

/// A context window and one response, as ids. The response excludes the
/// end-of-sequence marker, which batching appends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub context: Vec<EncodedUtterance>,
    pub response: Vec<TokenId>,
}

impl EncodedPair {
    pub fn encode(vocab: &Vocabulary, pair: &ContextResponsePair) -> Self {
        Self { context: encode_context(vocab, &pair.context), response: vocab.encode(&pair.response.tokens) }
    }

    /// Target length including end-of-sequence.
    pub fn target_len(&self) -> usize {
        self.response.len() + 1
    }
}

pub fn encode_context(vocab: &Vocabulary, context: &[crate::corpus::Utterance]) -> Vec<EncodedUtterance> {
    context.iter().map(|u| EncodedUtterance { ids: vocab.encode(&u.tokens), floor: u.floor }).collect()
}

/// Padded tensors for a batch of contexts.
pub struct ContextBatch {
    pub size: usize,
    /// All context utterances stacked: (n_utt, T) ids and float mask.
    pub utt_ids: Tensor,
    pub utt_mask: Tensor,
    /// (B * H) row indices into the utterance vectors; padding points at an
    /// extra all-zero row.
    pub slot_index: Tensor,
    /// (B * H) floor ids, 2 for padding.
    pub slot_floor: Tensor,
    /// (B, H) float mask over context positions.
    pub slot_mask: Tensor,
    pub n_utterances: usize,
    pub history: usize,
}

/// Teacher-forcing tensors for responses.
pub struct ResponseBatch {
    /// (B, T) decoder inputs: BOS followed by the response.
    pub inputs: Tensor,
    /// (B, T) targets: the response followed by EOS.
    pub targets: Tensor,
    pub mask: Tensor,
    /// (B, T-1) response ids alone, for the response encoder.
    pub bare_ids: Tensor,
    pub bare_mask: Tensor,
    /// Per-row response ids without EOS.
    pub rows: Vec<Vec<TokenId>>,
    pub lengths: Vec<usize>,
}

fn padded(rows: &[Vec<TokenId>], width: usize) -> (Vec<u32>, Vec<f64>) {
    let mut ids = Vec::with_capacity(rows.len() * width);
    let mut mask = Vec::with_capacity(rows.len() * width);
    for r in rows {
        for i in 0..width {
            ids.push(r.get(i).copied().unwrap_or(0));
            mask.push(if i < r.len() { 1.0 } else { 0.0 });
        }
    }
    (ids, mask)
}

impl ContextBatch {
    pub fn new(contexts: &[&[EncodedUtterance]], dtype: DType, device: &Device) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if contexts.iter().any(|c| c.is_empty() || c.iter().any(|u| u.ids.is_empty())) {
            return Err(Error::invalid("every context needs at least one non-empty utterance"));
        }
        let history = contexts.iter().map(|c| c.len()).max().unwrap_or(0);
        let utts: Vec<Vec<TokenId>> = contexts.iter().flat_map(|c| c.iter().map(|u| u.ids.clone())).collect();
        let n_utt = utts.len();
        let width = utts.iter().map(Vec::len).max().unwrap_or(1);
        let (ids, mask) = padded(&utts, width);

        let mut slot_index = Vec::with_capacity(contexts.len() * history);
        let mut slot_floor = Vec::with_capacity(contexts.len() * history);
        let mut slot_mask = Vec::with_capacity(contexts.len() * history);
        let mut offset = 0u32;
        for c in contexts {
            for j in 0..history {
                if let Some(u) = c.get(j) {
                    slot_index.push(offset + j as u32);
                    slot_floor.push(u.floor.index() as u32);
                    slot_mask.push(1.0);
                } else {
                    slot_index.push(n_utt as u32);
                    slot_floor.push(2);
                    slot_mask.push(0.0);
                }
            }
            offset += c.len() as u32;
        }
        Ok(Self {
            size: contexts.len(),
            utt_ids: Tensor::from_vec(ids, (n_utt, width), device)?,
            utt_mask: from_host(mask, &[n_utt, width], dtype, device)?,
            slot_index: Tensor::from_vec(slot_index, contexts.len() * history, device)?,
            slot_floor: Tensor::from_vec(slot_floor, contexts.len() * history, device)?,
            slot_mask: from_host(slot_mask, &[contexts.len(), history], dtype, device)?,
            n_utterances: n_utt,
            history,
        })
    }
}

impl ResponseBatch {
    pub fn new(responses: &[&[TokenId]], dtype: DType, device: &Device) -> Result<Self> {
        if responses.iter().any(|r| r.is_empty()) {
            return Err(Error::invalid("responses must be non-empty"));
        }
        let b = responses.len();
        let width = responses.iter().map(|r| r.len()).max().unwrap_or(0) + 1;
        let inputs: Vec<Vec<TokenId>> =
            responses.iter().map(|r| std::iter::once(BOS).chain(r.iter().copied()).collect()).collect();
        let targets: Vec<Vec<TokenId>> =
            responses.iter().map(|r| r.iter().copied().chain(std::iter::once(EOS)).collect()).collect();
        let rows: Vec<Vec<TokenId>> = responses.iter().map(|r| r.to_vec()).collect();
        let (in_ids, _) = padded(&inputs, width);
        let (out_ids, mask) = padded(&targets, width);
        let (bare, bare_mask) = padded(&rows, width - 1);
        Ok(Self {
            inputs: Tensor::from_vec(in_ids, (b, width), device)?,
            targets: Tensor::from_vec(out_ids, (b, width), device)?,
            mask: from_host(mask, &[b, width], dtype, device)?,
            bare_ids: Tensor::from_vec(bare, (b, width - 1), device)?,
            bare_mask: from_host(bare_mask, &[b, width - 1], dtype, device)?,
            lengths: targets.iter().map(Vec::len).collect(),
            rows,
        })
    }

    pub fn width(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(0)
    }
}

/// Contexts plus teacher-forcing responses.
pub struct Batch {
    pub context: ContextBatch,
    pub response: ResponseBatch,
}

impl Batch {
    pub fn new(pairs: &[&EncodedPair], dtype: DType, device: &Device) -> Result<Self> {
        let contexts: Vec<&[EncodedUtterance]> = pairs.iter().map(|p| p.context.as_slice()).collect();
        let responses: Vec<&[TokenId]> = pairs.iter().map(|p| p.response.as_slice()).collect();
        Ok(Self {
            context: ContextBatch::new(&contexts, dtype, device)?,
            response: ResponseBatch::new(&responses, dtype, device)?,
        })
    }

    pub fn size(&self) -> usize {
        self.context.size
    }
}
