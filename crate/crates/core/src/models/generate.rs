use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, BOS, EOS};
use crate::error::{Error, Result};
use crate::models::batch::EncodedUtterance;
use crate::models::config::PriorFamily;
use crate::models::latent::{one_hot, sample_gaussian, sample_gmm, sample_lgm, standard_normal, LatentState};
use crate::models::layers::{from_host, Dropout};
use crate::models::net::DialogueModel;
use crate::rng::{sample_categorical, seeded, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Sample,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "sample" => Ok(Self::Sample),
            other => Err(Error::Config(format!("unknown decode mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Generated ids, end-of-sequence excluded.
    pub ids: Vec<TokenId>,
    pub latent: Option<LatentState>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl DialogueModel {
    /// Decodes a response; variational models draw `z` from the prior.
    pub fn generate(&self, context: &[EncodedUtterance], mode: DecodeMode, seed: u64) -> Result<Generation> {
        Ok(self.generate_batch(&[context], mode, &[seed], None)?.remove(0))
    }

    /// Decodes with the prior weights forced to one-hot at variable `k`.
    pub fn generate_with_variable(
        &self,
        context: &[EncodedUtterance],
        k: usize,
        mode: DecodeMode,
        seed: u64,
    ) -> Result<Generation> {
        Ok(self.generate_batch(&[context], mode, &[seed], Some(k))?.remove(0))
    }

    fn draw_latent(
        &self,
        components: Vec<crate::models::latent::GaussianParams>,
        pi: Vec<f64>,
        forced: Option<usize>,
        rng: &mut SeededRng,
    ) -> Result<LatentState> {
        let k = components.len();
        let pi = match forced {
            Some(f) => one_hot(f, k),
            None => pi,
        };
        let dim = self.config().latent_dim;
        match self.config().prior.family {
            PriorFamily::None => Err(Error::invalid("model has no latent prior")),
            PriorFamily::Unimodal => {
                let z = sample_gaussian(&components[0], &standard_normal(dim, rng));
                Ok(LatentState { z, components, weights: pi, selected: None })
            }
            PriorFamily::Gmm => sample_gmm(&components, &pi, self.config().gmm_draw, rng),
            PriorFamily::Lgm => {
                let noises: Vec<Vec<f64>> = (0..k).map(|_| standard_normal(dim, rng)).collect();
                sample_lgm(&components, &pi, &noises)
            }
        }
    }

    /// Batched decoding. Each row owns a random stream seeded by `seeds[i]`,
    /// so a row's output does not depend on what it is batched with.
    pub fn generate_batch(
        &self,
        contexts: &[&[EncodedUtterance]],
        mode: DecodeMode,
        seeds: &[u64],
        forced: Option<usize>,
    ) -> Result<Vec<Generation>> {
        if contexts.len() != seeds.len() {
            return Err(Error::invalid("need one seed per context"));
        }
        if let Some(k) = forced {
            let available = self.num_components();
            if available == 0 {
                return Err(Error::invalid("forcing a variable requires a latent prior"));
            }
            if k >= available {
                return Err(Error::invalid(format!("variable {k} out of range for K = {available}")));
            }
        }
        let b = contexts.len();
        let mut rngs: Vec<SeededRng> = seeds.iter().map(|s| seeded(*s)).collect();
        let batch = self.context_batch(contexts)?;
        let enc = self.encode_context(&batch, &mut Dropout::eval())?;

        let mut latents: Vec<Option<LatentState>> = vec![None; b];
        let z = if self.is_variational() {
            let prior = self.prior_params(&enc.summary)?.to_host()?;
            let mut flat = Vec::with_capacity(b * self.config().latent_dim);
            for ((row, (components, pi)), rng) in latents.iter_mut().zip(prior).zip(rngs.iter_mut()) {
                let state = self.draw_latent(components, pi, forced, rng)?;
                flat.extend_from_slice(&state.z);
                *row = Some(state);
            }
            Some(from_host(flat, &[b, self.config().latent_dim], self.dtype(), self.device())?)
        } else {
            None
        };

        let mut state = self.decoder_start(&enc, z.as_ref())?;
        let mut prev = vec![BOS; b];
        let mut outputs: Vec<Vec<TokenId>> = vec![Vec::new(); b];
        let mut done = vec![false; b];
        for _ in 0..self.config().max_decode_len {
            let logp: Vec<Vec<f64>> = self.decode_step(&mut state, &prev)?.to_dtype(DType::F64)?.to_vec2()?;
            for (i, row) in logp.iter().enumerate() {
                if done[i] {
                    prev[i] = EOS;
                    continue;
                }
                let tok = match mode {
                    DecodeMode::Greedy => argmax(row),
                    DecodeMode::Sample => {
                        let probs: Vec<f64> = row.iter().map(|l| l.exp()).collect();
                        sample_categorical(&probs, &mut rngs[i])
                    }
                } as TokenId;
                if tok == EOS {
                    done[i] = true;
                } else {
                    outputs[i].push(tok);
                }
                prev[i] = tok;
            }
            if done.iter().all(|d| *d) {
                break;
            }
        }
        Ok(outputs.into_iter().zip(latents).map(|(ids, latent)| Generation { ids, latent }).collect())
    }
}
