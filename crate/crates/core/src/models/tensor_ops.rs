//! Differentiable counterparts of the host samplers in [`super::latent`].

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::models::net::{PriorOutput, TensorGaussian};

/// `mean + stddev * noise`, differentiable in mean and stddev.
pub fn sample_gaussian_t(params: &TensorGaussian, noise: &Tensor) -> Result<Tensor> {
    Ok((&params.mean + (&params.stddev * noise)?)?)
}

/// `sum_k pi_k (mu_k + sigma_k * noise_k)`; weights are (B, K).
pub fn sample_lgm_t(prior: &PriorOutput, noises: &[Tensor]) -> Result<Tensor> {
    if noises.len() != prior.components.len() {
        return Err(Error::invalid("need one noise tensor per component"));
    }
    let mut acc: Option<Tensor> = None;
    for (k, (c, noise)) in prior.components.iter().zip(noises).enumerate() {
        let term = sample_gaussian_t(c, noise)?.broadcast_mul(&prior.weights.narrow(1, k, 1)?)?;
        acc = Some(match acc {
            Some(a) => (a + term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| Error::invalid("prior has no components"))
}

/// Gaussian law of the linear combination: `(sum pi mu, sqrt(sum pi^2 sigma^2))`.
pub fn lgm_aggregate_t(prior: &PriorOutput) -> Result<TensorGaussian> {
    let mut var: Option<Tensor> = None;
    for (k, c) in prior.components.iter().enumerate() {
        let w = prior.weights.narrow(1, k, 1)?;
        let term = c.stddev.broadcast_mul(&w)?.sqr()?;
        var = Some(match var {
            Some(v) => (v + term)?,
            None => term,
        });
    }
    let var = var.ok_or_else(|| Error::invalid("prior has no components"))?;
    Ok(TensorGaussian { mean: prior.weighted_mean()?, stddev: var.sqrt()? })
}
