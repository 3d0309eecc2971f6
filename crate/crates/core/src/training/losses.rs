use std::f64::consts::PI;

use candle_core::Tensor;
use rand::Rng;

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::models::latent::{check_weights, lgm_aggregate, standard_normal, GaussianParams};
use crate::models::{from_host, PriorFamily, PriorOutput, ResponseBatch, TensorGaussian};

/// `KL(q || p)` between diagonal Gaussians.
pub fn gaussian_kl(q: &GaussianParams, p: &GaussianParams) -> f64 {
    q.mean
        .iter()
        .zip(&q.stddev)
        .zip(p.mean.iter().zip(&p.stddev))
        .map(|((mq, sq), (mp, sp))| (sp / sq).ln() + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5)
        .sum()
}

/// Monte Carlo `E_q[log q(z) - log p(z)]` for a Gaussian-mixture `p`.
pub fn gmm_kl_estimate<R: Rng + ?Sized>(
    q: &GaussianParams,
    components: &[GaussianParams],
    pi: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    check_weights(pi, components.len())?;
    if samples == 0 {
        return Err(Error::invalid("need at least one Monte Carlo sample"));
    }
    let mut acc = 0.0;
    for _ in 0..samples {
        let eps = standard_normal(q.dim(), rng);
        let z: Vec<f64> = q.mean.iter().zip(&q.stddev).zip(&eps).map(|((m, s), e)| m + s * e).collect();
        let log_q = q.log_density(&z);
        let terms: Vec<f64> = components.iter().zip(pi).map(|(c, w)| w.ln() + c.log_density(&z)).collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_p = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
        acc += log_q - log_p;
    }
    Ok(acc / samples as f64)
}

/// KL from the posterior to a prior of the given family: closed form for
/// the unimodal and linear priors, Monte Carlo with `samples` draws for the
/// mixture prior.
pub fn prior_kl<R: Rng + ?Sized>(
    posterior: &GaussianParams,
    components: &[GaussianParams],
    pi: &[f64],
    family: PriorFamily,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    match family {
        PriorFamily::None => Err(Error::invalid("HRED has no prior")),
        PriorFamily::Unimodal => {
            let p = components.first().ok_or_else(|| Error::invalid("missing prior component"))?;
            Ok(gaussian_kl(posterior, p))
        }
        PriorFamily::Lgm => Ok(gaussian_kl(posterior, &lgm_aggregate(components, pi)?)),
        PriorFamily::Gmm => gmm_kl_estimate(posterior, components, pi, samples, rng),
    }
}

/// Linear annealing weight `min(step / anneal_steps, 1)`.
pub fn kl_anneal_weight(step: u64, anneal_steps: u64) -> f64 {
    if anneal_steps == 0 {
        return 1.0;
    }
    (step as f64 / anneal_steps as f64).min(1.0)
}

/// Negative log-probability of every token of `y` under one bag-of-words
/// log-distribution.
pub fn bow_loss(logprobs: &[f64], y: &[TokenId]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::invalid("bag-of-words loss needs a non-empty response"));
    }
    y.iter()
        .map(|&t| {
            logprobs
                .get(t as usize)
                .map(|l| -l)
                .ok_or_else(|| Error::invalid(format!("token {t} outside the distribution")))
        })
        .sum()
}

/// Soft-target cross-entropy summed over positions.
pub fn token_kd_loss(student: &[Vec<f64>], teacher: &[Vec<f64>]) -> Result<f64> {
    if student.len() != teacher.len() {
        return Err(Error::invalid(format!(
            "{} student positions vs {} teacher positions",
            student.len(),
            teacher.len()
        )));
    }
    let mut total = 0.0;
    for (s, t) in student.iter().zip(teacher) {
        if s.len() != t.len() {
            return Err(Error::VocabMismatch(format!("student has {} entries, teacher {}", s.len(), t.len())));
        }
        total -= s.iter().zip(t).filter(|(_, &tp)| tp > 0.0).map(|(&sp, &tp)| tp * sp.ln()).sum::<f64>();
    }
    Ok(total)
}

/// Per-row `KL(q || p)`, (B,).
pub fn gaussian_kl_t(q: &TensorGaussian, p: &TensorGaussian) -> Result<Tensor> {
    let log_ratio = (p.stddev.log()? - q.stddev.log()?)?;
    let num = (q.stddev.sqr()? + (&q.mean - &p.mean)?.sqr()?)?;
    let quad = (num / (p.stddev.sqr()? * 2.0)?)?;
    Ok(((log_ratio + quad)? - 0.5)?.sum(1)?)
}

fn log_normal_t(z: &Tensor, g: &TensorGaussian) -> Result<Tensor> {
    let u = ((z - &g.mean)? / &g.stddev)?;
    let per_dim = ((u.sqr()? * -0.5)? - g.stddev.log()?)?;
    Ok((per_dim.sum_keepdim(1)? - 0.5 * (2.0 * PI).ln() * z.dim(1)? as f64)?)
}

fn log_sum_exp(xs: &Tensor) -> Result<Tensor> {
    let max = xs.max_keepdim(1)?.detach();
    Ok((xs.broadcast_sub(&max)?.exp()?.sum_keepdim(1)?.log()? + max)?)
}

/// Per-row KL from `q` to the prior, (B,). `noises` holds one (B, D)
/// standard-normal tensor per Monte Carlo sample and is only used by the
/// mixture prior.
pub fn prior_kl_t(q: &TensorGaussian, prior: &PriorOutput, family: PriorFamily, noises: &[Tensor]) -> Result<Tensor> {
    match family {
        PriorFamily::None => Err(Error::invalid("HRED has no prior")),
        PriorFamily::Unimodal => gaussian_kl_t(q, &prior.components[0]),
        PriorFamily::Lgm => gaussian_kl_t(q, &crate::models::tensor_ops::lgm_aggregate_t(prior)?),
        PriorFamily::Gmm => {
            if noises.is_empty() {
                return Err(Error::invalid("need at least one Monte Carlo sample"));
            }
            let log_pi = prior.weights.clamp(1e-30, 1.0)?.log()?;
            let mut acc: Option<Tensor> = None;
            for eps in noises {
                let z = (&q.mean + (&q.stddev * eps)?)?;
                let log_q = log_normal_t(&z, q)?;
                let per_k = prior.components.iter().map(|c| log_normal_t(&z, c)).collect::<Result<Vec<_>>>()?;
                let log_p = log_sum_exp(&(Tensor::cat(&per_k, 1)? + &log_pi)?)?;
                let term = (log_q - log_p)?.squeeze(1)?;
                acc = Some(match acc {
                    Some(a) => (a + term)?,
                    None => term,
                });
            }
            Ok((acc.expect("non-empty") / noises.len() as f64)?)
        }
    }
}

/// Per-row bag-of-words loss, (B,).
pub fn bow_loss_t(bow_logprobs: &Tensor, batch: &ResponseBatch) -> Result<Tensor> {
    let picked = bow_logprobs.gather(&batch.bare_ids, 1)?;
    Ok((picked * &batch.bare_mask)?.sum(1)?.neg()?)
}

/// Per-row masked negative log-likelihood from teacher-forced
/// log-distributions, (B,).
pub fn nll_t(logprobs: &Tensor, batch: &ResponseBatch) -> Result<Tensor> {
    Ok(crate::models::DialogueModel::target_logprob(logprobs, batch)?.neg()?)
}

/// Per-row soft-target cross-entropy against dense targets (B, T, V), (B,).
pub fn token_kd_t(logprobs: &Tensor, targets: &Tensor, batch: &ResponseBatch) -> Result<Tensor> {
    let per_pos = (targets * logprobs)?.sum(2)?.neg()?;
    Ok((per_pos * &batch.mask)?.sum(1)?)
}

/// Standard-normal noise tensors drawn on the host.
pub fn noise_tensor<R: Rng + ?Sized>(rows: usize, dim: usize, like: &Tensor, rng: &mut R) -> Result<Tensor> {
    let data: Vec<f64> = (0..rows).flat_map(|_| standard_normal(dim, rng)).collect();
    from_host(data, &[rows, dim], like.dtype(), like.device())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use candle_core::{DType, Device};
    use proptest::prelude::*;

    fn g(mean: &[f64], sd: &[f64]) -> GaussianParams {
        GaussianParams::new(mean.to_vec(), sd.to_vec()).unwrap()
    }

    fn tg(p: &GaussianParams) -> TensorGaussian {
        let d = p.dim();
        let dev = Device::Cpu;
        TensorGaussian {
            mean: from_host(p.mean.clone(), &[1, d], DType::F64, &dev).unwrap(),
            stddev: from_host(p.stddev.clone(), &[1, d], DType::F64, &dev).unwrap(),
        }
    }

    #[test]
    fn kl_hand_values() {
        assert_eq!(gaussian_kl(&g(&[0.3], &[0.7]), &g(&[0.3], &[0.7])), 0.0);
        assert!((gaussian_kl(&g(&[0.0], &[1.0]), &g(&[1.0], &[1.0])) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tensor_kl_matches_host() {
        let q = g(&[0.1, -0.4, 2.0], &[0.5, 1.2, 0.9]);
        let p = g(&[0.0, 0.3, 1.0], &[1.0, 0.8, 2.0]);
        let t: Vec<f64> = gaussian_kl_t(&tg(&q), &tg(&p)).unwrap().to_vec1().unwrap();
        assert!((t[0] - gaussian_kl(&q, &p)).abs() < 1e-12);
    }

    #[test]
    fn mixture_kl_tensor_matches_host_estimator() {
        let q = g(&[0.2, -0.1], &[0.6, 0.9]);
        let comps = [g(&[0.0, 0.0], &[1.0, 1.0]), g(&[1.0, -1.0], &[0.5, 0.7])];
        let pi = [0.3, 0.7];
        let dev = Device::Cpu;
        let prior = PriorOutput {
            components: comps.iter().map(tg).collect(),
            weights: from_host(pi.to_vec(), &[1, 2], DType::F64, &dev).unwrap(),
        };
        let mut rng = seeded(4);
        let noises: Vec<Tensor> = (0..64).map(|_| noise_tensor(1, 2, &prior.weights, &mut rng).unwrap()).collect();
        let t: Vec<f64> = prior_kl_t(&tg(&q), &prior, PriorFamily::Gmm, &noises).unwrap().to_vec1().unwrap();
        let host = gmm_kl_estimate(&q, &comps, &pi, 64, &mut seeded(4)).unwrap();
        assert!((t[0] - host).abs() < 1e-9, "{} vs {host}", t[0]);
    }

    #[test]
    fn anneal_schedule() {
        assert_eq!(kl_anneal_weight(0, 40_000), 0.0);
        assert_eq!(kl_anneal_weight(20_000, 40_000), 0.5);
        assert_eq!(kl_anneal_weight(40_000, 40_000), 1.0);
        assert_eq!(kl_anneal_weight(1_000_000, 40_000), 1.0);
    }

    #[test]
    fn bow_uniform_and_empty() {
        let v = 8;
        let logp = vec![-(v as f64).ln(); v];
        assert!((bow_loss(&logp, &[4, 5, 4]).unwrap() - 3.0 * (v as f64).ln()).abs() < 1e-12);
        assert!(bow_loss(&logp, &[]).is_err());
    }

    #[test]
    fn kd_hand_arithmetic() {
        let student = vec![vec![0.5, 0.25, 0.25], vec![0.1, 0.2, 0.7]];
        let teacher = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.5, 0.5]];
        let expected = -(0.5f64.ln()) - 0.5 * 0.2f64.ln() - 0.5 * 0.7f64.ln();
        assert!((token_kd_loss(&student, &teacher).unwrap() - expected).abs() < 1e-12);
        let entropy: f64 = teacher.iter().flatten().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
        assert!((token_kd_loss(&teacher, &teacher).unwrap() - entropy).abs() < 1e-12);
        assert!(token_kd_loss(&student[..1], &teacher).is_err());
        assert!(token_kd_loss(&[vec![0.5, 0.5]], &teacher[..1]).is_err());
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(
            a in proptest::collection::vec((-3.0f64..3.0, 0.05f64..3.0, -3.0f64..3.0, 0.05f64..3.0), 1..6)
        ) {
            let q = g(&a.iter().map(|x| x.0).collect::<Vec<_>>(), &a.iter().map(|x| x.1).collect::<Vec<_>>());
            let p = g(&a.iter().map(|x| x.2).collect::<Vec<_>>(), &a.iter().map(|x| x.3).collect::<Vec<_>>());
            prop_assert!(gaussian_kl(&q, &p) >= -1e-12);
        }

        #[test]
        fn anneal_is_monotone_and_clamped(a in 0u64..100_000, b in 0u64..100_000) {
            let (lo, hi) = (a.min(b), a.max(b));
            let (wl, wh) = (kl_anneal_weight(lo, 40_000), kl_anneal_weight(hi, 40_000));
            prop_assert!(wl <= wh && (0.0..=1.0).contains(&wl) && (0.0..=1.0).contains(&wh));
        }
    }
}
