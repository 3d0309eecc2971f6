//! Diagonal Gaussians and the three prior samplers (unimodal, mixture,
//! linear combination), on host vectors.
//!
//! The linear-combination prior draws `z_k ~ N(mu_k, sigma_k^2)` independently
//! and returns `z = sum_k pi_k z_k`. Independent Gaussians are closed under
//! linear maps, so `z ~ N(sum_k pi_k mu_k, sum_k pi_k^2 sigma_k^2)`; that law is
//! what [`lgm_aggregate`] returns.

use rand::Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sample_categorical;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, stddev: Vec<f64>) -> Result<Self> {
        if mean.len() != stddev.len() {
            return Err(Error::invalid("mean and stddev lengths differ"));
        }
        if stddev.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("stddev must be finite and strictly positive"));
        }
        Ok(Self { mean, stddev })
    }

    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], stddev: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.stddev.iter().map(|s| s * s).collect()
    }

    /// Log density of a diagonal Gaussian.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.mean
            .iter()
            .zip(&self.stddev)
            .zip(z)
            .map(|((m, s), x)| {
                let u = (x - m) / s;
                -0.5 * (ln_2pi + u * u) - s.ln()
            })
            .sum()
    }
}

/// A drawn latent vector together with the prior it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub z: Vec<f64>,
    pub components: Vec<GaussianParams>,
    pub weights: Vec<f64>,
    /// Component chosen by a hard mixture draw.
    pub selected: Option<usize>,
}

/// How a mixture prior picks its component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum GmmDraw {
    /// Categorical draw; not differentiable in the weights.
    #[default]
    Hard,
    /// Gumbel-softmax relaxation at the given temperature.
    Relaxed { temperature: f64 },
}

pub fn check_weights(pi: &[f64], k: usize) -> Result<()> {
    if pi.len() != k || k == 0 {
        return Err(Error::invalid(format!("expected {k} mixture weights, got {}", pi.len())));
    }
    if pi.iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(Error::invalid("mixture weights must be non-negative"));
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("mixture weights sum to {total}, expected 1")));
    }
    Ok(())
}

fn check_components(components: &[GaussianParams]) -> Result<usize> {
    let dim = components.first().ok_or_else(|| Error::invalid("at least one component required"))?.dim();
    if components.iter().any(|c| c.dim() != dim) {
        return Err(Error::invalid("components differ in dimension"));
    }
    Ok(dim)
}

pub fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Reparameterized draw `mean + stddev * noise`.
pub fn sample_gaussian(params: &GaussianParams, noise: &[f64]) -> Vec<f64> {
    params.mean.iter().zip(&params.stddev).zip(noise).map(|((m, s), e)| m + s * e).collect()
}

pub fn sample_gmm<R: Rng + ?Sized>(
    components: &[GaussianParams],
    pi: &[f64],
    draw: GmmDraw,
    rng: &mut R,
) -> Result<LatentState> {
    let dim = check_components(components)?;
    check_weights(pi, components.len())?;
    match draw {
        GmmDraw::Hard => {
            let k = sample_categorical(pi, rng);
            let noise = standard_normal(dim, rng);
            Ok(LatentState {
                z: sample_gaussian(&components[k], &noise),
                components: components.to_vec(),
                weights: pi.to_vec(),
                selected: Some(k),
            })
        }
        GmmDraw::Relaxed { temperature } => {
            if !(temperature > 0.0) {
                return Err(Error::invalid("relaxation temperature must be positive"));
            }
            let gumbel = Gumbel::new(0.0, 1.0).expect("unit gumbel");
            let scores: Vec<f64> = pi.iter().map(|p| (p.max(1e-300).ln() + gumbel.sample(rng)) / temperature).collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exp.iter().sum();
            let soft: Vec<f64> = exp.iter().map(|e| e / total).collect();
            let mut z = vec![0.0; dim];
            for (c, w) in components.iter().zip(&soft) {
                let zk = sample_gaussian(c, &standard_normal(dim, rng));
                for (acc, v) in z.iter_mut().zip(zk) {
                    *acc += w * v;
                }
            }
            Ok(LatentState { z, components: components.to_vec(), weights: pi.to_vec(), selected: None })
        }
    }
}

/// `z = sum_k pi_k (mu_k + sigma_k * noise_k)`. Weights are not required to
/// be normalized here so that a single component always passes through.
pub fn sample_lgm(components: &[GaussianParams], pi: &[f64], noises: &[Vec<f64>]) -> Result<LatentState> {
    let dim = check_components(components)?;
    if pi.len() != components.len() || noises.len() != components.len() {
        return Err(Error::invalid("need one weight and one noise vector per component"));
    }
    if noises.iter().any(|n| n.len() != dim) {
        return Err(Error::invalid("noise dimension mismatch"));
    }
    let z = if components.len() == 1 {
        sample_gaussian(&components[0], &noises[0])
    } else {
        let mut z = vec![0.0; dim];
        for ((c, w), noise) in components.iter().zip(pi).zip(noises) {
            for ((acc, m), (s, e)) in z.iter_mut().zip(&c.mean).zip(c.stddev.iter().zip(noise)) {
                *acc += w * (m + s * e);
            }
        }
        z
    };
    Ok(LatentState { z, components: components.to_vec(), weights: pi.to_vec(), selected: None })
}

/// Exact law of [`sample_lgm`]'s output: `(sum pi mu, sqrt(sum pi^2 sigma^2))`.
pub fn lgm_aggregate(components: &[GaussianParams], pi: &[f64]) -> Result<GaussianParams> {
    let dim = check_components(components)?;
    if pi.len() != components.len() {
        return Err(Error::invalid("need one weight per component"));
    }
    if pi == [1.0] {
        return Ok(components[0].clone());
    }
    let mut mean = vec![0.0; dim];
    let mut var = vec![0.0; dim];
    for (c, w) in components.iter().zip(pi) {
        for d in 0..dim {
            mean[d] += w * c.mean[d];
            var[d] += w * w * c.stddev[d] * c.stddev[d];
        }
    }
    GaussianParams::new(mean, var.into_iter().map(f64::sqrt).collect())
}

/// Mixture mean `sum_k pi_k mu_k`, the plug-in latent for mixture priors.
pub fn mixture_mean(components: &[GaussianParams], pi: &[f64]) -> Vec<f64> {
    let dim = components.first().map_or(0, GaussianParams::dim);
    let mut mean = vec![0.0; dim];
    for (c, w) in components.iter().zip(pi) {
        for (acc, m) in mean.iter_mut().zip(&c.mean) {
            *acc += w * m;
        }
    }
    mean
}

pub fn one_hot(k: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[k] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn g(mean: &[f64], sd: &[f64]) -> GaussianParams {
        GaussianParams::new(mean.to_vec(), sd.to_vec()).unwrap()
    }

    #[test]
    fn zero_noise_gives_mean() {
        let p = g(&[1.0, -2.0], &[0.5, 3.0]);
        assert_eq!(sample_gaussian(&p, &[0.0, 0.0]), vec![1.0, -2.0]);
        assert_eq!(sample_gaussian(&GaussianParams::standard(2), &[0.3, -0.7]), vec![0.3, -0.7]);
    }

    #[test]
    fn rejects_non_positive_stddev() {
        assert!(GaussianParams::new(vec![0.0], vec![0.0]).is_err());
        assert!(GaussianParams::new(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn one_hot_mixture_always_picks_component() {
        let comps = [g(&[0.0], &[1.0]), g(&[5.0], &[1.0]), g(&[-5.0], &[1.0])];
        let mut rng = seeded(9);
        for _ in 0..1000 {
            let s = sample_gmm(&comps, &one_hot(2, 3), GmmDraw::Hard, &mut rng).unwrap();
            assert_eq!(s.selected, Some(2));
        }
    }

    #[test]
    fn relaxed_draw_at_low_temperature_concentrates() {
        let comps = [g(&[0.0], &[1e-3]), g(&[10.0], &[1e-3])];
        let mut rng = seeded(2);
        let s = sample_gmm(&comps, &[1.0 - 1e-9, 1e-9], GmmDraw::Relaxed { temperature: 0.01 }, &mut rng).unwrap();
        assert!(s.z[0].abs() < 0.1);
        assert!(sample_gmm(&comps, &[0.5, 0.5], GmmDraw::Relaxed { temperature: 0.0 }, &mut rng).is_err());
    }

    #[test]
    fn lgm_single_component_passes_through() {
        let c = g(&[1.0, 2.0], &[0.5, 0.25]);
        let noise = vec![vec![0.4, -1.0]];
        // weight deliberately unnormalized
        let s = sample_lgm(std::slice::from_ref(&c), &[0.3], &noise).unwrap();
        assert_eq!(s.z, sample_gaussian(&c, &noise[0]));
        assert_eq!(lgm_aggregate(std::slice::from_ref(&c), &[1.0]).unwrap(), c);
    }

    #[test]
    fn lgm_one_hot_collapses() {
        let comps = [g(&[1.0], &[2.0]), g(&[-4.0], &[0.1]), g(&[3.0], &[1.0])];
        let noise = vec![vec![0.5], vec![1.5], vec![-2.0]];
        let s = sample_lgm(&comps, &one_hot(1, 3), &noise).unwrap();
        assert_eq!(s.z, sample_gaussian(&comps[1], &noise[1]));
    }

    #[test]
    fn aggregate_hand_algebra() {
        let agg = lgm_aggregate(&[g(&[0.0], &[1.0]), g(&[2.0], &[1.0])], &[0.5, 0.5]).unwrap();
        assert!((agg.mean[0] - 1.0).abs() < 1e-15);
        assert!((agg.stddev[0] - 0.5f64.sqrt()).abs() < 1e-15);
        // identical components: stddev shrinks by sqrt(sum pi^2)
        let c = g(&[0.7, -0.2], &[1.5, 0.3]);
        let pi = [0.2, 0.3, 0.5];
        let agg = lgm_aggregate(&[c.clone(), c.clone(), c.clone()], &pi).unwrap();
        let shrink = pi.iter().map(|p| p * p).sum::<f64>().sqrt();
        for d in 0..2 {
            assert!((agg.mean[d] - c.mean[d]).abs() < 1e-15);
            assert!((agg.stddev[d] - c.stddev[d] * shrink).abs() < 1e-15);
        }
    }

    #[test]
    fn weight_validation() {
        assert!(check_weights(&[0.5, 0.5], 2).is_ok());
        assert!(check_weights(&[0.5, 0.6], 2).is_err());
        assert!(check_weights(&[1.0], 2).is_err());
    }
}
