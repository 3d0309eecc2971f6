//! Gaussian mixture versus linear Gaussian model latents: for the same
//! components and weights, the mixture samples one component while the
//! linear model draws a weighted sum with a single Gaussian law.
//!
//! cargo run --example lgm_prior

use multiref::models::latent::standard_normal;
use multiref::models::{lgm_aggregate, mixture_mean, sample_gmm, sample_lgm, GaussianParams, GmmDraw};
use multiref::rng::seeded;

fn main() -> multiref::Result<()> {
    let comps = vec![
        GaussianParams::new(vec![-2.0, 0.0], vec![0.5, 0.5])?,
        GaussianParams::new(vec![2.0, 1.0], vec![0.3, 1.0])?,
        GaussianParams::new(vec![0.0, -3.0], vec![1.0, 0.2])?,
    ];
    let pi = [0.5, 0.3, 0.2];
    let mut rng = seeded(0);

    let agg = lgm_aggregate(&comps, &pi)?;
    println!("LGM law: mean {:?}, stddev {:?}", agg.mean, agg.stddev);
    println!("GMM mean: {:?}", mixture_mean(&comps, &pi));

    let draws = 200_000;
    let (mut lgm_sum, mut gmm_sum) = ([0.0; 2], [0.0; 2]);
    let mut picks = [0usize; 3];
    for _ in 0..draws {
        let noises: Vec<Vec<f64>> = (0..3).map(|_| standard_normal(2, &mut rng)).collect();
        let z = sample_lgm(&comps, &pi, &noises)?.z;
        let g = sample_gmm(&comps, &pi, GmmDraw::Hard, &mut rng)?;
        for d in 0..2 {
            lgm_sum[d] += z[d] / draws as f64;
            gmm_sum[d] += g.z[d] / draws as f64;
        }
        picks[g.selected.unwrap_or(0)] += 1;
    }
    println!("LGM empirical mean {lgm_sum:.3?}");
    println!("GMM empirical mean {gmm_sum:.3?}, component frequencies {:?}", picks.map(|c| c as f64 / draws as f64));

    let relaxed = sample_gmm(&comps, &pi, GmmDraw::Relaxed { temperature: 0.5 }, &mut rng)?;
    println!("relaxed GMM draw (temperature 0.5): z {:.3?}", relaxed.z);
    Ok(())
}
