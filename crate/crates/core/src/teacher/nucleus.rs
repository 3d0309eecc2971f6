use crate::error::{Error, Result};

/// Checks that `dist` is a probability vector within 1e-6.
pub fn check_distribution(dist: &[f64]) -> Result<()> {
    if dist.is_empty() {
        return Err(Error::invalid("empty distribution"));
    }
    if dist.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::invalid("distribution has negative or non-finite entries"));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("distribution sums to {total}")));
    }
    Ok(())
}

/// Top-p truncation: keeps the smallest set of most probable tokens whose
/// mass reaches `p` (ties broken by lower id first), zeroes the rest and
/// renormalizes.
pub fn nucleus_filter(dist: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("top-p must be in (0, 1], got {p}")));
    }
    check_distribution(dist)?;
    if p >= 1.0 {
        return Ok(dist.to_vec());
    }
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    let mut kept = 0.0;
    let mut out = vec![0.0; dist.len()];
    for &i in &order {
        out[i] = dist[i];
        kept += dist[i];
        if kept + 1e-12 >= p {
            break;
        }
    }
    for v in &mut out {
        *v /= kept;
    }
    Ok(out)
}
