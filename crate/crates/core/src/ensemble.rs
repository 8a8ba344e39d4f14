//! Weight bookkeeping shared by the particle filters.

use rand::Rng;

/// Normalizes log weights in place so that `Σ exp(log_w) = 1`, shifting by
/// the maximum first. Returns `false` (and leaves uniform weights) when no
/// weight is finite.
pub fn normalize_log_weights(log_w: &mut [f64]) -> bool {
    let n = log_w.len();
    if n == 0 {
        return false;
    }
    let max = log_w.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        log_w.fill(-(n as f64).ln());
        return false;
    }
    let sum: f64 = log_w.iter().map(|v| if v.is_nan() { 0.0 } else { (v - max).exp() }).sum();
    let log_z = max + sum.ln();
    for v in log_w.iter_mut() {
        *v = if v.is_nan() { f64::NEG_INFINITY } else { *v - log_z };
    }
    true
}

/// Effective sample size `1 / Σ w²` of normalized weights.
pub fn ess(weights: impl IntoIterator<Item = f64>) -> f64 {
    let s: f64 = weights.into_iter().map(|w| w * w).sum();
    1.0 / s
}

/// Systematic resampling with a single uniform offset. Returns the ancestor
/// index of every output slot, in nondecreasing order.
pub fn systematic_ancestors<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let offset: f64 = rng.gen();
    systematic_ancestors_with_offset(weights, offset)
}

pub fn systematic_ancestors_with_offset(weights: &[f64], offset: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let total: f64 = weights.iter().sum();
    let mut cumulative = weights.first().copied().unwrap_or(0.0) / total;
    let mut i = 0;
    for j in 0..n {
        let target = (j as f64 + offset) / n as f64;
        while target >= cumulative && i + 1 < n {
            i += 1;
            cumulative += weights[i] / total;
        }
        out.push(i);
    }
    out
}

pub fn ancestor_counts(ancestors: &[usize], n: usize) -> Vec<usize> {
    let mut counts = vec![0; n];
    for &a in ancestors {
        counts[a] += 1;
    }
    counts
}
