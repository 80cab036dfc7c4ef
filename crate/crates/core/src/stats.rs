//! Small numeric utilities shared across the pipeline: standard-normal
//! CDF/quantile, seeded normal sampling, seed derivation, trapezoidal
//! integration, and a Kolmogorov–Smirnov helper used by distribution checks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Standard normal CDF Φ(x).
pub fn norm_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Standard normal quantile Φ⁻¹(p), with p clamped away from {0, 1}.
pub fn norm_ppf(p: f64) -> f64 {
    let p = p.clamp(1e-300, 1.0 - 1e-16);
    Normal::standard().inverse_cdf(p)
}

/// Draw one standard-normal variate via the Box–Muller map.
///
/// Two uniforms per draw, cosine branch only: the stream layout stays
/// identical however callers interleave draws, which keeps parallel and
/// sequential batch runs byte-equal.
pub fn sample_std_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Lognormal parameters (λ, ζ) matching a target mean and coefficient of
/// variation: ζ = √ln(1+cov²), λ = ln(mean) − ζ²/2.
pub fn lognormal_params(mean: f64, cov: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0) {
        return Err(Error::invalid(format!(
            "lognormal mean must be positive, got {mean}"
        )));
    }
    if cov < 0.0 {
        return Err(Error::invalid(format!(
            "coefficient of variation must be non-negative, got {cov}"
        )));
    }
    let zeta = (1.0 + cov * cov).ln().sqrt();
    let lambda = mean.ln() - 0.5 * zeta * zeta;
    Ok((lambda, zeta))
}

/// Deterministic per-item RNG: a ChaCha8 stream derived from a base seed,
/// a stage tag, and an item index.
pub fn stream_rng(base_seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base_seed, tag, index))
}

/// Mix `(base, tag, index)` into a single seed (FNV-1a over the tag,
/// splitmix64 finalizers over the words).
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    mix(base ^ mix(h ^ mix(index.wrapping_add(0x9e3779b97f4a7c15))))
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Trapezoidal integral of uniformly sampled values with step `dt`.
pub fn trapz(values: &[f64], dt: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let interior: f64 = values[1..values.len() - 1].iter().sum();
    dt * (0.5 * (values[0] + values[values.len() - 1]) + interior)
}

/// Cumulative trapezoidal integral sampled at the input nodes (starts at 0).
pub fn cumtrapz(values: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Two-sided KS statistic of `samples` against a reference CDF.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in samples.iter().enumerate() {
        let f = cdf(*x);
        let lo = (f - i as f64 / n).abs();
        let hi = ((i + 1) as f64 / n - f).abs();
        d = d.max(lo).max(hi);
    }
    d
}

/// Asymptotic p-value of the KS statistic `d` for sample size `n`
/// (Kolmogorov series with the Stephens small-sample correction).
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let n = n as f64;
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1.0f64).powi(k as i32 + 1) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lognormal_degenerate() {
        let (lambda, zeta) = lognormal_params(1.0, 0.0).unwrap();
        assert_eq!(lambda, 0.0);
        assert_eq!(zeta, 0.0);
    }

    #[test]
    fn lognormal_paper_damping() {
        // ζ = √ln(1.0625) for mean 0.03, cov 0.25
        let (_, zeta) = lognormal_params(0.03, 0.25).unwrap();
        assert_relative_eq!(zeta, 0.24622, epsilon = 1e-5);
    }

    #[test]
    fn lognormal_round_trip_mean() {
        let (lambda, zeta) = lognormal_params(90_000.0, 0.25).unwrap();
        assert_relative_eq!(
            (lambda + 0.5 * zeta * zeta).exp(),
            90_000.0,
            epsilon = 1e-12 * 90_000.0
        );
    }

    #[test]
    fn lognormal_rejects_nonpositive_mean() {
        assert!(lognormal_params(0.0, 0.2).is_err());
        assert!(lognormal_params(-1.0, 0.2).is_err());
    }

    #[test]
    fn norm_cdf_ppf_inverse() {
        for &p in &[0.01, 0.2, 0.5, 0.9, 0.999] {
            assert_relative_eq!(norm_cdf(norm_ppf(p)), p, epsilon = 1e-9);
        }
    }

    #[test]
    fn normal_sampler_moments() {
        let mut rng = stream_rng(7, "moments", 0);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = sample_std_normal(&mut rng);
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn derive_seed_is_stable_and_spread() {
        let a = derive_seed(1, "stage", 0);
        let b = derive_seed(1, "stage", 0);
        assert_eq!(a, b);
        assert_ne!(derive_seed(1, "stage", 1), a);
        assert_ne!(derive_seed(2, "stage", 0), a);
        assert_ne!(derive_seed(1, "other", 0), a);
    }

    #[test]
    fn trapz_linear_exact() {
        // f(t) = 10·t sampled over t ∈ [0, 1]: exact integral 5, trapezoid exact on linear data
        let vals: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        assert_relative_eq!(trapz(&vals, 0.1), 5.0, epsilon = 1e-12);
        let cum = cumtrapz(&vals, 0.1);
        assert_relative_eq!(cum[10], 5.0, epsilon = 1e-12);
        assert_eq!(cum[0], 0.0);
    }

    #[test]
    fn ks_uniform_sanity() {
        let mut rng = stream_rng(3, "ks", 0);
        let mut samples: Vec<f64> = (0..5000).map(|_| rng.gen::<f64>()).collect();
        let d = ks_statistic(&mut samples, |x| x.clamp(0.0, 1.0));
        assert!(ks_pvalue(d, 5000) > 0.01);
        // a clearly non-uniform sample must be rejected
        let mut bad: Vec<f64> = (0..5000).map(|i| (i as f64 / 5000.0).powi(3)).collect();
        let d_bad = ks_statistic(&mut bad, |x| x.clamp(0.0, 1.0));
        assert!(ks_pvalue(d_bad, 5000) < 1e-6);
    }
}
