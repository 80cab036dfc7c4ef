//! Gaussian-mixture density estimation by expectation-maximization with
//! seeded restarts, used to model per-mode sample densities.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::stream_rng;

/// Relative covariance ridge added every M-step: 1e-6·trace/dim.
const RIDGE_REL: f64 = 1e-6;
/// Log-likelihood gain below which EM stops.
const EM_TOL: f64 = 1e-8;
/// EM iteration cap per restart.
const EM_MAX_ITERS: usize = 500;
/// Seeded restarts; the best final likelihood wins.
const EM_RESTARTS: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GmmData {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
}

/// A Gaussian mixture: positive weights summing to 1, one mean and one
/// symmetric positive-definite covariance per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmData", into = "GmmData")]
pub struct Gmm {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
}

impl TryFrom<GmmData> for Gmm {
    type Error = Error;

    fn try_from(data: GmmData) -> Result<Self> {
        let k = data.weights.len();
        if k == 0 || data.means.len() != k || data.covariances.len() != k {
            return Err(Error::invalid("mixture fields must share the component count"));
        }
        let d = data.means[0].len();
        let means: Vec<DVector<f64>> =
            data.means.iter().map(|m| DVector::from_column_slice(m)).collect();
        let covariances: Vec<DMatrix<f64>> = data
            .covariances
            .iter()
            .map(|c| {
                if c.len() != d || c.iter().any(|row| row.len() != d) {
                    return Err(Error::invalid("covariance shape mismatch"));
                }
                Ok(DMatrix::from_fn(d, d, |i, j| c[i][j]))
            })
            .collect::<Result<_>>()?;
        let gmm = Gmm { weights: data.weights, means, covariances };
        gmm.validate()?;
        Ok(gmm)
    }
}

impl From<Gmm> for GmmData {
    fn from(gmm: Gmm) -> Self {
        let d = gmm.dim();
        Self {
            weights: gmm.weights.clone(),
            means: gmm.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: gmm
                .covariances
                .iter()
                .map(|c| (0..d).map(|i| (0..d).map(|j| c[(i, j)]).collect()).collect())
                .collect(),
        }
    }
}

impl Gmm {
    /// Build a validated mixture from explicit parameters.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(Error::invalid("mixture fields must share the component count"));
        }
        let gmm = Gmm { weights, means, covariances };
        gmm.validate()?;
        Ok(gmm)
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    fn validate(&self) -> Result<()> {
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "mixture weights must be positive and sum to 1, got sum {sum}"
            )));
        }
        let d = self.dim();
        if self.means.iter().any(|m| m.len() != d) {
            return Err(Error::invalid("mixture means must share one dimension"));
        }
        self.prepare()?; // also proves the covariances factor
        Ok(())
    }

    /// Precompute Cholesky factors for repeated evaluation or sampling.
    pub fn prepare(&self) -> Result<PreparedGmm<'_>> {
        let lowers: Vec<DMatrix<f64>> = self
            .covariances
            .iter()
            .map(|c| {
                if (c - c.transpose()).amax() > 1e-9 * (1.0 + c.amax()) {
                    return Err(Error::invalid("covariance must be symmetric"));
                }
                Cholesky::new(c.clone())
                    .map(|ch| ch.l())
                    .ok_or_else(|| Error::Conditioning("covariance not positive definite".into()))
            })
            .collect::<Result<_>>()?;
        let mut cum = Vec::with_capacity(self.weights.len());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cum.push(acc);
        }
        Ok(PreparedGmm { gmm: self, lowers, cum_weights: cum })
    }

    /// Mixture log-density at `x` (convenience path; use [`Self::prepare`]
    /// for hot loops).
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        Ok(self.prepare()?.log_pdf(x))
    }
}

/// A mixture with cached factors, ready for sampling and evaluation.
pub struct PreparedGmm<'a> {
    gmm: &'a Gmm,
    /// Lower Cholesky factor of each covariance.
    lowers: Vec<DMatrix<f64>>,
    cum_weights: Vec<f64>,
}

impl PreparedGmm<'_> {
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        let terms: Vec<f64> = self
            .gmm
            .weights
            .iter()
            .zip(&self.gmm.means)
            .zip(&self.lowers)
            .map(|((w, mu), l)| w.ln() + log_gaussian(l, mu, &x))
            .collect();
        log_sum_exp(&terms)
    }

    /// Draw one sample: pick a component by weight, then μ + L·z.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.gen();
        let k = self
            .cum_weights
            .iter()
            .position(|c| u <= *c)
            .unwrap_or(self.cum_weights.len() - 1);
        let d = self.gmm.dim();
        let z = DVector::from_iterator(d, (0..d).map(|_| crate::stats::sample_std_normal(rng)));
        let x = &self.gmm.means[k] + &self.lowers[k] * z;
        x.iter().copied().collect()
    }
}

/// ln N(x | μ, Σ) through the lower covariance factor.
fn log_gaussian(lower: &DMatrix<f64>, mu: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let d = mu.len() as f64;
    let diff = x - mu;
    let z = lower
        .solve_lower_triangular(&diff)
        .expect("factor is non-singular by construction");
    let log_det: f64 = lower.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + z.dot(&z))
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    if m.is_infinite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Result of [`fit_gmm`]: the mixture plus fit diagnostics.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: Gmm,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Set when the sample count could not support the requested component
    /// count and the fit fell back to a single Gaussian.
    pub fell_back_to_single: bool,
}

/// Fit an `n_m`-component mixture by EM, keeping the best of 5 seeded
/// restarts. Needs at least n_m·(dim+1) samples; with fewer it falls back to
/// n_m = 1 and reports the fallback.
pub fn fit_gmm(samples: &[Vec<f64>], n_m: usize, seed: u64) -> Result<GmmFit> {
    if n_m == 0 {
        return Err(Error::invalid("component count must be at least 1"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("cannot fit a mixture to zero samples"));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::invalid("samples must share a positive common dimension"));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    let n = samples.len();
    let (k, fell_back) = if n < n_m * (d + 1) { (1, n_m > 1) } else { (n_m, false) };

    // global diagonal variance: initial covariance and degeneracy floor
    let mut global_var = vec![0.0; d];
    let mean: Vec<f64> =
        (0..d).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n as f64).collect();
    for s in samples {
        for j in 0..d {
            global_var[j] += (s[j] - mean[j]).powi(2) / n as f64;
        }
    }
    let gv_mean = global_var.iter().sum::<f64>() / d as f64;
    if gv_mean == 0.0 {
        return Err(Error::invalid("all samples are identical; density is degenerate"));
    }

    let data: Vec<DVector<f64>> =
        samples.iter().map(|s| DVector::from_column_slice(s)).collect();
    let runs = crate::par::map_range(EM_RESTARTS, |r| {
        run_em(&data, k, &global_var, gv_mean, stream_rng(seed, "gmm-restart", r as u64))
    });
    let mut best: Option<(Gmm, f64, usize)> = None;
    for run in runs {
        let (model, ll, iters) = run?;
        if best.as_ref().is_none_or(|(_, bll, _)| ll > *bll) {
            best = Some((model, ll, iters));
        }
    }
    let (model, log_likelihood, iterations) = best.expect("at least one restart");
    Ok(GmmFit { model, log_likelihood, iterations, fell_back_to_single: fell_back })
}

fn run_em(
    data: &[DVector<f64>],
    k: usize,
    global_var: &[f64],
    gv_mean: f64,
    mut rng: rand_chacha::ChaCha8Rng,
) -> Result<(Gmm, f64, usize)> {
    let n = data.len();
    let d = data[0].len();
    let ridge_floor = 1e-10 * gv_mean;

    // init: distinct random samples as means, global diagonal covariance
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    while chosen.len() < k {
        let idx = rng.gen_range(0..n);
        if !chosen.contains(&idx) || chosen.len() >= n {
            chosen.push(idx);
        }
    }
    let init_cov = DMatrix::from_diagonal(&DVector::from_iterator(
        d,
        global_var.iter().map(|v| v.max(ridge_floor)),
    ));
    let mut weights = vec![1.0 / k as f64; k];
    let mut means: Vec<DVector<f64>> = chosen.iter().map(|&i| data[i].clone()).collect();
    let mut covs: Vec<DMatrix<f64>> = vec![init_cov.clone(); k];

    let mut prev_ll = f64::NEG_INFINITY;
    let mut resp = vec![vec![0.0f64; k]; n];
    let mut iters_done = 0;
    for iter in 0..EM_MAX_ITERS {
        iters_done = iter + 1;
        // E-step
        let lowers: Vec<DMatrix<f64>> = covs
            .iter()
            .map(|c| {
                Cholesky::new(c.clone())
                    .map(|ch| ch.l())
                    .ok_or_else(|| Error::Conditioning("EM covariance lost definiteness".into()))
            })
            .collect::<Result<_>>()?;
        let mut ll = 0.0;
        for (i, x) in data.iter().enumerate() {
            let terms: Vec<f64> = (0..k)
                .map(|c| weights[c].ln() + log_gaussian(&lowers[c], &means[c], x))
                .collect();
            let lse = log_sum_exp(&terms);
            ll += lse;
            for c in 0..k {
                resp[i][c] = (terms[c] - lse).exp();
            }
        }
        // M-step
        for c in 0..k {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if nk < 1e-10 * n as f64 {
                // dead component: re-seed at a random sample
                let idx = rng.gen_range(0..n);
                means[c] = data[idx].clone();
                covs[c] = init_cov.clone();
                weights[c] = 1.0 / n as f64;
                continue;
            }
            weights[c] = nk / n as f64;
            let mut mu = DVector::zeros(d);
            for (x, r) in data.iter().zip(&resp) {
                mu += x * r[c];
            }
            mu /= nk;
            let mut cov = DMatrix::zeros(d, d);
            for (x, r) in data.iter().zip(&resp) {
                let diff = x - &mu;
                cov += (&diff * diff.transpose()) * r[c];
            }
            cov /= nk;
            let ridge = (RIDGE_REL * cov.trace() / d as f64).max(ridge_floor);
            for j in 0..d {
                cov[(j, j)] += ridge;
            }
            means[c] = mu;
            covs[c] = cov;
        }
        let wsum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= wsum;
        }
        if (ll - prev_ll).abs() < EM_TOL {
            prev_ll = ll;
            break;
        }
        prev_ll = ll;
    }
    let model = Gmm { weights, means, covariances: covs };
    model.validate()?;
    Ok((model, prev_ll, iters_done))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::sample_std_normal;
    use approx::assert_relative_eq;

    fn blob(center: &[f64], spread: f64, count: usize, tag: u64) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(77, "gmm-blob", tag);
        (0..count)
            .map(|_| {
                center
                    .iter()
                    .map(|c| c + spread * sample_std_normal(&mut rng))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_component_recovers_sample_mean() {
        let samples = blob(&[1.5, -2.0], 0.3, 400, 0);
        let fit = fit_gmm(&samples, 1, 9).unwrap();
        assert!(!fit.fell_back_to_single);
        let d = 2;
        let n = samples.len() as f64;
        for j in 0..d {
            let sample_mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
            assert_relative_eq!(fit.model.means()[0][j], sample_mean, epsilon = 1e-9);
        }
    }

    #[test]
    fn weights_always_normalized() {
        for (n_m, tag) in [(1usize, 1u64), (2, 2), (3, 3)] {
            let mut samples = blob(&[0.0, 0.0], 1.0, 150, tag);
            samples.extend(blob(&[4.0, 4.0], 1.0, 150, tag + 10));
            let fit = fit_gmm(&samples, n_m, 5).unwrap();
            let sum: f64 = fit.model.weights().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "weight sum {sum}");
            assert!(fit.model.weights().iter().all(|w| *w > 0.0));
        }
    }

    #[test]
    fn planted_two_cluster_recovery() {
        let mut samples = blob(&[-5.0, 0.0, 0.0], 0.7, 500, 20);
        samples.extend(blob(&[5.0, 0.0, 0.0], 0.7, 500, 21));
        let fit = fit_gmm(&samples, 2, 3).unwrap();
        let mut centers: Vec<f64> = fit.model.means().iter().map(|m| m[0]).collect();
        centers.sort_by(|a, b| a.total_cmp(b));
        assert!((centers[0] + 5.0).abs() < 0.1, "left center {}", centers[0]);
        assert!((centers[1] - 5.0).abs() < 0.1, "right center {}", centers[1]);
        assert!((fit.model.weights()[0] - 0.5).abs() < 0.05);
    }

    #[test]
    fn insufficient_samples_fall_back_to_single() {
        let samples = blob(&[0.0, 0.0, 0.0, 0.0], 1.0, 8, 30); // 8 < 3·5
        let fit = fit_gmm(&samples, 3, 1).unwrap();
        assert!(fit.fell_back_to_single);
        assert_eq!(fit.model.n_components(), 1);
    }

    #[test]
    fn refit_recovers_weights() {
        let mut samples = blob(&[-3.0, 1.0], 0.8, 700, 40);
        samples.extend(blob(&[3.0, -1.0], 0.8, 300, 41));
        let fit = fit_gmm(&samples, 2, 11).unwrap();
        let prepared = fit.model.prepare().unwrap();
        let mut rng = stream_rng(50, "gmm-resample", 0);
        let drawn: Vec<Vec<f64>> = (0..100_000).map(|_| prepared.draw(&mut rng)).collect();
        let refit = fit_gmm(&drawn, 2, 12).unwrap();
        let mut w0: Vec<f64> = fit.model.weights().to_vec();
        let mut w1: Vec<f64> = refit.model.weights().to_vec();
        w0.sort_by(|a, b| a.total_cmp(b));
        w1.sort_by(|a, b| a.total_cmp(b));
        for (a, b) in w0.iter().zip(&w1) {
            assert!((a - b).abs() < 0.05, "weights diverged: {a} vs {b}");
        }
    }

    #[test]
    fn extreme_separation_stays_finite() {
        let mut samples = blob(&[-1.0e3], 0.5, 60, 60);
        samples.extend(blob(&[1.0e3], 0.5, 60, 61));
        let fit = fit_gmm(&samples, 2, 2).unwrap();
        assert!(fit.log_likelihood.is_finite());
        let lp = fit.model.log_pdf(&[-1.0e3]).unwrap();
        assert!(lp.is_finite());
    }

    #[test]
    fn deterministic_given_seed() {
        let mut samples = blob(&[0.0, 0.0], 1.0, 200, 70);
        samples.extend(blob(&[3.0, 3.0], 1.0, 200, 71));
        let a = fit_gmm(&samples, 2, 99).unwrap();
        let b = fit_gmm(&samples, 2, 99).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log_likelihood, b.log_likelihood);
    }

    #[test]
    fn json_round_trip() {
        let mut samples = blob(&[0.0, 1.0], 0.9, 200, 80);
        samples.extend(blob(&[4.0, -2.0], 0.9, 200, 81));
        let fit = fit_gmm(&samples, 2, 7).unwrap();
        let text = serde_json::to_string(&fit.model).unwrap();
        let restored: Gmm = serde_json::from_str(&text).unwrap();
        assert_eq!(fit.model, restored);
        // density evaluations agree through the round trip
        let probe = [1.0, 0.5];
        assert_relative_eq!(
            fit.model.log_pdf(&probe).unwrap(),
            restored.log_pdf(&probe).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(fit_gmm(&[], 1, 0).is_err());
        assert!(fit_gmm(&vec![vec![2.0, 2.0]; 40], 1, 0).is_err(), "identical samples");
        assert!(fit_gmm(&[vec![1.0], vec![f64::NAN]], 1, 0).is_err());
        assert!(fit_gmm(&blob(&[0.0], 1.0, 30, 90), 0, 0).is_err());
    }
}
