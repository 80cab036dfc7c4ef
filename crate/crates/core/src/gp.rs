//! Gaussian-process regression with a squared-exponential ARD kernel and
//! marginal-likelihood hyperparameter training by multi-start simplex
//! descent on log-parameters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::stream_rng;
use rand::Rng;

/// Kernel and noise settings of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub signal_var: f64,
    pub lengthscales: Vec<f64>,
    /// Noise variance in standardized-target units.
    pub noise_var: f64,
}

impl Hyperparameters {
    fn validate(&self, d: usize) -> Result<()> {
        let ok = self.signal_var > 0.0
            && self.signal_var.is_finite()
            && self.noise_var >= 0.0
            && self.noise_var.is_finite()
            && self.lengthscales.len() == d
            && self.lengthscales.iter().all(|l| *l > 0.0 && l.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("hyperparameters must be positive and match the input dimension"))
        }
    }
}

/// Training budget for [`fit`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Total start points for the simplex search (a deterministic
    /// data-scaled start plus log-uniform random draws).
    pub n_starts: usize,
    /// Iteration cap per start.
    pub max_iters: usize,
    pub seed: u64,
    /// Extra start at a previously trained point (always searched,
    /// independent of `n_starts`).
    pub warm_start: Option<Hyperparameters>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { n_starts: 8, max_iters: 500, seed: 0, warm_start: None }
    }
}

impl FitOptions {
    /// Reduced budget for inner loops that fit thousands of small models.
    pub fn light(seed: u64) -> Self {
        Self { n_starts: 2, max_iters: 100, seed, warm_start: None }
    }
}

/// Optimizer diagnostics: negative log marginal likelihoods.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub start_nlls: Vec<f64>,
    pub final_nll: f64,
}

/// Relative jitter ladder for Cholesky recovery, scaled by mean(diag).
const JITTER_LADDER: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];

/// Noise-variance floor relative to the (standardized) target variance.
const NOISE_FLOOR: f64 = 1e-10;

/// Squared-exponential ARD Gaussian-process regressor.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    params: Hyperparameters,
    y_mean: f64,
    y_scale: f64,
    /// Lower factor of K + σ_n²I (standardized-target units).
    factor: Cholesky<f64, Dyn>,
    /// (K + σ_n²I)⁻¹·y_standardized.
    alpha: DVector<f64>,
}

impl PartialEq for GpModel {
    fn eq(&self, other: &Self) -> bool {
        self.x == other.x && self.y == other.y && self.params == other.params
    }
}

fn kernel(a: &[f64], b: &[f64], p: &Hyperparameters) -> f64 {
    let mut s = 0.0;
    for ((ai, bi), l) in a.iter().zip(b).zip(&p.lengthscales) {
        let z = (ai - bi) / l;
        s += z * z;
    }
    p.signal_var * (-0.5 * s).exp()
}

fn kernel_matrix(x: &[Vec<f64>], p: &Hyperparameters) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(&x[i], &x[j], p);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Factor K + σ_n²I, escalating diagonal jitter when needed.
fn factorize(k: &DMatrix<f64>, noise_var: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = k.nrows();
    let scale = k.trace() / n as f64;
    for jitter in JITTER_LADDER {
        let shifted = k + DMatrix::identity(n, n) * (noise_var + jitter * scale);
        if let Some(ch) = Cholesky::new(shifted) {
            return Ok(ch);
        }
    }
    Err(Error::Conditioning(
        "kernel matrix not factorizable after maximum jitter".into(),
    ))
}

/// Negative log marginal likelihood of standardized targets, +∞ when the
/// factorization fails (steers the simplex away).
fn nll(x: &[Vec<f64>], y_std: &DVector<f64>, p: &Hyperparameters) -> f64 {
    let n = x.len() as f64;
    let Ok(ch) = factorize(&kernel_matrix(x, p), p.noise_var) else {
        return f64::INFINITY;
    };
    let alpha = ch.solve(y_std);
    let log_det_half: f64 = ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    0.5 * y_std.dot(&alpha) + log_det_half + 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

// ── simplex descent ─────────────────────────────────────────────────────────

/// Minimize `f` from `x0` with the Nelder–Mead simplex; returns the best
/// vertex seen. Deterministic given its inputs.
fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    initial_step: f64,
    max_iters: usize,
) -> (Vec<f64>, f64) {
    let d = x0.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..d {
        let mut v = x0.to_vec();
        v[i] += initial_step;
        let fv = f(&v);
        simplex.push((v, fv));
    }
    for _ in 0..max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[d].1 - simplex[0].1;
        if !spread.is_finite() && simplex[0].1.is_infinite() {
            break; // entire simplex is infeasible
        }
        if spread.abs() <= 1e-10 * (1.0 + simplex[0].1.abs()) {
            break;
        }
        // centroid of all but the worst vertex
        let mut centroid = vec![0.0; d];
        for (v, _) in &simplex[..d] {
            for (c, vi) in centroid.iter_mut().zip(v) {
                *c += vi / d as f64;
            }
        }
        let worst = simplex[d].clone();
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let f_reflect = f(&reflect);
        if f_reflect < simplex[0].1 {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + gamma * (c - w))
                .collect();
            let f_expand = f(&expand);
            simplex[d] = if f_expand < f_reflect { (expand, f_expand) } else { (reflect, f_reflect) };
        } else if f_reflect < simplex[d - 1].1 {
            simplex[d] = (reflect, f_reflect);
        } else {
            let contract: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + rho * (w - c))
                .collect();
            let f_contract = f(&contract);
            if f_contract < worst.1 {
                simplex[d] = (contract, f_contract);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    for (vi, bi) in entry.0.iter_mut().zip(&best) {
                        *vi = bi + sigma * (*vi - bi);
                    }
                    entry.1 = f(&entry.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

// ── fitting ─────────────────────────────────────────────────────────────────

fn column_spreads(x: &[Vec<f64>]) -> Vec<f64> {
    let d = x[0].len();
    let n = x.len() as f64;
    (0..d)
        .map(|j| {
            let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if s > 0.0 { s } else { 1.0 }
        })
        .collect()
}

fn pack(p: &Hyperparameters) -> Vec<f64> {
    let mut v = vec![p.signal_var.ln()];
    v.extend(p.lengthscales.iter().map(|l| l.ln()));
    v.push(p.noise_var.max(NOISE_FLOOR).ln());
    v
}

fn unpack(v: &[f64]) -> Hyperparameters {
    let d = v.len() - 2;
    Hyperparameters {
        signal_var: v[0].exp(),
        lengthscales: v[1..=d].iter().map(|l| l.exp()).collect(),
        noise_var: v[d + 1].exp().max(NOISE_FLOOR),
    }
}

fn validate_training_data(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.len() < 2 {
        return Err(Error::invalid("need at least two training points"));
    }
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "{} inputs vs {} targets",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("inputs must share a positive common dimension"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data must be finite"));
    }
    Ok(d)
}

impl GpModel {
    /// Build a model at fixed hyperparameters (no optimization). Targets are
    /// standardized internally; `noise_var` is interpreted in standardized
    /// units and not floored, so exact interpolation setups stay exact.
    pub fn with_hyperparameters(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        params: Hyperparameters,
    ) -> Result<Self> {
        let d = validate_training_data(&x, &y)?;
        params.validate(d)?;
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n;
        let y_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let y_std = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_scale));
        let factor = factorize(&kernel_matrix(&x, &params), params.noise_var)?;
        let alpha = factor.solve(&y_std);
        Ok(Self { x, y, params, y_mean, y_scale, factor, alpha })
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.params
    }

    pub fn training_len(&self) -> usize {
        self.x.len()
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn training_inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn training_targets(&self) -> &[f64] {
        &self.y
    }

    /// Predictive mean and variance (variance floored at 0) for one input.
    pub fn predict_one(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "expected {} input dimensions, got {}",
                self.dim(),
                x.len()
            )));
        }
        let ks = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| kernel(xi, x, &self.params)),
        );
        let mu_std = ks.dot(&self.alpha);
        // var = k** − k*ᵀ(K+σ_n²I)⁻¹k* via the triangular solve L·w = k*
        let w = self
            .factor
            .l_dirty()
            .solve_lower_triangular(&ks)
            .ok_or_else(|| Error::Conditioning("singular kernel factor".into()))?;
        let var_std = (self.params.signal_var - w.dot(&w)).max(0.0);
        Ok((
            self.y_mean + self.y_scale * mu_std,
            self.y_scale * self.y_scale * var_std,
        ))
    }

    /// Batch [`Self::predict_one`].
    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut mu = Vec::with_capacity(xs.len());
        let mut var = Vec::with_capacity(xs.len());
        for x in xs {
            let (m, v) = self.predict_one(x)?;
            mu.push(m);
            var.push(v);
        }
        Ok((mu, var))
    }

    pub fn to_json(&self) -> Result<String> {
        let data = GpModelData {
            x: self.x.clone(),
            y: self.y.clone(),
            params: self.params.clone(),
            y_mean: self.y_mean,
            y_scale: self.y_scale,
        };
        Ok(serde_json::to_string_pretty(&data)?)
    }

    /// Rebuild from JSON; the triangular factor is recomputed, not stored.
    pub fn from_json(text: &str) -> Result<Self> {
        let data: GpModelData = serde_json::from_str(text)?;
        let d = validate_training_data(&data.x, &data.y)?;
        data.params.validate(d)?;
        if !(data.y_scale > 0.0) || !data.y_mean.is_finite() {
            return Err(Error::invalid("bad standardization constants"));
        }
        let y_std = DVector::from_iterator(
            data.y.len(),
            data.y.iter().map(|v| (v - data.y_mean) / data.y_scale),
        );
        let factor = factorize(&kernel_matrix(&data.x, &data.params), data.params.noise_var)?;
        let alpha = factor.solve(&y_std);
        Ok(Self {
            x: data.x,
            y: data.y,
            params: data.params,
            y_mean: data.y_mean,
            y_scale: data.y_scale,
            factor,
            alpha,
        })
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GpModelData {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    params: Hyperparameters,
    y_mean: f64,
    y_scale: f64,
}

/// Train by maximizing the log marginal likelihood across multi-start
/// simplex descent; see [`FitOptions`] for the budget.
pub fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, opts: &FitOptions) -> Result<GpModel> {
    fit_with_report(x, y, opts).map(|(m, _)| m)
}

/// [`fit`] plus optimizer diagnostics.
pub fn fit_with_report(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    opts: &FitOptions,
) -> Result<(GpModel, FitReport)> {
    let d = validate_training_data(&x, &y)?;
    if opts.n_starts == 0 {
        return Err(Error::invalid("need at least one optimizer start"));
    }
    let n = y.len() as f64;
    let y_mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        // constant target: standardized target is identically zero, so any
        // kernel predicts the constant; skip optimization
        let params = Hyperparameters {
            signal_var: 1.0,
            lengthscales: column_spreads(&x),
            noise_var: NOISE_FLOOR,
        };
        let model = GpModel::with_hyperparameters(x, y, params)?;
        return Ok((model, FitReport { start_nlls: vec![], final_nll: f64::NAN }));
    }
    let y_scale = var.sqrt();
    let y_std = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_scale));

    let spreads = column_spreads(&x);
    let mut starts: Vec<Hyperparameters> = vec![Hyperparameters {
        signal_var: 1.0,
        lengthscales: spreads.clone(),
        noise_var: 1e-4,
    }];
    if let Some(warm) = &opts.warm_start {
        warm.validate(d)?;
        starts.push(warm.clone());
    }
    let mut rng = stream_rng(opts.seed, "gp-starts", 0);
    while starts.len() < opts.n_starts + opts.warm_start.is_some() as usize {
        let log_u = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| -> f64 {
            (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp()
        };
        starts.push(Hyperparameters {
            signal_var: log_u(&mut rng, 0.1, 10.0),
            lengthscales: spreads.iter().map(|s| s * log_u(&mut rng, 0.1, 10.0)).collect(),
            noise_var: log_u(&mut rng, 1e-8, 1e-2),
        });
    }

    let mut objective = |v: &[f64]| nll(&x, &y_std, &unpack(v));
    let mut start_nlls = Vec::with_capacity(starts.len());
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in &starts {
        let v0 = pack(start);
        start_nlls.push(objective(&v0));
        let (v, f) = nelder_mead(&mut objective, &v0, 0.5, opts.max_iters);
        if best.as_ref().is_none_or(|(_, fb)| f < *fb) {
            best = Some((v, f));
        }
    }
    let (v_best, final_nll) = best.expect("at least one start");
    if !final_nll.is_finite() {
        return Err(Error::Conditioning(
            "no feasible hyperparameters found (all factorizations failed)".into(),
        ));
    }
    let model = GpModel::with_hyperparameters(x, y, unpack(&v_best))?;
    Ok((model, FitReport { start_nlls, final_nll }))
}

/// Coefficient of determination, 1 − SS_res/SS_tot.
pub fn r_squared(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() || actual.len() < 2 {
        return Err(Error::invalid("need equal-length series of at least 2 points"));
    }
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("R² is undefined for a constant target"));
    }
    let ss_res: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fixed_params(d: usize) -> Hyperparameters {
        Hyperparameters { signal_var: 1.3, lengthscales: vec![0.8; d], noise_var: 1e-12 }
    }

    #[test]
    fn two_point_closed_form_oracle() {
        // target: f(0)=1, f(1)=-1; θ fixed; compare against explicit 2×2
        // algebra done with scalar arithmetic
        let params = Hyperparameters {
            signal_var: 2.0,
            lengthscales: vec![0.7],
            noise_var: 0.01,
        };
        let model = GpModel::with_hyperparameters(
            vec![vec![0.0], vec![1.0]],
            vec![1.0, -1.0],
            params.clone(),
        )
        .unwrap();

        let xs = 0.3_f64;
        // hand algebra on standardized targets (mean 0, scale 1)
        let k12 = 2.0 * (-0.5 * (1.0_f64 / 0.7).powi(2)).exp();
        let k11 = 2.0 + 0.01;
        let k1s = 2.0 * (-0.5 * (0.3_f64 / 0.7).powi(2)).exp();
        let k2s = 2.0 * (-0.5 * (0.7_f64 / 0.7).powi(2)).exp();
        let det = k11 * k11 - k12 * k12;
        // inverse of [[k11, k12],[k12, k11]] applied to y_std = [y1, y2]
        let (y1, y2) = (1.0, -1.0);
        let a1 = (k11 * y1 - k12 * y2) / det;
        let a2 = (-k12 * y1 + k11 * y2) / det;
        let mu_hand = k1s * a1 + k2s * a2;
        // v = K⁻¹ k*
        let v1 = (k11 * k1s - k12 * k2s) / det;
        let v2 = (-k12 * k1s + k11 * k2s) / det;
        let var_hand = 2.0 - (k1s * v1 + k2s * v2);

        let (mu, var) = model.predict_one(&[xs]).unwrap();
        assert_relative_eq!(mu, mu_hand, epsilon = 1e-10);
        assert_relative_eq!(var, var_hand, epsilon = 1e-10);
    }

    #[test]
    fn interpolates_training_points_at_tiny_noise() {
        let x: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.9]).collect();
        let y: Vec<f64> = x.iter().map(|v| (v[0] * 0.8).sin() + 2.0).collect();
        let model = GpModel::with_hyperparameters(x.clone(), y.clone(), fixed_params(1)).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let (mu, var) = model.predict_one(xi).unwrap();
            assert_relative_eq!(mu, *yi, epsilon = 1e-6);
            assert!(var < 1e-6, "variance at training point: {var}");
        }
    }

    #[test]
    fn far_field_variance_reverts_to_prior() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.5]).collect();
        let y = vec![0.3, -0.1, 0.4, 0.2, -0.3];
        let params = fixed_params(1);
        let model = GpModel::with_hyperparameters(x, y, params.clone()).unwrap();
        // ≥ 10 lengthscales away from every training point
        let (_, var) = model.predict_one(&[2.0 + 10.5 * params.lengthscales[0]]).unwrap();
        let y_var = {
            let ys = [0.3, -0.1, 0.4, 0.2, -0.3_f64];
            let m = ys.iter().sum::<f64>() / 5.0;
            ys.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 5.0
        };
        // de-standardized prior variance is σ_f²·var(y)
        assert_relative_eq!(var, params.signal_var * y_var, max_relative = 0.01);
    }

    #[test]
    fn constant_target_predicts_constant() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let model = fit(x, vec![4.2; 6], &FitOptions::light(0)).unwrap();
        for probe in [-3.0, 0.5, 11.0] {
            let (mu, _) = model.predict_one(&[probe]).unwrap();
            assert_relative_eq!(mu, 4.2, epsilon = 1e-6);
        }
    }

    #[test]
    fn sine_fit_generalizes() {
        let n = 20;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64])
            .collect();
        let y: Vec<f64> = x.iter().map(|v| v[0].sin()).collect();
        let model = fit(x, y, &FitOptions::default()).unwrap();
        let xs: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![2.0 * std::f64::consts::PI * (i as f64 + 0.37) / 50.0])
            .collect();
        let truth: Vec<f64> = xs.iter().map(|v| v[0].sin()).collect();
        let (mu, _) = model.predict(&xs).unwrap();
        let r2 = r_squared(&mu, &truth).unwrap();
        assert!(r2 > 0.99, "held-out R² = {r2}");
    }

    #[test]
    fn optimizer_never_worse_than_starts() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 * 0.4, (i as f64 * 0.3).cos()]).collect();
        let y: Vec<f64> = x.iter().map(|v| v[0].sin() * v[1]).collect();
        let (_, report) = fit_with_report(x, y, &FitOptions::default()).unwrap();
        for s in &report.start_nlls {
            assert!(
                report.final_nll <= s + 1e-9,
                "final NLL {} worse than a start {s}",
                report.final_nll
            );
        }
    }

    #[test]
    fn more_data_never_raises_variance() {
        // fixed θ, zero noise: the posterior variance must shrink (or stay)
        // pointwise as training points are added
        let params = Hyperparameters {
            signal_var: 1.0,
            lengthscales: vec![1.0],
            noise_var: 0.0,
        };
        let base: Vec<Vec<f64>> = vec![vec![0.0], vec![2.0], vec![4.0]];
        let extended: Vec<Vec<f64>> = vec![vec![0.0], vec![2.0], vec![4.0], vec![1.3]];
        let yb = vec![0.1, -0.4, 0.3];
        let ye = vec![0.1, -0.4, 0.3, 0.2];
        let small = GpModel::with_hyperparameters(base, yb, params.clone()).unwrap();
        let large = GpModel::with_hyperparameters(extended, ye, params).unwrap();
        for i in 0..40 {
            let probe = [-1.0 + i as f64 * 0.15];
            let (_, v_small) = small.predict_one(&probe).unwrap();
            let (_, v_large) = large.predict_one(&probe).unwrap();
            assert!(
                v_large <= v_small + 1e-8,
                "variance grew at {probe:?}: {v_small} → {v_large}"
            );
        }
    }

    #[test]
    fn kernel_matrices_are_symmetric_psd() {
        let mut rng = stream_rng(13, "gp-psd", 0);
        for trial in 0..5 {
            let d = 1 + trial % 3;
            let x: Vec<Vec<f64>> = (0..10)
                .map(|_| (0..d).map(|_| crate::stats::sample_std_normal(&mut rng) * 2.0).collect())
                .collect();
            let p = Hyperparameters {
                signal_var: 0.5 + trial as f64,
                lengthscales: vec![0.9; d],
                noise_var: 0.0,
            };
            let k = kernel_matrix(&x, &p);
            assert_eq!(k, k.transpose());
            let min_eig = k
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |m, v| m.min(*v));
            assert!(min_eig >= -1e-8, "min eigenvalue {min_eig}");
        }
    }

    #[test]
    fn r_squared_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(r_squared(&a, &a).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(r_squared(&[2.5; 4], &a).unwrap(), 0.0, epsilon = 1e-15);
        assert!(r_squared(&a, &[7.0; 4]).is_err());
        assert!(r_squared(&a[..3], &a).is_err());
    }

    #[test]
    fn rejects_bad_training_data() {
        assert!(fit(vec![vec![0.0]], vec![1.0], &FitOptions::default()).is_err());
        assert!(fit(vec![vec![0.0], vec![1.0]], vec![1.0], &FitOptions::default()).is_err());
        assert!(fit(
            vec![vec![0.0], vec![f64::NAN]],
            vec![1.0, 2.0],
            &FitOptions::default()
        )
        .is_err());
        assert!(fit(vec![vec![0.0], vec![1.0, 2.0]], vec![1.0, 2.0], &FitOptions::default())
            .is_err());
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let x: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64 * 0.7, (i % 3) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|v| v[0].cos() + 0.2 * v[1]).collect();
        let model = fit(x, y, &FitOptions::light(5)).unwrap();
        let restored = GpModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(model, restored);
        for probe in [[0.1, 0.0], [3.3, 2.0], [6.0, 1.0]] {
            let (m0, v0) = model.predict_one(&probe).unwrap();
            let (m1, v1) = restored.predict_one(&probe).unwrap();
            assert_relative_eq!(m0, m1, epsilon = 1e-12);
            assert_relative_eq!(v0, v1, epsilon = 1e-12);
        }
    }

    #[test]
    fn warm_start_is_searched() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.5]).collect();
        let y: Vec<f64> = x.iter().map(|v| (v[0] * 1.3).sin()).collect();
        let full = fit(x.clone(), y.clone(), &FitOptions::default()).unwrap();
        let warm_opts = FitOptions {
            n_starts: 1,
            max_iters: 60,
            seed: 0,
            warm_start: Some(full.hyperparameters().clone()),
        };
        let (_, report) = fit_with_report(x, y, &warm_opts).unwrap();
        // the warm start is already near-optimal, so the quick refit cannot
        // end far above it
        assert_eq!(report.start_nlls.len(), 2);
        assert!(report.final_nll <= report.start_nlls[1] + 1e-9);
    }
}
