//! Marginal and joint probabilistic transforms between physical coordinates
//! and uncorrelated standard-normal coordinates (Nataf / Gaussian-copula
//! model with empirical or analytic marginals).

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{lognormal_params, norm_ppf};

/// Hard limit of the normal-quantile extrapolation of empirical tails.
pub const TAIL_CLAMP_U: f64 = 8.0;

/// Minimum sample count for an empirical marginal.
pub const MIN_EMPIRICAL_SAMPLES: usize = 10;

// ── empirical marginal ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmpiricalCdfData {
    samples: Vec<f64>,
}

/// Empirical CDF over a sample, mapped through the normal quantile function.
///
/// Knots are the sorted sample values at plotting positions i/(n+1); between
/// knots the map x ↔ u is linear in (x, Φ⁻¹(F)) coordinates, and beyond the
/// extreme knots the end segments extrapolate linearly, clamped at |u| = 8.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "EmpiricalCdfData", into = "EmpiricalCdfData")]
pub struct EmpiricalCdf {
    values: Vec<f64>,
    knots_x: Vec<f64>,
    knots_u: Vec<f64>,
}

impl PartialEq for EmpiricalCdf {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl TryFrom<EmpiricalCdfData> for EmpiricalCdf {
    type Error = Error;

    fn try_from(data: EmpiricalCdfData) -> Result<Self> {
        Self::new(data.samples)
    }
}

impl From<EmpiricalCdf> for EmpiricalCdfData {
    fn from(cdf: EmpiricalCdf) -> Self {
        Self { samples: cdf.values }
    }
}

impl EmpiricalCdf {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.len() < MIN_EMPIRICAL_SAMPLES {
            return Err(Error::invalid(format!(
                "empirical marginal needs at least {MIN_EMPIRICAL_SAMPLES} samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("empirical samples must be finite"));
        }
        samples.sort_by(|a, b| a.total_cmp(b));
        let n = samples.len();
        // collapse exact ties: one knot per distinct value, at the mean of
        // the tied plotting-position quantiles
        let mut knots_x = Vec::new();
        let mut knots_u = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && samples[j + 1] == samples[i] {
                j += 1;
            }
            let mean_u = (i..=j)
                .map(|k| norm_ppf((k + 1) as f64 / (n + 1) as f64))
                .sum::<f64>()
                / (j - i + 1) as f64;
            knots_x.push(samples[i]);
            knots_u.push(mean_u);
            i = j + 1;
        }
        if knots_x.len() < 2 {
            return Err(Error::invalid(
                "empirical marginal needs at least two distinct values",
            ));
        }
        Ok(Self { values: samples, knots_x, knots_u })
    }

    pub fn samples(&self) -> &[f64] {
        &self.values
    }

    fn slope_first(&self) -> f64 {
        (self.knots_u[1] - self.knots_u[0]) / (self.knots_x[1] - self.knots_x[0])
    }

    fn slope_last(&self) -> f64 {
        let m = self.knots_x.len();
        (self.knots_u[m - 1] - self.knots_u[m - 2]) / (self.knots_x[m - 1] - self.knots_x[m - 2])
    }

    /// Map a physical value to its normal score; the flag reports tail
    /// clamping at |u| = 8.
    pub fn to_normal(&self, x: f64) -> (f64, bool) {
        let (x0, xm) = (self.knots_x[0], *self.knots_x.last().unwrap());
        let u = if x < x0 {
            self.knots_u[0] + self.slope_first() * (x - x0)
        } else if x > xm {
            self.knots_u.last().unwrap() + self.slope_last() * (x - xm)
        } else {
            let j = match self.knots_x.binary_search_by(|k| k.total_cmp(&x)) {
                Ok(j) => return (self.knots_u[j], false),
                Err(j) => j, // x strictly between knots j-1 and j
            };
            let (xa, xb) = (self.knots_x[j - 1], self.knots_x[j]);
            let (ua, ub) = (self.knots_u[j - 1], self.knots_u[j]);
            ua + (ub - ua) * (x - xa) / (xb - xa)
        };
        if u.abs() > TAIL_CLAMP_U {
            (u.clamp(-TAIL_CLAMP_U, TAIL_CLAMP_U), true)
        } else {
            (u, false)
        }
    }

    /// Map a normal score back to a physical value (inverse of [`Self::to_normal`]).
    #[allow(clippy::wrong_self_convention)] // converts *from normal space*, not from `self`
    pub fn from_normal(&self, u: f64) -> f64 {
        let u = u.clamp(-TAIL_CLAMP_U, TAIL_CLAMP_U);
        let m = self.knots_u.len();
        if u < self.knots_u[0] {
            return self.knots_x[0] + (u - self.knots_u[0]) / self.slope_first();
        }
        if u > self.knots_u[m - 1] {
            return self.knots_x[m - 1] + (u - self.knots_u[m - 1]) / self.slope_last();
        }
        let j = match self.knots_u.binary_search_by(|k| k.total_cmp(&u)) {
            Ok(j) => return self.knots_x[j],
            Err(j) => j,
        };
        let (ua, ub) = (self.knots_u[j - 1], self.knots_u[j]);
        let (xa, xb) = (self.knots_x[j - 1], self.knots_x[j]);
        xa + (xb - xa) * (u - ua) / (ub - ua)
    }
}

// ── marginal specifications ─────────────────────────────────────────────────

/// One coordinate's marginal distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    StandardNormal,
    Lognormal { mean: f64, cov: f64 },
    Empirical { cdf: EmpiricalCdf },
}

impl Marginal {
    pub fn empirical(samples: Vec<f64>) -> Result<Self> {
        Ok(Self::Empirical { cdf: EmpiricalCdf::new(samples)? })
    }

    fn validate(&self) -> Result<()> {
        if let Self::Lognormal { mean, cov } = self {
            if !(*mean > 0.0) || !(*cov > 0.0) || !mean.is_finite() || !cov.is_finite() {
                return Err(Error::invalid(format!(
                    "lognormal marginal needs mean > 0 and cov > 0, got ({mean}, {cov})"
                )));
            }
        }
        Ok(())
    }

    /// Physical value → normal score; the flag reports empirical-tail clamping.
    fn to_normal(&self, x: f64) -> Result<(f64, bool)> {
        if !x.is_finite() {
            return Err(Error::invalid(format!("non-finite marginal input {x}")));
        }
        match self {
            Self::StandardNormal => Ok((x, false)),
            Self::Lognormal { mean, cov } => {
                if !(x > 0.0) {
                    return Err(Error::invalid(format!(
                        "lognormal support is x > 0, got {x}"
                    )));
                }
                let (lambda, zeta) = lognormal_params(*mean, *cov)?;
                Ok(((x.ln() - lambda) / zeta, false))
            }
            Self::Empirical { cdf } => Ok(cdf.to_normal(x)),
        }
    }

    /// Normal score → physical value.
    #[allow(clippy::wrong_self_convention)] // converts *from normal space*, not from `self`
    fn from_normal(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::invalid(format!("non-finite normal score {u}")));
        }
        match self {
            Self::StandardNormal => Ok(u),
            Self::Lognormal { mean, cov } => {
                let (lambda, zeta) = lognormal_params(*mean, *cov)?;
                Ok((lambda + zeta * u).exp())
            }
            Self::Empirical { cdf } => Ok(cdf.from_normal(u)),
        }
    }
}

// ── joint transform ─────────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct JointTransformData {
    marginals: Vec<Marginal>,
    correlation: Vec<Vec<f64>>,
}

/// Joint map between physical space and uncorrelated standard-normal space:
/// per-coordinate marginal transforms followed by Gaussian-copula
/// decorrelation through the lower-triangular factor of the correlation
/// matrix.
#[derive(Debug)]
pub struct JointTransform {
    marginals: Vec<Marginal>,
    correlation: DMatrix<f64>,
    factor: DMatrix<f64>,
    clamp_count: AtomicU64,
}

impl Clone for JointTransform {
    fn clone(&self) -> Self {
        Self {
            marginals: self.marginals.clone(),
            correlation: self.correlation.clone(),
            factor: self.factor.clone(),
            clamp_count: AtomicU64::new(self.clamp_count.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for JointTransform {
    fn eq(&self, other: &Self) -> bool {
        self.marginals == other.marginals && self.correlation == other.correlation
    }
}

impl JointTransform {
    pub fn new(marginals: Vec<Marginal>, correlation: DMatrix<f64>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::invalid("transform needs at least one coordinate"));
        }
        for m in &marginals {
            m.validate()?;
        }
        let d = marginals.len();
        if correlation.nrows() != d || correlation.ncols() != d {
            return Err(Error::invalid(format!(
                "correlation matrix must be {d}×{d}, got {}×{}",
                correlation.nrows(),
                correlation.ncols()
            )));
        }
        for i in 0..d {
            if (correlation[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("correlation diagonal must be 1"));
            }
            for j in 0..i {
                if (correlation[(i, j)] - correlation[(j, i)]).abs() > 1e-12 {
                    return Err(Error::invalid("correlation matrix must be symmetric"));
                }
            }
        }
        let factor = Cholesky::new(correlation.clone())
            .ok_or_else(|| {
                Error::Conditioning("correlation matrix is not positive definite".into())
            })?
            .l();
        Ok(Self { marginals, correlation, factor, clamp_count: AtomicU64::new(0) })
    }

    /// Independent coordinates: identity correlation.
    pub fn independent(marginals: Vec<Marginal>) -> Result<Self> {
        let d = marginals.len();
        Self::new(marginals, DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.correlation
    }

    /// Lower-triangular factor L with L·Lᵀ equal to the correlation matrix.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// How many coordinate evaluations hit the empirical tail clamp.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_count.load(Ordering::Relaxed)
    }

    /// Physical vector → uncorrelated standard-normal vector.
    pub fn to_standard_normal(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                x.len()
            )));
        }
        let mut z = DVector::zeros(self.dim());
        for (i, (m, xi)) in self.marginals.iter().zip(x).enumerate() {
            let (u, clamped) = m.to_normal(*xi)?;
            if clamped {
                self.clamp_count.fetch_add(1, Ordering::Relaxed);
            }
            z[i] = u;
        }
        // decorrelate: solve L·u = z
        let u = self
            .factor
            .clone()
            .solve_lower_triangular(&z)
            .ok_or_else(|| Error::Conditioning("singular copula factor".into()))?;
        Ok(u.iter().copied().collect())
    }

    /// Uncorrelated standard-normal vector → physical vector.
    pub fn from_standard_normal(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.dim() {
            return Err(Error::invalid(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                u.len()
            )));
        }
        let z = &self.factor * DVector::from_column_slice(u);
        self.marginals
            .iter()
            .zip(z.iter())
            .map(|(m, zi)| m.from_normal(*zi))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let data = JointTransformData {
            marginals: self.marginals.clone(),
            correlation: (0..self.dim())
                .map(|i| (0..self.dim()).map(|j| self.correlation[(i, j)]).collect())
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&data)?)
    }

    /// Rebuild from JSON; the triangular factor is recomputed, not stored.
    pub fn from_json(text: &str) -> Result<Self> {
        let data: JointTransformData = serde_json::from_str(text)?;
        let d = data.marginals.len();
        if data.correlation.len() != d || data.correlation.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("correlation matrix shape mismatch"));
        }
        let correlation = DMatrix::from_fn(d, d, |i, j| data.correlation[i][j]);
        Self::new(data.marginals, correlation)
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

// ── copula correlation fitting ──────────────────────────────────────────────

/// Average ranks (1-based, ties averaged).
fn ranks(column: &[f64]) -> Vec<f64> {
    let n = column.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| column[a].total_cmp(&column[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && column[order[j + 1]] == column[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = mean_rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0 // a constant column carries no rank information
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Spearman rank correlation of two equal-length samples (ties averaged,
/// constant inputs score 0). Invariant under strictly monotone transforms
/// of either argument, which makes it the right detector for coordinate
/// pairs that would degenerate a copula.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Estimate the Gaussian-copula correlation matrix from sample rows.
///
/// Spearman rank correlations are mapped through ρ = 2·sin(π·ρ_s/6) and the
/// result is projected to the nearest positive-definite correlation matrix
/// (eigenvalue floor 1e-8, then unit-diagonal rescale). Constant columns
/// come out independent.
pub fn fit_copula_correlation(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.len() < 30 {
        return Err(Error::invalid(format!(
            "copula fit needs at least 30 rows, got {}",
            rows.len()
        )));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("rows must share a positive common length"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("copula fit requires finite samples"));
    }
    let rank_cols: Vec<Vec<f64>> = (0..d)
        .map(|j| ranks(&rows.iter().map(|r| r[j]).collect::<Vec<f64>>()))
        .collect();
    let mut r = DMatrix::identity(d, d);
    for i in 0..d {
        for j in 0..i {
            let rho_s = pearson(&rank_cols[i], &rank_cols[j]);
            let rho = 2.0 * (std::f64::consts::PI * rho_s / 6.0).sin();
            r[(i, j)] = rho;
            r[(j, i)] = rho;
        }
    }
    Ok(nearest_positive_definite(&r))
}

/// Floor the eigenvalues at 1e-8 and restore the unit diagonal.
fn nearest_positive_definite(r: &DMatrix<f64>) -> DMatrix<f64> {
    let d = r.nrows();
    let eig = r.clone().symmetric_eigen();
    let floored = DVector::from_iterator(d, eig.eigenvalues.iter().map(|l| l.max(1e-8)));
    let mut a = &eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose();
    // congruence with the diagonal scaling keeps the matrix positive definite
    let scale: Vec<f64> = (0..d).map(|i| a[(i, i)].sqrt()).collect();
    for i in 0..d {
        for j in 0..d {
            a[(i, j)] /= scale[i] * scale[j];
        }
        a[(i, i)] = 1.0;
    }
    // exact symmetry against rounding drift
    let at = a.transpose();
    (&a + &at) * 0.5
}
