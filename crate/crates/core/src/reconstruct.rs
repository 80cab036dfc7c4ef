//! Ground-motion reconstruction by amplitude scaling.
//!
//! Generated standard-normal samples invert to target feature vectors
//! that no recorded motion matches exactly. Each candidate record is
//! therefore scaled by a factor γ ∈ (0, 7] chosen to minimize the RMSE
//! between its (analytically) scaled features and the target in
//! standardized coordinates; the record with the smallest minimum wins.
//! Because amplitude features scale as γ^degree, the standardized
//! mismatch is exactly quadratic in ln γ, so a coarse log grid plus
//! golden-section refinement finds the global optimum. Reconstructed
//! motions then drive nonlinear response-history analyses to realize the
//! balanced dataset rows.

use std::collections::BTreeMap;

use crate::building::{
    self, EdpResult, FailureMode, McsRow, ShearBuildingConfig, StructuralParams,
};
use crate::density::{sample_mode_density, ModeDensity};
use crate::error::{Error, Result};
use crate::gmf::{self, GmfVector, FEATURE_NAMES, N_FEATURES, SCALING_DEGREE};
use crate::gp::GpModel;
use crate::nataf::JointTransform;
use crate::par;
use crate::record::AccelTimeSeries;
use crate::spectrum::MAX_SCALE;
use crate::stats::derive_seed;
use serde::{Deserialize, Serialize};

/// Coarse search grid: log-spaced points over [GRID_MIN, MAX_SCALE].
const GRID_POINTS: usize = 64;

/// Smallest scale considered; motions shrunk below this are degenerate.
const GRID_MIN: f64 = 1e-2;

/// Golden-section termination width in γ units.
const GAMMA_TOL: f64 = 1e-4;

/// Boundary flag margin: optima this close to the grid ends are reported
/// as boundary hits.
const BOUNDARY_MARGIN: f64 = 1e-3;

// ── Feature standardization ─────────────────────────────────────────────

/// z-score transform over a feature subset, fitted on a unit-scale record
/// pool. Amplitude features (scaling degree ≥ 1) are standardized in log
/// space — which makes the scale mismatch quadratic in ln γ — while
/// scale-invariant ratios are standardized linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStandardizer {
    indices: Vec<usize>,
    log_space: Vec<bool>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl FeatureStandardizer {
    /// Fit per-coordinate statistics on the pool's unit-scale features.
    pub fn fit(pool: &[GmfVector], indices: &[usize]) -> Result<Self> {
        if pool.len() < 2 {
            return Err(Error::invalid("need at least two records to standardize features"));
        }
        if indices.is_empty() {
            return Err(Error::invalid("feature subset is empty"));
        }
        let mut seen = [false; N_FEATURES];
        for &f in indices {
            if f >= N_FEATURES {
                return Err(Error::invalid(format!("feature index {f} out of range")));
            }
            if seen[f] {
                return Err(Error::invalid(format!("feature index {f} repeated")));
            }
            seen[f] = true;
        }
        let log_space: Vec<bool> = indices.iter().map(|&f| SCALING_DEGREE[f] != 0).collect();
        let n = pool.len() as f64;
        let mut mean = Vec::with_capacity(indices.len());
        let mut std = Vec::with_capacity(indices.len());
        for (j, &f) in indices.iter().enumerate() {
            let coords: Vec<f64> = pool
                .iter()
                .map(|v| {
                    let raw = v.get(f);
                    if log_space[j] {
                        if raw > 0.0 {
                            Ok(raw.ln())
                        } else {
                            Err(Error::invalid(format!(
                                "amplitude feature `{}` must be positive to standardize",
                                FEATURE_NAMES[f]
                            )))
                        }
                    } else {
                        Ok(raw)
                    }
                })
                .collect::<Result<_>>()?;
            let m = coords.iter().sum::<f64>() / n;
            let var = coords.iter().map(|c| (c - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Ok(Self { indices: indices.to_vec(), log_space, mean, std })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Pull the subset coordinates out of a full feature vector.
    pub fn project(&self, features: &GmfVector) -> Vec<f64> {
        self.indices.iter().map(|&f| features.get(f)).collect()
    }

    /// Standardize raw subset values (aligned with `indices`). Log-space
    /// coordinates are clamped to a tiny positive floor so near-zero
    /// amplitudes map to a large-but-finite deviation instead of −∞.
    pub fn transform(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.indices.len() {
            return Err(Error::invalid(format!(
                "expected {} feature values, got {}",
                self.indices.len(),
                values.len()
            )));
        }
        let mut out = Vec::with_capacity(values.len());
        for (j, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid("feature values must be finite"));
            }
            let coord = if self.log_space[j] { v.max(1e-300).ln() } else { v };
            out.push((coord - self.mean[j]) / self.std[j]);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        if s.indices.len() != s.log_space.len()
            || s.indices.len() != s.mean.len()
            || s.indices.len() != s.std.len()
            || s.indices.is_empty()
            || s.std.iter().any(|v| !(*v > 0.0))
        {
            return Err(Error::invalid("inconsistent standardizer fields"));
        }
        Ok(s)
    }
}

// ── Scale mismatch and optimization ─────────────────────────────────────

/// RMSE between a record's features scaled by `gamma` and a target, both
/// in standardized coordinates. The record's scaled features come from
/// amplitude homogeneity (γ^degree per feature), not from re-integration.
pub fn feature_mismatch(
    unit_features: &GmfVector,
    gamma: f64,
    target: &[f64],
    standardizer: &FeatureStandardizer,
) -> Result<f64> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid("scale factor must be positive and finite"));
    }
    let scaled = unit_features.scaled(gamma)?;
    let z_rec = standardizer.transform(&standardizer.project(&scaled))?;
    let z_tgt = standardizer.transform(target)?;
    let sum: f64 = z_rec.iter().zip(&z_tgt).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sum / z_rec.len() as f64).sqrt())
}

/// One record's optimal scale against a target.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleFit {
    pub gamma: f64,
    pub epsilon: f64,
    /// Set when the optimum sits at the edge of the allowed scale range.
    pub boundary: bool,
}

/// Minimize the standardized feature mismatch over γ ∈ [0.01, 7] with a
/// 64-point log grid, golden-section refinement to |Δγ| < 1e-4, and a
/// final parabolic polish that exploits the quadratic-in-ln γ structure.
pub fn optimize_scale(
    unit_features: &GmfVector,
    target: &[f64],
    standardizer: &FeatureStandardizer,
) -> Result<ScaleFit> {
    let eps = |gamma: f64| feature_mismatch(unit_features, gamma, target, standardizer);

    let log_lo = GRID_MIN.ln();
    let log_hi = MAX_SCALE.ln();
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| (log_lo + (log_hi - log_lo) * i as f64 / (GRID_POINTS - 1) as f64).exp())
        .collect();
    let mut best_i = 0;
    let mut best = (grid[0], eps(grid[0])?);
    for (i, &g) in grid.iter().enumerate().skip(1) {
        let e = eps(g)?;
        if e < best.1 {
            best = (g, e);
            best_i = i;
        }
    }

    // Golden-section refinement inside the bracketing grid cells, run on
    // ln γ where the squared mismatch is quadratic (hence unimodal).
    let mut a = grid[best_i.saturating_sub(1)].ln();
    let mut b = grid[(best_i + 1).min(GRID_POINTS - 1)].ln();
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INVPHI * (b - a);
    let mut x2 = a + INVPHI * (b - a);
    let mut f1 = eps(x1.exp())?;
    let mut f2 = eps(x2.exp())?;
    while b.exp() - a.exp() > GAMMA_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INVPHI * (b - a);
            f1 = eps(x1.exp())?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INVPHI * (b - a);
            f2 = eps(x2.exp())?;
        }
        if f1 < best.1 {
            best = (x1.exp(), f1);
        }
        if f2 < best.1 {
            best = (x2.exp(), f2);
        }
    }

    // The squared mismatch is exactly quadratic in ln γ, so a three-point
    // parabola through the final bracket pins the vertex to machine
    // precision — far past the bracket tolerance.
    let f_a = eps(a.exp())?;
    let (y0, y1, y2) = (f_a * f_a, f1 * f1, f2 * f2);
    let num = (x1 - a).powi(2) * (y1 - y2) - (x1 - x2).powi(2) * (y1 - y0);
    let den = (x1 - a) * (y1 - y2) - (x1 - x2) * (y1 - y0);
    if den.abs() > 0.0 {
        let vertex = (x1 - 0.5 * num / den).clamp(log_lo, log_hi);
        if vertex.is_finite() {
            let f_v = eps(vertex.exp())?;
            if f_v < best.1 {
                best = (vertex.exp(), f_v);
            }
        }
    }

    let (gamma, epsilon) = best;
    let boundary = MAX_SCALE - gamma <= BOUNDARY_MARGIN || gamma - GRID_MIN <= BOUNDARY_MARGIN;
    Ok(ScaleFit { gamma, epsilon, boundary })
}

// ── Record pool and best-record search ──────────────────────────────────

/// Candidate records with their unit-scale features precomputed.
#[derive(Debug, Clone)]
pub struct RecordPool {
    pub records: Vec<AccelTimeSeries>,
    pub unit_features: Vec<GmfVector>,
    /// Fundamental period the spectral features were extracted at.
    pub t1: f64,
}

impl RecordPool {
    pub fn build(records: Vec<AccelTimeSeries>, t1: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("record pool is empty"));
        }
        let unit_features =
            gmf::extract_batch(&records, t1)?.into_iter().map(|(_, v)| v).collect();
        Ok(Self { records, unit_features, t1 })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id() == id)
    }
}

/// The winning record/scale pair for one target feature vector.
#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub record_index: usize,
    pub record_id: String,
    pub gamma: f64,
    pub epsilon: f64,
    pub boundary: bool,
    /// Target subset values the search matched against.
    pub target: Vec<f64>,
    /// Features of the scaled record recomputed from the scaled time
    /// series (cross-checked against the analytic scaling).
    pub reconstructed: GmfVector,
}

/// Optimize the scale of every pool record against the target and keep
/// the overall minimum (ties break to the smaller record index). The
/// winner's features are recomputed from the actually-scaled time series
/// and must agree with the analytic scaling to 1e-9 relative.
pub fn reconstruct_best(
    target: &[f64],
    pool: &RecordPool,
    standardizer: &FeatureStandardizer,
) -> Result<ReconstructionResult> {
    if pool.is_empty() {
        return Err(Error::invalid("record pool is empty"));
    }
    let fits: Vec<Result<ScaleFit>> =
        par::map_indexed(&pool.unit_features, |_, f| optimize_scale(f, target, standardizer));
    let mut best: Option<(usize, ScaleFit)> = None;
    for (j, fit) in fits.into_iter().enumerate() {
        let fit = fit?;
        let better = match &best {
            None => true,
            Some((_, b)) => fit.epsilon < b.epsilon,
        };
        if better {
            best = Some((j, fit));
        }
    }
    let (record_index, fit) = best.expect("non-empty pool");

    let scaled_record = pool.records[record_index].scale(fit.gamma)?;
    let reconstructed = gmf::extract_features(&scaled_record, pool.t1)?;
    let analytic = pool.unit_features[record_index].scaled(fit.gamma)?;
    for (i, (r, a)) in reconstructed.values.iter().zip(analytic.values.iter()).enumerate() {
        let tol = 1e-9 * a.abs().max(1e-12);
        if (r - a).abs() > tol {
            return Err(Error::invalid(format!(
                "scaled-feature cross-check failed for `{}`: recomputed {r}, analytic {a}",
                FEATURE_NAMES[i]
            )));
        }
    }

    Ok(ReconstructionResult {
        record_index,
        record_id: pool.records[record_index].id().to_string(),
        gamma: fit.gamma,
        epsilon: fit.epsilon,
        boundary: fit.boundary,
        target: target.to_vec(),
        reconstructed,
    })
}

// ── Balanced dataset assembly ───────────────────────────────────────────

/// One balanced-dataset row: the mode the sample was drawn for, the
/// reconstruction provenance, and the realized response.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedRow {
    pub target_mode: FailureMode,
    pub record_id: String,
    pub gamma: f64,
    pub params: StructuralParams,
    /// Critical-feature values of the reconstructed (scaled) motion.
    pub features: Vec<f64>,
    pub edp: EdpResult,
    /// Mode recomputed from the response analysis; may differ from the
    /// target (relabel drift).
    pub realized_mode: FailureMode,
}

/// Per-mode assembly diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeOutcome {
    pub mode: FailureMode,
    pub requested: usize,
    pub delivered: usize,
    pub mean_epsilon: f64,
    /// Fraction of delivered rows whose scale hit the allowed boundary.
    pub boundary_fraction: f64,
    /// Set when density sampling failed and the mode delivered nothing.
    pub shortfall: Option<String>,
}

/// The assembled dataset: mode-targeted rows plus safe rows.
#[derive(Debug, Clone)]
pub struct BalancedDataset {
    pub rows: Vec<BalancedRow>,
    pub outcomes: Vec<ModeOutcome>,
    pub n_stories: usize,
    /// Catalog indices of the feature columns, in column order.
    pub critical_indices: Vec<usize>,
}

/// Assembly controls.
#[derive(Debug, Clone)]
pub struct AssembleConfig {
    /// Target row count per failure mode.
    pub per_mode: usize,
    pub seed: u64,
    /// When set (the pipeline default), the joint transform's feature
    /// block is fitted on ln(feature) coordinates and inverted samples
    /// are exponentiated, guaranteeing positive feature targets.
    pub log_feature_block: bool,
}

/// Invert a standard-normal-space sample into feature targets and
/// structural parameters.
///
/// The first `k` coordinates are the feature block (exponentiated when the
/// transform was fitted on log features); the trailing three are damping
/// ratio (clipped below 1), mass, and the stiffness multiplier exponent.
pub fn invert_sample(
    transform: &JointTransform,
    u: &[f64],
    k: usize,
    log_feature_block: bool,
) -> Result<(Vec<f64>, StructuralParams)> {
    if transform.dim() != k + 3 {
        return Err(Error::invalid(format!(
            "joint transform dimension {} must equal {} features + 3 structural parameters",
            transform.dim(),
            k
        )));
    }
    let x = transform.from_standard_normal(u)?;
    let target: Vec<f64> =
        x[..k].iter().map(|&v| if log_feature_block { v.exp() } else { v }).collect();
    let params = StructuralParams { xi: x[k].min(0.999), m: x[k + 1], u_k: x[k + 2] };
    params.validate()?;
    Ok((target, params))
}

/// Draw per-mode samples from the fitted densities, invert them to
/// physical coordinates, reconstruct a scaled motion for each, run the
/// nonlinear response analysis, and append the supplied safe rows.
#[allow(clippy::too_many_arguments)] // one argument per pipeline artifact
pub fn assemble_balanced_dataset(
    densities: &[ModeDensity],
    models: &[GpModel],
    transform: &JointTransform,
    pool: &RecordPool,
    standardizer: &FeatureStandardizer,
    building_config: &ShearBuildingConfig,
    safe_rows: &[McsRow],
    config: &AssembleConfig,
) -> Result<BalancedDataset> {
    if densities.is_empty() {
        return Err(Error::invalid("no mode densities supplied"));
    }
    building_config.validate()?;
    let critical_indices = standardizer.indices().to_vec();
    let k = critical_indices.len();
    if transform.dim() != k + 3 {
        return Err(Error::invalid(format!(
            "joint transform dimension {} must equal {} features + 3 structural parameters",
            transform.dim(),
            k
        )));
    }
    let n_stories = building_config.n_stories;
    for row in safe_rows {
        if !row.mode.is_safe() {
            return Err(Error::invalid(format!(
                "safe-row block contains non-safe mode {}",
                row.mode
            )));
        }
        if pool.index_of(&row.record_id).is_none() {
            return Err(Error::invalid(format!(
                "safe row references record `{}` missing from the pool",
                row.record_id
            )));
        }
    }

    let mut rows: Vec<BalancedRow> = Vec::new();
    let mut outcomes: Vec<ModeOutcome> = Vec::new();
    for (m_idx, density) in densities.iter().enumerate() {
        let mode_seed = derive_seed(config.seed, "balanced-mode", m_idx as u64);
        let samples = match sample_mode_density(density, models, config.per_mode, mode_seed) {
            Ok(s) => s,
            Err(Error::ModeAcceptance { mode }) => {
                outcomes.push(ModeOutcome {
                    mode: density.mode.clone(),
                    requested: config.per_mode,
                    delivered: 0,
                    mean_epsilon: f64::NAN,
                    boundary_fraction: 0.0,
                    shortfall: Some(format!(
                        "density sampling for mode {mode} fell below 1% acceptance"
                    )),
                });
                continue;
            }
            Err(other) => return Err(other),
        };

        let built: Vec<Result<(BalancedRow, f64, bool)>> =
            par::map_indexed(&samples, |_, u| {
                let (target, params) =
                    invert_sample(transform, u, k, config.log_feature_block)?;
                let rec = reconstruct_best(&target, pool, standardizer)?;
                let scaled = pool.records[rec.record_index].scale(rec.gamma)?;
                let edp = building::nonlinear_rha(building_config, &params, &scaled)?;
                let g = building::limit_states(&edp, building_config.idr_threshold);
                let realized_mode = building::encode_failure_mode(&g);
                let features: Vec<f64> =
                    critical_indices.iter().map(|&f| rec.reconstructed.get(f)).collect();
                Ok((
                    BalancedRow {
                        target_mode: density.mode.clone(),
                        record_id: rec.record_id,
                        gamma: rec.gamma,
                        params,
                        features,
                        edp,
                        realized_mode,
                    },
                    rec.epsilon,
                    rec.boundary,
                ))
            });

        let mut delivered = 0usize;
        let mut eps_sum = 0.0;
        let mut boundary_hits = 0usize;
        for item in built {
            let (row, eps, boundary) = item?;
            rows.push(row);
            delivered += 1;
            eps_sum += eps;
            boundary_hits += usize::from(boundary);
        }
        outcomes.push(ModeOutcome {
            mode: density.mode.clone(),
            requested: config.per_mode,
            delivered,
            mean_epsilon: if delivered > 0 { eps_sum / delivered as f64 } else { f64::NAN },
            boundary_fraction: if delivered > 0 {
                boundary_hits as f64 / delivered as f64
            } else {
                0.0
            },
            shortfall: None,
        });
    }

    for mcs in safe_rows {
        let idx = pool.index_of(&mcs.record_id).expect("validated above");
        let scaled_features = pool.unit_features[idx].scaled(mcs.scale)?;
        let features: Vec<f64> =
            critical_indices.iter().map(|&f| scaled_features.get(f)).collect();
        rows.push(BalancedRow {
            target_mode: FailureMode::safe(n_stories),
            record_id: mcs.record_id.clone(),
            gamma: mcs.scale,
            params: mcs.params,
            features,
            edp: EdpResult {
                peak_idr: mcs.peak_idr.clone(),
                peak_abs_accel: mcs.peak_abs_accel.clone(),
            },
            realized_mode: mcs.mode.clone(),
        });
    }

    Ok(BalancedDataset { rows, outcomes, n_stories, critical_indices })
}

// ── Dataset summary and serialization ───────────────────────────────────

/// JSON-facing rollup of an assembled dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalancedSummary {
    pub total_rows: usize,
    pub safe_rows: usize,
    pub outcomes: Vec<ModeOutcome>,
    /// Realized-mode histogram over all rows (mode bits → count).
    pub realized_counts: BTreeMap<String, usize>,
}

impl BalancedDataset {
    pub fn summary(&self) -> BalancedSummary {
        let mut realized_counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut safe_rows = 0usize;
        for row in &self.rows {
            *realized_counts.entry(row.realized_mode.to_string()).or_insert(0) += 1;
            if row.target_mode.is_safe() {
                safe_rows += 1;
            }
        }
        BalancedSummary {
            total_rows: self.rows.len(),
            safe_rows,
            outcomes: self.outcomes.clone(),
            realized_counts,
        }
    }
}

/// Header for the balanced-dataset CSV.
pub fn balanced_csv_header(critical_indices: &[usize], n_stories: usize) -> String {
    let mut cols = vec![
        "target_mode".to_string(),
        "record_id".to_string(),
        "gamma".to_string(),
        "xi".to_string(),
        "m".to_string(),
        "u_k".to_string(),
    ];
    for &f in critical_indices {
        cols.push(FEATURE_NAMES[f].to_string());
    }
    for s in 1..=n_stories {
        cols.push(format!("idr_{s}"));
    }
    for s in 1..=n_stories {
        cols.push(format!("pfa_{s}"));
    }
    cols.push("realized_mode".to_string());
    cols.join(",")
}

/// Render the dataset as CSV (shortest-round-trip float formatting).
pub fn to_balanced_csv(dataset: &BalancedDataset) -> Result<String> {
    let mut out = balanced_csv_header(&dataset.critical_indices, dataset.n_stories);
    out.push('\n');
    for row in &dataset.rows {
        if row.features.len() != dataset.critical_indices.len()
            || row.edp.peak_idr.len() != dataset.n_stories
            || row.edp.peak_abs_accel.len() != dataset.n_stories
        {
            return Err(Error::invalid("balanced row width mismatch"));
        }
        let mut fields = vec![
            row.target_mode.to_string(),
            row.record_id.clone(),
            format!("{}", row.gamma),
            format!("{}", row.params.xi),
            format!("{}", row.params.m),
            format!("{}", row.params.u_k),
        ];
        fields.extend(row.features.iter().map(|v| format!("{v}")));
        fields.extend(row.edp.peak_idr.iter().map(|v| format!("{v}")));
        fields.extend(row.edp.peak_abs_accel.iter().map(|v| format!("{v}")));
        fields.push(row.realized_mode.to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Parse a balanced-dataset CSV produced by [`to_balanced_csv`]. Feature
/// columns are recognized by catalog name; assembly diagnostics are not
/// part of the format and come back empty.
pub fn from_balanced_csv_str(text: &str, path: &str) -> Result<BalancedDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line: 1,
            detail: "empty file".to_string(),
        })?;
    let cols: Vec<&str> = header.split(',').collect();
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.to_string(),
        line,
        detail,
    };
    let fixed = ["target_mode", "record_id", "gamma", "xi", "m", "u_k"];
    if cols.len() < fixed.len() + 1 || cols[..fixed.len()] != fixed {
        return Err(parse_err(1, "unexpected balanced-dataset header".to_string()));
    }
    let mut critical_indices = Vec::new();
    let mut pos = fixed.len();
    while pos < cols.len() {
        match FEATURE_NAMES.iter().position(|n| *n == cols[pos]) {
            Some(f) => {
                critical_indices.push(f);
                pos += 1;
            }
            None => break,
        }
    }
    let n_stories = cols[pos..].iter().filter(|c| c.starts_with("idr_")).count();
    let expected =
        fixed.len() + critical_indices.len() + 2 * n_stories + 1;
    if critical_indices.is_empty()
        || n_stories == 0
        || cols.len() != expected
        || *cols.last().unwrap() != "realized_mode"
    {
        return Err(parse_err(1, "unexpected balanced-dataset header".to_string()));
    }

    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let ln = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(parse_err(ln, format!("expected {expected} fields, got {}", fields.len())));
        }
        let num = |idx: usize| -> Result<f64> {
            fields[idx]
                .parse::<f64>()
                .map_err(|e| parse_err(ln, format!("bad number `{}`: {e}", fields[idx])))
        };
        let target_mode: FailureMode = fields[0]
            .parse()
            .map_err(|_| parse_err(ln, format!("bad mode `{}`", fields[0])))?;
        let k = critical_indices.len();
        let features: Vec<f64> =
            (0..k).map(|j| num(6 + j)).collect::<Result<_>>()?;
        let peak_idr: Vec<f64> =
            (0..n_stories).map(|s| num(6 + k + s)).collect::<Result<_>>()?;
        let peak_abs_accel: Vec<f64> =
            (0..n_stories).map(|s| num(6 + k + n_stories + s)).collect::<Result<_>>()?;
        let realized_mode: FailureMode = fields[expected - 1]
            .parse()
            .map_err(|_| parse_err(ln, format!("bad mode `{}`", fields[expected - 1])))?;
        rows.push(BalancedRow {
            target_mode,
            record_id: fields[1].to_string(),
            gamma: num(2)?,
            params: StructuralParams { xi: num(3)?, m: num(4)?, u_k: num(5)? },
            features,
            edp: EdpResult { peak_idr, peak_abs_accel },
            realized_mode,
        });
    }
    Ok(BalancedDataset { rows, outcomes: Vec::new(), n_stories, critical_indices })
}

/// Write the dataset CSV.
pub fn write_balanced_csv(dataset: &BalancedDataset, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, to_balanced_csv(dataset)?)?;
    Ok(())
}

/// Read a dataset CSV.
pub fn read_balanced_csv(path: &std::path::Path) -> Result<BalancedDataset> {
    let text = std::fs::read_to_string(path)?;
    from_balanced_csv_str(&text, &path.display().to_string())
}

// ── Tests ───────────────────────────────────────────────────────────────
