//! The ground-motion feature catalog: peak, spectral, energy, and duration
//! measures of an acceleration record, with exact amplitude-scaling rules.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::record::AccelTimeSeries;
use crate::spectrum::{period_grid, response_spectrum, DEFAULT_DAMPING};
use crate::stats::cumtrapz;

/// Gravitational acceleration used by the energy integral (m/s²).
pub const GRAVITY: f64 = 9.81;

/// Number of catalog features.
pub const N_FEATURES: usize = 16;

/// Canonical feature order. Short names double as CSV column headers.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "pga", "pgv", "pgd", "sa_t1", "sv_t1", "sd_t1", "sa_geo", "sv_geo", "sd_geo", "sa_eff",
    "sv_eff", "sd_eff", "pgv_pga", "spectral_shape", "arias", "d5_95",
];

/// Power of the amplitude scale γ each feature picks up when the record is
/// scaled: peak/spectral amplitudes grow linearly, the energy integral
/// quadratically, and the two shape/duration ratios not at all.
pub const SCALING_DEGREE: [i32; N_FEATURES] = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 1, 2, 0];

/// Feature indices by name, for readable call sites.
pub mod idx {
    pub const PGA: usize = 0;
    pub const PGV: usize = 1;
    pub const PGD: usize = 2;
    pub const SA_T1: usize = 3;
    pub const SV_T1: usize = 4;
    pub const SD_T1: usize = 5;
    pub const SA_GEO: usize = 6;
    pub const SV_GEO: usize = 7;
    pub const SD_GEO: usize = 8;
    pub const SA_EFF: usize = 9;
    pub const SV_EFF: usize = 10;
    pub const SD_EFF: usize = 11;
    pub const PGV_PGA: usize = 12;
    pub const SPECTRAL_SHAPE: usize = 13;
    pub const ARIAS: usize = 14;
    pub const D5_95: usize = 15;
}

/// One record's feature vector in the canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct GmfVector {
    pub values: [f64; N_FEATURES],
}

impl GmfVector {
    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Feature vector of the record scaled by `gamma`, computed analytically
    /// from each feature's scaling degree instead of re-running the spectra.
    pub fn scaled(&self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!(
                "scale factor must be positive and finite, got {gamma}"
            )));
        }
        let mut values = self.values;
        for (v, deg) in values.iter_mut().zip(SCALING_DEGREE) {
            *v *= gamma.powi(deg);
        }
        Ok(Self { values })
    }
}

/// Geometric mean; zero if any ordinate is non-positive (a degenerate record).
fn geo_mean(values: &[f64]) -> f64 {
    if values.iter().any(|v| !(*v > 0.0)) {
        return 0.0;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

/// Trapezoid over a non-uniform grid (the log-spaced period band).
fn trapz_grid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Time at which the cumulative curve crosses `level`, by linear
/// interpolation between samples.
fn crossing_time(cum: &[f64], dt: f64, level: f64) -> f64 {
    for (i, w) in cum.windows(2).enumerate() {
        if w[1] >= level {
            let frac = if w[1] > w[0] { (level - w[0]) / (w[1] - w[0]) } else { 0.0 };
            return (i as f64 + frac) * dt;
        }
    }
    (cum.len() - 1) as f64 * dt
}

/// Extract the full feature vector of a record given the structure's
/// fundamental period `t1`.
///
/// Peak velocity and displacement integrate the baseline-corrected record
/// (uncorrected drift would swamp them); every other feature reads the record
/// as given. Spectral features use 5% damping.
pub fn extract_features(series: &AccelTimeSeries, t1: f64) -> Result<GmfVector> {
    if !(t1 > 0.0) {
        return Err(Error::invalid(format!("fundamental period must be positive, got {t1}")));
    }
    let accel = series.accel();
    let dt = series.dt();

    let pga = accel.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let corrected = series.baseline_correct();
    let vel = corrected.velocity();
    let pgv = vel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let disp = cumtrapz(&vel, dt);
    let pgd = disp.iter().fold(0.0f64, |m, d| m.max(d.abs()));

    let grid = period_grid();
    let band = response_spectrum(series, &grid, DEFAULT_DAMPING)?;
    let at_t1 = response_spectrum(series, &[t1, 2.0 * t1], DEFAULT_DAMPING)?;

    let sq: Vec<f64> = accel.iter().map(|a| a * a).collect();
    let arias_cum: Vec<f64> = cumtrapz(&sq, dt)
        .iter()
        .map(|e| std::f64::consts::PI / (2.0 * GRAVITY) * e)
        .collect();
    let arias = *arias_cum.last().unwrap();
    let d5_95 = if arias > 0.0 {
        crossing_time(&arias_cum, dt, 0.95 * arias) - crossing_time(&arias_cum, dt, 0.05 * arias)
    } else {
        0.0
    };

    let mut values = [0.0; N_FEATURES];
    values[idx::PGA] = pga;
    values[idx::PGV] = pgv;
    values[idx::PGD] = pgd;
    values[idx::SA_T1] = at_t1.sa[0];
    values[idx::SV_T1] = at_t1.sv[0];
    values[idx::SD_T1] = at_t1.sd[0];
    values[idx::SA_GEO] = geo_mean(&band.sa);
    values[idx::SV_GEO] = geo_mean(&band.sv);
    values[idx::SD_GEO] = geo_mean(&band.sd);
    values[idx::SA_EFF] = trapz_grid(&grid, &band.sa);
    values[idx::SV_EFF] = trapz_grid(&grid, &band.sv);
    values[idx::SD_EFF] = trapz_grid(&grid, &band.sd);
    values[idx::PGV_PGA] = if pga > 0.0 { pgv / pga } else { 0.0 };
    values[idx::SPECTRAL_SHAPE] = (at_t1.sa[0] * at_t1.sa[1]).sqrt();
    values[idx::ARIAS] = arias;
    values[idx::D5_95] = d5_95;

    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite feature `{}` for record {}",
            FEATURE_NAMES[bad],
            series.id()
        )));
    }
    Ok(GmfVector { values })
}

// ── Batch CSV interface ─────────────────────────────────────────────────────

/// Feature table header: `record_id` then the canonical feature columns.
pub fn csv_header() -> String {
    let mut h = String::from("record_id");
    for name in FEATURE_NAMES {
        h.push(',');
        h.push_str(name);
    }
    h
}

/// Serialize `(record id, features)` rows to the feature-table CSV.
pub fn to_csv_string(rows: &[(String, GmfVector)]) -> String {
    let mut out = csv_header();
    out.push('\n');
    for (id, gmf) in rows {
        let _ = write!(out, "{id}");
        for v in gmf.values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Parse the feature-table CSV produced by [`to_csv_string`].
pub fn from_csv_str(text: &str, path: &str) -> Result<Vec<(String, GmfVector)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == csv_header() => {}
        Some((i, h)) => {
            return Err(Error::Parse {
                path: path.into(),
                line: i + 1,
                detail: format!("unexpected feature table header `{}`", h.trim()),
            })
        }
        None => {
            return Err(Error::Parse {
                path: path.into(),
                line: 0,
                detail: "empty feature table".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != N_FEATURES + 1 {
            return Err(Error::Parse {
                path: path.into(),
                line: i + 1,
                detail: format!("expected {} columns, got {}", N_FEATURES + 1, cells.len()),
            });
        }
        let mut values = [0.0; N_FEATURES];
        for (j, cell) in cells[1..].iter().enumerate() {
            values[j] = cell.trim().parse().map_err(|e| Error::Parse {
                path: path.into(),
                line: i + 1,
                detail: format!("bad value in column {}: {e}", FEATURE_NAMES[j]),
            })?;
        }
        rows.push((cells[0].to_string(), GmfVector { values }));
    }
    Ok(rows)
}

/// Extract features for a batch of records in parallel; row order follows
/// the input order regardless of scheduling.
pub fn extract_batch(records: &[AccelTimeSeries], t1: f64) -> Result<Vec<(String, GmfVector)>> {
    crate::par::map_indexed(records, |_, rec| {
        extract_features(rec, t1).map(|g| (rec.id().to_string(), g))
    })
    .into_iter()
    .collect()
}

/// Write the batch feature table to a CSV file.
pub fn write_csv(rows: &[(String, GmfVector)], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_csv_string(rows))?;
    Ok(())
}

/// Read the batch feature table from a CSV file.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<(String, GmfVector)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    from_csv_str(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn boxcar(amp: f64, duration: f64, dt: f64) -> AccelTimeSeries {
        let n = (duration / dt).round() as usize + 1;
        AccelTimeSeries::new("box", dt, vec![amp; n]).unwrap()
    }

    fn wavy_record() -> AccelTimeSeries {
        let dt = 0.01;
        let accel: Vec<f64> = (0..1500)
            .map(|i| {
                let t = i as f64 * dt;
                1.4 * (2.0 * std::f64::consts::PI * 0.9 * t).sin()
                    * (-0.25 * (t - 6.0).powi(2) / 8.0).exp()
                    + 0.5 * (2.0 * std::f64::consts::PI * 2.7 * t).cos()
                        * (-0.25 * (t - 7.0).powi(2) / 10.0).exp()
            })
            .collect();
        AccelTimeSeries::new("wavy", dt, accel).unwrap()
    }

    #[test]
    fn arias_boxcar_closed_form() {
        // unit boxcar held exactly 1 s: energy integral π/(2·9.81)
        let ts = boxcar(1.0, 1.0, 0.001);
        let g = extract_features(&ts, 0.9).unwrap();
        assert_relative_eq!(g.get(idx::ARIAS), 0.16013, epsilon = 1e-5);
        assert_relative_eq!(
            g.get(idx::ARIAS),
            std::f64::consts::PI / (2.0 * GRAVITY),
            epsilon = 1e-9
        );
    }

    #[test]
    fn boxcar_d5_95_closed_form() {
        // cumulative energy of the boxcar is linear in t, so the 5%→95%
        // bracket spans 90% of the duration
        let ts = boxcar(1.0, 1.0, 0.001);
        let g = extract_features(&ts, 0.9).unwrap();
        assert_relative_eq!(g.get(idx::D5_95), 0.90, epsilon = 1e-9);
    }

    #[test]
    fn pgv_pgd_use_corrected_integration() {
        // the boxcar's exact correction is the zero record, so its corrected
        // velocity/displacement peaks vanish even though PGA stays 1
        let ts = boxcar(1.0, 1.0, 0.001);
        let g = extract_features(&ts, 0.9).unwrap();
        assert_relative_eq!(g.get(idx::PGA), 1.0, epsilon = 1e-12);
        assert!(g.get(idx::PGV) < 1e-9);
        assert!(g.get(idx::PGD) < 1e-9);
    }

    #[test]
    fn homogeneity_identities() {
        // compare analytic scaling of features against features of the scaled
        // record, for a non-power-of-two γ
        let ts = wavy_record();
        let gamma = 2.531;
        let base = extract_features(&ts, 0.9).unwrap();
        let scaled_record = extract_features(&ts.scale(gamma).unwrap(), 0.9).unwrap();
        let scaled_analytic = base.scaled(gamma).unwrap();
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            let (a, b) = (scaled_analytic.get(i), scaled_record.get(i));
            let rel = (a - b).abs() / b.abs().max(1e-300);
            assert!(rel < 1e-9, "feature {name} mismatch: {a} vs {b}");
        }
        // degree-0 features unchanged, degree-2 feature quadruples under γ=2
        let doubled = base.scaled(2.0).unwrap();
        assert_eq!(doubled.get(idx::PGV_PGA), base.get(idx::PGV_PGA));
        assert_eq!(doubled.get(idx::D5_95), base.get(idx::D5_95));
        assert_relative_eq!(doubled.get(idx::ARIAS), 4.0 * base.get(idx::ARIAS), epsilon = 1e-12);
        assert_relative_eq!(doubled.get(idx::PGA), 2.0 * base.get(idx::PGA), epsilon = 1e-12);
    }

    #[test]
    fn spectral_shape_is_geometric_mean_of_two_ordinates() {
        let ts = wavy_record();
        let t1 = 0.8;
        let g = extract_features(&ts, t1).unwrap();
        let spec = response_spectrum(&ts, &[t1, 2.0 * t1], DEFAULT_DAMPING).unwrap();
        assert_relative_eq!(
            g.get(idx::SPECTRAL_SHAPE),
            (spec.sa[0] * spec.sa[1]).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_record_all_zero_features() {
        let ts = AccelTimeSeries::new("z", 0.01, vec![0.0; 300]).unwrap();
        let g = extract_features(&ts, 0.9).unwrap();
        assert!(g.values.iter().all(|v| *v == 0.0), "{:?}", g.values);
    }

    #[test]
    fn band_grid_refinement_stability() {
        // doubling the band grid density moves the geometric/integral
        // features by < 1% on broadband (noise-like) records
        let mut rng = crate::stats::stream_rng(42, "grid-refine", 0);
        let accel: Vec<f64> = (0..1500)
            .map(|i| {
                let t = i as f64 * 0.01;
                let window = (-0.5 * ((t - 7.0) / 4.0).powi(2)).exp();
                window * crate::stats::sample_std_normal(&mut rng)
            })
            .collect();
        let ts = AccelTimeSeries::new("noise", 0.01, accel).unwrap();
        let coarse_grid = period_grid();
        let fine_grid = crate::spectrum::log_spaced(0.1, 2.5, 97);
        let coarse = response_spectrum(&ts, &coarse_grid, DEFAULT_DAMPING).unwrap();
        let fine = response_spectrum(&ts, &fine_grid, DEFAULT_DAMPING).unwrap();
        let sa_geo_c = geo_mean(&coarse.sa);
        let sa_geo_f = geo_mean(&fine.sa);
        assert_relative_eq!(sa_geo_c, sa_geo_f, max_relative = 0.01);
        let sa_eff_c = trapz_grid(&coarse_grid, &coarse.sa);
        let sa_eff_f = trapz_grid(&fine_grid, &fine.sa);
        assert_relative_eq!(sa_eff_c, sa_eff_f, max_relative = 0.01);
    }

    #[test]
    fn csv_round_trip() {
        let ts = wavy_record();
        let rows = extract_batch(&[ts.clone(), ts.scale(1.5).unwrap()], 0.9).unwrap();
        let text = to_csv_string(&rows);
        let back = from_csv_str(&text, "mem").unwrap();
        assert_eq!(rows.len(), back.len());
        for ((id_a, a), (id_b, b)) in rows.iter().zip(&back) {
            assert_eq!(id_a, id_b);
            assert_eq!(a, b);
        }
        assert!(from_csv_str("bogus header\n", "mem").is_err());
    }

    #[test]
    fn feature_name_table_consistent() {
        assert_eq!(FEATURE_NAMES.len(), N_FEATURES);
        assert_eq!(SCALING_DEGREE.len(), N_FEATURES);
        assert_eq!(FEATURE_NAMES[idx::SPECTRAL_SHAPE], "spectral_shape");
        assert_eq!(SCALING_DEGREE[idx::ARIAS], 2);
        assert_eq!(SCALING_DEGREE[idx::PGV_PGA], 0);
        assert_eq!(SCALING_DEGREE[idx::D5_95], 0);
    }
}
