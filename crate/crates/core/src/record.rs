//! Ground-acceleration time series: container, plain-text record IO,
//! amplitude scaling, and baseline correction.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::stats::{cumtrapz, trapz};

/// A uniformly sampled ground-acceleration history in m/s².
#[derive(Debug, Clone, PartialEq)]
pub struct AccelTimeSeries {
    id: String,
    dt: f64,
    accel: Vec<f64>,
}

impl AccelTimeSeries {
    /// Build a series, validating the invariants every consumer assumes:
    /// positive finite step, at least two samples, all samples finite.
    pub fn new(id: impl Into<String>, dt: f64, accel: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        if accel.len() < 2 {
            return Err(Error::invalid(format!(
                "a record needs at least two samples, got {}",
                accel.len()
            )));
        }
        if let Some(bad) = accel.iter().position(|a| !a.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite acceleration at sample {bad}"
            )));
        }
        Ok(Self { id: id.into(), dt, accel })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// The same samples under a new identifier.
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn accel(&self) -> &[f64] {
        &self.accel
    }

    pub fn len(&self) -> usize {
        self.accel.len()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor guarantees ≥ 2 samples
    }

    /// Total duration (n−1)·dt.
    pub fn duration(&self) -> f64 {
        (self.accel.len() - 1) as f64 * self.dt
    }

    /// Return a copy with every sample multiplied by `gamma`; id and dt kept.
    pub fn scale(&self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!(
                "scale factor must be positive and finite, got {gamma}"
            )));
        }
        Ok(Self {
            id: self.id.clone(),
            dt: self.dt,
            accel: self.accel.iter().map(|a| a * gamma).collect(),
        })
    }

    /// Velocity history by cumulative trapezoid, starting from rest.
    pub fn velocity(&self) -> Vec<f64> {
        cumtrapz(&self.accel, self.dt)
    }

    /// Displacement history by double cumulative trapezoid, starting from rest.
    pub fn displacement(&self) -> Vec<f64> {
        cumtrapz(&self.velocity(), self.dt)
    }

    /// Remove the linear-in-time acceleration component that drives the end
    /// velocity and end displacement away from zero.
    ///
    /// The correction subtracts `c0 + c1·t` with coefficients solved from the
    /// discrete 2×2 system built from the measured trapezoid responses of the
    /// constant and ramp basis functions, so the corrected record satisfies
    /// both residuals exactly under the same quadrature used to check them.
    /// Applying the correction twice is a no-op up to roundoff.
    pub fn baseline_correct(&self) -> Self {
        let n = self.accel.len();
        let ones = vec![1.0; n];
        let ramp: Vec<f64> = (0..n).map(|i| i as f64 * self.dt).collect();

        // residuals of the raw record
        let v_res = trapz(&self.accel, self.dt);
        let d_res = trapz(&cumtrapz(&self.accel, self.dt), self.dt);

        // basis responses under the identical quadrature
        let v1 = trapz(&ones, self.dt);
        let d1 = trapz(&cumtrapz(&ones, self.dt), self.dt);
        let vt = trapz(&ramp, self.dt);
        let dtr = trapz(&cumtrapz(&ramp, self.dt), self.dt);

        let det = v1 * dtr - vt * d1;
        let (c0, c1) = if det.abs() < 1e-300 {
            (0.0, 0.0)
        } else {
            (
                (v_res * dtr - vt * d_res) / det,
                (v1 * d_res - v_res * d1) / det,
            )
        };

        let accel = self
            .accel
            .iter()
            .zip(&ramp)
            .map(|(a, t)| a - c0 - c1 * t)
            .collect();
        Self { id: self.id.clone(), dt: self.dt, accel }
    }

    /// End-of-record velocity and displacement residuals (trapezoid rule).
    pub fn drift_residuals(&self) -> (f64, f64) {
        let v = trapz(&self.accel, self.dt);
        let d = trapz(&cumtrapz(&self.accel, self.dt), self.dt);
        (v, d)
    }

    /// Parse the plain-text record format: a `dt=<seconds>` header line, then
    /// one acceleration sample per line; blank lines and `#` comments skipped.
    /// An optional `# id=<name>` comment overrides `default_id`.
    pub fn from_record_str(text: &str, default_id: &str, path: &str) -> Result<Self> {
        let mut dt: Option<f64> = None;
        let mut id = default_id.to_string();
        let mut accel = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(name) = comment.trim().strip_prefix("id=") {
                    id = name.trim().to_string();
                }
                continue;
            }
            if dt.is_none() {
                let rest = line.strip_prefix("dt=").ok_or_else(|| Error::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    detail: "expected `dt=<seconds>` header".into(),
                })?;
                let value: f64 = rest.trim().parse().map_err(|e| Error::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    detail: format!("bad time step: {e}"),
                })?;
                dt = Some(value);
            } else {
                let value: f64 = line.parse().map_err(|e| Error::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    detail: format!("bad sample: {e}"),
                })?;
                accel.push(value);
            }
        }
        let dt = dt.ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line: 0,
            detail: "missing `dt=<seconds>` header".into(),
        })?;
        Self::new(id, dt, accel)
    }

    /// Read a record file; the file stem is the fallback record id.
    pub fn read_record(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "record".to_string());
        Self::from_record_str(&text, &stem, &path.display().to_string())
    }

    /// Serialize to the plain-text record format.
    pub fn to_record_string(&self) -> String {
        let mut out = String::with_capacity(self.accel.len() * 16 + 32);
        let _ = writeln!(out, "# id={}", self.id);
        let _ = writeln!(out, "dt={}", self.dt);
        for a in &self.accel {
            let _ = writeln!(out, "{a}");
        }
        out
    }

    /// Write a record file (see [`Self::to_record_string`]).
    pub fn write_record(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_record_string())?;
        Ok(())
    }
}
