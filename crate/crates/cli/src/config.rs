//! Pipeline configuration: one TOML file drives every stage.
//!
//! Sections mirror the stages; every field has a desk-scale default so a
//! minimal file is valid. Paths inside the file resolve relative to the
//! file's own directory, and referenced files are checked at load time.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use seismo_core::building::ShearBuildingConfig;
use seismo_core::spectrum::MAX_SCALE;
use seismo_core::synth::SynthModelParams;

use crate::CliError;

// ── Sections ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmSynthSection {
    /// Synthetic records generated before spectrum matching.
    pub pool_count: usize,
    /// Records kept after ranking against the target spectrum.
    pub select_count: usize,
    pub dt: f64,
    /// Median output amplitude scale (m/s²).
    pub intensity: f64,
    /// Log-space amplitude spread across records (0 = homogeneous).
    pub intensity_sigma_ln: f64,
    /// Per-record filter corner frequency, drawn log-uniformly (Hz).
    /// Spreading the corner varies the spectral shape across the suite,
    /// like mixing seismic scenarios when assembling a real record set.
    pub corner_hz_range: [f64; 2],
    /// Per-record duration, drawn uniformly (s).
    pub duration_range_s: [f64; 2],
    /// Per-record amplitude-envelope shape exponent, drawn uniformly.
    pub env_shape_range: [f64; 2],
    /// Target-spectrum CSV (`period_s,median_sa,log_std`); the built-in
    /// desk spectrum is used when omitted.
    pub target_spectrum: Option<PathBuf>,
}

impl Default for GmSynthSection {
    fn default() -> Self {
        let p = SynthModelParams::default();
        Self {
            pool_count: 400,
            select_count: 300,
            dt: p.dt,
            intensity: p.intensity,
            intensity_sigma_ln: 0.5,
            corner_hz_range: [0.8, 5.0],
            duration_range_s: [12.0, 30.0],
            env_shape_range: [1.5, 3.0],
            target_spectrum: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildingSection {
    pub stories: usize,
    pub story_stiffness_kn_m: Vec<f64>,
    pub stiffness_log_std: f64,
    pub mass_mean_kg: f64,
    pub mass_cov: f64,
    pub damping_mean: f64,
    pub damping_cov: f64,
    pub yield_disp_m: f64,
    pub hardening_ratio: f64,
    pub idr_threshold: f64,
    pub story_height_m: f64,
}

impl Default for BuildingSection {
    fn default() -> Self {
        let c = ShearBuildingConfig::three_story_default();
        Self {
            stories: c.n_stories,
            story_stiffness_kn_m: c.story_stiffness_kn_m,
            stiffness_log_std: c.stiffness_log_std,
            mass_mean_kg: c.mass_mean_kg,
            mass_cov: c.mass_cov,
            damping_mean: c.damping_mean,
            damping_cov: c.damping_cov,
            yield_disp_m: c.yield_disp_m,
            hardening_ratio: c.hardening_ratio,
            idr_threshold: c.idr_threshold,
            story_height_m: c.story_height_m,
        }
    }
}

impl BuildingSection {
    pub fn to_config(&self) -> ShearBuildingConfig {
        ShearBuildingConfig {
            n_stories: self.stories,
            story_stiffness_kn_m: self.story_stiffness_kn_m.clone(),
            stiffness_log_std: self.stiffness_log_std,
            mass_mean_kg: self.mass_mean_kg,
            mass_cov: self.mass_cov,
            damping_mean: self.damping_mean,
            damping_cov: self.damping_cov,
            yield_disp_m: self.yield_disp_m,
            hardening_ratio: self.hardening_ratio,
            idr_threshold: self.idr_threshold,
            story_height_m: self.story_height_m,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct McsSection {
    /// Simulation count; defaults to one per selected motion. Zero writes
    /// a header-only table.
    pub simulations: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSection {
    /// Subset sizes scored during the search.
    pub sizes: Vec<usize>,
    /// Evaluated subsets per size when the search is not exhaustive.
    pub budget_per_size: usize,
    /// Training-set sizes each search repeats at.
    pub train_counts: Vec<usize>,
    /// Critical-set size (most frequently chosen features).
    pub top_k: usize,
    /// Accuracy-gain plateau threshold on held-out R².
    pub delta_threshold: f64,
    pub fit_starts: usize,
    pub fit_iters: usize,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self {
            sizes: vec![1, 2, 3, 4],
            budget_per_size: 60,
            train_counts: vec![40],
            top_k: 8,
            delta_threshold: 0.001,
            fit_starts: 2,
            fit_iters: 100,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModeDensitySection {
    /// Radius of the standard-normal-space ball.
    pub radius: f64,
    /// Ball samples classified by the trained surrogates.
    pub ball_count: usize,
    /// Mixture components per failure mode.
    pub components: usize,
    /// Candidate-pool size for active learning.
    pub pool_count: usize,
    /// Labels taken up front.
    pub initial: usize,
    /// Adaptive label budget beyond the initial block.
    pub budget: usize,
    /// Stop once the minimum acquisition value exceeds this.
    pub alpha_threshold: f64,
    /// Fresh labeled points for held-out surrogate quality.
    pub holdout: usize,
    /// Minimum ball-sample support per retained mode; a proportional
    /// default with an n+1 floor is used when omitted.
    pub min_support: Option<usize>,
    pub initial_fit_starts: usize,
    pub initial_fit_iters: usize,
    pub refresh_fit_starts: usize,
    pub refresh_fit_iters: usize,
}

impl Default for ModeDensitySection {
    fn default() -> Self {
        Self {
            radius: 5.0,
            ball_count: 100_000,
            components: 3,
            pool_count: 1500,
            initial: 60,
            budget: 150,
            alpha_threshold: 2.0,
            holdout: 40,
            min_support: None,
            initial_fit_starts: 6,
            initial_fit_iters: 300,
            refresh_fit_starts: 2,
            refresh_fit_iters: 150,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionSection {
    /// Target row count per identified failure mode.
    pub per_mode: usize,
    /// Safe simulation rows appended to the balanced dataset.
    pub safe_rows: usize,
    /// Upper bound on the motion scaling factor. The scale optimizer's
    /// search window is compiled in; this field must match it.
    pub gamma_cap: f64,
}

impl Default for ReconstructionSection {
    fn default() -> Self {
        Self { per_mode: 40, safe_rows: 150, gamma_cap: MAX_SCALE }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DnnSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Hidden widths; defaults depend on the story count.
    pub balanced_hidden: Option<Vec<usize>>,
    pub imbalanced_hidden: Option<Vec<usize>>,
    pub seed_balanced: u64,
    pub seed_imbalanced: u64,
    pub split_seed: u64,
}

impl Default for DnnSection {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            balanced_hidden: None,
            imbalanced_hidden: None,
            seed_balanced: 101,
            seed_imbalanced: 202,
            split_seed: 303,
        }
    }
}

// ── Top level ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Artifact directory; created on demand.
    pub out_dir: PathBuf,
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Worker-thread cap (0 = library default).
    pub jobs: usize,
    pub gm_synth: GmSynthSection,
    pub building: BuildingSection,
    pub mcs: McsSection,
    pub selection: SelectionSection,
    pub mode_density: ModeDensitySection,
    pub reconstruction: ReconstructionSection,
    pub dnn: DnnSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            seed: 42,
            jobs: 0,
            gm_synth: GmSynthSection::default(),
            building: BuildingSection::default(),
            mcs: McsSection::default(),
            selection: SelectionSection::default(),
            mode_density: ModeDensitySection::default(),
            reconstruction: ReconstructionSection::default(),
            dnn: DnnSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Parse and validate a TOML file. Relative paths inside the file
    /// (including `out_dir`) resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config `{}`: {e}", path.display()))
        })?;
        let mut config: PipelineConfig = toml::from_str(&text).map_err(|e| {
            // The parser message carries the line and column.
            CliError::Config(format!("in `{}`: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.out_dir = resolve(base, &config.out_dir);
        if let Some(ts) = &config.gm_synth.target_spectrum {
            let resolved = resolve(base, ts);
            if !resolved.is_file() {
                return Err(CliError::Config(format!(
                    "target spectrum `{}` does not exist",
                    resolved.display()
                )));
            }
            config.gm_synth.target_spectrum = Some(resolved);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(msg.to_string()));
        if self.gm_synth.pool_count == 0 || self.gm_synth.select_count == 0 {
            return bad("gm_synth counts must be positive");
        }
        if self.gm_synth.select_count > self.gm_synth.pool_count {
            return bad("gm_synth.select_count cannot exceed pool_count");
        }
        for (name, [lo, hi]) in [
            ("corner_hz_range", self.gm_synth.corner_hz_range),
            ("duration_range_s", self.gm_synth.duration_range_s),
            ("env_shape_range", self.gm_synth.env_shape_range),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(CliError::Config(format!(
                    "gm_synth.{name} must be a positive, ordered pair"
                )));
            }
        }
        if self.gm_synth.intensity_sigma_ln < 0.0 {
            return bad("gm_synth.intensity_sigma_ln cannot be negative");
        }
        self.building
            .to_config()
            .validate()
            .map_err(|e| CliError::Config(format!("building section: {e}")))?;
        if self.selection.sizes.is_empty()
            || self.selection.train_counts.is_empty()
            || self.selection.top_k == 0
            || self.selection.budget_per_size == 0
        {
            return bad("selection section needs sizes, train_counts, top_k, and a budget");
        }
        if self.mode_density.radius <= 0.0
            || self.mode_density.ball_count == 0
            || self.mode_density.components == 0
            || self.mode_density.pool_count <= self.mode_density.initial
            || self.mode_density.initial < 2
        {
            return bad(
                "mode_density needs a positive radius, ball and component counts, \
                 and a candidate pool larger than the initial block",
            );
        }
        if self.reconstruction.per_mode == 0 {
            return bad("reconstruction.per_mode must be positive");
        }
        if (self.reconstruction.gamma_cap - MAX_SCALE).abs() > 1e-12 {
            return Err(CliError::Config(format!(
                "reconstruction.gamma_cap = {} is unsupported: the scale \
                 optimizer's search window is compiled for a cap of {MAX_SCALE}",
                self.reconstruction.gamma_cap
            )));
        }
        if self.dnn.epochs == 0 || self.dnn.batch_size == 0 || self.dnn.learning_rate <= 0.0 {
            return bad("dnn section needs positive epochs, batch size, and learning rate");
        }
        Ok(())
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_the_desk_defaults() {
        let config: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.gm_synth.select_count, 300);
        assert_eq!(config.building.stories, 3);
        assert_eq!(config.mode_density.ball_count, 100_000);
        config.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<PipelineConfig>("txid = 3\n").unwrap_err();
        assert!(err.to_string().contains("txid"));
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let err = toml::from_str::<PipelineConfig>("seed = 42\nbroken ===\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("line 2"), "missing line number: {text}");
    }

    #[test]
    fn gamma_cap_must_match_the_compiled_window() {
        let config: PipelineConfig =
            toml::from_str("[reconstruction]\ngamma_cap = 5.0\n").unwrap();
        let err = config.validate().unwrap_err();
        assert!(format!("{err}").contains("gamma_cap"));
    }

    #[test]
    fn select_count_cannot_exceed_pool() {
        let config: PipelineConfig =
            toml::from_str("[gm_synth]\npool_count = 10\nselect_count = 20\n").unwrap();
        assert!(config.validate().is_err());
    }
}
