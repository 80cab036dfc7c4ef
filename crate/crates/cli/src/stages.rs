//! Pipeline stages behind the subcommands.
//!
//! Stages communicate only through files in the output directory (text
//! CSV/JSON throughout), check their upstream artifacts before running,
//! and append content hashes to the manifest afterwards. Each stage
//! derives its random streams from the master seed, so reruns are
//! byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use seismo_core::building::{self, McsRow, ShearBuildingConfig};
use seismo_core::density::{self, ActiveLearningConfig, ActiveLearningResult};
use seismo_core::error::{Error as CoreError, Result as CoreResult};
use seismo_core::feature_select::{
    SelectionDataset, SelectionReport, SelectionRunConfig, SubsetSearchConfig,
};
use seismo_core::gmf::{GmfVector, FEATURE_NAMES, N_FEATURES};
use seismo_core::gp::{FitOptions, GpModel};
use seismo_core::mlp::{self, LabeledSet, MlpSpec, TrainedClassifier};
use seismo_core::nataf::{fit_copula_correlation, JointTransform, Marginal};
use seismo_core::reconstruct::{
    self, AssembleConfig, BalancedDataset, FeatureStandardizer, RecordPool,
};
use seismo_core::record::AccelTimeSeries;
use rand::seq::SliceRandom;

use seismo_core::spectrum::TargetSpectrum;
use seismo_core::stats::{derive_seed, sample_std_normal, stream_rng};
use seismo_core::synth::{generate_synthetic, SynthModelParams};

use crate::artifacts::{self as art, Workspace};
use crate::config::PipelineConfig;
use crate::CliError;

// ── Shared loading helpers ──────────────────────────────────────────────

fn read_selected(path: &Path) -> CoreResult<Vec<(String, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue; // header
        }
        let mut parts = line.split(',');
        let id = parts
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| parse_err(&display, i, "missing record id"))?;
        let scale: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(&display, i, "bad scale"))?;
        rows.push((id.to_string(), scale));
    }
    if rows.is_empty() {
        return Err(CoreError::invalid(format!("`{display}` lists no records")));
    }
    Ok(rows)
}

fn parse_err(path: &str, line: usize, detail: &str) -> CoreError {
    CoreError::Parse { path: path.to_string(), line: line + 1, detail: detail.to_string() }
}

fn load_motions(ws: &Workspace, selected: &[(String, f64)]) -> Result<Vec<AccelTimeSeries>, CliError> {
    let dir = ws.require(art::MOTIONS_DIR, "gen-gm")?;
    selected
        .iter()
        .map(|(id, _)| {
            let path = dir.join(format!("{id}.acc"));
            if !path.is_file() {
                return Err(CliError::MissingArtifact {
                    artifact: path.display().to_string(),
                    command: "gen-gm".to_string(),
                });
            }
            Ok(AccelTimeSeries::read_record(&path)?)
        })
        .collect()
}

/// Pool, selection order, and per-record scales shared by the later
/// stages.
struct LoadedMotions {
    selected: Vec<(String, f64)>,
    pool: RecordPool,
}

fn load_pool(ws: &Workspace, config: &PipelineConfig) -> Result<LoadedMotions, CliError> {
    let selected = read_selected(&ws.require(art::SELECTED, "gen-gm")?)?;
    let records = load_motions(ws, &selected)?;
    let t1 = config.building.to_config().fundamental_period()?;
    let pool = RecordPool::build(records, t1)?;
    Ok(LoadedMotions { selected, pool })
}

fn read_critical_set(ws: &Workspace) -> Result<Vec<usize>, CliError> {
    let path = ws.require(art::SELECTION_JSON, "select-features")?;
    let report = SelectionReport::from_json(&std::fs::read_to_string(&path).map_err(CoreError::from)?)?;
    if report.critical_set.is_empty() {
        return Err(CliError::Core(CoreError::invalid(
            "selection report has an empty critical set",
        )));
    }
    Ok(report.critical_set)
}

/// Scaled feature vectors for simulation rows, via the record pool.
fn scaled_features(rows: &[McsRow], pool: &RecordPool) -> CoreResult<Vec<GmfVector>> {
    rows.iter()
        .map(|row| {
            let idx = pool.index_of(&row.record_id).ok_or_else(|| {
                CoreError::invalid(format!(
                    "simulation row references record `{}` missing from the pool",
                    row.record_id
                ))
            })?;
            pool.unit_features[idx].scaled(row.scale)
        })
        .collect()
}

fn gp_models_to_json(models: &[GpModel]) -> CoreResult<String> {
    let values = models
        .iter()
        .map(|m| Ok(serde_json::from_str(&m.to_json()?)?))
        .collect::<CoreResult<Vec<serde_json::Value>>>()?;
    Ok(serde_json::to_string_pretty(&values)?)
}

fn gp_models_from_json(text: &str) -> CoreResult<Vec<GpModel>> {
    let values: Vec<serde_json::Value> = serde_json::from_str(text)?;
    values
        .iter()
        .map(|v| GpModel::from_json(&serde_json::to_string(v)?))
        .collect()
}

// ── Stage: gen-gm ───────────────────────────────────────────────────────

fn uniform_in<R: rand::Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * rng.gen::<f64>()
}

fn log_uniform_in<R: rand::Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    (range[0].ln() + (range[1].ln() - range[0].ln()) * rng.gen::<f64>()).exp()
}

/// Generate the record pool as a mixture of scenarios: each record draws
/// its own filter corner, duration, envelope shape, and amplitude from
/// the configured ranges, so the suite spans spectral shapes the way a
/// multi-scenario selection from a real database would.
fn scenario_pool(config: &PipelineConfig) -> Result<Vec<AccelTimeSeries>, CliError> {
    let gm = &config.gm_synth;
    let records = seismo_core::par::map_range(gm.pool_count, |i| {
        let mut rng = stream_rng(config.seed, "gm-scenario", i as u64);
        let duration = uniform_in(&mut rng, gm.duration_range_s);
        let params = SynthModelParams {
            corner_hz: log_uniform_in(&mut rng, gm.corner_hz_range),
            env_shape: uniform_in(&mut rng, gm.env_shape_range),
            env_peak_s: duration * uniform_in(&mut rng, [0.2, 0.4]),
            duration_s: duration,
            dt: gm.dt,
            intensity: gm.intensity
                * (gm.intensity_sigma_ln * sample_std_normal(&mut rng)).exp(),
            ..SynthModelParams::default()
        };
        let record =
            generate_synthetic(&params, 1, derive_seed(config.seed, "gm-record", i as u64))?
                .pop()
                .expect("one record requested");
        Ok(record.with_id(format!("synth-{i:04}")))
    });
    records
        .into_iter()
        .collect::<CoreResult<Vec<_>>>()
        .map_err(CliError::from)
}

fn load_target(config: &PipelineConfig) -> CoreResult<TargetSpectrum> {
    match &config.gm_synth.target_spectrum {
        Some(path) => TargetSpectrum::read_csv(path),
        None => Ok(TargetSpectrum::desk_default()),
    }
}

pub fn gen_gm(config: &PipelineConfig, ws: &Workspace) -> Result<(), CliError> {
    let pool = scenario_pool(config)?;
    let target = load_target(config)?;
    let ranked = seismo_core::spectrum::select_spectrum_compatible(
        &pool,
        &target,
        config.gm_synth.select_count,
    )?;

    let dir = ws.path(art::MOTIONS_DIR);
    std::fs::create_dir_all(&dir).map_err(CoreError::from)?;
    let mut selected_csv = String::from("record_id,scale\n");
    for &(idx, scale) in &ranked {
        let record = &pool[idx];
        record.write_record(dir.join(format!("{}.acc", record.id())))?;
        selected_csv.push_str(&format!("{},{}\n", record.id(), scale));
    }
    std::fs::write(ws.path(art::SELECTED), selected_csv).map_err(CoreError::from)?;

    for &(idx, _) in &ranked {
        ws.record("gen-gm", &format!("{}/{}.acc", art::MOTIONS_DIR, pool[idx].id()))?;
    }
    ws.record("gen-gm", art::SELECTED)?;
    println!(
        "gen-gm: synthesized {} records, selected {} spectrum-compatible",
        config.gm_synth.pool_count,
        ranked.len()
    );
    Ok(())
}

// ── Stage: extract-gmf ──────────────────────────────────────────────────

pub fn extract_gmf(config: &PipelineConfig, ws: &Workspace) -> Result<(), CliError> {
    let loaded = load_pool(ws, config)?;
    let mut csv = String::from("record_id");
    for name in FEATURE_NAMES {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for (i, (id, _)) in loaded.selected.iter().enumerate() {
        csv.push_str(id);
        for v in loaded.pool.unit_features[i].values {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    std::fs::write(ws.path(art::GMF), csv).map_err(CoreError::from)?;
    ws.record("extract-gmf", art::GMF)?;
    println!(
        "extract-gmf: {} records x {} features at T1 = {:.4} s",
        loaded.selected.len(),
        N_FEATURES,
        loaded.pool.t1
    );
    Ok(())
}

// ── Stage: mcs ──────────────────────────────────────────────────────────

pub fn mcs(config: &PipelineConfig, ws: &Workspace) -> Result<(), CliError> {
    let bcfg = config.building.to_config();
    let selected = read_selected(&ws.require(art::SELECTED, "gen-gm")?)?;
    let count = config.mcs.simulations.unwrap_or(selected.len()).min(selected.len());
    let rows = if count == 0 {
        Vec::new()
    } else {
        // Each simulation re-scales its motion by a lognormal hazard draw
        // with the target spectrum's dispersion at the fundamental period,
        // so the suite spans the target's quantile band the way a
        // hazard-consistent selection would, instead of hugging the median.
        let dispersion = load_target(config)?.log_std_at(bcfg.fundamental_period()?)?;
        let records = load_motions(ws, &selected[..count])?;
        let motions: Vec<(AccelTimeSeries, f64)> = records
            .into_iter()
            .enumerate()
            .map(|(i, record)| {
                let z = sample_std_normal(&mut stream_rng(config.seed, "mcs-intensity", i as u64));
                (record, selected[i].1 * (dispersion * z).exp())
            })
            .collect();
        building::run_mcs(&bcfg, &motions, derive_seed(config.seed, "mcs", 0))?
    };
    building::write_mcs_csv(&rows, bcfg.n_stories, &ws.path(art::MCS))?;
    ws.record("mcs", art::MCS)?;

    let safe = rows.iter().filter(|r| r.mode.is_safe()).count();
    println!(
        "mcs: {} simulations, {} safe / {} failed",
        rows.len(),
        safe,
        rows.len() - safe
    );
    Ok(())
}

// ── Stage: select-features ──────────────────────────────────────────────

pub fn select_features(config: &PipelineConfig, ws: &Workspace) -> Result<(), CliError> {
    let mcs_rows = building::read_mcs_csv(&ws.require(art::MCS, "mcs")?)?;
    let loaded = load_pool(ws, config)?;
    let features = scaled_features(&mcs_rows, &loaded.pool)?;

    // Drift is near-lognormal across the suite, so the regressions that
    // rank feature subsets run on log-drift; this stabilizes variance and
    // keeps subset R² comparable across stories.
    let dataset = SelectionDataset {
        features: features.iter().map(|f| f.values.to_vec()).collect(),
        extra: mcs_rows
            .iter()
            .map(|r| vec![r.params.xi, r.params.m, r.params.u_k])
            .collect(),
        targets: mcs_rows
            .iter()
            .map(|r| r.peak_idr.iter().map(|idr| idr.max(1e-12).ln()).collect())
            .collect(),
    };
    let n_stories = config.building.stories;
    let run = SelectionRunConfig {
        pool: (0..N_FEATURES).collect(),
        target_indices: (0..n_stories).collect(),
        train_counts: config.selection.train_counts.clone(),
        search: SubsetSearchConfig {
            sizes: config.selection.sizes.clone(),
            budget_per_size: config.selection.budget_per_size,
            seed: 0,
        },
        fit: FitOptions {
            n_starts: config.selection.fit_starts,
            max_iters: config.selection.fit_iters,
            seed: 0,
            warm_start: None,
        },
        delta_threshold: config.selection.delta_threshold,
        top_k: config.selection.top_k,
        seed: derive_seed(config.seed, "selection", 0),
    };
    let report = seismo_core::feature_select::run_selection(&dataset, &run)?;

    std::fs::write(ws.path(art::SELECTION_JSON), report.to_json()?).map_err(CoreError::from)?;
    std::fs::write(ws.path(art::SELECTION_SCORES), report.scores_csv())
        .map_err(CoreError::from)?;
    ws.record("select-features", art::SELECTION_JSON)?;
    ws.record("select-features", art::SELECTION_SCORES)?;

    let names: Vec<&str> =
        report.critical_set.iter().map(|&i| FEATURE_NAMES[i]).collect();
    println!("select-features: critical set [{}]", names.join(", "));
    Ok(())
}

// ── Stage: identify-modes ───────────────────────────────────────────────

/// Physical-space design rows for the joint model: natural logs of each
/// scaled motion's critical features, then [xi, m, u_k].
fn design_rows(
    rows: &[McsRow],
    features: &[GmfVector],
    critical: &[usize],
) -> CoreResult<Vec<Vec<f64>>> {
    let mut data_rows = Vec::with_capacity(rows.len());
    for (row, f) in rows.iter().zip(features) {
        let mut data = Vec::with_capacity(critical.len() + 3);
        for &j in critical {
            let v = f.get(j);
            if !v.is_finite() || v <= 0.0 {
                return Err(CoreError::invalid(format!(
                    "feature `{}` must be positive to fit a log marginal",
                    FEATURE_NAMES[j]
                )));
            }
            data.push(v.ln());
        }
        data.extend_from_slice(&[row.params.xi, row.params.m, row.params.u_k]);
        data_rows.push(data);
    }
    Ok(data_rows)
}

/// Fit the joint probabilistic model of (critical features, structural
/// parameters) observed in the simulations: empirical log-feature
/// marginals, parametric structural marginals, Gaussian copula.
fn fit_joint_transform(
    data_rows: &[Vec<f64>],
    k: usize,
    bcfg: &ShearBuildingConfig,
) -> CoreResult<JointTransform> {
    let mut marginals = Vec::with_capacity(k + 3);
    for col in 0..k {
        marginals.push(Marginal::empirical(
            data_rows.iter().map(|r| r[col]).collect(),
        )?);
    }
    marginals.push(Marginal::Lognormal { mean: bcfg.damping_mean, cov: bcfg.damping_cov });
    marginals.push(Marginal::Lognormal { mean: bcfg.mass_mean_kg, cov: bcfg.mass_cov });
    marginals.push(Marginal::StandardNormal);
    let correlation = fit_copula_correlation(data_rows)?;
    JointTransform::new(marginals, correlation)
}

pub fn identify_modes(config: &PipelineConfig, ws: &Workspace) -> Result<(), CliError> {
    let bcfg = config.building.to_config();
    let md = &config.mode_density;
    let mcs_rows = building::read_mcs_csv(&ws.require(art::MCS, "mcs")?)?;
    let critical = read_critical_set(ws)?;
    let loaded = load_pool(ws, config)?;
    let features = scaled_features(&mcs_rows, &loaded.pool)?;
    let k = critical.len();

    let data_rows = design_rows(&mcs_rows, &features, &critical)?;
    let transform = fit_joint_transform(&data_rows, k, &bcfg)?;
    let standardizer = FeatureStandardizer::fit(&features, &critical)?;
    transform.write_json(&ws.path(art::JOINT_TRANSFORM))?;
    standardizer.to_json().and_then(|json| {
        std::fs::write(ws.path(art::STANDARDIZER), json).map_err(CoreError::from)
    })?;

    // The active-learning candidate pool is the simulated design itself,
    // mapped to standard-normal space; labeling a point returns the
    // limit-state margins of that exact analyzed sample (the analysis is
    // deterministic, so the stored results are the labels). A reserved
    // shuffle slice never enters training and measures surrogate quality.
    let u_rows: Vec<Vec<f64>> = data_rows
        .iter()
        .map(|x| transform.to_standard_normal(x))
        .collect::<CoreResult<_>>()?;
    // The surrogates regress the equivalent log-margin ln(threshold/idr):
    // it has the same zero set and signs as the raw drift margin, but the
    // multiplicative record-to-record dispersion becomes additive, which
    // the stationary surrogate represents far better.
    let margins: Vec<Vec<f64>> = mcs_rows
        .iter()
        .map(|row| {
            row.peak_idr
                .iter()
                .map(|idr| (bcfg.idr_threshold / idr.max(1e-12)).ln())
                .collect()
        })
        .collect();
    let mut order: Vec<usize> = (0..u_rows.len()).collect();
    order.shuffle(&mut stream_rng(config.seed, "al-design", 0));
    if order.len() <= md.holdout + md.initial {
        return Err(CliError::Config(format!(
            "mode_density.holdout ({}) plus mode_density.initial ({}) must stay \
             below the simulation count ({})",
            md.holdout,
            md.initial,
            order.len()
        )));
    }
    let (holdout_rows, design_rest) = order.split_at(md.holdout);
    let pool_rows: Vec<usize> = design_rest.iter().copied().take(md.pool_count).collect();
    let al_pool: Vec<Vec<f64>> = pool_rows.iter().map(|&i| u_rows[i].clone()).collect();

    let al_config = ActiveLearningConfig {
        initial_count: md.initial,
        budget: md.budget,
        alpha_threshold: md.alpha_threshold,
        fit_seed: derive_seed(config.seed, "al-fit", 0),
        initial_fit: FitOptions {
            n_starts: md.initial_fit_starts,
            max_iters: md.initial_fit_iters,
            seed: 0,
            warm_start: None,
        },
        refresh_fit: FitOptions {
            n_starts: md.refresh_fit_starts,
            max_iters: md.refresh_fit_iters,
            seed: 0,
            warm_start: None,
        },
        ..ActiveLearningConfig::default()
    };
    let result: ActiveLearningResult =
        density::run_active_learning(&al_pool, bcfg.n_stories, &al_config, |i| {
            Ok(margins[pool_rows[i]].clone())
        })?;
    density::write_al_log(&result.log, &ws.path(art::AL_LOG))?;
    std::fs::write(ws.path(art::GP_MODELS), gp_models_to_json(&result.models)?)
        .map_err(CoreError::from)?;

    // Labeled design: source row, standard-normal coordinates, margins.
    let mut labels_csv = String::from("pool_index,design_row");
    for d in 0..k + 3 {
        labels_csv.push_str(&format!(",u{d}"));
    }
    for story in 0..bcfg.n_stories {
        labels_csv.push_str(&format!(",g{}", story + 1));
    }
    labels_csv.push('\n');
    for (idx, g) in result.labeled_indices.iter().zip(&result.labels) {
        labels_csv.push_str(&format!("{idx},{}", pool_rows[*idx]));
        for v in &al_pool[*idx] {
            labels_csv.push_str(&format!(",{v}"));
        }
        for v in g {
            labels_csv.push_str(&format!(",{v}"));
        }
        labels_csv.push('\n');
    }
    std::fs::write(ws.path(art::AL_LABELS), labels_csv).map_err(CoreError::from)?;

    // Surrogate quality on the reserved design rows.
    let mut quality_csv = String::from("story,r_squared,holdout_count\n");
    let mut quality = Vec::with_capacity(bcfg.n_stories);
    for (story, model) in result.models.iter().enumerate() {
        let predicted: Vec<f64> = holdout_rows
            .iter()
            .map(|&i| model.predict_one(&u_rows[i]).map(|(mean, _)| mean))
            .collect::<CoreResult<_>>()?;
        let actual: Vec<f64> = holdout_rows.iter().map(|&i| margins[i][story]).collect();
        let r2 = seismo_core::gp::r_squared(&predicted, &actual)?;
        quality_csv.push_str(&format!("{},{},{}\n", story + 1, r2, holdout_rows.len()));
        quality.push(r2);
    }
    std::fs::write(ws.path(art::SURROGATE_QUALITY), quality_csv).map_err(CoreError::from)?;

    // Classify the ball and fit one mixture per retained mode.
    let ball = density::n_ball_sample(
        k + 3,
        md.radius,
        md.ball_count,
        derive_seed(config.seed, "ball", 0),
    )?;
    let min_support = md
        .min_support
        .unwrap_or_else(|| density::default_min_support(md.ball_count, k + 3));
    let partition = density::classify_modes(&ball, &result.models, min_support)?;
    let densities = density::estimate_mode_densities(
        &partition,
        md.components,
        derive_seed(config.seed, "gmm", 0),
    )?;
    density::write_mode_densities(&densities, &ws.path(art::MODE_DENSITIES))?;

    let mut summary = String::from("mode,support,fell_back_to_single\n");
    for d in &densities {
        summary.push_str(&format!("{},{},{}\n", d.mode, d.support, d.fell_back_to_single));
    }
    std::fs::write(ws.path(art::MODES_SUMMARY), summary).map_err(CoreError::from)?;

    for name in [
        art::JOINT_TRANSFORM,
        art::STANDARDIZER,
        art::AL_LOG,
        art::AL_LABELS,
        art::GP_MODELS,
        art::SURROGATE_QUALITY,
        art::MODE_DENSITIES,
        art::MODES_SUMMARY,
    ] {
        ws.record("identify-modes", name)?;
    }
    println!(
        "identify-modes: {} labels ({} adaptive, converged: {}), {} modes, \
         held-out R2 [{}]",
        result.labeled_indices.len(),
        result.added,
        result.converged,
        densities.len(),
        quality.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", ")
    );
    Ok(())
}

// ── Stage: reconstruct ──────────────────────────────────────────────────

pub fn reconstruct_stage(config: &PipelineConfig, ws: &Workspace) -> Result<(), CliError> {
    let bcfg = config.building.to_config();
    let mcs_rows = building::read_mcs_csv(&ws.require(art::MCS, "mcs")?)?;
    let loaded = load_pool(ws, config)?;
    let densities = density::read_mode_densities(&ws.require(art::MODE_DENSITIES, "identify-modes")?)?;
    let models = gp_models_from_json(
        &std::fs::read_to_string(ws.require(art::GP_MODELS, "identify-modes")?)
            .map_err(CoreError::from)?,
    )?;
    let transform =
        JointTransform::read_json(&ws.require(art::JOINT_TRANSFORM, "identify-modes")?)?;
    let standardizer = FeatureStandardizer::from_json(
        &std::fs::read_to_string(ws.require(art::STANDARDIZER, "identify-modes")?)
            .map_err(CoreError::from)?,
    )?;

    let safe_rows: Vec<McsRow> = mcs_rows
        .into_iter()
        .filter(|r| r.mode.is_safe())
        .take(config.reconstruction.safe_rows)
        .collect();
    let assemble = AssembleConfig {
        per_mode: config.reconstruction.per_mode,
        seed: derive_seed(config.seed, "assemble", 0),
        log_feature_block: true,
    };
    let dataset = reconstruct::assemble_balanced_dataset(
        &densities,
        &models,
        &transform,
        &loaded.pool,
        &standardizer,
        &bcfg,
        &safe_rows,
        &assemble,
    )?;
    reconstruct::write_balanced_csv(&dataset, &ws.path(art::BALANCED))?;

    let summary = dataset.summary();
    let mut csv =
        String::from("mode,requested,delivered,mean_epsilon,boundary_fraction,shortfall\n");
    for o in &summary.outcomes {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            o.mode,
            o.requested,
            o.delivered,
            o.mean_epsilon,
            o.boundary_fraction,
            o.shortfall.as_deref().unwrap_or("")
        ));
    }
    std::fs::write(ws.path(art::BALANCE_SUMMARY), csv).map_err(CoreError::from)?;
    ws.record("reconstruct", art::BALANCED)?;
    ws.record("reconstruct", art::BALANCE_SUMMARY)?;
    println!(
        "reconstruct: {} rows ({} safe), {} mode quotas",
        summary.total_rows, summary.safe_rows, summary.outcomes.len()
    );
    Ok(())
}

// ── Stage: train-dnn ────────────────────────────────────────────────────

/// Both labeled sets, rebuilt deterministically from the artifacts.
fn build_labeled_sets(
    config: &PipelineConfig,
    ws: &Workspace,
) -> Result<(LabeledSet, LabeledSet, usize), CliError> {
    let balanced_ds: BalancedDataset =
        reconstruct::read_balanced_csv(&ws.require(art::BALANCED, "reconstruct")?)?;
    let mcs_rows = building::read_mcs_csv(&ws.require(art::MCS, "mcs")?)?;
    let critical = read_critical_set(ws)?;
    let loaded = load_pool(ws, config)?;
    let balanced = mlp::dataset_from_balanced(&balanced_ds)?;
    let imbalanced = mlp::dataset_from_mcs(&mcs_rows, &loaded.pool, &critical)?;
    Ok((balanced, imbalanced, critical.len()))
}

pub fn train_dnn(config: &PipelineConfig, ws: &Workspace) -> Result<(), CliError> {
    let (balanced, imbalanced, k) = build_labeled_sets(config, ws)?;
    let n_stories = config.building.stories;
    let d = &config.dnn;

    let mut spec_bal = MlpSpec::balanced_default(k, n_stories, d.seed_balanced);
    let mut spec_imb = MlpSpec::imbalanced_default(k, n_stories, d.seed_imbalanced);
    for spec in [&mut spec_bal, &mut spec_imb] {
        spec.epochs = d.epochs;
        spec.batch_size = d.batch_size;
        spec.learning_rate = d.learning_rate;
    }
    if let Some(h) = &d.balanced_hidden {
        spec_bal.hidden = h.clone();
    }
    if let Some(h) = &d.imbalanced_hidden {
        spec_imb.hidden = h.clone();
    }

    // Each training run is single-threaded and deterministic; the two
    // runs proceed in parallel.
    let jobs: Vec<(MlpSpec, &LabeledSet)> = vec![(spec_bal, &balanced), (spec_imb, &imbalanced)];
    let trained = seismo_core::par::map_indexed(&jobs, |_, (spec, data)| {
        mlp::train(spec, data, d.split_seed)
    });
    let mut trained: Vec<TrainedClassifier> =
        trained.into_iter().collect::<CoreResult<_>>()?;
    let model_imb = trained.pop().expect("two jobs");
    let model_bal = trained.pop().expect("two jobs");

    model_bal.write_json(&ws.path(art::DNN_BALANCED))?;
    model_imb.write_json(&ws.path(art::DNN_IMBALANCED))?;

    let mut csv = String::from("epoch,balanced_loss,imbalanced_loss\n");
    for (e, (lb, li)) in model_bal
        .loss_history
        .iter()
        .zip(&model_imb.loss_history)
        .enumerate()
    {
        csv.push_str(&format!("{e},{lb},{li}\n"));
    }
    std::fs::write(ws.path(art::LOSS_HISTORY), csv).map_err(CoreError::from)?;

    for name in [art::DNN_BALANCED, art::DNN_IMBALANCED, art::LOSS_HISTORY] {
        ws.record("train-dnn", name)?;
    }
    println!(
        "train-dnn: balanced on {} rows, imbalanced on {} rows, {} epochs",
        balanced.len(),
        imbalanced.len(),
        d.epochs
    );
    Ok(())
}

// ── Stage: report ───────────────────────────────────────────────────────

fn mode_histogram<'a, I: Iterator<Item = &'a building::FailureMode>>(
    modes: I,
) -> BTreeMap<String, usize> {
    let mut hist = BTreeMap::new();
    for m in modes {
        *hist.entry(m.to_string()).or_insert(0) += 1;
    }
    hist
}

pub fn report(config: &PipelineConfig, ws: &Workspace) -> Result<(), CliError> {
    let (balanced, imbalanced, _) = build_labeled_sets(config, ws)?;
    let model_bal = TrainedClassifier::read_json(&ws.require(art::DNN_BALANCED, "train-dnn")?)?;
    let model_imb =
        TrainedClassifier::read_json(&ws.require(art::DNN_IMBALANCED, "train-dnn")?)?;
    for (model, data, name) in [
        (&model_bal, &balanced, "balanced"),
        (&model_imb, &imbalanced, "imbalanced"),
    ] {
        if model.test_indices.iter().any(|&i| i >= data.len()) {
            return Err(CliError::Core(CoreError::invalid(format!(
                "{name} model's split does not match the current dataset; \
                 rerun `seismo train-dnn`"
            ))));
        }
    }
    let test_bal = balanced.subset(&model_bal.test_indices);
    let test_imb = imbalanced.subset(&model_imb.test_indices);
    let cross = mlp::cross_evaluate(
        ("balanced-trained", &model_bal),
        ("imbalanced-trained", &model_imb),
        ("balanced-test", &test_bal),
        ("imbalanced-test", &test_imb),
    )?;
    std::fs::write(ws.path(art::REPORT_CSV), cross.to_csv()).map_err(CoreError::from)?;

    let mcs_rows = building::read_mcs_csv(&ws.require(art::MCS, "mcs")?)?;
    let balanced_ds = reconstruct::read_balanced_csv(&ws.require(art::BALANCED, "reconstruct")?)?;
    let summary = balanced_ds.summary();

    let mut text = String::new();
    text.push_str("failure-mode dataset pipeline report\n");
    text.push_str("====================================\n\n");
    text.push_str(&format!("simulation rows ({}): {}\n", art::MCS, mcs_rows.len()));
    for (mode, count) in mode_histogram(mcs_rows.iter().map(|r| &r.mode)) {
        text.push_str(&format!("  mode {mode}: {count}\n"));
    }
    text.push_str(&format!(
        "\nbalanced rows ({}): {} total, {} safe\n",
        art::BALANCED,
        summary.total_rows,
        summary.safe_rows
    ));
    for (mode, count) in &summary.realized_counts {
        text.push_str(&format!("  realized mode {mode}: {count}\n"));
    }
    text.push_str("\nassembly outcomes (requested -> delivered):\n");
    for o in &summary.outcomes {
        text.push_str(&format!(
            "  mode {}: {} -> {}, mean eps {:.3e}, boundary {:.1}%{}\n",
            o.mode,
            o.requested,
            o.delivered,
            o.mean_epsilon,
            100.0 * o.boundary_fraction,
            o.shortfall.as_deref().map(|s| format!(" [{s}]")).unwrap_or_default()
        ));
    }
    if let Ok(quality) = std::fs::read_to_string(ws.path(art::SURROGATE_QUALITY)) {
        text.push_str("\nsurrogate held-out quality (story,R^2,points):\n");
        for line in quality.lines().skip(1) {
            text.push_str(&format!("  {line}\n"));
        }
    }
    text.push_str("\nclassifier comparison (exact-match and per-bit accuracy):\n");
    text.push_str(&format!("{cross}"));
    std::fs::write(ws.path(art::REPORT_TXT), &text).map_err(CoreError::from)?;

    ws.record("report", art::REPORT_CSV)?;
    ws.record("report", art::REPORT_TXT)?;
    println!(
        "report: balanced-trained {:.1}% vs imbalanced-trained {:.1}% on the balanced test split",
        100.0 * cross.exact[0][0],
        100.0 * cross.exact[1][0]
    );
    Ok(())
}

// ── Stage: run-all ──────────────────────────────────────────────────────

pub fn run_all(config: &PipelineConfig, ws: &Workspace) -> Result<(), CliError> {
    gen_gm(config, ws)?;
    extract_gmf(config, ws)?;
    mcs(config, ws)?;
    select_features(config, ws)?;
    identify_modes(config, ws)?;
    reconstruct_stage(config, ws)?;
    train_dnn(config, ws)?;
    report(config, ws)?;
    Ok(())
}
