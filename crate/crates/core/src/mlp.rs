//! From-scratch multilayer perceptron for multi-label failure prediction.
//!
//! Inputs are the critical ground-motion features plus the peak absolute
//! floor acceleration of every story; outputs are per-story failure
//! probabilities (rectified-linear hidden layers, logistic outputs).
//! Training minimizes per-output binary cross-entropy with mini-batch
//! adaptive-moment gradient descent, an 80/20 train/test split, and input
//! z-scoring fitted on the training split. Everything is seeded: two runs
//! with the same seeds produce bit-identical weights.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::building::{FailureMode, McsRow};
use crate::error::{Error, Result};
use crate::gmf::GmfVector;
use crate::reconstruct::{BalancedDataset, RecordPool};
use crate::stats::{sample_std_normal, stream_rng};

// ── Specification ───────────────────────────────────────────────────────

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_width: usize,
    pub hidden: Vec<usize>,
    pub output_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl MlpSpec {
    fn base(input_width: usize, hidden: Vec<usize>, output_width: usize, seed: u64) -> Self {
        Self {
            input_width,
            hidden,
            output_width,
            epochs: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed,
        }
    }

    /// Compact network for the raw (imbalanced) dataset: hidden widths
    /// 16/8/4. Input width is 8 critical features + one acceleration per
    /// story.
    pub fn imbalanced_default(n_critical: usize, n_stories: usize, seed: u64) -> Self {
        Self::base(n_critical + n_stories, vec![16, 8, 4], n_stories, seed)
    }

    /// Wider network for the balanced dataset: hidden widths 32/16/8,
    /// scaled to 64/32/16 for buildings of nine or more stories.
    pub fn balanced_default(n_critical: usize, n_stories: usize, seed: u64) -> Self {
        let hidden =
            if n_stories >= 9 { vec![64, 32, 16] } else { vec![32, 16, 8] };
        Self::base(n_critical + n_stories, hidden, n_stories, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.input_width > 0
            && self.output_width > 0
            && self.hidden.iter().all(|w| *w > 0)
            && self.epochs > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("network specification has non-positive or out-of-range fields"))
        }
    }

    /// Layer widths from input to output.
    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width];
        w.extend_from_slice(&self.hidden);
        w.push(self.output_width);
        w
    }
}

// ── Labeled data ────────────────────────────────────────────────────────

/// Inputs and 0/1 multi-label targets, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() || self.inputs.len() != self.targets.len() {
            return Err(Error::invalid("labeled set must be non-empty and row-aligned"));
        }
        let d = self.inputs[0].len();
        let c = self.targets[0].len();
        if d == 0 || c == 0 {
            return Err(Error::invalid("labeled rows must have positive width"));
        }
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            if x.len() != d || y.len() != c {
                return Err(Error::invalid("ragged labeled rows"));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("inputs must be finite"));
            }
            if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
                return Err(Error::invalid("targets must be 0 or 1"));
            }
        }
        Ok(())
    }

    /// Rows at the given indices.
    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }
}

/// Classifier input row: critical feature values followed by per-story
/// peak absolute floor accelerations.
pub fn build_input(features: &[f64], peak_abs_accel: &[f64]) -> Vec<f64> {
    let mut row = Vec::with_capacity(features.len() + peak_abs_accel.len());
    row.extend_from_slice(features);
    row.extend_from_slice(peak_abs_accel);
    row
}

fn mode_targets(mode: &FailureMode) -> Vec<f64> {
    mode.bits().iter().map(|b| f64::from(u8::from(*b))).collect()
}

/// Labeled rows from an assembled balanced dataset (targets are the
/// realized modes).
pub fn dataset_from_balanced(dataset: &BalancedDataset) -> Result<LabeledSet> {
    let set = LabeledSet {
        inputs: dataset
            .rows
            .iter()
            .map(|r| build_input(&r.features, &r.edp.peak_abs_accel))
            .collect(),
        targets: dataset.rows.iter().map(|r| mode_targets(&r.realized_mode)).collect(),
    };
    set.validate()?;
    Ok(set)
}

/// Labeled rows from raw simulation results: features come from the
/// record pool scaled analytically to each row's amplitude.
pub fn dataset_from_mcs(
    rows: &[McsRow],
    pool: &RecordPool,
    critical_indices: &[usize],
) -> Result<LabeledSet> {
    let mut inputs = Vec::with_capacity(rows.len());
    let mut targets = Vec::with_capacity(rows.len());
    for row in rows {
        let idx = pool.index_of(&row.record_id).ok_or_else(|| {
            Error::invalid(format!("row references record `{}` missing from the pool", row.record_id))
        })?;
        let scaled: GmfVector = pool.unit_features[idx].scaled(row.scale)?;
        let features: Vec<f64> = critical_indices.iter().map(|&f| scaled.get(f)).collect();
        inputs.push(build_input(&features, &row.peak_abs_accel));
        targets.push(mode_targets(&row.mode));
    }
    let set = LabeledSet { inputs, targets };
    set.validate()?;
    Ok(set)
}

// ── Network internals ───────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    w: DMatrix<f64>,
    b: DVector<f64>,
}

fn seeded_layers(spec: &MlpSpec) -> Vec<Layer> {
    let widths = spec.widths();
    (0..widths.len() - 1)
        .map(|l| {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let mut rng = stream_rng(spec.seed, "mlp-init", l as u64);
            // He scaling for the rectified hidden layers, Xavier for the
            // logistic output.
            let std = if l + 2 == widths.len() {
                (1.0 / n_in as f64).sqrt()
            } else {
                (2.0 / n_in as f64).sqrt()
            };
            let w = DMatrix::from_fn(n_out, n_in, |_, _| std * sample_std_normal(&mut rng));
            Layer { w, b: DVector::zeros(n_out) }
        })
        .collect()
}

/// Forward pass; returns pre-activations per layer plus activations
/// (activations[0] is the input block).
fn forward(layers: &[Layer], x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut zs = Vec::with_capacity(layers.len());
    let mut activations = vec![x.clone()];
    for (l, layer) in layers.iter().enumerate() {
        let mut z = &layer.w * activations.last().expect("non-empty");
        for mut col in z.column_iter_mut() {
            col += &layer.b;
        }
        let a = if l + 1 == layers.len() {
            z.clone() // logits; the logistic map is applied in the loss
        } else {
            z.map(|v| v.max(0.0))
        };
        zs.push(z);
        activations.push(a);
    }
    (zs, activations)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable per-element binary cross-entropy from logits.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln()
}

/// Mean loss over (batch × outputs) and its gradients.
fn loss_and_gradients(
    layers: &[Layer],
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> (f64, Vec<Layer>) {
    let batch = x.ncols() as f64;
    let n_out = y.nrows() as f64;
    let (zs, activations) = forward(layers, x);
    let logits = zs.last().expect("at least one layer");

    let mut loss = 0.0;
    for (z, t) in logits.iter().zip(y.iter()) {
        loss += bce_from_logit(*z, *t);
    }
    loss /= batch * n_out;

    // d(loss)/d(logit) = (σ(z) − y) / (batch · n_out).
    let mut dz = logits.map(sigmoid) - y;
    dz /= batch * n_out;

    let mut grads: Vec<Layer> = Vec::with_capacity(layers.len());
    for l in (0..layers.len()).rev() {
        let dw = &dz * activations[l].transpose();
        let db = DVector::from_iterator(dz.nrows(), dz.row_iter().map(|r| r.sum()));
        if l > 0 {
            let da = layers[l].w.transpose() * &dz;
            dz = da.zip_map(&zs[l - 1], |g, z| if z > 0.0 { g } else { 0.0 });
        }
        grads.push(Layer { w: dw, b: db });
    }
    grads.reverse();
    (loss, grads)
}

// ── Trained classifier ──────────────────────────────────────────────────

/// A trained network plus its input standardization and split bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    spec: MlpSpec,
    layers: Vec<Layer>,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    /// Mean training loss per epoch (length = epochs).
    pub loss_history: Vec<f64>,
    /// Dataset row indices used for training / held-out evaluation.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl TrainedClassifier {
    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Per-output failure probabilities for one input row.
    ///
    /// Probabilities are clamped into the open interval (0, 1) so that
    /// downstream log-odds stay finite even when the logistic output
    /// saturates in floating point.
    pub fn predict_proba(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.spec.input_width {
            return Err(Error::invalid(format!(
                "expected {} inputs, got {}",
                self.spec.input_width,
                input.len()
            )));
        }
        let standardized: Vec<f64> = input
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.input_mean[j]) / self.input_std[j])
            .collect();
        let x = DMatrix::from_column_slice(input.len(), 1, &standardized);
        let (zs, _) = forward(&self.layers, &x);
        Ok(zs
            .last()
            .expect("non-empty")
            .iter()
            .map(|z| sigmoid(*z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
            .collect())
    }

    /// Thresholded prediction: bit i set iff output i ≥ 0.5.
    pub fn predict_mode(&self, input: &[f64]) -> Result<FailureMode> {
        let proba = self.predict_proba(input)?;
        Ok(FailureMode::new(proba.iter().map(|p| *p >= 0.5).collect()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&TrainedClassifierData::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let data: TrainedClassifierData = serde_json::from_str(text)?;
        data.try_into()
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// JSON mirror with plain nested vectors.
#[derive(Serialize, Deserialize)]
struct TrainedClassifierData {
    spec: MlpSpec,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    loss_history: Vec<f64>,
    train_indices: Vec<usize>,
    test_indices: Vec<usize>,
}

impl From<&TrainedClassifier> for TrainedClassifierData {
    fn from(c: &TrainedClassifier) -> Self {
        Self {
            spec: c.spec.clone(),
            weights: c
                .layers
                .iter()
                .map(|l| {
                    (0..l.w.nrows())
                        .map(|i| (0..l.w.ncols()).map(|j| l.w[(i, j)]).collect())
                        .collect()
                })
                .collect(),
            biases: c.layers.iter().map(|l| l.b.iter().copied().collect()).collect(),
            input_mean: c.input_mean.clone(),
            input_std: c.input_std.clone(),
            loss_history: c.loss_history.clone(),
            train_indices: c.train_indices.clone(),
            test_indices: c.test_indices.clone(),
        }
    }
}

impl TryFrom<TrainedClassifierData> for TrainedClassifier {
    type Error = Error;

    fn try_from(data: TrainedClassifierData) -> Result<Self> {
        data.spec.validate()?;
        let widths = data.spec.widths();
        if data.weights.len() != widths.len() - 1 || data.biases.len() != widths.len() - 1 {
            return Err(Error::invalid("layer count does not match the specification"));
        }
        let mut layers = Vec::with_capacity(data.weights.len());
        for (l, (w, b)) in data.weights.iter().zip(&data.biases).enumerate() {
            let (n_out, n_in) = (widths[l + 1], widths[l]);
            if w.len() != n_out || w.iter().any(|row| row.len() != n_in) || b.len() != n_out {
                return Err(Error::invalid("weight shapes do not match the specification"));
            }
            layers.push(Layer {
                w: DMatrix::from_fn(n_out, n_in, |i, j| w[i][j]),
                b: DVector::from_column_slice(b),
            });
        }
        if data.input_mean.len() != data.spec.input_width
            || data.input_std.len() != data.spec.input_width
            || data.input_std.iter().any(|s| !(*s > 0.0))
        {
            return Err(Error::invalid("input standardization does not match the input width"));
        }
        Ok(Self {
            spec: data.spec,
            layers,
            input_mean: data.input_mean,
            input_std: data.input_std,
            loss_history: data.loss_history,
            train_indices: data.train_indices,
            test_indices: data.test_indices,
        })
    }
}

// ── Training ────────────────────────────────────────────────────────────

struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: u64,
}

impl AdamState {
    fn new(layers: &[Layer]) -> Self {
        let zeros = |l: &Layer| Layer {
            w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
            b: DVector::zeros(l.b.nrows()),
        };
        Self { m: layers.iter().map(zeros).collect(), v: layers.iter().map(zeros).collect(), t: 0 }
    }

    fn step(&mut self, layers: &mut [Layer], grads: &[Layer], spec: &MlpSpec) {
        self.t += 1;
        let bc1 = 1.0 - spec.beta1.powi(self.t as i32);
        let bc2 = 1.0 - spec.beta2.powi(self.t as i32);
        for (l, grad) in grads.iter().enumerate() {
            let update =
                |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = spec.beta1 * *m + (1.0 - spec.beta1) * g;
                    *v = spec.beta2 * *v + (1.0 - spec.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= spec.learning_rate * m_hat / (v_hat.sqrt() + spec.epsilon);
                };
            for ((p, &g), (m, v)) in layers[l]
                .w
                .iter_mut()
                .zip(grad.w.iter())
                .zip(self.m[l].w.iter_mut().zip(self.v[l].w.iter_mut()))
            {
                update(p, g, m, v);
            }
            for ((p, &g), (m, v)) in layers[l]
                .b
                .iter_mut()
                .zip(grad.b.iter())
                .zip(self.m[l].b.iter_mut().zip(self.v[l].b.iter_mut()))
            {
                update(p, g, m, v);
            }
        }
    }
}

/// Train a classifier on an 80/20 split of the labeled set.
///
/// The split shuffle derives from `split_seed`, weight initialization and
/// epoch shuffles from `spec.seed`; identical seeds give bit-identical
/// results. A non-finite epoch loss aborts with the epoch number.
pub fn train(spec: &MlpSpec, data: &LabeledSet, split_seed: u64) -> Result<TrainedClassifier> {
    spec.validate()?;
    data.validate()?;
    if data.len() < 20 {
        return Err(Error::invalid("need at least 20 labeled rows to train"));
    }
    if data.inputs[0].len() != spec.input_width {
        return Err(Error::invalid(format!(
            "dataset width {} does not match the specified input width {}",
            data.inputs[0].len(),
            spec.input_width
        )));
    }
    if data.targets[0].len() != spec.output_width {
        return Err(Error::invalid(format!(
            "dataset has {} outputs, specification expects {}",
            data.targets[0].len(),
            spec.output_width
        )));
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream_rng(split_seed, "mlp-split", 0));
    let n_train = (data.len() * 4) / 5;
    let (train_indices, test_indices) = order.split_at(n_train);
    let train_indices = train_indices.to_vec();
    let test_indices = test_indices.to_vec();

    // Input standardization from the training split only.
    let d = spec.input_width;
    let n = train_indices.len() as f64;
    let mut input_mean = vec![0.0; d];
    let mut input_std = vec![1.0; d];
    for j in 0..d {
        let m = train_indices.iter().map(|&i| data.inputs[i][j]).sum::<f64>() / n;
        let var =
            train_indices.iter().map(|&i| (data.inputs[i][j] - m).powi(2)).sum::<f64>() / n;
        input_mean[j] = m;
        if var > 0.0 {
            input_std[j] = var.sqrt();
        }
    }
    let standardized: Vec<Vec<f64>> = train_indices
        .iter()
        .map(|&i| {
            (0..d).map(|j| (data.inputs[i][j] - input_mean[j]) / input_std[j]).collect()
        })
        .collect();
    let targets: Vec<&Vec<f64>> = train_indices.iter().map(|&i| &data.targets[i]).collect();

    let mut layers = seeded_layers(spec);
    let mut adam = AdamState::new(&layers);
    let mut loss_history = Vec::with_capacity(spec.epochs);
    let mut batch_order: Vec<usize> = (0..standardized.len()).collect();

    for epoch in 0..spec.epochs {
        batch_order.shuffle(&mut stream_rng(spec.seed, "mlp-shuffle", epoch as u64));
        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for chunk in batch_order.chunks(spec.batch_size) {
            let x = DMatrix::from_fn(d, chunk.len(), |j, c| standardized[chunk[c]][j]);
            let y = DMatrix::from_fn(spec.output_width, chunk.len(), |j, c| {
                targets[chunk[c]][j]
            });
            let (loss, grads) = loss_and_gradients(&layers, &x, &y);
            adam.step(&mut layers, &grads, spec);
            epoch_loss += loss;
            batches += 1.0;
        }
        let mean_loss = epoch_loss / batches;
        if !mean_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        loss_history.push(mean_loss);
    }

    Ok(TrainedClassifier {
        spec: spec.clone(),
        layers,
        input_mean,
        input_std,
        loss_history,
        train_indices,
        test_indices,
    })
}

// ── Evaluation ──────────────────────────────────────────────────────────

/// Fraction of rows where every output bit matches the target.
pub fn exact_match_accuracy(model: &TrainedClassifier, data: &LabeledSet) -> Result<f64> {
    data.validate()?;
    let mut hits = 0usize;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let proba = model.predict_proba(x)?;
        let all = proba.iter().zip(y).all(|(p, t)| (*p >= 0.5) == (*t == 1.0));
        hits += usize::from(all);
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Mean per-bit accuracy across all rows and outputs.
pub fn hamming_accuracy(model: &TrainedClassifier, data: &LabeledSet) -> Result<f64> {
    data.validate()?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let proba = model.predict_proba(x)?;
        for (p, t) in proba.iter().zip(y) {
            hits += usize::from((*p >= 0.5) == (*t == 1.0));
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// The 2×2 comparison: rows are models, columns are evaluation sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossReport {
    pub model_names: [String; 2],
    pub set_names: [String; 2],
    /// `exact[i][j]` = exact-match accuracy of model i on set j.
    pub exact: [[f64; 2]; 2],
    /// Per-bit accuracy in the same layout.
    pub hamming: [[f64; 2]; 2],
}

impl CrossReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("model,eval_set,exact_match_accuracy,hamming_accuracy\n");
        for i in 0..2 {
            for j in 0..2 {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    self.model_names[i], self.set_names[j], self.exact[i][j], self.hamming[i][j]
                ));
            }
        }
        out
    }
}

impl std::fmt::Display for CrossReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<24} {:>18} {:>18}", "exact-match accuracy", self.set_names[0], self.set_names[1])?;
        for i in 0..2 {
            writeln!(
                f,
                "{:<24} {:>17.1}% {:>17.1}%",
                self.model_names[i],
                100.0 * self.exact[i][0],
                100.0 * self.exact[i][1]
            )?;
        }
        writeln!(f, "{:<24} {:>18} {:>18}", "per-bit accuracy", self.set_names[0], self.set_names[1])?;
        for i in 0..2 {
            writeln!(
                f,
                "{:<24} {:>17.1}% {:>17.1}%",
                self.model_names[i],
                100.0 * self.hamming[i][0],
                100.0 * self.hamming[i][1]
            )?;
        }
        Ok(())
    }
}

/// Evaluate both models on both evaluation sets.
pub fn cross_evaluate(
    model_a: (&str, &TrainedClassifier),
    model_b: (&str, &TrainedClassifier),
    set_a: (&str, &LabeledSet),
    set_b: (&str, &LabeledSet),
) -> Result<CrossReport> {
    let models = [model_a.1, model_b.1];
    let sets = [set_a.1, set_b.1];
    let mut exact = [[0.0; 2]; 2];
    let mut hamming = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            exact[i][j] = exact_match_accuracy(models[i], sets[j])?;
            hamming[i][j] = hamming_accuracy(models[i], sets[j])?;
        }
    }
    Ok(CrossReport {
        model_names: [model_a.0.to_string(), model_b.0.to_string()],
        set_names: [set_a.0.to_string(), set_b.0.to_string()],
        exact,
        hamming,
    })
}

// ── Tests ───────────────────────────────────────────────────────────────
