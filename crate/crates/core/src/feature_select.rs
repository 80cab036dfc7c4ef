//! Critical ground-motion-feature identification.
//!
//! For each response quantity and training size, Gaussian-process
//! surrogates are fitted on candidate feature subsets (plus the structural
//! parameters, which ride along with every subset) and scored by
//! test-split R². Per subset size the best score forms a sequence whose
//! first sub-threshold gain picks the subset size; repeating the search
//! across response quantities and training sizes yields a frequency
//! histogram whose top entries are the critical features.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::gp::{self, FitOptions};
use crate::par;
use crate::stats::{derive_seed, stream_rng};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

// ── Dataset ─────────────────────────────────────────────────────────────

/// Rows for subset search: candidate feature columns, extra columns
/// appended to every subset (structural parameters), and target columns.
#[derive(Debug, Clone)]
pub struct SelectionDataset {
    /// n × n_features candidate feature matrix.
    pub features: Vec<Vec<f64>>,
    /// n × n_extra always-included columns (may have zero width).
    pub extra: Vec<Vec<f64>>,
    /// n × n_targets response columns.
    pub targets: Vec<Vec<f64>>,
}

impl SelectionDataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn n_targets(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.len();
        if n == 0 {
            return Err(Error::invalid("selection dataset is empty"));
        }
        if self.extra.len() != n || self.targets.len() != n {
            return Err(Error::invalid("dataset blocks must share the row count"));
        }
        let nf = self.n_features();
        let ne = self.extra[0].len();
        let nt = self.n_targets();
        if nf == 0 || nt == 0 {
            return Err(Error::invalid("need at least one feature and one target column"));
        }
        if nf > 63 {
            return Err(Error::invalid("feature pool is limited to 63 columns"));
        }
        let shapes_ok = self.features.iter().all(|r| r.len() == nf)
            && self.extra.iter().all(|r| r.len() == ne)
            && self.targets.iter().all(|r| r.len() == nt);
        if !shapes_ok {
            return Err(Error::invalid("ragged dataset rows"));
        }
        let finite = self
            .features
            .iter()
            .chain(self.extra.iter())
            .chain(self.targets.iter())
            .flatten()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("dataset values must be finite"));
        }
        Ok(())
    }
}

// ── Subset scoring ──────────────────────────────────────────────────────

/// One evaluated subset: sorted feature indices and the test-split R².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub subset: Vec<usize>,
    pub r_squared: f64,
}

fn subset_mask(subset: &[usize]) -> u64 {
    subset.iter().fold(0u64, |m, f| m | (1u64 << f))
}

/// Column-wise z-score transform fitted on the training rows; constant
/// columns pass through unscaled.
fn standardize(train: &[Vec<f64>], test: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = train[0].len();
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for j in 0..d {
        let m = train.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = train.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
        mean[j] = m;
        if var > 0.0 {
            scale[j] = var.sqrt();
        }
    }
    let apply = |rows: &[Vec<f64>]| {
        rows.iter()
            .map(|r| (0..d).map(|j| (r[j] - mean[j]) / scale[j]).collect())
            .collect()
    };
    (apply(train), apply(test))
}

/// Scores feature subsets for one target column over a fixed train/test
/// split, caching results by subset bitmask so repeated requests are free
/// and bit-identical.
pub struct SubsetEvaluator<'a> {
    dataset: &'a SelectionDataset,
    target_index: usize,
    train_rows: Vec<usize>,
    test_rows: Vec<usize>,
    fit: FitOptions,
    seed: u64,
    cache: Mutex<HashMap<u64, f64>>,
}

impl<'a> SubsetEvaluator<'a> {
    /// Split the dataset by a seeded shuffle: `train_count` rows train,
    /// the rest test.
    pub fn new(
        dataset: &'a SelectionDataset,
        target_index: usize,
        train_count: usize,
        fit: FitOptions,
        seed: u64,
    ) -> Result<Self> {
        dataset.validate()?;
        if target_index >= dataset.n_targets() {
            return Err(Error::invalid(format!("target column {target_index} out of range")));
        }
        if train_count < 4 || train_count >= dataset.len() {
            return Err(Error::invalid(format!(
                "train count {train_count} must be in [4, {})",
                dataset.len()
            )));
        }
        let mut rows: Vec<usize> = (0..dataset.len()).collect();
        rows.shuffle(&mut stream_rng(seed, "subset-split", 0));
        let (train_rows, test_rows) = rows.split_at(train_count);
        Ok(Self {
            dataset,
            target_index,
            train_rows: train_rows.to_vec(),
            test_rows: test_rows.to_vec(),
            fit,
            seed,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn train_len(&self) -> usize {
        self.train_rows.len()
    }

    pub fn cached_count(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    fn assemble(&self, rows: &[usize], subset: &[usize]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|&r| {
                let mut row: Vec<f64> =
                    subset.iter().map(|&f| self.dataset.features[r][f]).collect();
                row.extend_from_slice(&self.dataset.extra[r]);
                row
            })
            .collect()
    }

    /// Test-split R² of a surrogate fitted on `[subset features, extra]`.
    /// Inputs are z-scored with training statistics; the fit seed derives
    /// from the subset so repeat evaluations are bit-identical.
    pub fn score(&self, subset: &[usize]) -> Result<f64> {
        let nf = self.dataset.n_features();
        if subset.is_empty() {
            return Err(Error::invalid("cannot score an empty subset"));
        }
        let mut sorted = subset.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != subset.len() || sorted.iter().any(|&f| f >= nf) {
            return Err(Error::invalid(format!("subset {subset:?} has duplicates or out-of-range indices")));
        }
        let mask = subset_mask(&sorted);
        if let Some(&hit) = self.cache.lock().expect("cache lock").get(&mask) {
            return Ok(hit);
        }
        let x_train = self.assemble(&self.train_rows, &sorted);
        let x_test = self.assemble(&self.test_rows, &sorted);
        let (x_train, x_test) = standardize(&x_train, &x_test);
        let y_train: Vec<f64> =
            self.train_rows.iter().map(|&r| self.dataset.targets[r][self.target_index]).collect();
        let y_test: Vec<f64> =
            self.test_rows.iter().map(|&r| self.dataset.targets[r][self.target_index]).collect();
        let opts = FitOptions {
            seed: derive_seed(self.seed, "subset-fit", mask),
            ..self.fit.clone()
        };
        let model = gp::fit(x_train, y_train, &opts)?;
        let (predicted, _) = model.predict(&x_test)?;
        let r2 = gp::r_squared(&predicted, &y_test)?;
        self.cache.lock().expect("cache lock").insert(mask, r2);
        Ok(r2)
    }
}

// ── Subset enumeration and search ───────────────────────────────────────

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut out: u128 = 1;
    for i in 0..k {
        out = out * (n - i) as u128 / (i + 1) as u128;
    }
    out
}

/// All k-combinations of `pool`, in lexicographic order.
fn combinations(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k == 0 || k > pool.len() {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&i| pool[i]).collect());
        // Advance the combination counter.
        let mut pos = k;
        while pos > 0 {
            pos -= 1;
            if idx[pos] != pos + pool.len() - k {
                idx[pos] += 1;
                for j in pos + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
            if pos == 0 {
                return out;
            }
        }
    }
}

/// Search budget and schedule for [`evaluate_feature_subsets`].
#[derive(Debug, Clone)]
pub struct SubsetSearchConfig {
    /// Subset sizes to evaluate, e.g. `1..=8`.
    pub sizes: Vec<usize>,
    /// Random subsets sampled per size when exhaustive enumeration would
    /// exceed it (sizes ≤ 2 are always exhaustive).
    pub budget_per_size: usize,
    pub seed: u64,
}

impl Default for SubsetSearchConfig {
    fn default() -> Self {
        Self { sizes: (1..=8).collect(), budget_per_size: 200, seed: 0 }
    }
}

/// Evaluate subsets of `pool` per the search schedule: exhaustive where
/// cheap (size ≤ 2 or count ≤ budget), otherwise `budget_per_size` seeded
/// random subsets plus every single-feature extension of the previous
/// size's best subset (greedy-forward candidates). Returns one score per
/// distinct subset, grouped by traversal order.
pub fn evaluate_feature_subsets(
    evaluator: &SubsetEvaluator<'_>,
    pool: &[usize],
    config: &SubsetSearchConfig,
) -> Result<Vec<SubsetScore>> {
    if config.budget_per_size == 0 {
        return Err(Error::invalid("subset budget must be positive"));
    }
    if pool.is_empty() {
        return Err(Error::invalid("feature pool is empty"));
    }
    let nf = evaluator.dataset.n_features();
    let mut pool = pool.to_vec();
    pool.sort_unstable();
    pool.dedup();
    if pool.iter().any(|&f| f >= nf) {
        return Err(Error::invalid("feature pool index out of range"));
    }
    let mut sizes = config.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.iter().any(|&k| k == 0 || k > pool.len()) {
        return Err(Error::invalid("subset sizes must be within the pool size"));
    }

    let mut all_scores: Vec<SubsetScore> = Vec::new();
    let mut previous_best: Option<Vec<usize>> = None;
    for &k in &sizes {
        let exhaustive = k <= 2 || binomial(pool.len(), k) <= config.budget_per_size as u128;
        let mut seen: HashSet<u64> = HashSet::new();
        let mut subsets: Vec<Vec<usize>> = Vec::new();
        let push = |s: Vec<usize>, seen: &mut HashSet<u64>, subsets: &mut Vec<Vec<usize>>| {
            if seen.insert(subset_mask(&s)) {
                subsets.push(s);
            }
        };
        if exhaustive {
            for s in combinations(&pool, k) {
                push(s, &mut seen, &mut subsets);
            }
        } else {
            // Greedy-forward extensions of the previous best come first.
            if let Some(prev) = &previous_best {
                if prev.len() + 1 == k {
                    for &f in &pool {
                        if !prev.contains(&f) {
                            let mut s = prev.clone();
                            s.push(f);
                            s.sort_unstable();
                            push(s, &mut seen, &mut subsets);
                        }
                    }
                }
            }
            let mut rng = stream_rng(config.seed, "subset-draw", k as u64);
            let mut tries = 0usize;
            while subsets.len() < config.budget_per_size && tries < 20 * config.budget_per_size {
                tries += 1;
                let mut s: Vec<usize> = Vec::with_capacity(k);
                let mut remaining = pool.clone();
                for _ in 0..k {
                    let j = rng.gen_range(0..remaining.len());
                    s.push(remaining.swap_remove(j));
                }
                s.sort_unstable();
                push(s, &mut seen, &mut subsets);
            }
        }

        let scores: Vec<Result<f64>> =
            par::map_indexed(&subsets, |_, s| evaluator.score(s));
        let mut size_scores: Vec<SubsetScore> = Vec::with_capacity(subsets.len());
        for (s, r2) in subsets.into_iter().zip(scores) {
            size_scores.push(SubsetScore { subset: s, r_squared: r2? });
        }
        previous_best = best_of(&size_scores).map(|b| b.subset.clone());
        all_scores.extend(size_scores);
    }
    Ok(all_scores)
}

/// Best score in a group: maximum R², ties to the lexicographically
/// smallest subset.
fn best_of(scores: &[SubsetScore]) -> Option<&SubsetScore> {
    scores.iter().reduce(|a, b| {
        if b.r_squared > a.r_squared || (b.r_squared == a.r_squared && b.subset < a.subset) {
            b
        } else {
            a
        }
    })
}

// ── Size selection ──────────────────────────────────────────────────────

/// Outcome of the gain-threshold rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub chosen: Vec<usize>,
    pub chosen_size: usize,
    /// Best score per size, ascending in size.
    pub best_per_size: Vec<SubsetScore>,
    /// Gain at each size: best(size) − best(previous size); the first
    /// entry is measured against zero.
    pub deltas: Vec<f64>,
    /// Set when no gain fell below the threshold and the largest size was
    /// returned as a fallback.
    pub no_plateau_warning: bool,
}

/// Pick the subset size where the R² gain first drops below
/// `delta_threshold`, and within that size the best-scoring subset. When
/// every gain stays at or above the threshold the largest size is
/// returned with a warning flag.
pub fn select_critical(scores: &[SubsetScore], delta_threshold: f64) -> Result<SelectionOutcome> {
    if !(delta_threshold > 0.0) {
        return Err(Error::invalid("gain threshold must be positive"));
    }
    let mut by_size: BTreeMap<usize, Vec<&SubsetScore>> = BTreeMap::new();
    for s in scores {
        by_size.entry(s.subset.len()).or_default().push(s);
    }
    if by_size.len() < 2 {
        return Err(Error::invalid("need scores for at least two subset sizes"));
    }
    let best_per_size: Vec<SubsetScore> = by_size
        .values()
        .map(|group| {
            let owned: Vec<SubsetScore> = group.iter().map(|s| (*s).clone()).collect();
            best_of(&owned).expect("non-empty group").clone()
        })
        .collect();
    let mut deltas = Vec::with_capacity(best_per_size.len());
    let mut previous = 0.0;
    for b in &best_per_size {
        deltas.push(b.r_squared - previous);
        previous = b.r_squared;
    }
    let plateau = deltas.iter().position(|d| *d < delta_threshold);
    let (index, warn) = match plateau {
        Some(i) => (i, false),
        None => (best_per_size.len() - 1, true),
    };
    Ok(SelectionOutcome {
        chosen: best_per_size[index].subset.clone(),
        chosen_size: best_per_size[index].subset.len(),
        best_per_size,
        deltas,
        no_plateau_warning: warn,
    })
}

// ── Aggregation across targets and training sizes ───────────────────────

/// One completed subset search: which target column and training size it
/// used, and what it chose.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetSelection {
    pub target_index: usize,
    pub train_count: usize,
    pub outcome: SelectionOutcome,
}

/// Frequency histogram over feature indices plus the final critical set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub selections: Vec<TargetSelection>,
    /// How many selections each feature appeared in.
    pub frequency: Vec<usize>,
    /// Top-k features by frequency (ties to the smaller index).
    pub critical_set: Vec<usize>,
}

/// Count feature occurrences across selections and keep the `top_k` most
/// frequent (ties to the smaller index; zero-count features never enter).
pub fn aggregate_frequency(
    selections: &[TargetSelection],
    n_features: usize,
    top_k: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if selections.is_empty() {
        return Err(Error::invalid("need at least one selection to aggregate"));
    }
    if top_k == 0 {
        return Err(Error::invalid("top-k must be positive"));
    }
    let mut frequency = vec![0usize; n_features];
    for sel in selections {
        for &f in &sel.outcome.chosen {
            if f >= n_features {
                return Err(Error::invalid(format!("feature index {f} out of range")));
            }
            frequency[f] += 1;
        }
    }
    let mut order: Vec<usize> = (0..n_features).filter(|&f| frequency[f] > 0).collect();
    order.sort_by(|&a, &b| frequency[b].cmp(&frequency[a]).then(a.cmp(&b)));
    order.truncate(top_k);
    order.sort_unstable();
    Ok((frequency, order))
}

/// Search schedule for a full selection run.
#[derive(Debug, Clone)]
pub struct SelectionRunConfig {
    /// Candidate feature indices (defaults to the whole catalog).
    pub pool: Vec<usize>,
    /// Target columns to run the search for.
    pub target_indices: Vec<usize>,
    /// Training sizes to repeat each search at.
    pub train_counts: Vec<usize>,
    pub search: SubsetSearchConfig,
    pub fit: FitOptions,
    pub delta_threshold: f64,
    pub top_k: usize,
    pub seed: u64,
}

/// Run the subset search for every (target, training size) pair and
/// aggregate the chosen subsets into the critical feature set.
pub fn run_selection(
    dataset: &SelectionDataset,
    config: &SelectionRunConfig,
) -> Result<SelectionReport> {
    dataset.validate()?;
    if config.target_indices.is_empty() || config.train_counts.is_empty() {
        return Err(Error::invalid("need at least one target and one training size"));
    }
    let mut selections = Vec::new();
    for (pair_idx, (&target_index, &train_count)) in config
        .target_indices
        .iter()
        .flat_map(|t| config.train_counts.iter().map(move |n| (t, n)))
        .enumerate()
    {
        let evaluator = SubsetEvaluator::new(
            dataset,
            target_index,
            train_count,
            config.fit.clone(),
            derive_seed(config.seed, "selection-split", pair_idx as u64),
        )?;
        let search = SubsetSearchConfig {
            seed: derive_seed(config.seed, "selection-search", pair_idx as u64),
            ..config.search.clone()
        };
        let scores = evaluate_feature_subsets(&evaluator, &config.pool, &search)?;
        let outcome = select_critical(&scores, config.delta_threshold)?;
        selections.push(TargetSelection { target_index, train_count, outcome });
    }
    let (frequency, critical_set) =
        aggregate_frequency(&selections, dataset.n_features(), config.top_k)?;
    Ok(SelectionReport { selections, frequency, critical_set })
}

// ── Serialization ───────────────────────────────────────────────────────

impl SelectionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// CSV of every evaluated best-per-size row across selections:
    /// `target_index,train_count,size,subset,r_squared` with subset
    /// indices joined by `|`.
    pub fn scores_csv(&self) -> String {
        let mut out = String::from("target_index,train_count,size,subset,r_squared\n");
        for sel in &self.selections {
            for best in &sel.outcome.best_per_size {
                let subset = best
                    .subset
                    .iter()
                    .map(|f| f.to_string())
                    .collect::<Vec<_>>()
                    .join("|");
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    sel.target_index,
                    sel.train_count,
                    best.subset.len(),
                    subset,
                    best.r_squared
                ));
            }
        }
        out
    }
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::sample_std_normal;

    /// Six feature columns of unit noise; the target tracks column
    /// `signal` with a small disturbance.
    fn synthetic_dataset(n: usize, signal: usize, seed: u64) -> SelectionDataset {
        let mut features = Vec::with_capacity(n);
        let mut extra = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = stream_rng(seed, "fsdata", i as u64);
            let row: Vec<f64> = (0..6).map(|_| sample_std_normal(&mut rng)).collect();
            let y = row[signal] + 0.05 * sample_std_normal(&mut rng);
            targets.push(vec![y]);
            extra.push(vec![]);
            features.push(row);
        }
        SelectionDataset { features, extra, targets }
    }

    #[test]
    fn signal_feature_wins_size_one() {
        let dataset = synthetic_dataset(160, 2, 1);
        let evaluator =
            SubsetEvaluator::new(&dataset, 0, 80, FitOptions::light(0), 7).unwrap();
        let config = SubsetSearchConfig { sizes: vec![1], budget_per_size: 50, seed: 7 };
        let scores =
            evaluate_feature_subsets(&evaluator, &[0, 1, 2, 3, 4, 5], &config).unwrap();
        assert_eq!(scores.len(), 6, "size 1 is exhaustive");
        let best = best_of(&scores).unwrap();
        assert_eq!(best.subset, vec![2], "the planted signal column must win");
        assert!(best.r_squared > 0.9, "signal fit R² {}", best.r_squared);
        for s in &scores {
            assert!(s.r_squared.is_finite());
            assert!(s.r_squared <= 1.0 + 1e-12);
            if s.subset != vec![2] {
                assert!(s.r_squared < 0.5, "noise column scored {}", s.r_squared);
            }
        }
    }

    #[test]
    fn cache_makes_repeats_identical() {
        let dataset = synthetic_dataset(80, 0, 2);
        let evaluator =
            SubsetEvaluator::new(&dataset, 0, 40, FitOptions::light(0), 8).unwrap();
        let a = evaluator.score(&[1, 3]).unwrap();
        let b = evaluator.score(&[1, 3]).unwrap();
        let c = evaluator.score(&[3, 1]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits(), "repeat evaluation must be bit-identical");
        assert_eq!(a.to_bits(), c.to_bits(), "order must not matter");
        assert_eq!(evaluator.cached_count(), 1);
    }

    #[test]
    fn full_subset_score_is_sane() {
        let dataset = synthetic_dataset(120, 1, 3);
        let evaluator =
            SubsetEvaluator::new(&dataset, 0, 60, FitOptions::light(0), 9).unwrap();
        let r2 = evaluator.score(&[0, 1, 2, 3, 4, 5]).unwrap();
        assert!(r2.is_finite());
        assert!((-1.0..=1.0).contains(&r2), "full-subset R² {r2}");
        assert!(r2 > 0.8, "full subset contains the signal column; R² {r2}");
    }

    #[test]
    fn invalid_subsets_rejected() {
        let dataset = synthetic_dataset(60, 0, 4);
        let evaluator =
            SubsetEvaluator::new(&dataset, 0, 30, FitOptions::light(0), 0).unwrap();
        assert!(evaluator.score(&[]).is_err());
        assert!(evaluator.score(&[0, 0]).is_err());
        assert!(evaluator.score(&[9]).is_err());
    }

    fn score(subset: &[usize], r2: f64) -> SubsetScore {
        SubsetScore { subset: subset.to_vec(), r_squared: r2 }
    }

    #[test]
    fn plateau_rule_worked_example() {
        // Best per size: 0.80, 0.90, 0.9005, 0.9006. Gains: 0.80, 0.10,
        // 0.0005, 0.0001 — the first gain below 0.001 is at size 3.
        let scores = vec![
            score(&[0], 0.80),
            score(&[1], 0.75),
            score(&[0, 1], 0.90),
            score(&[0, 1, 2], 0.9005),
            score(&[0, 1, 3], 0.89),
            score(&[0, 1, 2, 3], 0.9006),
        ];
        let outcome = select_critical(&scores, 0.001).unwrap();
        assert_eq!(outcome.chosen_size, 3);
        assert_eq!(outcome.chosen, vec![0, 1, 2]);
        assert!(!outcome.no_plateau_warning);
        assert_eq!(outcome.deltas.len(), 4);
        assert!((outcome.deltas[2] - 0.0005).abs() < 1e-12);
    }

    #[test]
    fn degenerate_threshold_picks_size_one() {
        let scores =
            vec![score(&[0], 0.80), score(&[1], 0.60), score(&[0, 1], 0.95)];
        let outcome = select_critical(&scores, 1.0).unwrap();
        assert_eq!(outcome.chosen_size, 1);
        assert_eq!(outcome.chosen, vec![0]);
    }

    #[test]
    fn growing_gains_return_largest_size_with_warning() {
        let scores = vec![
            score(&[0], 0.10),
            score(&[0, 1], 0.30),
            score(&[0, 1, 2], 0.60),
        ];
        let outcome = select_critical(&scores, 0.001).unwrap();
        assert!(outcome.no_plateau_warning);
        assert_eq!(outcome.chosen_size, 3);
    }

    #[test]
    fn selection_needs_two_sizes() {
        let scores = vec![score(&[0], 0.5), score(&[1], 0.6)];
        assert!(select_critical(&scores, 0.001).is_err());
    }

    fn selection_with(chosen: Vec<usize>) -> TargetSelection {
        TargetSelection {
            target_index: 0,
            train_count: 10,
            outcome: SelectionOutcome {
                chosen_size: chosen.len(),
                chosen,
                best_per_size: vec![],
                deltas: vec![],
                no_plateau_warning: false,
            },
        }
    }

    #[test]
    fn frequency_counts_and_top_k() {
        let selections = vec![
            selection_with(vec![1, 5]),
            selection_with(vec![5, 2]),
            selection_with(vec![5, 1]),
        ];
        let (freq, top) = aggregate_frequency(&selections, 8, 2).unwrap();
        assert_eq!(freq, vec![0, 2, 1, 0, 0, 3, 0, 0]);
        assert_eq!(top, vec![1, 5], "feature 5 (count 3) and feature 1 (count 2)");

        let single = vec![selection_with(vec![0, 4])];
        let (freq, top) = aggregate_frequency(&single, 6, 8).unwrap();
        assert_eq!(freq, vec![1, 0, 0, 0, 1, 0]);
        assert_eq!(top, vec![0, 4], "all nonzero features when fewer than k");
    }

    #[test]
    fn top_k_tie_breaks_to_smaller_index() {
        let selections = vec![selection_with(vec![3, 6])];
        let (_, top) = aggregate_frequency(&selections, 8, 1).unwrap();
        assert_eq!(top, vec![3]);
    }

    #[test]
    fn combinations_enumerate_lexicographically() {
        let combos = combinations(&[0, 1, 2, 3], 2);
        assert_eq!(
            combos,
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        assert_eq!(binomial(16, 7), 11440);
        assert_eq!(combinations(&[0, 1], 3), Vec::<Vec<usize>>::new());
    }

    #[test]
    fn search_respects_budget_and_includes_greedy_extensions() {
        let dataset = synthetic_dataset(90, 2, 5);
        let evaluator =
            SubsetEvaluator::new(&dataset, 0, 45, FitOptions::light(0), 11).unwrap();
        let config = SubsetSearchConfig { sizes: vec![1, 2, 3], budget_per_size: 8, seed: 11 };
        let scores =
            evaluate_feature_subsets(&evaluator, &[0, 1, 2, 3, 4, 5], &config).unwrap();
        let size1: Vec<&SubsetScore> = scores.iter().filter(|s| s.subset.len() == 1).collect();
        let size2: Vec<&SubsetScore> = scores.iter().filter(|s| s.subset.len() == 2).collect();
        let size3: Vec<&SubsetScore> = scores.iter().filter(|s| s.subset.len() == 3).collect();
        assert_eq!(size1.len(), 6, "exhaustive at size 1");
        assert_eq!(size2.len(), 15, "exhaustive at size 2");
        // Size 3 is sampled: C(6,3) = 20 > 8. Greedy extensions of the
        // best pair are guaranteed present (4 of them), random draws fill
        // up to the budget.
        assert!(size3.len() >= 8 && size3.len() <= 12, "got {}", size3.len());
        let owned2: Vec<SubsetScore> = size2.iter().map(|s| (*s).clone()).collect();
        let best2 = best_of(&owned2).unwrap();
        let extensions: Vec<&&SubsetScore> = size3
            .iter()
            .filter(|s| best2.subset.iter().all(|f| s.subset.contains(f)))
            .collect();
        assert!(extensions.len() >= 4, "greedy-forward candidates present");
    }

    #[test]
    fn end_to_end_selection_is_deterministic_and_finds_signal() {
        let dataset = synthetic_dataset(140, 4, 6);
        let config = SelectionRunConfig {
            pool: (0..6).collect(),
            target_indices: vec![0],
            train_counts: vec![60, 80],
            search: SubsetSearchConfig { sizes: vec![1, 2, 3], budget_per_size: 25, seed: 0 },
            fit: FitOptions::light(0),
            delta_threshold: 0.001,
            top_k: 3,
            seed: 13,
        };
        let report = run_selection(&dataset, &config).unwrap();
        let again = run_selection(&dataset, &config).unwrap();
        assert_eq!(report.to_json().unwrap(), again.to_json().unwrap());
        assert!(!report.critical_set.is_empty());
        assert!(
            report.critical_set.contains(&4),
            "signal column must appear in the critical set, got {:?}",
            report.critical_set
        );
        assert_eq!(report.selections.len(), 2);
        let back = SelectionReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back.critical_set, report.critical_set);
        let csv = report.scores_csv();
        assert!(csv.starts_with("target_index,train_count,size,subset,r_squared\n"));
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
    }
}
