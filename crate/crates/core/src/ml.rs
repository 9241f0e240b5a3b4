//! KNN classification/regression and the cross-validation harness used by
//! the recognition and grasp-position experiments.
//!
//! Folding is stratified AND group-aware: all windows of one recording
//! share a group id and always land in the same fold, so no recording
//! leaks between train and test. Tie rules are order-free, making every
//! prediction invariant under permutation of the training set.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MlError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("k = {k} exceeds training size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("dataset labels do not match the task ({0})")]
    WrongTask(String),
    #[error("feature row {row} has {got} values, expected {expected}")]
    DimensionMismatch {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("rows {a} and {b} share group {group} but carry different labels")]
    GroupLabelConflict { a: usize, b: usize, group: u64 },
    #[error("need at least 2 folds (got {0})")]
    BadFolds(usize),
    #[error("class '{class}' has only {groups} groups for {folds} folds")]
    ClassTooSmall {
        class: String,
        groups: usize,
        folds: usize,
    },
    #[error("dataset field lengths disagree: {0}")]
    Inconsistent(String),
    #[error("failed to write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Labels: categorical for recognition, scalar (mm) for regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    Categorical(Vec<String>),
    Scalar(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Categorical(v) => v.len(),
            Labels::Scalar(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stratification key of row i (scalar targets stratify on exact value).
    fn strat_key(&self, i: usize) -> String {
        match self {
            Labels::Categorical(v) => v[i].clone(),
            Labels::Scalar(v) => format!("{:?}", v[i]),
        }
    }
}

/// Feature matrix with labels and recording groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// N rows of equal dimension.
    pub features: Vec<Vec<f64>>,
    pub labels: Labels,
    /// Recording id per row; windows of one recording share a group.
    pub groups: Vec<u64>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Labels, groups: Vec<u64>) -> Result<Self, MlError> {
        if labels.len() != features.len() || groups.len() != features.len() {
            return Err(MlError::Inconsistent(format!(
                "{} feature rows, {} labels, {} groups",
                features.len(),
                labels.len(),
                groups.len()
            )));
        }
        if let Some(first) = features.first() {
            let d = first.len();
            for (i, row) in features.iter().enumerate() {
                if row.len() != d {
                    return Err(MlError::DimensionMismatch {
                        row: i,
                        got: row.len(),
                        expected: d,
                    });
                }
            }
        }
        Ok(Self {
            features,
            labels,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Row subset in the given index order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let features = idx.iter().map(|&i| self.features[i].clone()).collect();
        let labels = match &self.labels {
            Labels::Categorical(v) => {
                Labels::Categorical(idx.iter().map(|&i| v[i].clone()).collect())
            }
            Labels::Scalar(v) => Labels::Scalar(idx.iter().map(|&i| v[i]).collect()),
        };
        let groups = idx.iter().map(|&i| self.groups[i]).collect();
        Self {
            features,
            labels,
            groups,
        }
    }
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// k nearest training rows by Euclidean distance. Ordering ties break on
/// the tie key (label text or target value), never on row position, so the
/// result is invariant under training-set permutation.
fn nearest_k(
    features: &[Vec<f64>],
    tie_keys: &[String],
    query: &[f64],
    k: usize,
) -> Result<Vec<Neighbor>, MlError> {
    if features.is_empty() {
        return Err(MlError::EmptyTrainingSet);
    }
    if k == 0 || k > features.len() {
        return Err(MlError::KTooLarge {
            k,
            n: features.len(),
        });
    }
    if let Some(row) = features.iter().find(|r| r.len() != query.len()) {
        return Err(MlError::DimensionMismatch {
            row: 0,
            got: query.len(),
            expected: row.len(),
        });
    }
    let mut order: Vec<(f64, &str, usize)> = features
        .iter()
        .enumerate()
        .map(|(i, row)| (euclidean_distance(row, query), tie_keys[i].as_str(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(order
        .into_iter()
        .take(k)
        .map(|(distance, _, index)| Neighbor { index, distance })
        .collect())
}

/// Majority vote among the k Euclidean-nearest neighbors; vote ties break
/// to the smallest summed distance, then to the lowest label order.
pub fn knn_classify(
    train: &Dataset,
    query: &[f64],
    k: usize,
) -> Result<(String, Vec<Neighbor>), MlError> {
    let labels = match &train.labels {
        Labels::Categorical(v) => v,
        Labels::Scalar(_) => return Err(MlError::WrongTask("classification needs categorical labels".into())),
    };
    let neighbors = nearest_k(&train.features, labels, query, k)?;
    let mut votes: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for n in &neighbors {
        let e = votes.entry(labels[n.index].as_str()).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += n.distance;
    }
    // BTreeMap iterates labels in order, so equal (count, distance) keeps
    // the lexicographically smallest label
    let mut best: Option<(&str, usize, f64)> = None;
    for (label, (count, dist)) in &votes {
        let replace = match best {
            None => true,
            Some((_, bc, bd)) => *count > bc || (*count == bc && *dist < bd),
        };
        if replace {
            best = Some((label, *count, *dist));
        }
    }
    Ok((best.unwrap().0.to_string(), neighbors))
}

/// Unweighted mean of the k nearest targets.
pub fn knn_regress(train: &Dataset, query: &[f64], k: usize) -> Result<f64, MlError> {
    let targets = match &train.labels {
        Labels::Scalar(v) => v,
        Labels::Categorical(_) => {
            return Err(MlError::WrongTask("regression needs scalar labels".into()))
        }
    };
    let keys: Vec<String> = targets.iter().map(|t| format!("{t:?}")).collect();
    let neighbors = nearest_k(&train.features, &keys, query, k)?;
    Ok(neighbors.iter().map(|n| targets[n.index]).sum::<f64>() / k as f64)
}

/// Group-aware stratified k-fold splits: groups (not rows) are dealt
/// round-robin per class after a seeded shuffle, so class proportions per
/// fold stay within one group of the global proportions and no group
/// straddles folds. Deterministic under `seed`.
pub fn stratified_kfold(
    dataset: &Dataset,
    folds: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, MlError> {
    if folds < 2 {
        return Err(MlError::BadFolds(folds));
    }
    // group id → (class key, row indices); verify one class per group
    let mut group_rows: BTreeMap<u64, (String, Vec<usize>)> = BTreeMap::new();
    for i in 0..dataset.len() {
        let key = dataset.labels.strat_key(i);
        let g = dataset.groups[i];
        match group_rows.get_mut(&g) {
            None => {
                group_rows.insert(g, (key, vec![i]));
            }
            Some((k0, rows)) => {
                if *k0 != key {
                    return Err(MlError::GroupLabelConflict {
                        a: rows[0],
                        b: i,
                        group: g,
                    });
                }
                rows.push(i);
            }
        }
    }
    // class key → group ids (BTreeMaps give a stable class/group order)
    let mut classes: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for (&g, (key, _)) in &group_rows {
        classes.entry(key.clone()).or_default().push(g);
    }
    for (class, gs) in &classes {
        if gs.len() < folds {
            return Err(MlError::ClassTooSmall {
                class: class.clone(),
                groups: gs.len(),
                folds,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of_group: BTreeMap<u64, usize> = BTreeMap::new();
    let mut offset = 0usize;
    for gs in classes.values() {
        let mut shuffled = gs.clone();
        shuffled.shuffle(&mut rng);
        for (pos, g) in shuffled.into_iter().enumerate() {
            fold_of_group.insert(g, (offset + pos) % folds);
        }
        offset += gs.len();
    }

    let mut splits = Vec::with_capacity(folds);
    for f in 0..folds {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for i in 0..dataset.len() {
            if fold_of_group[&dataset.groups[i]] == f {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        splits.push((train, test));
    }
    Ok(splits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    Regress,
}

/// Confusion matrix with rows = true labels, columns = predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub task: Task,
    pub folds: usize,
    pub k: usize,
    pub seed: u64,
    pub n_samples: usize,
    /// Pooled accuracy over all folds (classification).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// Pooled RMSE in target units (regression).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    /// Per-fold accuracy or RMSE.
    pub per_fold: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Confusion>,
    /// (truth, prediction) pairs over all held-out rows (regression).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<(f64, f64)>,
}

/// Cross-validated KNN evaluation under the task's protocol.
pub fn evaluate(
    dataset: &Dataset,
    task: Task,
    folds: usize,
    k: usize,
    seed: u64,
) -> Result<Report, MlError> {
    match (task, &dataset.labels) {
        (Task::Classify, Labels::Categorical(_)) | (Task::Regress, Labels::Scalar(_)) => {}
        _ => return Err(MlError::WrongTask("dataset labels do not fit the task".into())),
    }
    let splits = stratified_kfold(dataset, folds, seed)?;
    match task {
        Task::Classify => {
            let labels = match &dataset.labels {
                Labels::Categorical(v) => v,
                _ => unreachable!(),
            };
            let mut names: Vec<String> = labels.to_vec();
            names.sort();
            names.dedup();
            let index_of = |l: &str| names.iter().position(|n| n == l).unwrap();
            let mut matrix = vec![vec![0usize; names.len()]; names.len()];
            let mut per_fold = Vec::new();
            let mut correct = 0usize;
            for (train_idx, test_idx) in &splits {
                let train = dataset.subset(train_idx);
                let mut fold_correct = 0usize;
                for &i in test_idx {
                    let (pred, _) = knn_classify(&train, &dataset.features[i], k)?;
                    let truth = &labels[i];
                    matrix[index_of(truth)][index_of(&pred)] += 1;
                    if pred == *truth {
                        fold_correct += 1;
                    }
                }
                correct += fold_correct;
                per_fold.push(fold_correct as f64 / test_idx.len().max(1) as f64);
            }
            Ok(Report {
                task,
                folds,
                k,
                seed,
                n_samples: dataset.len(),
                accuracy: Some(correct as f64 / dataset.len() as f64),
                rmse: None,
                per_fold,
                confusion: Some(Confusion {
                    labels: names,
                    matrix,
                }),
                predictions: Vec::new(),
            })
        }
        Task::Regress => {
            let targets = match &dataset.labels {
                Labels::Scalar(v) => v,
                _ => unreachable!(),
            };
            let mut per_fold = Vec::new();
            let mut predictions = Vec::new();
            let mut sq_sum = 0.0;
            for (train_idx, test_idx) in &splits {
                let train = dataset.subset(train_idx);
                let mut fold_sq = 0.0;
                for &i in test_idx {
                    let pred = knn_regress(&train, &dataset.features[i], k)?;
                    let err = pred - targets[i];
                    fold_sq += err * err;
                    predictions.push((targets[i], pred));
                }
                sq_sum += fold_sq;
                per_fold.push((fold_sq / test_idx.len().max(1) as f64).sqrt());
            }
            Ok(Report {
                task,
                folds,
                k,
                seed,
                n_samples: dataset.len(),
                accuracy: None,
                rmse: Some((sq_sum / dataset.len() as f64).sqrt()),
                per_fold,
                confusion: None,
                predictions,
            })
        }
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    /// Human-readable rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match self.task {
            Task::Classify => {
                s.push_str(&format!(
                    "KNN classification: k={} folds={} seed={} samples={}\n",
                    self.k, self.folds, self.seed, self.n_samples
                ));
                s.push_str(&format!(
                    "accuracy: {:.4}\nper-fold: {}\n",
                    self.accuracy.unwrap_or(f64::NAN),
                    self.per_fold
                        .iter()
                        .map(|a| format!("{a:.4}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                ));
                if let Some(c) = &self.confusion {
                    s.push_str("confusion (rows = true):\n");
                    s.push_str(&format!("{:>12}", ""));
                    for l in &c.labels {
                        s.push_str(&format!("{l:>12}"));
                    }
                    s.push('\n');
                    for (i, row) in c.matrix.iter().enumerate() {
                        s.push_str(&format!("{:>12}", c.labels[i]));
                        for v in row {
                            s.push_str(&format!("{v:>12}"));
                        }
                        s.push('\n');
                    }
                }
            }
            Task::Regress => {
                s.push_str(&format!(
                    "KNN regression: k={} folds={} seed={} samples={}\n",
                    self.k, self.folds, self.seed, self.n_samples
                ));
                s.push_str(&format!(
                    "RMSE: {:.4}\nper-fold RMSE: {}\n",
                    self.rmse.unwrap_or(f64::NAN),
                    self.per_fold
                        .iter()
                        .map(|a| format!("{a:.4}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                ));
            }
        }
        s
    }
}

/// Confusion matrix as CSV: header row of predicted labels, one row per
/// true label.
pub fn write_confusion_csv(confusion: &Confusion, path: &Path) -> Result<(), MlError> {
    let io_err = |source| MlError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    writeln!(f, "true\\pred,{}", confusion.labels.join(",")).map_err(io_err)?;
    for (i, row) in confusion.matrix.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{},{}", confusion.labels[i], cells.join(",")).map_err(io_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn toy_classification() -> Dataset {
        // two tight blobs around (0,0) and (10,10)
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        for i in 0..10 {
            let jitter = i as f64 * 0.01;
            features.push(vec![jitter, -jitter]);
            labels.push("low".to_string());
            groups.push(i);
            features.push(vec![10.0 + jitter, 10.0 - jitter]);
            labels.push("high".to_string());
            groups.push(100 + i);
        }
        Dataset::new(features, Labels::Categorical(labels), groups).unwrap()
    }

    #[test]
    fn exact_training_point_wins_at_k1() {
        let ds = toy_classification();
        let (label, neighbors) = knn_classify(&ds, &ds.features[0].clone(), 1).unwrap();
        assert_eq!(label, "low");
        assert_eq!(neighbors[0].distance, 0.0);
    }

    #[test]
    fn majority_vote_two_to_one() {
        let ds = Dataset::new(
            vec![vec![0.0], vec![0.2], vec![0.3]],
            Labels::Categorical(vec!["a".into(), "a".into(), "b".into()]),
            vec![0, 1, 2],
        )
        .unwrap();
        let (label, _) = knn_classify(&ds, &[0.1], 3).unwrap();
        assert_eq!(label, "a");
    }

    #[test]
    fn vote_tie_breaks_on_summed_distance_then_label() {
        // k = 2: one 'a' at distance 1.0, one 'b' at distance 1.5
        let ds = Dataset::new(
            vec![vec![1.0], vec![-1.5], vec![50.0]],
            Labels::Categorical(vec!["a".into(), "b".into(), "far".into()]),
            vec![0, 1, 2],
        )
        .unwrap();
        let (label, _) = knn_classify(&ds, &[0.0], 2).unwrap();
        assert_eq!(label, "a");

        // equal distances too: falls back to lowest label order
        let ds = Dataset::new(
            vec![vec![1.0], vec![-1.0]],
            Labels::Categorical(vec!["zeta".into(), "alpha".into()]),
            vec![0, 1],
        )
        .unwrap();
        let (label, _) = knn_classify(&ds, &[0.0], 2).unwrap();
        assert_eq!(label, "alpha");
    }

    #[test]
    fn regression_mean_and_exact_match() {
        let ds = Dataset::new(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![50.0]],
            Labels::Scalar(vec![10.0, 20.0, 30.0, 999.0]),
            vec![0, 1, 2, 3],
        )
        .unwrap();
        let pred = knn_regress(&ds, &[1.0], 3).unwrap();
        assert_relative_eq!(pred, 20.0);
        let pred = knn_regress(&ds, &[50.0], 1).unwrap();
        assert_relative_eq!(pred, 999.0);
    }

    #[test]
    fn knn_matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let features: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..5).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let targets: Vec<f64> = (0..40).map(|_| rng.gen::<f64>() * 100.0).collect();
        let ds = Dataset::new(
            features.clone(),
            Labels::Scalar(targets.clone()),
            (0..40).collect(),
        )
        .unwrap();
        let query: Vec<f64> = (0..5).map(|_| rng.gen::<f64>()).collect();
        let k = 3;
        let pred = knn_regress(&ds, &query, k).unwrap();
        let mut order: Vec<(f64, f64)> = features
            .iter()
            .zip(&targets)
            .map(|(f, &t)| (euclidean_distance(f, &query), t))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let brute: f64 = order.iter().take(k).map(|(_, t)| t).sum::<f64>() / k as f64;
        assert_relative_eq!(pred, brute, max_relative = 1e-12);
    }

    #[test]
    fn prediction_is_invariant_under_training_permutation() {
        let ds = toy_classification();
        let query = vec![4.9, 5.1];
        let (base, _) = knn_classify(&ds, &query, 3).unwrap();
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            idx.shuffle(&mut rng);
            let shuffled = ds.subset(&idx);
            let (label, _) = knn_classify(&shuffled, &query, 3).unwrap();
            assert_eq!(label, base);
        }
    }

    #[test]
    fn constant_feature_shift_leaves_predictions_unchanged() {
        let ds = toy_classification();
        let query = vec![2.0, 3.0];
        let (base, _) = knn_classify(&ds, &query, 3).unwrap();
        let shifted_features: Vec<Vec<f64>> = ds
            .features
            .iter()
            .map(|row| row.iter().map(|v| v + 17.5).collect())
            .collect();
        let shifted = Dataset::new(shifted_features, ds.labels.clone(), ds.groups.clone()).unwrap();
        let shifted_query: Vec<f64> = query.iter().map(|v| v + 17.5).collect();
        let (label, _) = knn_classify(&shifted, &shifted_query, 3).unwrap();
        assert_eq!(label, base);
    }

    fn balanced_dataset(classes: usize, per_class: usize) -> Dataset {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        for c in 0..classes {
            for g in 0..per_class {
                features.push(vec![c as f64 * 10.0 + g as f64 * 0.01]);
                labels.push(format!("c{c}"));
                groups.push((c * per_class + g) as u64);
            }
        }
        Dataset::new(features, Labels::Categorical(labels), groups).unwrap()
    }

    #[test]
    fn stratified_folds_are_exactly_balanced_when_divisible() {
        // 7 classes × 10 singleton groups, 5 folds → 2 per class per fold
        let ds = balanced_dataset(7, 10);
        let splits = stratified_kfold(&ds, 5, 42).unwrap();
        assert_eq!(splits.len(), 5);
        let labels = match &ds.labels {
            Labels::Categorical(v) => v,
            _ => unreachable!(),
        };
        for (train, test) in &splits {
            assert_eq!(test.len(), 14);
            assert_eq!(train.len() + test.len(), 70);
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for &i in test {
                *counts.entry(labels[i].as_str()).or_insert(0) += 1;
            }
            assert_eq!(counts.len(), 7);
            assert!(counts.values().all(|&c| c == 2));
        }
    }

    #[test]
    fn folds_respect_groups() {
        // 2 windows per recording share a group id
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        for c in 0..3 {
            for rec in 0..6 {
                for w in 0..2 {
                    features.push(vec![c as f64 + 0.1 * rec as f64 + 0.001 * w as f64]);
                    labels.push(format!("m{c}"));
                    groups.push((c * 100 + rec) as u64);
                }
            }
        }
        let ds = Dataset::new(features, Labels::Categorical(labels), groups).unwrap();
        let splits = stratified_kfold(&ds, 3, 9).unwrap();
        for (train, test) in &splits {
            let test_groups: std::collections::BTreeSet<u64> =
                test.iter().map(|&i| ds.groups[i]).collect();
            for &i in train {
                assert!(!test_groups.contains(&ds.groups[i]), "group leaked");
            }
            // both windows of a test recording are present
            for g in &test_groups {
                let members = test.iter().filter(|&&i| ds.groups[i] == *g).count();
                assert_eq!(members, 2);
            }
        }
    }

    #[test]
    fn folding_errors() {
        let ds = balanced_dataset(2, 4);
        assert!(matches!(
            stratified_kfold(&ds, 1, 0),
            Err(MlError::BadFolds(1))
        ));
        assert!(matches!(
            stratified_kfold(&ds, 5, 0),
            Err(MlError::ClassTooSmall { .. })
        ));

        // same seed → identical splits; different seed → different shuffle
        let a = stratified_kfold(&ds, 2, 7).unwrap();
        let b = stratified_kfold(&ds, 2, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn group_label_conflict_is_detected() {
        let ds = Dataset::new(
            vec![vec![0.0], vec![1.0]],
            Labels::Categorical(vec!["a".into(), "b".into()]),
            vec![5, 5],
        )
        .unwrap();
        assert!(matches!(
            stratified_kfold(&ds, 2, 0),
            Err(MlError::GroupLabelConflict { group: 5, .. })
        ));
    }

    #[test]
    fn separated_blobs_classify_perfectly() {
        let ds = toy_classification();
        let report = evaluate(&ds, Task::Classify, 5, 3, 11).unwrap();
        assert_relative_eq!(report.accuracy.unwrap(), 1.0);
        let c = report.confusion.unwrap();
        // row sums equal per-class test counts; total equals N
        let total: usize = c.matrix.iter().flatten().sum();
        assert_eq!(total, ds.len());
        for row in &c.matrix {
            assert_eq!(row.iter().sum::<usize>(), 10);
        }
    }

    #[test]
    fn shuffled_labels_score_near_chance() {
        let classes = 7;
        let n_per = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        for i in 0..classes * n_per {
            features.push(vec![rng.gen::<f64>(), rng.gen::<f64>()]);
            labels.push(format!("c{}", rng.gen_range(0..classes)));
            groups.push(i as u64);
        }
        // ensure every class survives folding
        for c in 0..classes {
            for (i, l) in labels.iter_mut().enumerate().take(classes * 5) {
                if i % classes == c {
                    *l = format!("c{c}");
                }
            }
        }
        let ds = Dataset::new(features, Labels::Categorical(labels), groups).unwrap();
        let report = evaluate(&ds, Task::Classify, 5, 3, 77).unwrap();
        let p = 1.0 / classes as f64;
        let sigma = (p * (1.0 - p) / ds.len() as f64).sqrt();
        let acc = report.accuracy.unwrap();
        assert!(
            (acc - p).abs() < 3.0 * sigma + 0.02,
            "accuracy {acc:.3} too far from chance {p:.3}"
        );
    }

    #[test]
    fn regression_on_duplicated_rows_has_zero_rmse() {
        // every target appears in several identical copies; k = 1 finds a
        // twin from another fold
        let mut features = Vec::new();
        let mut targets = Vec::new();
        let mut groups = Vec::new();
        let mut g = 0u64;
        for pos in 0..5 {
            for _rep in 0..4 {
                features.push(vec![pos as f64 * 2.0, pos as f64]);
                targets.push(pos as f64 * 5.0);
                groups.push(g);
                g += 1;
            }
        }
        let ds = Dataset::new(features, Labels::Scalar(targets), groups).unwrap();
        let report = evaluate(&ds, Task::Regress, 3, 1, 5).unwrap();
        assert_relative_eq!(report.rmse.unwrap(), 0.0, epsilon = 1e-12);
        assert_eq!(report.predictions.len(), ds.len());
    }

    #[test]
    fn report_serializes_and_renders() {
        let ds = toy_classification();
        let report = evaluate(&ds, Task::Classify, 2, 3, 1).unwrap();
        let json = report.to_json();
        assert!(json.contains("\"accuracy\""));
        let text = report.to_text();
        assert!(text.contains("confusion"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("confusion.csv");
        write_confusion_csv(report.confusion.as_ref().unwrap(), &path).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        assert!(content.starts_with("true\\pred,high,low"));
        assert_eq!(content.lines().count(), 3);
    }

    #[test]
    fn knn_input_errors() {
        let empty = Dataset::new(vec![], Labels::Categorical(vec![]), vec![]).unwrap();
        assert!(matches!(
            knn_classify(&empty, &[0.0], 1),
            Err(MlError::EmptyTrainingSet)
        ));
        let ds = toy_classification();
        assert!(matches!(
            knn_classify(&ds, &[0.0, 0.0], 100),
            Err(MlError::KTooLarge { .. })
        ));
        assert!(knn_regress(&ds, &[0.0, 0.0], 1).is_err()); // wrong task
    }
}
