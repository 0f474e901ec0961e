//! Binary decision tree over [`FeatureVector`] dimensions.
//!
//! Splits send a sample left when its feature value is strictly below the
//! threshold. Leaves keep per-class counts; the prediction is the majority
//! class (ties go to human) with confidence `majority / total`.
//!
//! The tree returned by [`default_model`] is a hand-authored set of
//! thresholds shipped with this crate. Its counts are authored constants, not
//! measurements; retrain with [`train_tree`] on labeled data where possible.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, FEATURE_NAMES};
use crate::github_fetcher::RepoRef;
use crate::store_report::PredictionRecord;
use crate::Label;

/// Deepest tree accepted from disk.
pub const MAX_MODEL_DEPTH: usize = 32;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model document: {0}")]
    Malformed(String),
    #[error("unknown feature name {0:?} in feature_names")]
    UnknownFeature(String),
    #[error("split references feature index {index} but the model declares {declared} features")]
    FeatureIndex { index: usize, declared: usize },
    #[error("leaf with zero samples")]
    EmptyLeaf,
    #[error("tree depth {depth} exceeds limit {limit}")]
    TooDeep { depth: usize, limit: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("{path}:{line}: {reason}")]
    Labels { path: String, line: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    #[serde(default)]
    pub bot: u64,
    #[serde(default)]
    pub human: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.bot + self.human
    }

    fn add(&mut self, label: Label) {
        match label {
            Label::Bot => self.bot += 1,
            Label::Human => self.human += 1,
        }
    }

    fn is_pure(&self) -> bool {
        self.bot == 0 || self.human == 0
    }

    pub fn majority(&self) -> TypedPrediction {
        let (label, count) = if self.bot > self.human {
            (Label::Bot, self.bot)
        } else {
            (Label::Human, self.human)
        };
        TypedPrediction {
            label,
            confidence: count as f64 / self.total() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        counts: ClassCounts,
    },
}

impl Node {
    fn leaf(bot: u64, human: u64) -> Node {
        Node::Leaf {
            counts: ClassCounts { bot, human },
        }
    }

    fn split(feature: usize, threshold: f64, left: Node, right: Node) -> Node {
        Node::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Number of splits on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    fn validate(&self, declared: usize, depth: usize) -> Result<(), ClassifierError> {
        if depth > MAX_MODEL_DEPTH {
            return Err(ClassifierError::TooDeep {
                depth,
                limit: MAX_MODEL_DEPTH,
            });
        }
        match self {
            Node::Leaf { counts } if counts.total() == 0 => Err(ClassifierError::EmptyLeaf),
            Node::Leaf { .. } => Ok(()),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if *feature >= declared {
                    return Err(ClassifierError::FeatureIndex {
                        index: *feature,
                        declared,
                    });
                }
                if !threshold.is_finite() {
                    return Err(ClassifierError::Malformed(format!("non-finite threshold {threshold}")));
                }
                left.validate(declared, depth + 1)?;
                right.validate(declared, depth + 1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub feature_names: Vec<String>,
    pub root: Node,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypedPrediction {
    pub label: Label,
    /// Majority count over total count at the deciding leaf.
    pub confidence: f64,
}

impl TrainedModel {
    pub fn new(feature_names: Vec<String>, root: Node) -> Result<Self, ClassifierError> {
        let model = TrainedModel { feature_names, root };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        for (i, name) in self.feature_names.iter().enumerate() {
            if !FEATURE_NAMES.contains(&name.as_str()) {
                return Err(ClassifierError::UnknownFeature(name.clone()));
            }
            if self.feature_names[..i].contains(name) {
                return Err(ClassifierError::Malformed(format!("duplicate feature name {name:?}")));
            }
        }
        self.root.validate(self.feature_names.len(), 0)
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let model: TrainedModel =
            serde_json::from_str(text).map_err(|e| ClassifierError::Malformed(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }
}

fn standard_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// The bundled hand-authored tree.
pub fn default_model() -> TrainedModel {
    const NUM_COMMENTS: usize = 0;
    const NUM_PATTERNS: usize = 2;
    const GINI: usize = 3;
    const PATTERN_RATIO: usize = 4;
    let root = Node::split(
        NUM_COMMENTS,
        10.0,
        Node::leaf(1, 9),
        Node::split(
            PATTERN_RATIO,
            0.15,
            Node::leaf(9, 1),
            Node::split(
                GINI,
                0.6,
                Node::leaf(2, 8),
                Node::split(NUM_PATTERNS, 6.0, Node::leaf(7, 3), Node::leaf(3, 7)),
            ),
        ),
    );
    TrainedModel {
        feature_names: standard_names(),
        root,
    }
}

pub fn predict(model: &TrainedModel, fv: &FeatureVector) -> Result<TypedPrediction, ClassifierError> {
    let mut node = &model.root;
    loop {
        match node {
            Node::Leaf { counts } => {
                if counts.total() == 0 {
                    return Err(ClassifierError::EmptyLeaf);
                }
                return Ok(counts.majority());
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let name = model.feature_names.get(*feature).ok_or(ClassifierError::FeatureIndex {
                    index: *feature,
                    declared: model.feature_names.len(),
                })?;
                let value = fv.get(name).ok_or_else(|| ClassifierError::UnknownFeature(name.clone()))?;
                node = if value < *threshold { left } else { right };
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { max_depth: 4, min_leaf: 2 }
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    // Weighted impurity times n, as the fraction num / den.
    num: u128,
    den: u128,
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        self.num * other.den < other.num * self.den
    }
}

/// Greedy CART growth minimizing weighted Gini impurity.
///
/// Thresholds are midpoints between consecutive distinct values; equal
/// impurities keep the lower feature index, then the lower threshold.
/// Growth stops on a pure node, at `max_depth`, or when no split leaves at
/// least `min_leaf` samples on both sides.
pub fn train_tree(dataset: &[(FeatureVector, Label)], params: TrainParams) -> Result<TrainedModel, ClassifierError> {
    if dataset.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    let rows: Vec<([f64; 5], Label)> = dataset.iter().map(|(fv, l)| (fv.values(), *l)).collect();
    let indices: Vec<usize> = (0..rows.len()).collect();
    let root = grow(&rows, &indices, 0, params);
    Ok(TrainedModel {
        feature_names: standard_names(),
        root,
    })
}

fn counts_of(rows: &[([f64; 5], Label)], indices: &[usize]) -> ClassCounts {
    let mut c = ClassCounts::default();
    for &i in indices {
        c.add(rows[i].1);
    }
    c
}

fn grow(rows: &[([f64; 5], Label)], indices: &[usize], depth: usize, params: TrainParams) -> Node {
    let counts = counts_of(rows, indices);
    if counts.is_pure() || depth >= params.max_depth {
        return Node::Leaf { counts };
    }
    match best_split(rows, indices, counts, params.min_leaf.max(1)) {
        None => Node::Leaf { counts },
        Some(c) => {
            let (left, right): (Vec<usize>, Vec<usize>) =
                indices.iter().partition(|&&i| rows[i].0[c.feature] < c.threshold);
            Node::split(
                c.feature,
                c.threshold,
                grow(rows, &left, depth + 1, params),
                grow(rows, &right, depth + 1, params),
            )
        }
    }
}

fn best_split(
    rows: &[([f64; 5], Label)],
    indices: &[usize],
    total: ClassCounts,
    min_leaf: usize,
) -> Option<Candidate> {
    let n = indices.len();
    let mut best: Option<Candidate> = None;
    for feature in 0..FEATURE_NAMES.len() {
        let mut sorted: Vec<(f64, Label)> = indices.iter().map(|&i| (rows[i].0[feature], rows[i].1)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut left = ClassCounts::default();
        for k in 0..n - 1 {
            left.add(sorted[k].1);
            let (lo, hi) = (sorted[k].0, sorted[k + 1].0);
            if lo == hi {
                continue;
            }
            let n_left = k + 1;
            let n_right = n - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let right = ClassCounts {
                bot: total.bot - left.bot,
                human: total.human - left.human,
            };
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold <= lo || threshold > hi {
                threshold = hi;
            }
            // n * weighted impurity = 2 bL hL / nL + 2 bR hR / nR
            let (nl, nr) = (n_left as u128, n_right as u128);
            let cand = Candidate {
                feature,
                threshold,
                num: 2 * (left.bot as u128 * left.human as u128 * nr + right.bot as u128 * right.human as u128 * nl),
                den: nl * nr,
            };
            if best.as_ref().is_none_or(|b| cand.better_than(b)) {
                best = Some(cand);
            }
        }
    }
    best
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<(), ClassifierError> {
    let mut text = model.to_json();
    text.push('\n');
    crate::fsutil::write_atomic(path, text.as_bytes()).map_err(|source| ClassifierError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<TrainedModel, ClassifierError> {
    let text = std::fs::read_to_string(path).map_err(|source| ClassifierError::Io {
        path: path.display().to_string(),
        source,
    })?;
    TrainedModel::from_json(&text)
}

pub const LABELS_HEADER: [&str; 3] = ["repository", "login", "label"];

/// Reads a `repository,login,label` file.
pub fn read_labels(path: &Path) -> Result<Vec<(RepoRef, String, Label)>, ClassifierError> {
    let data = std::fs::read(path).map_err(|source| ClassifierError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let err = |line: u64, reason: String| ClassifierError::Labels {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut reader = crate::corpus::csv_reader(data.as_slice());
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(i as u64 + 1, |p| p.line());
        if i == 0 {
            if row.iter().ne(LABELS_HEADER.iter().copied()) {
                return Err(err(1, format!("expected header `{}`", LABELS_HEADER.join(","))));
            }
            continue;
        }
        if row.len() != 3 {
            return Err(err(line, format!("expected 3 fields, found {}", row.len())));
        }
        let repo = row[0].parse().map_err(|e: crate::github_fetcher::RepoRefError| err(line, e.to_string()))?;
        let label = Label::parse(&row[2]).ok_or_else(|| err(line, format!("label must be bot or human, found {:?}", &row[2])))?;
        out.push((repo, row[1].to_string(), label));
    }
    if out.is_empty() && reader.position().line() == 0 {
        return Err(err(1, "missing header".into()));
    }
    Ok(out)
}

/// Labeled feature vectors ready for [`train_tree`].
pub type Dataset = Vec<(FeatureVector, Label)>;

/// Pairs labels with the features of matching prediction records. Labels
/// without a matching record are skipped and returned separately.
pub fn join_training_set(
    records: &[PredictionRecord],
    labels: &[(RepoRef, String, Label)],
) -> (Dataset, Vec<(RepoRef, String)>) {
    let by_key: HashMap<(&RepoRef, &str), &PredictionRecord> =
        records.iter().map(|r| ((&r.repo, r.login.as_str()), r)).collect();
    let mut dataset = Vec::new();
    let mut unmatched = Vec::new();
    for (repo, login, label) in labels {
        match by_key.get(&(repo, login.as_str())) {
            Some(r) => dataset.push((r.features, *label)),
            None => unmatched.push((repo.clone(), login.clone())),
        }
    }
    (dataset, unmatched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fv(n: usize, e: usize, p: usize, g: f64, r: f64) -> FeatureVector {
        FeatureVector {
            num_comments: n,
            num_empty: e,
            num_patterns: p,
            gini: g,
            pattern_ratio: r,
        }
    }

    fn accuracy(model: &TrainedModel, data: &[(FeatureVector, Label)]) -> f64 {
        let hits = data.iter().filter(|(x, y)| predict(model, x).unwrap().label == *y).count();
        hits as f64 / data.len() as f64
    }

    #[test]
    fn default_model_shape() {
        let m = default_model();
        assert_eq!(m.depth(), 4);
        assert_eq!(m.leaf_count(), 5);
        m.validate().unwrap();
        assert_eq!(TrainedModel::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn default_model_traces() {
        let m = default_model();
        let p = predict(&m, &fv(120, 0, 3, 0.72, 0.025)).unwrap();
        assert_eq!((p.label, p.confidence), (Label::Bot, 0.9));
        let p = predict(&m, &fv(4, 0, 4, 0.0, 1.0)).unwrap();
        assert_eq!((p.label, p.confidence), (Label::Human, 0.9));
        let p = predict(&m, &fv(50, 0, 30, 0.2, 0.6)).unwrap();
        assert_eq!((p.label, p.confidence), (Label::Human, 0.8));
        // n3 branches
        let p = predict(&m, &fv(50, 0, 4, 0.7, 0.2)).unwrap();
        assert_eq!((p.label, p.confidence), (Label::Bot, 0.7));
        let p = predict(&m, &fv(50, 0, 12, 0.7, 0.24)).unwrap();
        assert_eq!((p.label, p.confidence), (Label::Human, 0.7));
    }

    #[test]
    fn json_layout() {
        let m = TrainedModel::new(vec!["gini".into()], Node::split(0, 0.5, Node::leaf(0, 2), Node::leaf(3, 1))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["feature_names"][0], "gini");
        assert_eq!(v["root"]["kind"], "split");
        assert_eq!(v["root"]["feature"], 0);
        assert_eq!(v["root"]["left"]["kind"], "leaf");
        assert_eq!(v["root"]["right"]["counts"]["bot"], 3);
    }

    #[test]
    fn unknown_feature_is_rejected_by_name() {
        let doc = r#"{"feature_names":["num_comments","num_likes"],"root":{"kind":"leaf","counts":{"bot":1,"human":0}}}"#;
        let err = TrainedModel::from_json(doc).unwrap_err();
        assert!(matches!(&err, ClassifierError::UnknownFeature(n) if n == "num_likes"));
        assert!(err.to_string().contains("num_likes"));
    }

    #[test]
    fn corrupt_models_are_rejected() {
        let bad_index = r#"{"feature_names":["gini"],"root":{"kind":"split","feature":3,"threshold":1.0,
            "left":{"kind":"leaf","counts":{"bot":1,"human":0}},"right":{"kind":"leaf","counts":{"bot":1,"human":0}}}}"#;
        assert!(matches!(TrainedModel::from_json(bad_index), Err(ClassifierError::FeatureIndex { .. })));
        let empty_leaf = r#"{"feature_names":[],"root":{"kind":"leaf","counts":{"bot":0,"human":0}}}"#;
        assert!(matches!(TrainedModel::from_json(empty_leaf), Err(ClassifierError::EmptyLeaf)));
        assert!(matches!(TrainedModel::from_json("{"), Err(ClassifierError::Malformed(_))));

        let mut deep = Node::leaf(1, 0);
        for _ in 0..=MAX_MODEL_DEPTH {
            deep = Node::split(0, 1.0, deep, Node::leaf(0, 1));
        }
        let text = serde_json::to_string(&TrainedModel { feature_names: standard_names(), root: deep }).unwrap();
        assert!(matches!(TrainedModel::from_json(&text), Err(ClassifierError::TooDeep { .. })));
    }

    #[test]
    fn pure_dataset_gives_single_leaf() {
        let data: Vec<_> = (0..5).map(|i| (fv(i * 3, 0, i, 0.1, 0.5), Label::Human)).collect();
        let m = train_tree(&data, TrainParams::default()).unwrap();
        assert_eq!(m.depth(), 0);
        let p = predict(&m, &fv(100, 0, 1, 0.9, 0.01)).unwrap();
        assert_eq!((p.label, p.confidence), (Label::Human, 1.0));
    }

    fn separable() -> Vec<(FeatureVector, Label)> {
        let mut data: Vec<_> = (0..4).map(|_| (fv(40, 1, 2, 0.3, 0.05), Label::Bot)).collect();
        data.extend((0..4).map(|_| (fv(40, 1, 2, 0.3, 0.5), Label::Human)));
        data
    }

    #[test]
    fn separable_dataset_splits_once_at_midpoint() {
        let data = separable();
        let m = train_tree(&data, TrainParams::default()).unwrap();
        assert_eq!(m.depth(), 1);
        match &m.root {
            Node::Split { feature, threshold, left, right } => {
                assert_eq!(m.feature_names[*feature], "pattern_ratio");
                assert!((threshold - 0.275).abs() < 1e-12);
                assert_eq!(**left, Node::leaf(4, 0));
                assert_eq!(**right, Node::leaf(0, 4));
            }
            other => panic!("expected split, got {other:?}"),
        }
        assert_eq!(accuracy(&m, &data), 1.0);
        assert_eq!(TrainedModel::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn contradictory_duplicates_tie_to_human() {
        let x = fv(12, 0, 3, 0.2, 0.25);
        let m = train_tree(&[(x, Label::Bot), (x, Label::Human)], TrainParams { max_depth: 4, min_leaf: 2 }).unwrap();
        assert_eq!(m.depth(), 0);
        let p = predict(&m, &x).unwrap();
        assert_eq!((p.label, p.confidence), (Label::Human, 0.5));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(train_tree(&[], TrainParams::default()), Err(ClassifierError::EmptyDataset)));
    }

    #[test]
    fn min_leaf_blocks_small_children() {
        let data = vec![
            (fv(1, 0, 1, 0.0, 1.0), Label::Bot),
            (fv(2, 0, 1, 0.0, 1.0), Label::Human),
            (fv(3, 0, 1, 0.0, 1.0), Label::Human),
        ];
        let m = train_tree(&data, TrainParams { max_depth: 4, min_leaf: 2 }).unwrap();
        assert_eq!(m.depth(), 0);
        let m = train_tree(&data, TrainParams { max_depth: 4, min_leaf: 1 }).unwrap();
        assert_eq!(accuracy(&m, &data), 1.0);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&default_model(), &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), default_model());
        let m = train_tree(&separable(), TrainParams::default()).unwrap();
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }

    fn leaf_total(n: &Node) -> u64 {
        match n {
            Node::Leaf { counts } => counts.total(),
            Node::Split { left, right, .. } => leaf_total(left) + leaf_total(right),
        }
    }

    fn with_feature(feature: usize, v: u32) -> FeatureVector {
        let mut x = fv(0, 0, 0, 0.0, 0.0);
        match feature {
            0 => x.num_comments = v as usize,
            1 => x.num_empty = v as usize,
            2 => x.num_patterns = v as usize,
            3 => x.gini = v as f64 / 1000.0,
            _ => x.pattern_ratio = v as f64 / 1000.0,
        }
        x
    }

    fn sample() -> impl Strategy<Value = (FeatureVector, Label)> {
        (0usize..40, 0usize..5, 1usize..20, 0u32..10, 0u32..10, any::<bool>()).prop_map(|(n, e, p, g, r, bot)| {
            (
                fv(n, e.min(n), p, g as f64 / 10.0, r as f64 / 10.0),
                if bot { Label::Bot } else { Label::Human },
            )
        })
    }

    proptest! {
        #[test]
        fn leaves_account_for_every_sample(
            data in proptest::collection::vec(sample(), 1..40),
            depth in 0usize..6,
            min_leaf in 1usize..4,
        ) {
            let m = train_tree(&data, TrainParams { max_depth: depth, min_leaf }).unwrap();
            prop_assert_eq!(leaf_total(&m.root), data.len() as u64);
            prop_assert!(m.depth() <= depth);
            m.validate().unwrap();
        }

        #[test]
        fn single_threshold_separable_data_is_fit(
            values in proptest::collection::vec(0u32..1000, 2..30),
            cut in 1u32..1000,
            feature in 0usize..5,
        ) {
            let data: Vec<_> = values
                .iter()
                .map(|&v| (with_feature(feature, v), if v < cut { Label::Bot } else { Label::Human }))
                .collect();
            let m = train_tree(&data, TrainParams { max_depth: 1, min_leaf: 1 }).unwrap();
            prop_assert_eq!(accuracy(&m, &data), 1.0);
        }

        #[test]
        fn label_survives_rescaled_counts(bot in 0u64..100, human in 0u64..100, k in 1u64..50) {
            prop_assume!(bot + human > 0);
            let a = ClassCounts { bot, human }.majority();
            let b = ClassCounts { bot: bot * k, human: human * k }.majority();
            prop_assert_eq!(a.label, b.label);
        }

        #[test]
        fn prediction_is_deterministic(x in sample()) {
            let m = default_model();
            let a = predict(&m, &x.0).unwrap();
            let b = predict(&m, &x.0).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a.confidence > 0.0 && a.confidence <= 1.0);
        }
    }
}
