//! Per-contributor features describing how repetitive a contributor's comments
//! are: comments are grouped into patterns by single-linkage clustering under
//! a length-normalized edit distance, and the spread of comments across those
//! patterns is summarized by a Gini coefficient.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::ContributorProfile;

/// Default clustering threshold on normalized edit distance.
pub const DEFAULT_EPS: f64 = 0.3;

/// Feature dimensions in model order.
pub const FEATURE_NAMES: [&str; 5] = ["num_comments", "num_empty", "num_patterns", "gini", "pattern_ratio"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub num_comments: usize,
    pub num_empty: usize,
    pub num_patterns: usize,
    pub gini: f64,
    pub pattern_ratio: f64,
}

impl FeatureVector {
    /// Builds a vector, deriving `pattern_ratio` from the counts.
    pub fn new(num_comments: usize, num_empty: usize, num_patterns: usize, gini: f64) -> Self {
        let pattern_ratio = if num_comments == 0 {
            0.0
        } else {
            num_patterns as f64 / num_comments as f64
        };
        FeatureVector {
            num_comments,
            num_empty,
            num_patterns,
            gini,
            pattern_ratio,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "num_comments" => self.num_comments as f64,
            "num_empty" => self.num_empty as f64,
            "num_patterns" => self.num_patterns as f64,
            "gini" => self.gini,
            "pattern_ratio" => self.pattern_ratio,
            _ => return None,
        })
    }

    pub fn values(&self) -> [f64; 5] {
        [
            self.num_comments as f64,
            self.num_empty as f64,
            self.num_patterns as f64,
            self.gini,
            self.pattern_ratio,
        ]
    }
}

/// Partition of comment indices into patterns, ordered by smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PatternPartition {
    pub clusters: Vec<Vec<usize>>,
}

impl PatternPartition {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }
}

/// Unit-cost Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &[char], b: &[char]) -> usize {
    let (a, b) = if a.len() > b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=a.len()).collect();
    let mut cur = vec![0; a.len() + 1];
    for (j, cb) in b.iter().enumerate() {
        cur[0] = j + 1;
        for (i, ca) in a.iter().enumerate() {
            let sub = prev[i] + usize::from(ca != cb);
            cur[i + 1] = sub.min(prev[i + 1] + 1).min(cur[i] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[a.len()]
}

/// Edit distance if it is at most `limit`, computed on a diagonal band of
/// width `2 * limit + 1` with early exit once every cell exceeds the limit.
pub fn edit_distance_within(a: &[char], b: &[char], limit: usize) -> Option<usize> {
    let (a, b) = if a.len() > b.len() { (b, a) } else { (a, b) };
    let (n, m) = (a.len(), b.len());
    if m - n > limit {
        return None;
    }
    if n == 0 {
        return Some(m);
    }
    let inf = limit + 1;
    let mut prev = vec![inf; m + 1];
    let mut cur = vec![inf; m + 1];
    for (j, cell) in prev.iter_mut().enumerate().take(limit.min(m) + 1) {
        *cell = j;
    }

    for i in 1..=n {
        let lo = i.saturating_sub(limit).max(1);
        let hi = m.min(i + limit);
        cur[lo - 1] = if lo == 1 && i <= limit { i } else { inf };
        let mut row_min = cur[lo - 1];
        for j in lo..=hi {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1).min(inf);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if hi < m {
            cur[hi + 1] = inf;
        }
        if row_min > limit {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (prev[m] <= limit).then_some(prev[m])
}

/// Edit distance divided by the longer length; 0 for two empty strings.
pub fn comment_distance(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    edit_distance(&a, &b) as f64 / longest as f64
}

/// Largest edit count `k` with `k / longest <= eps`.
fn edit_budget(longest: usize, eps: f64) -> usize {
    let within = |k: usize| k as f64 / longest as f64 <= eps;
    let mut k = ((eps * longest as f64).floor().max(0.0) as usize).min(longest);
    while k < longest && within(k + 1) {
        k += 1;
    }
    while k > 0 && !within(k) {
        k -= 1;
    }
    k
}

fn linked(a: &[char], b: &[char], eps: f64) -> bool {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return true;
    }
    edit_distance_within(a, b, edit_budget(longest, eps)).is_some()
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Connected components of the graph linking comments whose distance is at
/// most `eps`. Identical comments are collapsed before any pairwise work.
///
/// Panics if `eps` is outside `(0, 1]`.
pub fn cluster_patterns<S: AsRef<str>>(comments: &[S], eps: f64) -> PatternPartition {
    assert!(eps > 0.0 && eps <= 1.0, "eps must lie in (0, 1], got {eps}");

    let mut distinct: Vec<Vec<char>> = Vec::new();
    let mut slot_of: HashMap<&str, usize> = HashMap::new();
    let mut slots = Vec::with_capacity(comments.len());
    for c in comments {
        let c = c.as_ref();
        let slot = *slot_of.entry(c).or_insert_with(|| {
            distinct.push(c.chars().collect());
            distinct.len() - 1
        });
        slots.push(slot);
    }

    let mut sets = DisjointSet::new(distinct.len());
    for i in 0..distinct.len() {
        for j in (i + 1)..distinct.len() {
            if sets.find(i) == sets.find(j) {
                continue;
            }
            if linked(&distinct[i], &distinct[j], eps) {
                sets.union(i, j);
            }
        }
    }

    // Distinct slots are numbered in first-occurrence order, so grouping by
    // root and ordering by first index gives the canonical cluster order.
    let mut cluster_of_root: HashMap<usize, usize> = HashMap::new();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (idx, slot) in slots.into_iter().enumerate() {
        let root = sets.find(slot);
        let c = *cluster_of_root.entry(root).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        clusters[c].push(idx);
    }
    PatternPartition { clusters }
}

/// Gini coefficient of cluster sizes: mean absolute pairwise difference over
/// twice the mean. Zero for fewer than two sizes.
pub fn gini_inequality(sizes: &[usize]) -> f64 {
    let n = sizes.len();
    if n <= 1 {
        return 0.0;
    }
    let mut sorted: Vec<u128> = sizes.iter().map(|&s| s as u128).collect();
    sorted.sort_unstable();
    let total: u128 = sorted.iter().sum();
    if total == 0 {
        return 0.0;
    }
    // sum_{i,j} |x_i - x_j| = 2 * sum_i (2i - n + 1) x_(i) over ascending order
    let mut weighted: i128 = 0;
    for (i, &x) in sorted.iter().enumerate() {
        weighted += (2 * i as i128 - n as i128 + 1) * x as i128;
    }
    let pair_sum = 2 * weighted;
    // 2 n^2 mu = 2 n * total
    pair_sum as f64 / (2 * n as u128 * total) as f64
}

pub fn extract_features(profile: &ContributorProfile, eps: f64) -> FeatureVector {
    let comments = &profile.comments;
    let num_empty = comments.iter().filter(|c| c.is_empty()).count();
    let partition = cluster_patterns(comments, eps);
    FeatureVector::new(comments.len(), num_empty, partition.len(), gini_inequality(&partition.sizes()))
}
