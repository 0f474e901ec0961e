//! Prediction records: CSV persistence, operator overrides, identity merging,
//! per-repository summaries, and report/bulk-export rendering.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::TypedPrediction;
use crate::features::FeatureVector;
use crate::github_fetcher::{RepoRef, RepoRefError};
use crate::Label;

pub const PREDICTIONS_HEADER: [&str; 11] = [
    "repository",
    "login",
    "num_comments",
    "num_empty",
    "num_patterns",
    "gini",
    "pattern_ratio",
    "predicted",
    "confidence",
    "override",
    "effective",
];

pub const OVERRIDES_HEADER: [&str; 3] = ["repository", "login", "override"];

/// Contributors with fewer comments are reported as unknown.
pub const DEFAULT_MIN_COMMENTS: usize = 10;

pub const NO_PREDICTIONS: &str = "no predictions";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: header mismatch, expected `{expected}`")]
    Header { path: PathBuf, expected: String },
    #[error("{path}:{line}: {reason}")]
    Row { path: PathBuf, line: u64, reason: String },
    #[error("no contributor {login:?} in {repo}")]
    UnknownContributor { repo: RepoRef, login: String },
    #[error("alias groups overlap on {0:?}")]
    OverlappingAliases(String),
    #[error("alias map line {line}: {reason}")]
    AliasSyntax { line: usize, reason: String },
    #[error("index name must not be empty")]
    EmptyIndexName,
}

/// Reported contributor type, including the below-threshold `unknown`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContributorType {
    Bot,
    Human,
    Unknown,
}

impl ContributorType {
    pub fn as_str(self) -> &'static str {
        match self {
            ContributorType::Bot => "bot",
            ContributorType::Human => "human",
            ContributorType::Unknown => "unknown",
        }
    }
}

impl From<Label> for ContributorType {
    fn from(l: Label) -> Self {
        match l {
            Label::Bot => ContributorType::Bot,
            Label::Human => ContributorType::Human,
        }
    }
}

impl FromStr for ContributorType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bot" => Ok(ContributorType::Bot),
            "human" => Ok(ContributorType::Human),
            "unknown" => Ok(ContributorType::Unknown),
            other => Err(format!("expected bot, human or unknown, found {other:?}")),
        }
    }
}

impl fmt::Display for ContributorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverrideAction {
    Set(Label),
    Clear,
}

impl FromStr for OverrideAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clear" => Ok(OverrideAction::Clear),
            other => Label::parse(other)
                .map(OverrideAction::Set)
                .ok_or_else(|| format!("expected bot, human or clear, found {other:?}")),
        }
    }
}

/// Rounds to the six decimals the predictions CSV stores, so that values
/// survive a write/read cycle unchanged.
pub fn quantize(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub repo: RepoRef,
    pub login: String,
    pub features: FeatureVector,
    pub predicted: ContributorType,
    pub confidence: f64,
    pub override_label: Option<Label>,
    pub effective: ContributorType,
}

impl PredictionRecord {
    /// Builds a record from a model output. Contributors below `min_comments`
    /// are reported as unknown with zero confidence regardless of the model.
    pub fn new(
        repo: RepoRef,
        login: String,
        features: FeatureVector,
        prediction: TypedPrediction,
        min_comments: usize,
    ) -> Self {
        let (predicted, confidence) = if features.num_comments < min_comments {
            (ContributorType::Unknown, 0.0)
        } else {
            (prediction.label.into(), quantize(prediction.confidence))
        };
        let features = FeatureVector {
            gini: quantize(features.gini),
            pattern_ratio: quantize(features.pattern_ratio),
            ..features
        };
        PredictionRecord {
            repo,
            login,
            features,
            predicted,
            confidence,
            override_label: None,
            effective: predicted,
        }
    }

    fn with_override(mut self, label: Option<Label>) -> Self {
        self.override_label = label;
        self.effective = label.map_or(self.predicted, ContributorType::from);
        self
    }

    pub fn document(&self) -> RecordDocument {
        RecordDocument {
            repository: self.repo.to_string(),
            login: self.login.clone(),
            num_comments: self.features.num_comments,
            num_empty: self.features.num_empty,
            num_patterns: self.features.num_patterns,
            gini: self.features.gini,
            pattern_ratio: self.features.pattern_ratio,
            predicted: self.predicted,
            confidence: self.confidence,
            r#override: self.override_label,
            effective: self.effective,
        }
    }
}

/// Flat JSON form of a [`PredictionRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordDocument {
    pub repository: String,
    pub login: String,
    pub num_comments: usize,
    pub num_empty: usize,
    pub num_patterns: usize,
    pub gini: f64,
    pub pattern_ratio: f64,
    pub predicted: ContributorType,
    pub confidence: f64,
    pub r#override: Option<Label>,
    pub effective: ContributorType,
}

pub fn predictions_csv_bytes(records: &[PredictionRecord]) -> Vec<u8> {
    let mut w = crate::corpus::csv_writer(Vec::new());
    w.write_record(PREDICTIONS_HEADER).expect("in-memory write");
    for r in records {
        let f = &r.features;
        w.write_record([
            r.repo.to_string(),
            r.login.clone(),
            f.num_comments.to_string(),
            f.num_empty.to_string(),
            f.num_patterns.to_string(),
            format!("{:.6}", f.gini),
            format!("{:.6}", f.pattern_ratio),
            r.predicted.to_string(),
            format!("{:.6}", r.confidence),
            r.override_label.map(|l| l.to_string()).unwrap_or_default(),
            r.effective.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn persist_predictions(records: &[PredictionRecord], path: &Path) -> Result<(), StoreError> {
    crate::fsutil::write_atomic(path, &predictions_csv_bytes(records)).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_predictions(data: &[u8], path: &Path) -> Result<Vec<PredictionRecord>, StoreError> {
    let mut reader = crate::corpus::csv_reader(data);
    let row_err = |line: u64, reason: String| StoreError::Row {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut out = Vec::new();
    let mut saw_header = false;
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| row_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        if i == 0 {
            if row.iter().ne(PREDICTIONS_HEADER.iter().copied()) {
                return Err(StoreError::Header {
                    path: path.to_path_buf(),
                    expected: PREDICTIONS_HEADER.join(","),
                });
            }
            saw_header = true;
            continue;
        }
        if row.len() != PREDICTIONS_HEADER.len() {
            return Err(row_err(line, format!("expected {} fields, found {}", PREDICTIONS_HEADER.len(), row.len())));
        }
        let int = |k: usize| row[k].parse::<usize>().map_err(|_| row_err(line, format!("{}: invalid integer {:?}", PREDICTIONS_HEADER[k], &row[k])));
        let real = |k: usize| {
            row[k]
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| row_err(line, format!("{}: invalid number {:?}", PREDICTIONS_HEADER[k], &row[k])))
        };
        let kind = |k: usize| row[k].parse::<ContributorType>().map_err(|e| row_err(line, format!("{}: {e}", PREDICTIONS_HEADER[k])));

        let repo: RepoRef = row[0].parse().map_err(|e: RepoRefError| row_err(line, e.to_string()))?;
        if row[1].is_empty() {
            return Err(row_err(line, "empty login".into()));
        }
        let override_label = match &row[9] {
            "" => None,
            s => Some(Label::parse(s).ok_or_else(|| row_err(line, format!("override: expected bot, human or empty, found {s:?}")))?),
        };
        let predicted = kind(7)?;
        let effective = kind(10)?;
        let expected = override_label.map_or(predicted, ContributorType::from);
        if effective != expected {
            return Err(row_err(line, format!("effective {effective} inconsistent with predicted/override")));
        }
        out.push(PredictionRecord {
            repo,
            login: row[1].to_string(),
            features: FeatureVector {
                num_comments: int(2)?,
                num_empty: int(3)?,
                num_patterns: int(4)?,
                gini: real(5)?,
                pattern_ratio: real(6)?,
            },
            predicted,
            confidence: real(8)?,
            override_label,
            effective,
        });
    }
    if !saw_header {
        return Err(StoreError::Header {
            path: path.to_path_buf(),
            expected: PREDICTIONS_HEADER.join(","),
        });
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>, StoreError> {
    let data = std::fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_predictions(&data, path)
}

/// Sets or clears the operator override of one contributor. Predictions and
/// confidences are never modified.
pub fn apply_override(
    records: &[PredictionRecord],
    repo: &RepoRef,
    login: &str,
    action: OverrideAction,
) -> Result<Vec<PredictionRecord>, StoreError> {
    let position = records
        .iter()
        .position(|r| &r.repo == repo && r.login == login)
        .ok_or_else(|| StoreError::UnknownContributor {
            repo: repo.clone(),
            login: login.to_string(),
        })?;
    let mut out = records.to_vec();
    let label = match action {
        OverrideAction::Set(l) => Some(l),
        OverrideAction::Clear => None,
    };
    out[position] = out[position].clone().with_override(label);
    Ok(out)
}

pub fn read_overrides(path: &Path) -> Result<Vec<(RepoRef, String, OverrideAction)>, StoreError> {
    let data = std::fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let row_err = |line: u64, reason: String| StoreError::Row {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut out = Vec::new();
    let mut saw_header = false;
    for (i, row) in crate::corpus::csv_reader(data.as_slice()).records().enumerate() {
        let row = row.map_err(|e| row_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        if i == 0 {
            if row.iter().ne(OVERRIDES_HEADER.iter().copied()) {
                return Err(StoreError::Header {
                    path: path.to_path_buf(),
                    expected: OVERRIDES_HEADER.join(","),
                });
            }
            saw_header = true;
            continue;
        }
        if row.len() != 3 {
            return Err(row_err(line, format!("expected 3 fields, found {}", row.len())));
        }
        let repo = row[0].parse().map_err(|e: RepoRefError| row_err(line, e.to_string()))?;
        let action = row[2].parse().map_err(|e: String| row_err(line, e))?;
        out.push((repo, row[1].to_string(), action));
    }
    if !saw_header {
        return Err(StoreError::Header {
            path: path.to_path_buf(),
            expected: OVERRIDES_HEADER.join(","),
        });
    }
    Ok(out)
}

pub type AliasMap = BTreeMap<String, BTreeSet<String>>;

/// Parses `canonical: alias1, alias2` lines; blank lines and `#` comments are
/// ignored.
pub fn parse_alias_map(text: &str) -> Result<AliasMap, StoreError> {
    let mut map = AliasMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (canonical, aliases) = line.split_once(':').ok_or_else(|| StoreError::AliasSyntax {
            line: i + 1,
            reason: "expected `canonical: alias, ...`".into(),
        })?;
        let canonical = canonical.trim();
        if canonical.is_empty() {
            return Err(StoreError::AliasSyntax {
                line: i + 1,
                reason: "empty canonical login".into(),
            });
        }
        map.entry(canonical.to_string())
            .or_default()
            .extend(aliases.split(',').map(str::trim).filter(|a| !a.is_empty()).map(String::from));
    }
    Ok(map)
}

fn alias_index(aliases: &AliasMap) -> Result<HashMap<&str, &str>, StoreError> {
    let mut index: HashMap<&str, &str> = HashMap::new();
    for (canonical, group) in aliases {
        for alias in group {
            if alias == canonical {
                continue;
            }
            if aliases.contains_key(alias) {
                return Err(StoreError::OverlappingAliases(alias.clone()));
            }
            if index.insert(alias.as_str(), canonical.as_str()).is_some() {
                return Err(StoreError::OverlappingAliases(alias.clone()));
            }
        }
    }
    Ok(index)
}

fn any_bot(types: impl Iterator<Item = ContributorType>) -> ContributorType {
    types.min().unwrap_or(ContributorType::Unknown)
}

/// Collapses aliased logins into their canonical identity, per repository.
///
/// Counts are summed. `gini` and `pattern_ratio` are taken from the
/// constituent with the most comments since the raw comments are not
/// available here. A merged identity is a bot if any constituent is.
pub fn merge_identities(records: &[PredictionRecord], aliases: &AliasMap) -> Result<Vec<PredictionRecord>, StoreError> {
    let index = alias_index(aliases)?;
    let mut groups: BTreeMap<(RepoRef, String), Vec<&PredictionRecord>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in records {
        let canonical = index.get(r.login.as_str()).copied().unwrap_or(r.login.as_str());
        let key = (r.repo.clone(), canonical.to_string());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }

    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let members = &groups[&key];
        if members.len() == 1 && members[0].login == key.1 {
            out.push(members[0].clone());
            continue;
        }
        let dominant = members
            .iter()
            .max_by(|a, b| {
                a.features
                    .num_comments
                    .cmp(&b.features.num_comments)
                    .then_with(|| (b.login != key.1).cmp(&(a.login != key.1)))
                    .then_with(|| b.login.cmp(&a.login))
            })
            .expect("non-empty group");
        let predicted = any_bot(members.iter().map(|m| m.predicted));
        let effective = any_bot(members.iter().map(|m| m.effective));
        let override_label = if members.iter().any(|m| m.override_label.is_some()) {
            match effective {
                ContributorType::Bot => Some(Label::Bot),
                ContributorType::Human => Some(Label::Human),
                ContributorType::Unknown => None,
            }
        } else {
            None
        };
        let confidence = members
            .iter()
            .filter(|m| m.effective == effective)
            .map(|m| m.confidence)
            .fold(0.0, f64::max);
        out.push(PredictionRecord {
            repo: key.0.clone(),
            login: key.1.clone(),
            features: FeatureVector {
                num_comments: members.iter().map(|m| m.features.num_comments).sum(),
                num_empty: members.iter().map(|m| m.features.num_empty).sum(),
                num_patterns: members.iter().map(|m| m.features.num_patterns).sum(),
                gini: dominant.features.gini,
                pattern_ratio: dominant.features.pattern_ratio,
            },
            predicted,
            confidence,
            override_label,
            effective,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoSummary {
    #[serde(rename = "repository")]
    pub repo: RepoRef,
    pub total: usize,
    pub bots: usize,
    pub humans: usize,
    pub unknowns: usize,
}

/// Per-repository tallies of effective labels, ordered by repository name.
pub fn summarize(records: &[PredictionRecord]) -> Vec<RepoSummary> {
    let mut by_repo: BTreeMap<&RepoRef, RepoSummary> = BTreeMap::new();
    for r in records {
        let s = by_repo.entry(&r.repo).or_insert_with(|| RepoSummary {
            repo: r.repo.clone(),
            total: 0,
            bots: 0,
            humans: 0,
            unknowns: 0,
        });
        s.total += 1;
        match r.effective {
            ContributorType::Bot => s.bots += 1,
            ContributorType::Human => s.humans += 1,
            ContributorType::Unknown => s.unknowns += 1,
        }
    }
    by_repo.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
}

pub fn render_report(summaries: &[RepoSummary], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(summaries).expect("summaries serialize");
            s.push('\n');
            s
        }
        ReportFormat::Table if summaries.is_empty() => format!("{NO_PREDICTIONS}\n"),
        ReportFormat::Table => {
            let mut out = String::from("repository  total  bots  humans  unknowns\n");
            for s in summaries {
                out.push_str(&format!("{}  {}  {}  {}  {}\n", s.repo, s.total, s.bots, s.humans, s.unknowns));
            }
            out
        }
    }
}

#[derive(Serialize)]
struct BulkSource<'a> {
    #[serde(flatten)]
    record: &'a RecordDocument,
    generated_at: String,
}

/// Bulk-indexing NDJSON with the current time as `generated_at`.
pub fn export_bulk_ndjson(records: &[PredictionRecord], index_name: &str) -> Result<String, StoreError> {
    export_bulk_ndjson_at(records, index_name, Utc::now())
}

/// Two lines per record: an `index` action line and the flat source document.
pub fn export_bulk_ndjson_at(
    records: &[PredictionRecord],
    index_name: &str,
    generated_at: DateTime<Utc>,
) -> Result<String, StoreError> {
    if index_name.is_empty() {
        return Err(StoreError::EmptyIndexName);
    }
    let stamp = crate::corpus::format_timestamp(&generated_at);
    let mut out = String::new();
    for r in records {
        let action = serde_json::json!({
            "index": { "_index": index_name, "_id": format!("{}#{}", r.repo, r.login) }
        });
        out.push_str(&action.to_string());
        out.push('\n');
        let doc = r.document();
        let source = BulkSource {
            record: &doc,
            generated_at: stamp.clone(),
        };
        out.push_str(&serde_json::to_string(&source).expect("document serializes"));
        out.push('\n');
    }
    Ok(out)
}
