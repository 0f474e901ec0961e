//! The activity CSV exchanged between pipeline stages, comment normalization,
//! and grouping of comments into per-contributor profiles.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use thiserror::Error;

use crate::github_fetcher::{ActivityComment, ActivityKind, FetchWindow, RepoRef};

pub const ACTIVITY_HEADER: [&str; 6] = ["repository", "activity_type", "number", "author", "created_at", "body"];

/// Comments kept per contributor unless configured otherwise.
pub const DEFAULT_CAP: usize = 100;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: header mismatch, expected `{expected}`, found `{found}`")]
    Header { path: PathBuf, expected: String, found: String },
    #[error("{path}:{line}: {reason}")]
    Row { path: PathBuf, line: u64, reason: String },
}

/// Renders a timestamp the way the CSV files store it (`2021-12-01T10:00:00Z`).
pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.with_timezone(&Utc))
}

pub(crate) fn csv_writer<W: io::Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(b',')
        .quote(b'"')
        .double_quote(true)
        .quote_style(csv::QuoteStyle::Necessary)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub(crate) fn csv_reader<R: io::Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(r)
}

/// Serializes records to the activity CSV format.
pub fn activity_csv_bytes(records: &[ActivityComment]) -> Vec<u8> {
    let mut w = csv_writer(Vec::new());
    w.write_record(ACTIVITY_HEADER).expect("in-memory write");
    for r in records {
        w.write_record([
            r.repo.to_string(),
            r.kind.as_str().to_string(),
            r.number.to_string(),
            r.author.clone(),
            format_timestamp(&r.created_at),
            r.body.clone(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_activity_csv(records: &[ActivityComment], destination: &Path) -> Result<(), CorpusError> {
    crate::fsutil::write_atomic(destination, &activity_csv_bytes(records)).map_err(|source| CorpusError::Io {
        path: destination.to_path_buf(),
        source,
    })
}

/// Parses activity CSV content. The file does not carry comment ids, so each
/// record receives its 1-based data-row ordinal as `comment_id`.
pub fn parse_activity_csv(data: &[u8], path: &Path) -> Result<Vec<ActivityComment>, CorpusError> {
    let mut reader = csv_reader(data);
    let mut rows = reader.records();
    let row_err = |line: u64, reason: String| CorpusError::Row {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let header = match rows.next() {
        Some(h) => h.map_err(|e| row_err(1, e.to_string()))?,
        None => {
            return Err(CorpusError::Header {
                path: path.to_path_buf(),
                expected: ACTIVITY_HEADER.join(","),
                found: String::new(),
            })
        }
    };
    if header.iter().ne(ACTIVITY_HEADER.iter().copied()) {
        return Err(CorpusError::Header {
            path: path.to_path_buf(),
            expected: ACTIVITY_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut out = Vec::new();
    for (ordinal, row) in rows.enumerate() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            row_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != ACTIVITY_HEADER.len() {
            return Err(row_err(line, format!("expected {} fields, found {}", ACTIVITY_HEADER.len(), row.len())));
        }
        let repo: RepoRef = row[0].parse().map_err(|e: crate::github_fetcher::RepoRefError| row_err(line, e.to_string()))?;
        let kind = match &row[1] {
            "issue" => ActivityKind::Issue,
            "pull_request" => ActivityKind::PullRequest,
            other => return Err(row_err(line, format!("unknown activity_type {other:?}"))),
        };
        let number: u64 = row[2]
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| row_err(line, format!("invalid number {:?}", &row[2])))?;
        if row[3].is_empty() {
            return Err(row_err(line, "empty author".into()));
        }
        let created_at = parse_timestamp(&row[4]).ok_or_else(|| row_err(line, format!("unparseable created_at {:?}", &row[4])))?;
        out.push(ActivityComment {
            repo,
            kind,
            number,
            comment_id: ordinal as u64 + 1,
            author: row[3].to_string(),
            created_at,
            body: row[5].to_string(),
        });
    }
    Ok(out)
}

pub fn read_activity_csv(source: &Path) -> Result<Vec<ActivityComment>, CorpusError> {
    let data = std::fs::read(source).map_err(|e| CorpusError::Io {
        path: source.to_path_buf(),
        source: e,
    })?;
    parse_activity_csv(&data, source)
}

/// Lowercases, trims, and collapses internal whitespace runs to one space.
pub fn normalize_comment(body: &str) -> String {
    let lowered = body.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// One contributor's capped, normalized comments within one repository.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContributorProfile {
    pub repo: RepoRef,
    pub login: String,
    /// Most recent first.
    pub comments: Vec<String>,
    /// In-window comment count before capping.
    pub total_observed: usize,
}

/// Groups in-window records by (repository, author). Profiles come out sorted
/// by repository then login; each keeps at most `cap` of the newest comments
/// (ties on timestamp resolved by higher comment id first).
pub fn build_profiles(records: &[ActivityComment], window: &FetchWindow, cap: usize) -> Vec<ContributorProfile> {
    assert!(cap >= 1, "cap must be at least 1");
    let mut groups: BTreeMap<(&RepoRef, &str), Vec<&ActivityComment>> = BTreeMap::new();
    for r in records.iter().filter(|r| window.contains(r.created_at)) {
        groups.entry((&r.repo, r.author.as_str())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((repo, login), mut items)| {
            items.sort_by(|a, b| b.created_at.cmp(&a.created_at).then(b.comment_id.cmp(&a.comment_id)));
            let total_observed = items.len();
            ContributorProfile {
                repo: repo.clone(),
                login: login.to_string(),
                comments: items.iter().take(cap).map(|c| normalize_comment(&c.body)).collect(),
                total_observed,
            }
        })
        .collect()
}
