//! HTTP review API over a predictions CSV.
//!
//! * `GET /api/repos`: per-repository summaries
//! * `GET /api/repos/{owner}/{name}/contributors?type=&sort=`: records with sample comments
//! * `POST /api/overrides`: `{"repository","login","type"}` with type bot, human or clear
//!
//! Overrides go through a single writer that persists the whole CSV
//! atomically before publishing the new snapshot. Readers always see a
//! complete snapshot. There is no authentication; run it on a trusted host.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::corpus;
use crate::github_fetcher::{FetchWindow, RepoRef};
use crate::store_report::{
    self, ContributorType, OverrideAction, PredictionRecord, RecordDocument, RepoSummary, StoreError,
};

/// Sample comments attached to each contributor document.
pub const SAMPLE_COMMENTS: usize = 5;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error("invalid override request: {0}")]
    Invalid(String),
    #[error("no contributor {login:?} in {repo}")]
    NotFound { repo: String, login: String },
}

/// Override request body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverrideRequest {
    pub repository: String,
    pub login: String,
    #[serde(rename = "type")]
    pub kind: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TypeFilter {
    #[default]
    All,
    Only(ContributorType),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SortKey {
    #[default]
    Login,
    /// Non-increasing confidence, ties by login.
    Confidence,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContributorDocument {
    #[serde(flatten)]
    pub record: RecordDocument,
    pub samples: Vec<String>,
}

pub struct ReviewStore {
    path: PathBuf,
    snapshot: RwLock<Arc<Vec<PredictionRecord>>>,
    writer: Mutex<()>,
    samples: HashMap<(RepoRef, String), Vec<String>>,
}

impl ReviewStore {
    /// Loads predictions and, when given, the activity CSV for sample comments.
    pub fn open(predictions: &Path, comments: Option<&Path>) -> Result<Self, ReviewError> {
        let records = store_report::load_predictions(predictions)?;
        let samples = match comments {
            Some(path) => {
                let activity = corpus::read_activity_csv(path)?;
                corpus::build_profiles(&activity, &FetchWindow::unbounded(), SAMPLE_COMMENTS)
                    .into_iter()
                    .map(|p| ((p.repo, p.login), p.comments))
                    .collect()
            }
            None => HashMap::new(),
        };
        Ok(ReviewStore {
            path: predictions.to_path_buf(),
            snapshot: RwLock::new(Arc::new(records)),
            writer: Mutex::new(()),
            samples,
        })
    }

    pub fn snapshot(&self) -> Arc<Vec<PredictionRecord>> {
        self.snapshot.read().unwrap().clone()
    }

    pub fn summaries(&self) -> Vec<RepoSummary> {
        store_report::summarize(&self.snapshot())
    }

    /// `None` when the repository has no records.
    pub fn contributors(&self, repo: &RepoRef, filter: TypeFilter, sort: SortKey) -> Option<Vec<ContributorDocument>> {
        let snapshot = self.snapshot();
        let mut rows: Vec<&PredictionRecord> = snapshot.iter().filter(|r| &r.repo == repo).collect();
        if rows.is_empty() {
            return None;
        }
        if let TypeFilter::Only(t) = filter {
            rows.retain(|r| r.effective == t);
        }
        match sort {
            SortKey::Login => rows.sort_by(|a, b| a.login.cmp(&b.login)),
            SortKey::Confidence => {
                rows.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then_with(|| a.login.cmp(&b.login)))
            }
        }
        Some(
            rows.into_iter()
                .map(|r| ContributorDocument {
                    record: r.document(),
                    samples: self
                        .samples
                        .get(&(r.repo.clone(), r.login.clone()))
                        .cloned()
                        .unwrap_or_default(),
                })
                .collect(),
        )
    }

    /// Validates, applies and persists one override, returning the new record.
    pub fn apply(&self, request: &OverrideRequest) -> Result<PredictionRecord, ReviewError> {
        let repo: RepoRef = request
            .repository
            .parse()
            .map_err(|e: crate::github_fetcher::RepoRefError| ReviewError::Invalid(e.to_string()))?;
        let action: OverrideAction = request.kind.parse().map_err(ReviewError::Invalid)?;

        let _guard = self.writer.lock().unwrap();
        let current = self.snapshot();
        let updated = match store_report::apply_override(&current, &repo, &request.login, action) {
            Ok(u) => u,
            Err(StoreError::UnknownContributor { repo, login }) => {
                return Err(ReviewError::NotFound {
                    repo: repo.to_string(),
                    login,
                })
            }
            Err(e) => return Err(e.into()),
        };
        let record = updated
            .iter()
            .find(|r| r.repo == repo && r.login == request.login)
            .cloned()
            .expect("record present after override");
        if updated != *current {
            store_report::persist_predictions(&updated, &self.path)?;
            *self.snapshot.write().unwrap() = Arc::new(updated);
        }
        Ok(record)
    }
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn get_summaries(State(store): State<Arc<ReviewStore>>) -> Json<Vec<RepoSummary>> {
    Json(store.summaries())
}

#[derive(Debug, Deserialize)]
struct ContributorQuery {
    #[serde(rename = "type")]
    kind: Option<String>,
    sort: Option<String>,
}

async fn get_contributors(
    State(store): State<Arc<ReviewStore>>,
    UrlPath((owner, name)): UrlPath<(String, String)>,
    Query(query): Query<ContributorQuery>,
) -> Response {
    let filter = match query.kind.as_deref() {
        None | Some("") | Some("all") => TypeFilter::All,
        Some(other) => match other.parse::<ContributorType>() {
            Ok(t) => TypeFilter::Only(t),
            Err(e) => return error_response(StatusCode::UNPROCESSABLE_ENTITY, e),
        },
    };
    let sort = match query.sort.as_deref() {
        None | Some("") | Some("login") => SortKey::Login,
        Some("confidence") => SortKey::Confidence,
        Some(other) => {
            return error_response(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("sort must be login or confidence, found {other:?}"),
            )
        }
    };
    let Ok(repo) = RepoRef::new(&owner, &name) else {
        return error_response(StatusCode::NOT_FOUND, format!("unknown repository {owner}/{name}"));
    };
    match store.contributors(&repo, filter, sort) {
        Some(rows) => Json(rows).into_response(),
        None => error_response(StatusCode::NOT_FOUND, format!("unknown repository {repo}")),
    }
}

async fn post_override(State(store): State<Arc<ReviewStore>>, body: Bytes) -> Response {
    let request: OverrideRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid request body: {e}")),
    };
    let outcome = tokio::task::spawn_blocking(move || store.apply(&request)).await;
    match outcome {
        Ok(Ok(record)) => Json(record.document()).into_response(),
        Ok(Err(ReviewError::Invalid(msg))) => error_response(StatusCode::UNPROCESSABLE_ENTITY, msg),
        Ok(Err(e @ ReviewError::NotFound { .. })) => error_response(StatusCode::NOT_FOUND, e.to_string()),
        Ok(Err(e)) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(store: Arc<ReviewStore>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/repos", get(get_summaries))
        .route("/api/repos/{owner}/{name}/contributors", get(get_contributors))
        .route("/api/overrides", post(post_override))
        .with_state(store);
    let app = match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(CorsLayer::permissive())
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, store: Arc<ReviewStore>, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store, ui_dir)).await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;

    fn fixture(dir: &Path) -> PathBuf {
        let mut recs = Vec::new();
        for (i, t) in [ContributorType::Bot, ContributorType::Human, ContributorType::Unknown].into_iter().enumerate() {
            recs.push(PredictionRecord {
                repo: "a/b".parse().unwrap(),
                login: format!("u{i}"),
                features: FeatureVector::new(20, 0, 3, 0.1),
                predicted: t,
                confidence: if t == ContributorType::Unknown { 0.0 } else { 0.5 + i as f64 / 10.0 },
                override_label: None,
                effective: t,
            });
        }
        let path = dir.join("p.csv");
        store_report::persist_predictions(&recs, &path).unwrap();
        path
    }

    fn req(repo: &str, login: &str, kind: &str) -> OverrideRequest {
        OverrideRequest { repository: repo.into(), login: login.into(), kind: kind.into() }
    }

    #[test]
    fn apply_persists_and_publishes() {
        let dir = tempfile::tempdir().unwrap();
        let path = fixture(dir.path());
        let store = ReviewStore::open(&path, None).unwrap();
        let rec = store.apply(&req("a/b", "u1", "bot")).unwrap();
        assert_eq!(rec.effective, ContributorType::Bot);
        assert_eq!(store.summaries()[0].bots, 2);
        let reopened = ReviewStore::open(&path, None).unwrap();
        assert_eq!(reopened.summaries(), store.summaries());
    }

    #[test]
    fn validation_and_lookup_errors() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(&fixture(dir.path()), None).unwrap();
        assert!(matches!(store.apply(&req("a/b", "u1", "robot")), Err(ReviewError::Invalid(_))));
        assert!(matches!(store.apply(&req("ab", "u1", "bot")), Err(ReviewError::Invalid(_))));
        assert!(matches!(store.apply(&req("a/b", "zz", "bot")), Err(ReviewError::NotFound { .. })));
    }

    #[test]
    fn clear_without_override_is_a_no_op() {
        let dir = tempfile::tempdir().unwrap();
        let path = fixture(dir.path());
        let before = std::fs::read(&path).unwrap();
        let store = ReviewStore::open(&path, None).unwrap();
        let snapshot = store.snapshot();
        let rec = store.apply(&req("a/b", "u0", "clear")).unwrap();
        assert_eq!(rec, snapshot[0]);
        assert_eq!(std::fs::read(&path).unwrap(), before);
    }

    #[test]
    fn filters_and_sorting() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(&fixture(dir.path()), None).unwrap();
        let repo: RepoRef = "a/b".parse().unwrap();
        let bots = store.contributors(&repo, TypeFilter::Only(ContributorType::Bot), SortKey::Login).unwrap();
        assert_eq!(bots.len(), 1);
        let by_conf = store.contributors(&repo, TypeFilter::All, SortKey::Confidence).unwrap();
        assert!(by_conf.windows(2).all(|w| w[0].record.confidence >= w[1].record.confidence));
        assert!(store.contributors(&"x/y".parse().unwrap(), TypeFilter::All, SortKey::Login).is_none());
    }
}
