//! Retrieval of issue and pull-request comments from the GitHub REST API.
//!
//! Pages are followed through `Link: rel="next"` headers, falling back to an
//! incrementing `page` parameter when the server sends none. Every successful
//! response can be cached on disk so that a repeated run is served entirely
//! from the cache. Rate-limit handling is delegated to [`ThrottlePolicy`] and
//! serialized through a single coordinator shared by all worker threads.

mod cache;
mod throttle;
mod transport;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::Deserialize;
use thiserror::Error;

pub use cache::{canonical_url, ResponseCache};
pub use throttle::{plan_throttle, Clock, SystemClock, ThrottleDecision, ThrottlePolicy};
pub use transport::{HttpResponse, ReqwestTransport, Transport};

pub const DEFAULT_BASE_URL: &str = "https://api.github.com";

/// Login assigned to comments whose author account no longer exists.
pub const GHOST_LOGIN: &str = "ghost";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid repository reference {0:?}: expected OWNER/NAME")]
pub struct RepoRefError(pub String);

/// A repository, rendered as `owner/name`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RepoRef {
    owner: String,
    name: String,
}

impl RepoRef {
    pub fn new(owner: &str, name: &str) -> Result<Self, RepoRefError> {
        let valid = |s: &str| !s.is_empty() && !s.contains('/') && s.trim() == s;
        if !valid(owner) || !valid(name) {
            return Err(RepoRefError(format!("{owner}/{name}")));
        }
        Ok(RepoRef {
            owner: owner.to_string(),
            name: name.to_string(),
        })
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl FromStr for RepoRef {
    type Err = RepoRefError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            Some((owner, name)) => RepoRef::new(owner, name).map_err(|_| RepoRefError(s.to_string())),
            None => Err(RepoRefError(s.to_string())),
        }
    }
}

impl fmt::Display for RepoRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.owner, self.name)
    }
}

// Ordered by rendered form so listings sort the way they print.
impl Ord for RepoRef {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.owner
            .bytes()
            .chain(std::iter::once(b'/'))
            .chain(self.name.bytes())
            .cmp(other.owner.bytes().chain(std::iter::once(b'/')).chain(other.name.bytes()))
    }
}

impl PartialOrd for RepoRef {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl serde::Serialize for RepoRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RepoRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid window: since ({since}) must be before until ({until})")]
pub struct WindowError {
    pub since: DateTime<Utc>,
    pub until: DateTime<Utc>,
}

/// Half-open time interval `[since, until)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FetchWindow {
    since: DateTime<Utc>,
    until: DateTime<Utc>,
}

impl FetchWindow {
    pub fn new(since: DateTime<Utc>, until: DateTime<Utc>) -> Result<Self, WindowError> {
        if since >= until {
            return Err(WindowError { since, until });
        }
        Ok(FetchWindow { since, until })
    }

    /// A window admitting every representable timestamp.
    pub fn unbounded() -> Self {
        FetchWindow {
            since: DateTime::<Utc>::MIN_UTC,
            until: DateTime::<Utc>::MAX_UTC,
        }
    }

    pub fn since(&self) -> DateTime<Utc> {
        self.since
    }

    pub fn until(&self) -> DateTime<Utc> {
        self.until
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.since <= t && t < self.until
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActivityKind {
    Issue,
    PullRequest,
}

impl ActivityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActivityKind::Issue => "issue",
            ActivityKind::PullRequest => "pull_request",
        }
    }
}

impl FromStr for ActivityKind {
    type Err = String;

    /// Accepts the CSV spellings as well as the CLI shorthands `issues` and `prs`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "issue" | "issues" => Ok(ActivityKind::Issue),
            "pull_request" | "pull_requests" | "pr" | "prs" => Ok(ActivityKind::PullRequest),
            other => Err(format!("unknown activity kind {other:?}")),
        }
    }
}

impl fmt::Display for ActivityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single issue or pull-request comment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityComment {
    pub repo: RepoRef,
    pub kind: ActivityKind,
    pub number: u64,
    pub comment_id: u64,
    pub author: String,
    pub created_at: DateTime<Utc>,
    pub body: String,
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication rejected: {0}")]
    Credential(String),
    #[error("repository not found: {0}")]
    NotFound(String),
    #[error("rate limit budget exhausted after {attempts} attempts: {url}")]
    RateLimited { url: String, attempts: u32 },
    #[error("malformed response from {url}: {reason}")]
    Malformed { url: String, reason: String },
    #[error("network failure on {url}: {reason}")]
    Network { url: String, reason: String },
    #[error("cache error: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub base_url: String,
    pub per_page: u32,
    /// Include inline review comments (`/pulls/comments`) for pull requests.
    pub include_review_comments: bool,
    pub policy: ThrottlePolicy,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions {
            base_url: DEFAULT_BASE_URL.to_string(),
            per_page: 100,
            include_review_comments: true,
            policy: ThrottlePolicy::default(),
        }
    }
}

#[derive(Debug, Default)]
struct RateState {
    remaining: Option<u64>,
    reset: Option<i64>,
}

/// Comment fetcher with pluggable transport and clock.
pub struct Fetcher<T, C> {
    transport: T,
    clock: C,
    options: FetchOptions,
    cache: Option<ResponseCache>,
    rate: Mutex<RateState>,
    requests: AtomicUsize,
}

impl Fetcher<ReqwestTransport, SystemClock> {
    pub fn with_defaults(options: FetchOptions, cache_dir: Option<&Path>) -> Result<Self, FetchError> {
        let transport = ReqwestTransport::new().map_err(|reason| FetchError::Network {
            url: options.base_url.clone(),
            reason,
        })?;
        Fetcher::new(transport, SystemClock, options, cache_dir)
    }
}

#[derive(Deserialize)]
struct UserJson {
    login: Option<String>,
}

#[derive(Deserialize)]
struct CommentJson {
    id: u64,
    user: Option<UserJson>,
    created_at: String,
    body: Option<String>,
    html_url: Option<String>,
    issue_url: Option<String>,
    pull_request_url: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Endpoint {
    IssueComments,
    ReviewComments,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Order {
    Unknown,
    Ascending,
    Descending,
}

fn trailing_number(url: &str) -> Option<u64> {
    let path = url.split(['#', '?']).next()?;
    path.trim_end_matches('/').rsplit('/').next()?.parse().ok()
}

/// Extracts the `rel="next"` target from a `Link` header.
pub fn next_link(link: &str) -> Option<String> {
    link.split(',').find_map(|part| {
        let mut pieces = part.split(';');
        let target = pieces.next()?.trim();
        let is_next = pieces.any(|p| {
            let p = p.trim();
            p == "rel=\"next\"" || p == "rel=next"
        });
        if is_next && target.starts_with('<') && target.ends_with('>') {
            Some(target[1..target.len() - 1].to_string())
        } else {
            None
        }
    })
}

fn with_page(url: &str, page: u32) -> String {
    match url::Url::parse(url) {
        Ok(mut parsed) => {
            let pairs: Vec<(String, String)> = parsed
                .query_pairs()
                .filter(|(k, _)| k != "page")
                .map(|(k, v)| (k.into_owned(), v.into_owned()))
                .collect();
            parsed
                .query_pairs_mut()
                .clear()
                .extend_pairs(pairs)
                .append_pair("page", &page.to_string());
            parsed.to_string()
        }
        Err(_) => url.to_string(),
    }
}

fn page_of(url: &str) -> u32 {
    url::Url::parse(url)
        .ok()
        .and_then(|u| u.query_pairs().find(|(k, _)| k == "page").and_then(|(_, v)| v.parse().ok()))
        .unwrap_or(1)
}

impl<T: Transport, C: Clock> Fetcher<T, C> {
    pub fn new(transport: T, clock: C, options: FetchOptions, cache_dir: Option<&Path>) -> Result<Self, FetchError> {
        if options.per_page == 0 {
            return Err(FetchError::InvalidRequest("per_page must be positive".into()));
        }
        let cache = cache_dir.map(ResponseCache::new).transpose()?;
        Ok(Fetcher {
            transport,
            clock,
            options,
            cache,
            rate: Mutex::new(RateState::default()),
            requests: AtomicUsize::new(0),
        })
    }

    /// Number of requests that went over the transport (cache hits excluded).
    pub fn network_requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn clock(&self) -> &C {
        &self.clock
    }

    /// Fetches every comment of the requested kinds created inside `window`,
    /// deduplicated by comment id and sorted by creation time.
    pub fn fetch(
        &self,
        repo: &RepoRef,
        token: &str,
        window: &FetchWindow,
        kinds: &BTreeSet<ActivityKind>,
    ) -> Result<Vec<ActivityComment>, FetchError> {
        if token.is_empty() {
            return Err(FetchError::InvalidRequest("token is empty".into()));
        }
        if kinds.is_empty() {
            return Err(FetchError::InvalidRequest("no activity kinds requested".into()));
        }

        let mut endpoints = vec![Endpoint::IssueComments];
        if kinds.contains(&ActivityKind::PullRequest) && self.options.include_review_comments {
            endpoints.push(Endpoint::ReviewComments);
        }

        let results: Vec<Result<Vec<ActivityComment>, FetchError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = endpoints
                .iter()
                .map(|&ep| scope.spawn(move || self.fetch_endpoint(ep, repo, token, window)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fetch worker panicked"))
                .collect()
        });

        let mut by_id = BTreeMap::new();
        for result in results {
            for comment in result? {
                if kinds.contains(&comment.kind) {
                    by_id.entry(comment.comment_id).or_insert(comment);
                }
            }
        }
        let mut out: Vec<ActivityComment> = by_id.into_values().collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.comment_id.cmp(&b.comment_id)));
        Ok(out)
    }

    fn first_url(&self, endpoint: Endpoint, repo: &RepoRef) -> String {
        let path = match endpoint {
            Endpoint::IssueComments => "issues/comments",
            Endpoint::ReviewComments => "pulls/comments",
        };
        format!(
            "{}/repos/{}/{}/{}?sort=created&direction=asc&per_page={}&page=1",
            self.options.base_url.trim_end_matches('/'),
            repo.owner(),
            repo.name(),
            path,
            self.options.per_page
        )
    }

    fn fetch_endpoint(
        &self,
        endpoint: Endpoint,
        repo: &RepoRef,
        token: &str,
        window: &FetchWindow,
    ) -> Result<Vec<ActivityComment>, FetchError> {
        let mut url = self.first_url(endpoint, repo);
        let mut out = Vec::new();
        let mut order = Order::Unknown;
        let mut previous_last: Option<DateTime<Utc>> = None;

        loop {
            let resp = self.get(&url, token, repo)?;
            let page: Vec<CommentJson> = serde_json::from_str(&resp.body).map_err(|e| FetchError::Malformed {
                url: url.clone(),
                reason: e.to_string(),
            })?;
            let count = page.len();

            let mut stamps = Vec::with_capacity(count);
            for raw in page {
                let comment = self.convert(endpoint, repo, raw, &url)?;
                stamps.push(comment.created_at);
                if window.contains(comment.created_at) {
                    out.push(comment);
                }
            }

            if order == Order::Unknown {
                let seq = previous_last.iter().chain(stamps.iter());
                let pairs: Vec<_> = seq.clone().zip(seq.skip(1)).filter(|(a, b)| a != b).collect();
                if let Some((a, b)) = pairs.first() {
                    order = if a < b { Order::Ascending } else { Order::Descending };
                }
            }
            if let Some(&last) = stamps.last() {
                previous_last = Some(last);
            }
            let exhausted = match order {
                Order::Descending => stamps.iter().all(|t| *t < window.since()),
                Order::Ascending => !stamps.is_empty() && stamps.iter().all(|t| *t >= window.until()),
                Order::Unknown => false,
            };
            if exhausted {
                break;
            }

            let link = resp.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case("link")).map(|(_, v)| v);
            let next = match link {
                Some(link) => next_link(link),
                None if count >= self.options.per_page as usize => Some(with_page(&url, page_of(&url) + 1)),
                None => None,
            };
            match next {
                Some(n) if count > 0 => url = n,
                _ => break,
            }
        }
        Ok(out)
    }

    fn convert(
        &self,
        endpoint: Endpoint,
        repo: &RepoRef,
        raw: CommentJson,
        url: &str,
    ) -> Result<ActivityComment, FetchError> {
        let malformed = |reason: String| FetchError::Malformed { url: url.to_string(), reason };
        let created_at = DateTime::parse_from_rfc3339(&raw.created_at)
            .map_err(|e| malformed(format!("comment {}: bad created_at {:?}: {e}", raw.id, raw.created_at)))?
            .with_timezone(&Utc);
        let (kind, number) = match endpoint {
            Endpoint::IssueComments => {
                let is_pr = raw.html_url.as_deref().is_some_and(|u| u.contains("/pull/"));
                let number = raw
                    .issue_url
                    .as_deref()
                    .and_then(trailing_number)
                    .or_else(|| raw.html_url.as_deref().and_then(trailing_number));
                let kind = if is_pr { ActivityKind::PullRequest } else { ActivityKind::Issue };
                (kind, number)
            }
            Endpoint::ReviewComments => (
                ActivityKind::PullRequest,
                raw.pull_request_url.as_deref().and_then(trailing_number),
            ),
        };
        let number = number
            .filter(|n| *n > 0)
            .ok_or_else(|| malformed(format!("comment {}: no issue or pull request number", raw.id)))?;
        let author = raw
            .user
            .and_then(|u| u.login)
            .filter(|l| !l.is_empty())
            .unwrap_or_else(|| GHOST_LOGIN.to_string());
        Ok(ActivityComment {
            repo: repo.clone(),
            kind,
            number,
            comment_id: raw.id,
            author,
            created_at,
            body: raw.body.unwrap_or_default(),
        })
    }

    /// GET through the cache and the rate coordinator.
    fn get(&self, url: &str, token: &str, repo: &RepoRef) -> Result<HttpResponse, FetchError> {
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(url)? {
                return Ok(hit);
            }
        }

        let policy = self.options.policy;
        let mut attempt = 0u32;
        loop {
            self.wait_for_budget();
            self.requests.fetch_add(1, Ordering::SeqCst);
            let outcome = self.transport.get(url, token);

            let mut rate = self.rate.lock().unwrap();
            let decision = match &outcome {
                Ok(resp) => {
                    if let Some(r) = throttle::header(&resp.headers, "x-ratelimit-remaining").and_then(|v| v.parse().ok()) {
                        rate.remaining = Some(r);
                    }
                    if let Some(r) = throttle::header(&resp.headers, "x-ratelimit-reset").and_then(|v| v.parse().ok()) {
                        rate.reset = Some(r);
                    }
                    policy.plan(resp.status, &resp.headers, attempt, self.clock.now())
                }
                Err(_) => policy.plan_transport_failure(attempt),
            };

            match decision {
                ThrottleDecision::Wait(d) => {
                    log::warn!("throttled on {url}, waiting {}s (attempt {attempt})", d.as_secs());
                    self.clock.sleep(d);
                    rate.remaining = None;
                    attempt += 1;
                }
                ThrottleDecision::Abort => {
                    return Err(match outcome {
                        Ok(resp) if throttle::is_rate_limited(resp.status, &resp.headers) || resp.status == 429 => {
                            FetchError::RateLimited { url: url.to_string(), attempts: attempt + 1 }
                        }
                        Ok(resp) => FetchError::Network {
                            url: url.to_string(),
                            reason: format!("status {} after {} attempts", resp.status, attempt + 1),
                        },
                        Err(reason) => FetchError::Network { url: url.to_string(), reason },
                    });
                }
                ThrottleDecision::Proceed => {
                    drop(rate);
                    let resp = outcome.map_err(|reason| FetchError::Network { url: url.to_string(), reason })?;
                    return match resp.status {
                        200..=299 => {
                            if let Some(cache) = &self.cache {
                                cache.put(url, &resp)?;
                            }
                            Ok(resp)
                        }
                        401 => Err(FetchError::Credential(format!("{url}: 401 {}", snippet(&resp.body)))),
                        403 => Err(FetchError::Credential(format!("{url}: 403 {}", snippet(&resp.body)))),
                        404 => Err(FetchError::NotFound(repo.to_string())),
                        status => Err(FetchError::Network {
                            url: url.to_string(),
                            reason: format!("unexpected status {status}"),
                        }),
                    };
                }
            }
        }
    }

    /// Blocks while a previous response reported an exhausted budget.
    fn wait_for_budget(&self) {
        let mut rate = self.rate.lock().unwrap();
        if rate.remaining == Some(0) {
            if let Some(reset) = rate.reset {
                let secs = reset - self.clock.now().timestamp() + self.options.policy.reset_margin_secs;
                if secs > 0 {
                    self.clock.sleep(Duration::from_secs(secs as u64));
                }
            }
            rate.remaining = None;
        }
    }
}

fn snippet(body: &str) -> String {
    body.chars().take(200).collect()
}

/// Fetches comments from the public GitHub API (or `GITHUB_API_URL` style
/// overrides via [`Fetcher`]) with default options.
pub fn fetch_comments(
    repo: &RepoRef,
    token: &str,
    window: &FetchWindow,
    kinds: &BTreeSet<ActivityKind>,
    cache_dir: Option<&Path>,
) -> Result<Vec<ActivityComment>, FetchError> {
    Fetcher::with_defaults(FetchOptions::default(), cache_dir)?.fetch(repo, token, window, kinds)
}
