//! Shared test helpers: a scripted mock of the GitHub comments API and a
//! manual clock.

#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use botwatch::github_fetcher::Clock;
use chrono::{DateTime, Utc};
use serde_json::Value;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn load_json_fixture(name: &str) -> Vec<Value> {
    let text = std::fs::read_to_string(fixtures_dir().join("github").join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[derive(Clone, Debug)]
pub struct ScriptedResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

#[derive(Clone, Debug)]
pub struct MockConfig {
    pub repo: String,
    pub token: String,
    pub issue_comments: Vec<Value>,
    pub review_comments: Vec<Value>,
    /// Send `Link` headers; otherwise clients must fall back to page counting.
    pub link_headers: bool,
    /// Serve newest first.
    pub descending: bool,
    /// Responses returned (one per request) before normal handling resumes.
    pub script: Vec<ScriptedResponse>,
}

impl MockConfig {
    pub fn new(repo: &str, token: &str) -> Self {
        MockConfig {
            repo: repo.to_string(),
            token: token.to_string(),
            issue_comments: Vec::new(),
            review_comments: Vec::new(),
            link_headers: true,
            descending: false,
            script: Vec::new(),
        }
    }
}

struct Shared {
    config: MockConfig,
    script: Mutex<VecDeque<ScriptedResponse>>,
    requests: AtomicUsize,
    paths: Mutex<Vec<String>>,
    stop: AtomicBool,
}

/// Minimal HTTP/1.1 server answering one request per connection.
pub struct MockGitHub {
    addr: std::net::SocketAddr,
    shared: Arc<Shared>,
}

impl MockGitHub {
    pub fn start(config: MockConfig) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let shared = Arc::new(Shared {
            script: Mutex::new(config.script.iter().cloned().collect()),
            config,
            requests: AtomicUsize::new(0),
            paths: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
        });
        let worker = shared.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                if worker.stop.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let w = worker.clone();
                    std::thread::spawn(move || handle(stream, &w, addr));
                }
            }
        });
        MockGitHub { addr, shared }
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    pub fn paths(&self) -> Vec<String> {
        self.shared.paths.lock().unwrap().clone()
    }
}

impl Drop for MockGitHub {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
    }
}

fn query_param(query: &str, key: &str) -> Option<String> {
    query.split('&').find_map(|kv| {
        let (k, v) = kv.split_once('=')?;
        (k == key).then(|| v.to_string())
    })
}

fn handle(stream: TcpStream, shared: &Shared, addr: std::net::SocketAddr) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() || request_line.is_empty() {
        return;
    }
    let mut headers = BTreeMap::new();
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((k, v)) = line.trim_end().split_once(':') {
            let k = k.trim().to_ascii_lowercase();
            if k == "content-length" {
                content_length = v.trim().parse().unwrap_or(0);
            }
            headers.insert(k, v.trim().to_string());
        }
    }
    let mut body = vec![0; content_length];
    let _ = reader.read_exact(&mut body);

    shared.requests.fetch_add(1, Ordering::SeqCst);
    let target = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    shared.paths.lock().unwrap().push(target.clone());

    let response = respond(shared, &target, &headers, addr);
    write_response(stream, response);
}

fn respond(shared: &Shared, target: &str, headers: &BTreeMap<String, String>, addr: std::net::SocketAddr) -> ScriptedResponse {
    if let Some(scripted) = shared.script.lock().unwrap().pop_front() {
        return scripted;
    }
    let cfg = &shared.config;
    let expected = format!("Bearer {}", cfg.token);
    if headers.get("authorization") != Some(&expected) {
        return json_response(401, r#"{"message":"Bad credentials"}"#.into(), vec![]);
    }
    let (path, query) = target.split_once('?').unwrap_or((target, ""));
    let issues = format!("/repos/{}/issues/comments", cfg.repo);
    let reviews = format!("/repos/{}/pulls/comments", cfg.repo);
    let items = if path == issues {
        &cfg.issue_comments
    } else if path == reviews {
        &cfg.review_comments
    } else {
        return json_response(404, r#"{"message":"Not Found"}"#.into(), vec![]);
    };

    let mut items: Vec<&Value> = items.iter().collect();
    if cfg.descending {
        items.reverse();
    }
    let per_page: usize = query_param(query, "per_page").and_then(|v| v.parse().ok()).unwrap_or(30).max(1);
    let page: usize = query_param(query, "page").and_then(|v| v.parse().ok()).unwrap_or(1).max(1);
    let last_page = items.len().div_ceil(per_page).max(1);
    let slice: Vec<&Value> = items.iter().skip((page - 1) * per_page).take(per_page).copied().collect();

    let mut extra = vec![
        ("X-RateLimit-Remaining".to_string(), "4999".to_string()),
        ("X-RateLimit-Reset".to_string(), "4102444800".to_string()),
    ];
    if cfg.link_headers {
        let link_for = |p: usize| format!("<http://{addr}{path}?per_page={per_page}&page={p}>");
        let mut parts = Vec::new();
        if page < last_page {
            parts.push(format!("{}; rel=\"next\"", link_for(page + 1)));
        }
        parts.push(format!("{}; rel=\"last\"", link_for(last_page)));
        extra.push(("Link".to_string(), parts.join(", ")));
    }
    json_response(200, serde_json::to_string(&slice).unwrap(), extra)
}

fn json_response(status: u16, body: String, mut headers: Vec<(String, String)>) -> ScriptedResponse {
    headers.push(("Content-Type".into(), "application/json".into()));
    ScriptedResponse { status, headers, body }
}

fn write_response(mut stream: TcpStream, r: ScriptedResponse) {
    let reason = match r.status {
        200 => "OK",
        401 => "Unauthorized",
        403 => "Forbidden",
        404 => "Not Found",
        500 => "Internal Server Error",
        _ => "Status",
    };
    let mut out = format!("HTTP/1.1 {} {}\r\nContent-Length: {}\r\nConnection: close\r\n", r.status, reason, r.body.len());
    for (k, v) in &r.headers {
        out.push_str(&format!("{k}: {v}\r\n"));
    }
    out.push_str("\r\n");
    out.push_str(&r.body);
    let _ = stream.write_all(out.as_bytes());
    let _ = stream.flush();
}

/// Clock whose `sleep` only records the duration and advances time.
pub struct ManualClock {
    now: Mutex<DateTime<Utc>>,
    sleeps: Mutex<Vec<Duration>>,
}

impl ManualClock {
    pub fn at(now: DateTime<Utc>) -> Self {
        ManualClock {
            now: Mutex::new(now),
            sleeps: Mutex::new(Vec::new()),
        }
    }

    pub fn sleeps(&self) -> Vec<Duration> {
        self.sleeps.lock().unwrap().clone()
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, duration: Duration) {
        self.sleeps.lock().unwrap().push(duration);
        *self.now.lock().unwrap() += chrono::Duration::from_std(duration).unwrap();
    }
}
