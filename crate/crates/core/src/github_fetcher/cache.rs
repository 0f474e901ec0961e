use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::transport::HttpResponse;

/// Response headers worth replaying from the cache.
const KEPT_HEADERS: &[&str] = &["link", "x-ratelimit-remaining", "x-ratelimit-reset"];

#[derive(Serialize, Deserialize)]
struct CachedResponse {
    url: String,
    status: u16,
    headers: BTreeMap<String, String>,
    body: String,
}

/// One file per request, named by the SHA-256 of the canonical URL.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

/// Sorts query parameters so equivalent URLs share a cache entry.
pub fn canonical_url(raw: &str) -> String {
    match url::Url::parse(raw) {
        Ok(mut parsed) => {
            let mut pairs: Vec<(String, String)> = parsed
                .query_pairs()
                .map(|(k, v)| (k.into_owned(), v.into_owned()))
                .collect();
            if pairs.is_empty() {
                parsed.set_query(None);
            } else {
                pairs.sort();
                parsed.query_pairs_mut().clear().extend_pairs(pairs);
            }
            parsed.set_fragment(None);
            parsed.to_string()
        }
        Err(_) => raw.to_string(),
    }
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, url: &str) -> PathBuf {
        let digest = Sha256::digest(canonical_url(url).as_bytes());
        self.dir.join(format!("{}.json", hex::encode(digest)))
    }

    pub fn get(&self, url: &str) -> io::Result<Option<HttpResponse>> {
        let path = self.path_for(url);
        let raw = match std::fs::read(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let cached: CachedResponse = serde_json::from_slice(&raw).map_err(io::Error::other)?;
        if cached.url != canonical_url(url) {
            return Ok(None);
        }
        Ok(Some(HttpResponse {
            status: cached.status,
            headers: cached.headers,
            body: cached.body,
        }))
    }

    pub fn put(&self, url: &str, response: &HttpResponse) -> io::Result<()> {
        let headers = response
            .headers
            .iter()
            .filter(|(k, _)| KEPT_HEADERS.contains(&k.to_ascii_lowercase().as_str()))
            .map(|(k, v)| (k.to_ascii_lowercase(), v.clone()))
            .collect();
        let doc = CachedResponse {
            url: canonical_url(url),
            status: response.status,
            headers,
            body: response.body.clone(),
        };
        let bytes = serde_json::to_vec(&doc).map_err(io::Error::other)?;
        crate::fsutil::write_atomic(&self.path_for(url), &bytes)
    }
}
