//! HTTP(S) carriers with an on-disk read-through cache.
//!
//! Segments are requested with `Range` headers. A server that ignores the
//! header and answers `200` gets its full body sliced locally. Cache entries
//! are keyed by URL plus range.

use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use super::{check_bounds, sha256, slice_segments, CarrierError, Segment};

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

pub struct HttpFetcher {
    agent: ureq::Agent,
    cache_dir: Option<PathBuf>,
    bypass_cache: bool,
}

impl std::fmt::Debug for HttpFetcher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpFetcher")
            .field("cache_dir", &self.cache_dir)
            .field("bypass_cache", &self.bypass_cache)
            .finish()
    }
}

impl Default for HttpFetcher {
    fn default() -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(DEFAULT_TIMEOUT))
            .build()
            .into();
        Self {
            agent,
            cache_dir: None,
            bypass_cache: false,
        }
    }
}

enum Fetched {
    Partial(Vec<u8>),
    Whole(Vec<u8>),
}

impl HttpFetcher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    /// Skip cache reads. Fresh responses are still written back.
    pub fn bypass_cache(mut self, bypass: bool) -> Self {
        self.bypass_cache = bypass;
        self
    }

    pub fn fetch(&self, url: &str, segments: &[Segment]) -> Result<Vec<u8>, CarrierError> {
        if segments.is_empty() {
            return self.cached(url, None, || self.get(url, None)).map(Fetched::into_bytes);
        }
        let mut whole = self.lookup(url, None);
        let mut out = Vec::new();
        for s in segments {
            if let Some(data) = &whole {
                out.extend(slice_segments(data, std::slice::from_ref(s))?);
                continue;
            }
            match self.cached(url, Some(s), || self.get(url, Some(s)))? {
                Fetched::Partial(bytes) => {
                    if bytes.len() as u64 != s.len() {
                        return Err(CarrierError::SegmentOutOfBounds {
                            start: s.start,
                            end: s.end,
                            len: s.start + bytes.len() as u64,
                        });
                    }
                    out.extend(bytes);
                }
                Fetched::Whole(data) => {
                    out.extend(slice_segments(&data, std::slice::from_ref(s))?);
                    whole = Some(data);
                }
            }
        }
        Ok(out)
    }

    fn cache_path(&self, url: &str, range: Option<&Segment>) -> Option<PathBuf> {
        let key = match range {
            Some(s) => format!("{url}\n{}-{}", s.start, s.end),
            None => format!("{url}\nwhole"),
        };
        self.cache_dir.as_ref().map(|d| d.join(hex::encode(sha256(key.as_bytes()))))
    }

    fn lookup(&self, url: &str, range: Option<&Segment>) -> Option<Vec<u8>> {
        if self.bypass_cache {
            return None;
        }
        let bytes = fs::read(self.cache_path(url, range)?).ok()?;
        log::debug!("cache hit {url} {range:?}");
        Some(bytes)
    }

    fn cached(
        &self,
        url: &str,
        range: Option<&Segment>,
        fetch: impl FnOnce() -> Result<Fetched, CarrierError>,
    ) -> Result<Fetched, CarrierError> {
        if let Some(bytes) = self.lookup(url, range) {
            return Ok(match range {
                Some(_) => Fetched::Partial(bytes),
                None => Fetched::Whole(bytes),
            });
        }
        let path = self.cache_path(url, range);
        let fetched = fetch()?;
        if let Some(p) = &path {
            // A whole-body reply to a range request is cached under the whole key.
            let target = match (&fetched, range) {
                (Fetched::Whole(_), Some(_)) => self.cache_path(url, None).unwrap(),
                _ => p.clone(),
            };
            if let Err(e) = write_atomic(&target, fetched.bytes()) {
                log::warn!("cannot write HTTP cache entry {}: {e}", target.display());
            }
        }
        Ok(fetched)
    }

    fn get(&self, url: &str, range: Option<&Segment>) -> Result<Fetched, CarrierError> {
        let mut req = self.agent.get(url);
        if let Some(s) = range {
            req = req.header("Range", format!("bytes={}-{}", s.start, s.end - 1));
        }
        let mut resp = req
            .call()
            .map_err(|e| CarrierError::FetchFailed(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let read = |resp: &mut ureq::http::Response<ureq::Body>| {
            resp.body_mut()
                .with_config()
                .limit(u64::MAX)
                .read_to_vec()
                .map_err(|e| CarrierError::FetchFailed(format!("{url}: {e}")))
        };
        match (status, range) {
            (206, Some(_)) => Ok(Fetched::Partial(read(&mut resp)?)),
            (200, Some(s)) => {
                let data = read(&mut resp)?;
                check_bounds(s, data.len() as u64)?;
                Ok(Fetched::Whole(data))
            }
            (200, None) => Ok(Fetched::Whole(read(&mut resp)?)),
            (416, Some(s)) => Err(CarrierError::SegmentOutOfBounds {
                start: s.start,
                end: s.end,
                len: content_range_total(&resp).unwrap_or(0),
            }),
            (404 | 410, _) => Err(CarrierError::NotFound(url.to_string())),
            (code, _) => Err(CarrierError::FetchFailed(format!("{url}: HTTP {code}"))),
        }
    }
}

impl Fetched {
    fn bytes(&self) -> &[u8] {
        match self {
            Fetched::Partial(b) | Fetched::Whole(b) => b,
        }
    }

    fn into_bytes(self) -> Vec<u8> {
        match self {
            Fetched::Partial(b) | Fetched::Whole(b) => b,
        }
    }
}

fn content_range_total(resp: &ureq::http::Response<ureq::Body>) -> Option<u64> {
    let v = resp.headers().get("content-range")?.to_str().ok()?;
    v.rsplit('/').next()?.parse().ok()
}

fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}
