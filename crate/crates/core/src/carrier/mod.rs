//! Carrier addressing and retrieval.
//!
//! A [`SecretLocation`] names a resource (local file, HTTP(S) URL or corpus
//! object) and an optional list of byte segments inside it. Resolving a
//! location only ever reads from the source.

mod corpus;
mod http;

use std::fmt;
use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use corpus::{CatalogEntry, Corpus, SelectionRule};
pub use http::HttpFetcher;

#[derive(Debug, Error)]
pub enum CarrierError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("fetch failed: {0}")]
    FetchFailed(String),
    #[error("segment {start}-{end} is outside a {len}-byte resource")]
    SegmentOutOfBounds { start: u64, end: u64, len: u64 },
    #[error("invalid location {0:?}: {1}")]
    InvalidLocation(String, &'static str),
    #[error("no {0} source configured")]
    Unconfigured(Scheme),
    #[error("no corpus resource holds {block_size} bytes")]
    CorpusExhausted { block_size: u64 },
    #[error("invalid selection rule: {0}")]
    InvalidRule(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corpus catalog is corrupt: {0}")]
    CorruptCatalog(String),
}

impl CarrierError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            CarrierError::NotFound(path.display().to_string())
        } else {
            CarrierError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    File,
    Http,
    Https,
    Corpus,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::File => "file",
            Scheme::Http => "http",
            Scheme::Https => "https",
            Scheme::Corpus => "corpus",
        })
    }
}

/// Half-open byte range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u64; 2]", into = "[u64; 2]")]
pub struct Segment {
    pub start: u64,
    pub end: u64,
}

impl Segment {
    pub fn new(start: u64, end: u64) -> Result<Self, CarrierError> {
        if start >= end {
            return Err(CarrierError::InvalidLocation(
                format!("{start}-{end}"),
                "segment start must be below end",
            ));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

impl TryFrom<[u64; 2]> for Segment {
    type Error = CarrierError;

    fn try_from([start, end]: [u64; 2]) -> Result<Self, Self::Error> {
        Segment::new(start, end)
    }
}

impl From<Segment> for [u64; 2] {
    fn from(s: Segment) -> Self {
        [s.start, s.end]
    }
}

/// Where a cover carrier lives. Segments are concatenated in listed order;
/// an empty list means the whole resource.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SecretLocation {
    pub scheme: Scheme,
    /// File path, full URL, or corpus id.
    pub address: String,
    pub segments: Vec<Segment>,
}

impl SecretLocation {
    pub fn file(path: impl AsRef<Path>) -> Self {
        Self {
            scheme: Scheme::File,
            address: path.as_ref().display().to_string(),
            segments: Vec::new(),
        }
    }

    pub fn corpus(id: impl Into<String>) -> Self {
        Self {
            scheme: Scheme::Corpus,
            address: id.into(),
            segments: Vec::new(),
        }
    }

    pub fn with_segments(mut self, segments: Vec<Segment>) -> Self {
        self.segments = segments;
        self
    }
}

impl fmt::Display for SecretLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scheme {
            Scheme::File => write!(f, "file://{}", self.address)?,
            Scheme::Corpus => write!(f, "corpus://{}", self.address)?,
            Scheme::Http | Scheme::Https => f.write_str(&self.address)?,
        }
        for (i, s) in self.segments.iter().enumerate() {
            let sep = if i == 0 { '#' } else { ',' };
            write!(f, "{sep}{}-{}", s.start, s.end)?;
        }
        Ok(())
    }
}

impl FromStr for SecretLocation {
    type Err = CarrierError;

    /// Parses `file:///path#10-15,0-5`, `https://host/path#0-100` or `corpus://<id>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why| CarrierError::InvalidLocation(s.to_string(), why);
        let (resource, fragment) = match s.rsplit_once('#') {
            Some((r, f)) => (r, Some(f)),
            None => (s, None),
        };
        let (scheme_str, rest) = resource.split_once("://").ok_or_else(|| bad("missing scheme"))?;
        let (scheme, address) = match scheme_str.to_ascii_lowercase().as_str() {
            "file" => (Scheme::File, rest.to_string()),
            "corpus" => (Scheme::Corpus, rest.to_string()),
            "http" => (Scheme::Http, resource.to_string()),
            "https" => (Scheme::Https, resource.to_string()),
            _ => return Err(bad("unsupported scheme")),
        };
        if rest.is_empty() {
            return Err(bad("empty address"));
        }
        let segments = match fragment {
            None => Vec::new(),
            Some(frag) => frag
                .split(',')
                .map(|part| {
                    let (a, b) = part.split_once('-').ok_or_else(|| bad("segment needs start-end"))?;
                    let start = a.trim().parse().map_err(|_| bad("bad segment start"))?;
                    let end = b.trim().parse().map_err(|_| bad("bad segment end"))?;
                    Segment::new(start, end)
                })
                .collect::<Result<_, _>>()?,
        };
        Ok(Self {
            scheme,
            address,
            segments,
        })
    }
}

/// Resolved carrier bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CarrierRecord {
    pub location: SecretLocation,
    pub bytes: Vec<u8>,
    /// SHA-256 of `bytes`. Diagnostic only; never written into bundles.
    pub digest: [u8; 32],
}

impl CarrierRecord {
    pub fn new(location: SecretLocation, bytes: Vec<u8>) -> Self {
        let digest = sha256(&bytes);
        Self {
            location,
            bytes,
            digest,
        }
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }
}

pub(crate) fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Anything that can turn a location into carrier bytes.
///
/// Implementations must be read-only with respect to the source.
pub trait CarrierSource: Send + Sync {
    fn resolve(&self, location: &SecretLocation) -> Result<CarrierRecord, CarrierError>;
}

impl<T: CarrierSource + ?Sized> CarrierSource for &T {
    fn resolve(&self, location: &SecretLocation) -> Result<CarrierRecord, CarrierError> {
        (**self).resolve(location)
    }
}

impl<T: CarrierSource + ?Sized> CarrierSource for std::sync::Arc<T> {
    fn resolve(&self, location: &SecretLocation) -> Result<CarrierRecord, CarrierError> {
        (**self).resolve(location)
    }
}

/// The standard resolver: local files, HTTP(S) through a read-through cache,
/// and an optional corpus.
#[derive(Debug, Default)]
pub struct Resolver {
    corpus: Option<Corpus>,
    http: HttpFetcher,
}

impl Resolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_corpus(mut self, corpus: Corpus) -> Self {
        self.corpus = Some(corpus);
        self
    }

    pub fn with_http(mut self, http: HttpFetcher) -> Self {
        self.http = http;
        self
    }

    pub fn corpus(&self) -> Option<&Corpus> {
        self.corpus.as_ref()
    }
}

impl CarrierSource for Resolver {
    fn resolve(&self, location: &SecretLocation) -> Result<CarrierRecord, CarrierError> {
        let bytes = match location.scheme {
            Scheme::File => read_file_segments(Path::new(&location.address), &location.segments)?,
            Scheme::Http | Scheme::Https => self.http.fetch(&location.address, &location.segments)?,
            Scheme::Corpus => self
                .corpus
                .as_ref()
                .ok_or(CarrierError::Unconfigured(Scheme::Corpus))?
                .read_segments(&location.address, &location.segments)?,
        };
        Ok(CarrierRecord::new(location.clone(), bytes))
    }
}

pub(crate) fn read_file_segments(path: &Path, segments: &[Segment]) -> Result<Vec<u8>, CarrierError> {
    let mut file = File::open(path).map_err(|e| CarrierError::io(path, e))?;
    if segments.is_empty() {
        let mut out = Vec::new();
        file.read_to_end(&mut out).map_err(|e| CarrierError::io(path, e))?;
        return Ok(out);
    }
    let len = file.metadata().map_err(|e| CarrierError::io(path, e))?.len();
    let total: u64 = segments.iter().map(Segment::len).sum();
    let mut out = Vec::with_capacity(total as usize);
    for s in segments {
        check_bounds(s, len)?;
        file.seek(SeekFrom::Start(s.start)).map_err(|e| CarrierError::io(path, e))?;
        let at = out.len();
        out.resize(at + s.len() as usize, 0);
        file.read_exact(&mut out[at..]).map_err(|e| CarrierError::io(path, e))?;
    }
    Ok(out)
}

pub(crate) fn check_bounds(s: &Segment, len: u64) -> Result<(), CarrierError> {
    if s.end > len {
        return Err(CarrierError::SegmentOutOfBounds {
            start: s.start,
            end: s.end,
            len,
        });
    }
    Ok(())
}

/// Concatenates `segments` of an in-memory resource.
pub fn slice_segments(data: &[u8], segments: &[Segment]) -> Result<Vec<u8>, CarrierError> {
    if segments.is_empty() {
        return Ok(data.to_vec());
    }
    let mut out = Vec::new();
    for s in segments {
        check_bounds(s, data.len() as u64)?;
        out.extend_from_slice(&data[s.start as usize..s.end as usize]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn hundred_byte_file() -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&(0..100u8).collect::<Vec<_>>()).unwrap();
        f
    }

    #[test]
    fn parse_and_display() {
        let loc: SecretLocation = "file:///tmp/x.bin#10-15,0-5".parse().unwrap();
        assert_eq!(loc.scheme, Scheme::File);
        assert_eq!(loc.address, "/tmp/x.bin");
        assert_eq!(loc.segments, vec![Segment { start: 10, end: 15 }, Segment { start: 0, end: 5 }]);
        assert_eq!(loc.to_string(), "file:///tmp/x.bin#10-15,0-5");

        let loc: SecretLocation = "https://example.org/a/b.jpg#0-100".parse().unwrap();
        assert_eq!(loc.scheme, Scheme::Https);
        assert_eq!(loc.address, "https://example.org/a/b.jpg");
        assert_eq!(loc.to_string(), "https://example.org/a/b.jpg#0-100");

        let loc: SecretLocation = "corpus://abcd".parse().unwrap();
        assert_eq!(loc, SecretLocation::corpus("abcd"));
        assert_eq!(loc.to_string(), "corpus://abcd");
    }

    #[test]
    fn parse_rejects_garbage() {
        for s in ["nope", "ftp://x", "file://", "file:///a#5-5", "file:///a#9-3", "file:///a#x-3", "file:///a#4"] {
            assert!(s.parse::<SecretLocation>().is_err(), "{s}");
        }
    }

    #[test]
    fn whole_file() {
        let f = hundred_byte_file();
        let rec = Resolver::new().resolve(&SecretLocation::file(f.path())).unwrap();
        assert_eq!(rec.bytes, (0..100u8).collect::<Vec<_>>());
        assert_eq!(rec.digest, sha256(&rec.bytes));
    }

    #[test]
    fn unordered_segments() {
        let f = hundred_byte_file();
        let loc = SecretLocation::file(f.path())
            .with_segments(vec![Segment::new(10, 15).unwrap(), Segment::new(0, 5).unwrap()]);
        let rec = Resolver::new().resolve(&loc).unwrap();
        assert_eq!(rec.bytes, vec![10, 11, 12, 13, 14, 0, 1, 2, 3, 4]);
    }

    #[test]
    fn segment_past_end() {
        let f = hundred_byte_file();
        let loc = SecretLocation::file(f.path()).with_segments(vec![Segment::new(90, 200).unwrap()]);
        assert!(matches!(
            Resolver::new().resolve(&loc),
            Err(CarrierError::SegmentOutOfBounds { start: 90, end: 200, len: 100 })
        ));
    }

    #[test]
    fn missing_file() {
        let loc = SecretLocation::file("/definitely/not/here.bin");
        assert!(matches!(Resolver::new().resolve(&loc), Err(CarrierError::NotFound(_))));
    }

    #[test]
    fn corpus_scheme_needs_corpus() {
        assert!(matches!(
            Resolver::new().resolve(&SecretLocation::corpus("00")),
            Err(CarrierError::Unconfigured(Scheme::Corpus))
        ));
    }

    #[test]
    fn location_json_shape() {
        let loc = SecretLocation::file("/a").with_segments(vec![Segment::new(1, 4).unwrap()]);
        let json = serde_json::to_string(&loc).unwrap();
        assert_eq!(json, r#"{"scheme":"file","address":"/a","segments":[[1,4]]}"#);
        assert!(serde_json::from_str::<SecretLocation>(r#"{"scheme":"file","address":"/a","segments":[[4,4]]}"#).is_err());
    }

    fn arb_segments() -> impl Strategy<Value = (Vec<u8>, Vec<(u64, u64)>)> {
        proptest::collection::vec(any::<u8>(), 1..300).prop_flat_map(|data| {
            let n = data.len() as u64;
            let seg = (0..n).prop_flat_map(move |s| (Just(s), s + 1..=n));
            (Just(data), proptest::collection::vec(seg, 0..6))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn file_segments_match_slicing((data, segs) in arb_segments()) {
            let mut f = tempfile::NamedTempFile::new().unwrap();
            f.write_all(&data).unwrap();
            let segments: Vec<Segment> = segs.iter().map(|&(a, b)| Segment::new(a, b).unwrap()).collect();
            let loc = SecretLocation::file(f.path()).with_segments(segments);
            let expected: Vec<u8> = if segs.is_empty() {
                data.clone()
            } else {
                segs.iter().flat_map(|&(a, b)| data[a as usize..b as usize].to_vec()).collect()
            };
            let rec = Resolver::new().resolve(&loc).unwrap();
            prop_assert_eq!(&rec.bytes, &expected);
            prop_assert_eq!(slice_segments(&data, &loc.segments).unwrap(), expected);
            let again = Resolver::new().resolve(&loc).unwrap();
            prop_assert_eq!(rec, again);
        }
    }
}
