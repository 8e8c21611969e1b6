//! Local content-addressed carrier corpus.
//!
//! Layout: `<root>/objects/<sha256-hex>` holds each resource, and
//! `<root>/catalog.json` lists them. Ids are content hashes, so adding the
//! same bytes twice is a no-op.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{read_file_segments, sha256, CarrierError, CarrierRecord, SecretLocation, Segment};

const CATALOG: &str = "catalog.json";
const OBJECTS: &str = "objects";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub len: u64,
    /// Where the bytes came from (path or URL), informational.
    pub source: String,
    pub added_unix: u64,
}

/// How to pick a carrier block from the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionRule {
    pub block_size: u64,
    /// Only consider entries whose `source` contains this substring.
    pub source_filter: Option<String>,
}

impl SelectionRule {
    pub fn block(block_size: u64) -> Self {
        Self {
            block_size,
            source_filter: None,
        }
    }
}

#[derive(Debug)]
pub struct Corpus {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl Corpus {
    /// Opens (creating if needed) a corpus directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CarrierError> {
        let root = root.into();
        let objects = root.join(OBJECTS);
        fs::create_dir_all(&objects).map_err(|e| CarrierError::io(&objects, e))?;
        Ok(Self {
            root,
            write_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn object_path(&self, id: &str) -> Result<PathBuf, CarrierError> {
        if id.len() != 64 || !id.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(CarrierError::InvalidLocation(id.to_string(), "corpus id must be 64 hex digits"));
        }
        Ok(self.root.join(OBJECTS).join(id.to_ascii_lowercase()))
    }

    pub fn add_bytes(&self, bytes: &[u8], source: &str) -> Result<String, CarrierError> {
        let id = hex::encode(sha256(bytes));
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let path = self.object_path(&id)?;
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        let mut catalog = self.list()?;
        if !catalog.iter().any(|e| e.id == id) {
            catalog.push(CatalogEntry {
                id: id.clone(),
                len: bytes.len() as u64,
                source: source.to_string(),
                added_unix: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            });
            let json = serde_json::to_vec_pretty(&catalog).expect("catalog serializes");
            write_atomic(&self.root.join(CATALOG), &json)?;
        }
        Ok(id)
    }

    pub fn add_path(&self, path: impl AsRef<Path>) -> Result<String, CarrierError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| CarrierError::io(path, e))?;
        self.add_bytes(&bytes, &path.display().to_string())
    }

    pub fn list(&self) -> Result<Vec<CatalogEntry>, CarrierError> {
        let path = self.root.join(CATALOG);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| CarrierError::CorruptCatalog(e.to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(CarrierError::io(&path, e)),
        }
    }

    pub fn read_segments(&self, id: &str, segments: &[Segment]) -> Result<Vec<u8>, CarrierError> {
        read_file_segments(&self.object_path(id)?, segments)
    }

    /// Picks a random `block_size`-byte block from a random eligible entry.
    pub fn select_carrier<R: Rng + ?Sized>(
        &self,
        rule: &SelectionRule,
        rng: &mut R,
    ) -> Result<CarrierRecord, CarrierError> {
        let location = self.select_location(rule, rng)?;
        let bytes = self.read_segments(&location.address, &location.segments)?;
        Ok(CarrierRecord::new(location, bytes))
    }

    pub fn select_location<R: Rng + ?Sized>(
        &self,
        rule: &SelectionRule,
        rng: &mut R,
    ) -> Result<SecretLocation, CarrierError> {
        if rule.block_size == 0 {
            return Err(CarrierError::InvalidRule("block size must be at least 1".into()));
        }
        let entries = self.list()?;
        let eligible: Vec<&CatalogEntry> = entries
            .iter()
            .filter(|e| e.len >= rule.block_size)
            .filter(|e| rule.source_filter.as_ref().is_none_or(|f| e.source.contains(f.as_str())))
            .collect();
        if eligible.is_empty() {
            return Err(CarrierError::CorpusExhausted {
                block_size: rule.block_size,
            });
        }
        let entry = eligible[rng.gen_range(0..eligible.len())];
        let location = SecretLocation::corpus(entry.id.clone());
        if entry.len == rule.block_size {
            return Ok(location);
        }
        let start = rng.gen_range(0..=entry.len - rule.block_size);
        Ok(location.with_segments(vec![Segment {
            start,
            end: start + rule.block_size,
        }]))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CarrierError> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| CarrierError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CarrierError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CarrierError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CarrierError::io(path, e))
}
