//! Chunked hiding and extraction.
//!
//! A message is split into numbered sub-messages, each hidden against its own
//! carrier. Carriers are drawn from the supplier in chunk order on the
//! calling thread, and the model work then runs on a pool of `workers`
//! threads. Results are collected by position, so the bundle does not
//! depend on the worker count.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carrier::{CarrierError, CarrierRecord, CarrierSource, Corpus, SelectionRule};
use crate::model::ModelParams;
use crate::protocol::{
    self, AuthorizationSet, Bundle, FailureKind, ModelRef, Nonce, ProtocolError, DEFAULT_VERIFY_M,
};

/// Width of a rendered secret number.
pub const SECRET_NUMBER_WIDTH: usize = 6;
pub const MAX_CHUNKS: usize = 1_000_000;
/// Attempts at drawing a not-yet-used corpus location per chunk.
const DISTINCT_ATTEMPTS: usize = 64;

#[derive(Debug, Error)]
pub enum ParallelError {
    #[error("chunk length must be at least 1")]
    InvalidChunkLen,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{0} chunks exceed the secret number range")]
    TooManyChunks(usize),
    #[error("chunk length {chunk_len} exceeds model capacity {capacity}")]
    ChunkTooLong { chunk_len: usize, capacity: usize },
    #[error("missing chunks {}", render_numbers(.0))]
    MissingChunk(Vec<SecretNumber>),
    #[error("duplicate chunk {0}")]
    DuplicateChunk(SecretNumber),
    #[error("reassembled message fails verification (unrecoverable chunks: {})", render_numbers(.failed_chunks))]
    VerificationFailed { failed_chunks: Vec<SecretNumber> },
    #[error("carriers unavailable for chunks {}", render_numbers(.failed_chunks))]
    CarrierUnavailable { failed_chunks: Vec<SecretNumber> },
    #[error("bundle has no split plan")]
    NotChunked,
    #[error(transparent)]
    Carrier(#[from] CarrierError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("worker pool: {0}")]
    Pool(String),
}

fn render_numbers(ns: &[SecretNumber]) -> String {
    if ns.is_empty() {
        return "none".into();
    }
    ns.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// Position of a sub-message, rendered as six zero-padded digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SecretNumber(u32);

impl SecretNumber {
    pub fn new(index: usize) -> Result<Self, ParallelError> {
        if index >= MAX_CHUNKS {
            return Err(ParallelError::TooManyChunks(index + 1));
        }
        Ok(Self(index as u32))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for SecretNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:0width$}", self.0, width = SECRET_NUMBER_WIDTH)
    }
}

impl FromStr for SecretNumber {
    type Err = ParallelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != SECRET_NUMBER_WIDTH || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParallelError::InvalidInput(format!("bad secret number {s:?}")));
        }
        Self::new(s.parse().expect("six digits"))
    }
}

impl TryFrom<String> for SecretNumber {
    type Error = ParallelError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SecretNumber> for String {
    fn from(n: SecretNumber) -> Self {
        n.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub parts: usize,
    pub chunk_len: usize,
    pub total_len: usize,
}

impl SplitPlan {
    pub fn new(total_len: usize, chunk_len: usize) -> Result<Self, ParallelError> {
        if chunk_len == 0 {
            return Err(ParallelError::InvalidChunkLen);
        }
        if total_len == 0 {
            return Err(ParallelError::InvalidInput("empty message cannot be split".into()));
        }
        let parts = total_len.div_ceil(chunk_len);
        if parts > MAX_CHUNKS {
            return Err(ParallelError::TooManyChunks(parts));
        }
        Ok(Self {
            parts,
            chunk_len,
            total_len,
        })
    }

    pub fn validate(&self) -> Result<(), ParallelError> {
        let expected = Self::new(self.total_len, self.chunk_len)?;
        if expected.parts != self.parts {
            return Err(ParallelError::InvalidInput(format!(
                "plan lists {} parts, expected {}",
                self.parts, expected.parts
            )));
        }
        Ok(())
    }
}

pub fn split(message: &[u8], chunk_len: usize) -> Result<Vec<(SecretNumber, &[u8])>, ParallelError> {
    SplitPlan::new(message.len(), chunk_len)?;
    message
        .chunks(chunk_len)
        .enumerate()
        .map(|(i, c)| Ok((SecretNumber::new(i)?, c)))
        .collect()
}

/// Concatenates parts by secret number; the part count is taken from the
/// highest number present.
pub fn merge<B: AsRef<[u8]>>(parts: &[(SecretNumber, B)]) -> Result<Vec<u8>, ParallelError> {
    let count = parts.iter().map(|(n, _)| n.index() + 1).max().unwrap_or(0);
    if count == 0 {
        return Err(ParallelError::InvalidInput("no parts".into()));
    }
    merge_exact(parts, count)
}

/// Like [`merge`], but checks the parts against a known plan.
pub fn merge_planned<B: AsRef<[u8]>>(
    parts: &[(SecretNumber, B)],
    plan: &SplitPlan,
) -> Result<Vec<u8>, ParallelError> {
    if let Some((n, _)) = parts.iter().find(|(n, _)| n.index() >= plan.parts) {
        return Err(ParallelError::InvalidInput(format!(
            "chunk {n} beyond plan of {} parts",
            plan.parts
        )));
    }
    let merged = merge_exact(parts, plan.parts)?;
    if merged.len() != plan.total_len {
        return Err(ParallelError::InvalidInput(format!(
            "merged {} bytes, plan says {}",
            merged.len(),
            plan.total_len
        )));
    }
    Ok(merged)
}

fn merge_exact<B: AsRef<[u8]>>(parts: &[(SecretNumber, B)], count: usize) -> Result<Vec<u8>, ParallelError> {
    let mut slots: Vec<Option<&[u8]>> = vec![None; count];
    for (n, bytes) in parts {
        let slot = &mut slots[n.index()];
        if slot.is_some() {
            return Err(ParallelError::DuplicateChunk(*n));
        }
        *slot = Some(bytes.as_ref());
    }
    let missing: Vec<SecretNumber> = slots
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_none())
        .map(|(i, _)| SecretNumber(i as u32))
        .collect();
    if !missing.is_empty() {
        return Err(ParallelError::MissingChunk(missing));
    }
    Ok(slots.into_iter().flatten().flatten().copied().collect())
}

/// Hands out one carrier per (chunk, replica).
///
/// Locations must not repeat across calls, including concurrent ones.
pub trait CarrierSupplier: Sync {
    fn next_carrier(&self, number: SecretNumber, replica: usize) -> Result<CarrierRecord, CarrierError>;
}

impl<F> CarrierSupplier for F
where
    F: Fn(SecretNumber, usize) -> Result<CarrierRecord, CarrierError> + Sync,
{
    fn next_carrier(&self, number: SecretNumber, replica: usize) -> Result<CarrierRecord, CarrierError> {
        self(number, replica)
    }
}

/// Random blocks from a corpus, never handing out the same location twice.
pub struct CorpusSupplier<'a> {
    corpus: &'a Corpus,
    rule: SelectionRule,
    rng: Mutex<ChaCha8Rng>,
    used: Mutex<HashSet<crate::carrier::SecretLocation>>,
}

impl<'a> CorpusSupplier<'a> {
    pub fn new(corpus: &'a Corpus, rule: SelectionRule, seed: u64) -> Self {
        Self {
            corpus,
            rule,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            used: Mutex::new(HashSet::new()),
        }
    }
}

impl CarrierSupplier for CorpusSupplier<'_> {
    fn next_carrier(&self, _: SecretNumber, _: usize) -> Result<CarrierRecord, CarrierError> {
        for _ in 0..DISTINCT_ATTEMPTS {
            let location = {
                let mut rng = self.rng.lock().unwrap_or_else(|p| p.into_inner());
                self.corpus.select_location(&self.rule, &mut *rng)?
            };
            if self.used.lock().unwrap_or_else(|p| p.into_inner()).insert(location.clone()) {
                let bytes = self.corpus.read_segments(&location.address, &location.segments)?;
                return Ok(CarrierRecord::new(location, bytes));
            }
        }
        Err(CarrierError::CorpusExhausted {
            block_size: self.rule.block_size,
        })
    }
}

/// A hiding model plus the reference recorded in the bundle for it.
#[derive(Debug, Clone)]
pub struct SuppliedModel {
    pub params: Arc<ModelParams>,
    pub reference: ModelRef,
}

/// Supplies the hiding model for each (chunk, replica).
pub trait ModelSupplier: Sync {
    fn model(&self, number: SecretNumber, replica: usize) -> SuppliedModel;
    /// Smallest output any supplied model guarantees.
    fn capacity(&self) -> usize;
}

/// Round-robin over a fixed set of models.
#[derive(Debug, Clone)]
pub struct ModelPool(Vec<SuppliedModel>);

impl ModelPool {
    /// Models carried inline in every set.
    pub fn new(models: Vec<ModelParams>) -> Result<Self, ParallelError> {
        Self::from_supplied(
            models
                .into_iter()
                .map(|m| {
                    let params = Arc::new(m);
                    SuppliedModel {
                        reference: ModelRef::inline(Arc::clone(&params)),
                        params,
                    }
                })
                .collect(),
        )
    }

    /// Model files referenced by path and checksum.
    pub fn from_files<P: AsRef<std::path::Path>>(paths: &[P]) -> Result<Self, ParallelError> {
        let supplied = paths
            .iter()
            .map(|p| {
                let reference = ModelRef::file(p)?;
                let params = reference.load()?;
                Ok(SuppliedModel { params, reference })
            })
            .collect::<Result<Vec<_>, ProtocolError>>()?;
        Self::from_supplied(supplied)
    }

    pub fn from_supplied(models: Vec<SuppliedModel>) -> Result<Self, ParallelError> {
        if models.is_empty() {
            return Err(ParallelError::InvalidInput("model pool is empty".into()));
        }
        Ok(Self(models))
    }
}

impl ModelSupplier for ModelPool {
    fn model(&self, number: SecretNumber, replica: usize) -> SuppliedModel {
        self.0[(number.index() + replica) % self.0.len()].clone()
    }

    fn capacity(&self) -> usize {
        self.0.iter().map(|m| m.params.capacity()).min().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelOptions {
    /// Defaults to the model supplier's capacity.
    pub chunk_len: Option<usize>,
    pub workers: usize,
    /// Sets per chunk.
    pub redundancy: usize,
    pub verify_m: usize,
    /// Fixed bundle nonce; random when absent.
    pub nonce: Option<Nonce>,
}

impl Default for ParallelOptions {
    fn default() -> Self {
        Self {
            chunk_len: None,
            workers: 1,
            redundancy: 1,
            verify_m: DEFAULT_VERIFY_M,
            nonce: None,
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, ParallelError> {
    if workers == 0 {
        return Err(ParallelError::InvalidInput("workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ParallelError::Pool(e.to_string()))
}

pub fn hide_parallel(
    message: &[u8],
    carriers: &dyn CarrierSupplier,
    models: &dyn ModelSupplier,
    opts: &ParallelOptions,
) -> Result<Bundle, ParallelError> {
    let capacity = models.capacity();
    let chunk_len = opts.chunk_len.unwrap_or(capacity);
    if chunk_len == 0 {
        return Err(ParallelError::InvalidChunkLen);
    }
    if chunk_len > capacity {
        return Err(ParallelError::ChunkTooLong { chunk_len, capacity });
    }
    if opts.redundancy == 0 {
        return Err(ParallelError::InvalidInput("redundancy must be at least 1".into()));
    }
    let plan = SplitPlan::new(message.len(), chunk_len)?;
    let parts = split(message, chunk_len)?;

    let mut jobs = Vec::with_capacity(parts.len() * opts.redundancy);
    for (number, part) in &parts {
        for replica in 0..opts.redundancy {
            let carrier = carriers.next_carrier(*number, replica)?;
            let model = models.model(*number, replica);
            jobs.push((*number, *part, carrier, model));
        }
    }

    let sets: Vec<AuthorizationSet> = pool(opts.workers)?.install(|| {
        jobs.par_iter()
            .enumerate()
            .map(|(i, (number, part, carrier, model))| {
                let mut set =
                    protocol::hide_with_ref(part, carrier, &model.params, model.reference.clone())?;
                set.set_index = i as u32;
                set.secret_number = Some(*number);
                Ok(set)
            })
            .collect::<Result<_, ProtocolError>>()
    })?;

    let verification = protocol::make_verification(message, opts.verify_m.min(message.len()))?;
    let mut bundle = Bundle::new(sets, verification);
    bundle.plan = Some(plan);
    if let Some(nonce) = &opts.nonce {
        bundle.nonce = nonce.clone();
    }
    Ok(bundle)
}

/// Extracts every chunk, reassembles by secret number and verifies.
///
/// Within a chunk, sets are tried in index order and the first successful
/// extraction is used.
pub fn extract_parallel<S: CarrierSource + ?Sized>(
    bundle: &Bundle,
    resolver: &S,
    workers: usize,
) -> Result<Vec<u8>, ParallelError> {
    bundle.validate()?;
    let plan = bundle.plan.as_ref().ok_or(ParallelError::NotChunked)?;
    let mut by_number: BTreeMap<SecretNumber, Vec<&AuthorizationSet>> = BTreeMap::new();
    for set in &bundle.authorization_sets {
        let n = set.secret_number.expect("validated chunked bundle");
        by_number.entry(n).or_default().push(set);
    }
    let missing: Vec<SecretNumber> = (0..plan.parts)
        .map(|i| SecretNumber(i as u32))
        .filter(|n| !by_number.contains_key(n))
        .collect();
    if !missing.is_empty() {
        return Err(ParallelError::MissingChunk(missing));
    }
    let groups: Vec<(SecretNumber, Vec<&AuthorizationSet>)> = by_number
        .into_iter()
        .map(|(n, mut sets)| {
            sets.sort_by_key(|s| s.set_index);
            (n, sets)
        })
        .collect();

    let models = ModelCache::default();
    // Per chunk: the part, or whether every set failed for want of a carrier.
    let results: Vec<(SecretNumber, Result<Vec<u8>, bool>)> = pool(workers)?.install(|| {
        groups
            .par_iter()
            .map(|(n, sets)| {
                let attempt = |set: &AuthorizationSet| {
                    let model = models.load(&set.model)?;
                    protocol::extract_with_model(set, &model, resolver)
                };
                let mut unavailable = true;
                for set in sets {
                    match attempt(set) {
                        Ok(part) => return (*n, Ok(part)),
                        Err(e) => {
                            log::debug!("chunk {n} set {}: {e}", set.set_index);
                            unavailable &= FailureKind::of(&e) == FailureKind::CarrierUnavailable;
                        }
                    }
                }
                (*n, Err(unavailable))
            })
            .collect()
    });

    let failed: Vec<(SecretNumber, bool)> = results
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|&u| (*n, u)))
        .collect();
    if !failed.is_empty() {
        let failed_chunks = failed.iter().map(|(n, _)| *n).collect();
        return Err(if failed.iter().all(|(_, u)| *u) {
            ParallelError::CarrierUnavailable { failed_chunks }
        } else {
            ParallelError::VerificationFailed { failed_chunks }
        });
    }
    let parts: Vec<(SecretNumber, Vec<u8>)> =
        results.into_iter().map(|(n, r)| (n, r.expect("checked above"))).collect();
    let message = merge_planned(&parts, plan)
        .map_err(|_| ParallelError::VerificationFailed { failed_chunks: Vec::new() })?;
    if !protocol::verify(&message, &bundle.verification) {
        return Err(ParallelError::VerificationFailed { failed_chunks: Vec::new() });
    }
    Ok(message)
}

/// Loads each referenced model file once per extraction.
#[derive(Default)]
struct ModelCache(Mutex<HashMap<(PathBuf, String), Arc<ModelParams>>>);

impl ModelCache {
    fn load(&self, reference: &ModelRef) -> Result<Arc<ModelParams>, ProtocolError> {
        let ModelRef::File { path, sha256 } = reference else {
            return reference.load();
        };
        let key = (path.clone(), sha256.to_ascii_lowercase());
        if let Some(m) = self.0.lock().unwrap_or_else(|p| p.into_inner()).get(&key) {
            return Ok(Arc::clone(m));
        }
        let model = reference.load()?;
        self.0
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(key, Arc::clone(&model));
        Ok(model)
    }
}
