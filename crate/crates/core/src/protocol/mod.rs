//! Hiding and extraction over authorization sets.
//!
//! An [`AuthorizationSet`] holds the three things a receiver needs: the
//! secret difference, where the cover carrier lives, and the hiding model.
//! A [`Bundle`] groups one or more sets for the same message together with
//! [`VerificationInfo`] used to pick a correct extraction.

mod channels;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carrier::{CarrierError, CarrierRecord, CarrierSource, SecretLocation};
use crate::codec::{self, AlignmentPolicy, CodecError, IntArray, SecretDifference, CODEC_SCHEME};
use crate::model::{self, ModelError, ModelParams, OutputHead};
use crate::parallel::{SecretNumber, SplitPlan};

pub use channels::{
    package_channels, repackage, Channel, ChannelArtifacts, DifferenceEntry, DifferencesArtifact,
    LocationEntry, LocationsArtifact, ModelEntry, ModelsArtifact, PartialChannels,
};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
/// Tail bytes captured for verification unless the caller says otherwise.
pub const DEFAULT_VERIFY_M: usize = 8;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Carrier(#[from] CarrierError),
    #[error("set {set_index}: carrier changed or wrong model ({reason})")]
    CarrierChanged { set_index: u32, reason: CodecError },
    #[error("cannot keep the last {m} bytes of a {len}-byte message")]
    MTooLarge { m: usize, len: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
    #[error("model file {path}: {reason}")]
    ModelFile { path: PathBuf, reason: String },
    #[error("every authorization set failed: {}", format_failures(.failures))]
    AllSetsFailed { failures: Vec<SetFailure> },
    #[error("channel artifacts do not belong together: {0}")]
    ChannelArtifactMismatch(String),
    #[error("incomplete authorization: missing {}", format_channels(.missing))]
    IncompleteAuthorization { missing: Vec<Channel> },
}

fn format_failures(failures: &[SetFailure]) -> String {
    failures.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn format_channels(missing: &[Channel]) -> String {
    missing.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// Why one set of a redundant bundle did not produce the message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SetFailure {
    pub set_index: u32,
    pub kind: FailureKind,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// The carrier could not be fetched or read.
    CarrierUnavailable,
    /// Extraction ran but the result is wrong: changed carrier or model.
    Mismatch,
    /// The set itself is unusable (bad model file, unknown scheme, ...).
    Invalid,
}

impl FailureKind {
    pub fn of(err: &ProtocolError) -> Self {
        match err {
            ProtocolError::Carrier(
                CarrierError::NotFound(_)
                | CarrierError::FetchFailed(_)
                | CarrierError::Io { .. },
            ) => FailureKind::CarrierUnavailable,
            ProtocolError::CarrierChanged { .. }
            | ProtocolError::Carrier(CarrierError::SegmentOutOfBounds { .. }) => FailureKind::Mismatch,
            _ => FailureKind::Invalid,
        }
    }
}

impl fmt::Display for SetFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "set {}: {}", self.set_index, self.reason)
    }
}

/// The hiding model, either carried inline or referenced by file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelRef {
    /// Model file bytes, base64.
    Inline {
        #[serde(with = "inline_model")]
        data: Arc<ModelParams>,
    },
    /// A model shared out of band, pinned by the SHA-256 of its file.
    File { path: PathBuf, sha256: String },
}

impl ModelRef {
    pub fn inline(model: impl Into<Arc<ModelParams>>) -> Self {
        ModelRef::Inline { data: model.into() }
    }

    /// References a model file on disk, recording its checksum.
    pub fn file(path: impl AsRef<Path>) -> Result<Self, ProtocolError> {
        let path = path.as_ref();
        let bytes = read_model_file(path)?;
        model::deserialize_model(&bytes)?;
        Ok(ModelRef::File {
            path: path.to_path_buf(),
            sha256: hex::encode(crate::carrier::sha256(&bytes)),
        })
    }

    pub fn load(&self) -> Result<Arc<ModelParams>, ProtocolError> {
        match self {
            ModelRef::Inline { data } => Ok(Arc::clone(data)),
            ModelRef::File { path, sha256 } => {
                let bytes = read_model_file(path)?;
                let actual = hex::encode(crate::carrier::sha256(&bytes));
                if !actual.eq_ignore_ascii_case(sha256) {
                    return Err(ProtocolError::ModelFile {
                        path: path.clone(),
                        reason: format!("checksum {actual} does not match {sha256}"),
                    });
                }
                Ok(Arc::new(model::deserialize_model(&bytes)?))
            }
        }
    }
}

fn read_model_file(path: &Path) -> Result<Vec<u8>, ProtocolError> {
    std::fs::read(path).map_err(|e| ProtocolError::ModelFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

mod inline_model {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use std::sync::Arc;

    use serde::{de, ser, Deserialize, Deserializer, Serializer};

    use crate::model::{deserialize_model, serialize_model, ModelParams};

    pub fn serialize<S: Serializer>(model: &Arc<ModelParams>, s: S) -> Result<S::Ok, S::Error> {
        let bytes = serialize_model(model).map_err(ser::Error::custom)?;
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Arc<ModelParams>, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = STANDARD.decode(text).map_err(de::Error::custom)?;
        deserialize_model(&bytes).map(Arc::new).map_err(de::Error::custom)
    }
}

/// One indispensable triple: difference, location and model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizationSet {
    pub set_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret_number: Option<SecretNumber>,
    pub codec_scheme: String,
    pub secret_difference: SecretDifference,
    pub secret_location: SecretLocation,
    pub model: ModelRef,
}

/// Last `m` bytes and total length of the secret message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationInfo {
    pub m: usize,
    pub total_len: usize,
    pub tail_bytes: Vec<u8>,
}

/// Random 128-bit value tying a bundle's channel artifacts together.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Nonce(String);

impl Nonce {
    pub fn random() -> Self {
        let mut bytes = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut bytes);
        Self::from_bytes(bytes)
    }

    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        Nonce(hex::encode(bytes))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bundle {
    pub format_version: u32,
    pub nonce: Nonce,
    /// Present on chunked bundles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<SplitPlan>,
    pub verification: VerificationInfo,
    pub authorization_sets: Vec<AuthorizationSet>,
}

impl Bundle {
    pub fn new(authorization_sets: Vec<AuthorizationSet>, verification: VerificationInfo) -> Self {
        Self {
            format_version: BUNDLE_FORMAT_VERSION,
            nonce: Nonce::random(),
            plan: None,
            verification,
            authorization_sets,
        }
    }

    pub fn with_nonce(mut self, nonce: Nonce) -> Self {
        self.nonce = nonce;
        self
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: String| Err(ProtocolError::InvalidBundle(m));
        if self.format_version != BUNDLE_FORMAT_VERSION {
            return bad(format!("unsupported bundle version {}", self.format_version));
        }
        if self.authorization_sets.is_empty() {
            return bad("no authorization sets".into());
        }
        let v = &self.verification;
        if v.m > v.total_len || v.tail_bytes.len() != v.m {
            return bad(format!(
                "verification holds {} tail bytes for m={} of {}",
                v.tail_bytes.len(),
                v.m,
                v.total_len
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for set in &self.authorization_sets {
            if !seen.insert(set.set_index) {
                return bad(format!("duplicate set index {}", set.set_index));
            }
            if set.codec_scheme != CODEC_SCHEME {
                return Err(CodecError::UnsupportedScheme(set.codec_scheme.clone()).into());
            }
            if self.plan.is_some() != set.secret_number.is_some() {
                return bad(format!("set {} secret number does not match plan", set.set_index));
            }
        }
        if let Some(plan) = &self.plan {
            plan.validate().map_err(|e| ProtocolError::InvalidBundle(e.to_string()))?;
            if plan.total_len != v.total_len {
                return bad("plan length differs from verification length".into());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ProtocolError> {
        let b: Bundle =
            serde_json::from_str(text).map_err(|e| ProtocolError::InvalidBundle(e.to_string()))?;
        b.validate()?;
        Ok(b)
    }
}

/// Hides `message` against one carrier and model.
///
/// The stego output is truncated to the message length; a shorter output is
/// [`CodecError::OutputTooShort`] and the message has to be chunked.
pub fn hide(
    message: &[u8],
    carrier: &CarrierRecord,
    model: &ModelParams,
) -> Result<AuthorizationSet, ProtocolError> {
    hide_with_ref(message, carrier, model, ModelRef::inline(model.clone()))
}

/// Like [`hide`], but records `reference` as the set's model. The caller
/// vouches that it resolves to `model`.
pub fn hide_with_ref(
    message: &[u8],
    carrier: &CarrierRecord,
    model: &ModelParams,
    reference: ModelRef,
) -> Result<AuthorizationSet, ProtocolError> {
    let output = model::forward(model, &carrier.bytes)?;
    let stego = codec::align(&output.stego, &AlignmentPolicy::truncate_to(message.len()))?;
    let secret_difference = codec::diff(&IntArray::from(message), &stego)?;
    log::debug!(
        "hid {} bytes against {} (carrier sha256 {})",
        message.len(),
        carrier.location,
        carrier.digest_hex()
    );
    Ok(AuthorizationSet {
        set_index: 0,
        secret_number: None,
        codec_scheme: CODEC_SCHEME.to_string(),
        secret_difference,
        secret_location: carrier.location.clone(),
        model: reference,
    })
}

/// Re-fetches the carrier, re-runs the model and adds the difference back.
pub fn extract<S: CarrierSource + ?Sized>(
    set: &AuthorizationSet,
    resolver: &S,
) -> Result<Vec<u8>, ProtocolError> {
    let model = set.model.load()?;
    extract_with_model(set, &model, resolver)
}

/// Extraction with the set's model already loaded.
pub fn extract_with_model<S: CarrierSource + ?Sized>(
    set: &AuthorizationSet,
    model: &ModelParams,
    resolver: &S,
) -> Result<Vec<u8>, ProtocolError> {
    if set.codec_scheme != CODEC_SCHEME {
        return Err(CodecError::UnsupportedScheme(set.codec_scheme.clone()).into());
    }
    if let OutputHead::Bytes { output_len } = model.head {
        if set.secret_difference.len() > output_len as usize {
            return Err(ProtocolError::InvalidBundle(format!(
                "set {}: difference of {} exceeds model output {output_len}",
                set.set_index,
                set.secret_difference.len()
            )));
        }
    }
    let carrier = resolver.resolve(&set.secret_location)?;
    log::debug!("set {}: carrier sha256 {}", set.set_index, carrier.digest_hex());
    let output = model::forward(model, &carrier.bytes)?;
    let changed = |reason| ProtocolError::CarrierChanged {
        set_index: set.set_index,
        reason,
    };
    let stego = codec::align(&output.stego, &AlignmentPolicy::truncate_to(set.secret_difference.len()))
        .map_err(changed)?;
    let message = codec::recover(&stego, &set.secret_difference).map_err(changed)?;
    Ok(message.into_inner())
}

pub fn make_verification(message: &[u8], m: usize) -> Result<VerificationInfo, ProtocolError> {
    if m > message.len() {
        return Err(ProtocolError::MTooLarge {
            m,
            len: message.len(),
        });
    }
    Ok(VerificationInfo {
        m,
        total_len: message.len(),
        tail_bytes: message[message.len() - m..].to_vec(),
    })
}

/// True iff the length matches and the last `m` bytes match.
pub fn verify(message: &[u8], v: &VerificationInfo) -> bool {
    message.len() == v.total_len
        && v.m <= message.len()
        && message[message.len() - v.m..] == v.tail_bytes[..]
}

/// One set per `(carrier, model)` pair, sharing verification info.
///
/// `verify_m` is capped at the message length.
pub fn hide_redundant(
    message: &[u8],
    carriers: &[CarrierRecord],
    models: &[ModelParams],
    verify_m: usize,
) -> Result<Bundle, ProtocolError> {
    if carriers.is_empty() || carriers.len() != models.len() {
        return Err(ProtocolError::InvalidInput(format!(
            "{} carriers for {} models",
            carriers.len(),
            models.len()
        )));
    }
    let sets = carriers
        .iter()
        .zip(models)
        .enumerate()
        .map(|(i, (c, m))| {
            let mut set = hide(message, c, m)?;
            set.set_index = i as u32;
            Ok(set)
        })
        .collect::<Result<Vec<_>, ProtocolError>>()?;
    let verification = make_verification(message, verify_m.min(message.len()))?;
    Ok(Bundle::new(sets, verification))
}

/// Result of [`extract_redundant`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub message: Vec<u8>,
    pub set_index: u32,
    /// Sets tried before the winner that failed.
    pub failures: Vec<SetFailure>,
}

/// Tries sets in ascending index order and returns the first extraction
/// that passes verification.
pub fn extract_redundant<S: CarrierSource + ?Sized>(
    bundle: &Bundle,
    resolver: &S,
) -> Result<Extraction, ProtocolError> {
    bundle.validate()?;
    if bundle.plan.is_some() {
        return Err(ProtocolError::InvalidBundle(
            "bundle is chunked; extract it with the parallel extractor".into(),
        ));
    }
    let mut sets: Vec<&AuthorizationSet> = bundle.authorization_sets.iter().collect();
    sets.sort_by_key(|s| s.set_index);
    let mut failures = Vec::new();
    for set in sets {
        match extract(set, resolver) {
            Ok(message) if verify(&message, &bundle.verification) => {
                return Ok(Extraction {
                    message,
                    set_index: set.set_index,
                    failures,
                })
            }
            Ok(_) => failures.push(SetFailure {
                set_index: set.set_index,
                kind: FailureKind::Mismatch,
                reason: "extracted message fails verification".into(),
            }),
            Err(e) => failures.push(SetFailure {
                set_index: set.set_index,
                kind: FailureKind::of(&e),
                reason: e.to_string(),
            }),
        }
    }
    Err(ProtocolError::AllSetsFailed { failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carrier::Resolver;
    use crate::fixtures;

    fn fixture_carrier(dir: &Path) -> CarrierRecord {
        let path = dir.join("tree.ppm");
        std::fs::write(&path, fixtures::tree_image()).unwrap();
        Resolver::new().resolve(&SecretLocation::file(&path)).unwrap()
    }

    #[test]
    fn knife_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let carrier = fixture_carrier(dir.path());
        let model = fixtures::experiment_one_model();
        let set = hide(b"knife", &carrier, &model).unwrap();
        assert_eq!(set.secret_difference.values(), &fixtures::EXPERIMENT_ONE_DIFFERENCE);
        assert_eq!(extract(&set, &Resolver::new()).unwrap(), b"knife");
    }

    #[test]
    fn aligned_output_gives_zero_difference() {
        let dir = tempfile::tempdir().unwrap();
        let carrier = fixture_carrier(dir.path());
        let set = hide(b"pot, f", &carrier, &fixtures::experiment_one_model()).unwrap();
        assert_eq!(set.secret_difference, SecretDifference::zeros(6));
    }

    #[test]
    fn message_longer_than_output() {
        let dir = tempfile::tempdir().unwrap();
        let carrier = fixture_carrier(dir.path());
        let err = hide(&[b'x'; 15], &carrier, &fixtures::experiment_one_model()).unwrap_err();
        assert!(matches!(err, ProtocolError::Codec(CodecError::OutputTooShort { .. })));
    }

    #[test]
    fn verification_rules() {
        let v = make_verification(b"knife", 2).unwrap();
        assert_eq!(v.tail_bytes, b"fe");
        assert_eq!(v.total_len, 5);
        assert!(verify(b"knife", &v));
        assert!(!verify(b"knifx", &v));
        // same tail, wrong length
        assert!(!verify(b"kife", &v));
        assert!(!verify(b"kniiife", &v));

        let v0 = make_verification(b"knife", 0).unwrap();
        assert!(v0.tail_bytes.is_empty());
        assert!(verify(b"xxxxx", &v0));
        let all = make_verification(b"knife", 5).unwrap();
        assert_eq!(all.tail_bytes, b"knife");
        assert!(matches!(make_verification(b"knife", 6), Err(ProtocolError::MTooLarge { m: 6, len: 5 })));
    }

    #[test]
    fn model_file_reference() {
        let dir = tempfile::tempdir().unwrap();
        let carrier = fixture_carrier(dir.path());
        let model = fixtures::experiment_one_model();
        let path = dir.path().join("m.bshm");
        std::fs::write(&path, model::serialize_model(&model).unwrap()).unwrap();
        let mut set = hide(b"knife", &carrier, &model).unwrap();
        set.model = ModelRef::file(&path).unwrap();
        assert_eq!(extract(&set, &Resolver::new()).unwrap(), b"knife");

        let mut other = model.clone();
        other.layers[1].biases[0] += 1;
        std::fs::write(&path, model::serialize_model(&other).unwrap()).unwrap();
        assert!(matches!(extract(&set, &Resolver::new()), Err(ProtocolError::ModelFile { .. })));
    }

    #[test]
    fn bundle_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let carrier = fixture_carrier(dir.path());
        let model = fixtures::experiment_one_model();
        let bundle = hide_redundant(b"knife", &[carrier.clone(), carrier], &[model.clone(), model], 8).unwrap();
        assert_eq!(bundle.verification.m, 5);
        let text = bundle.to_json();
        assert_eq!(Bundle::from_json(&text).unwrap(), bundle);
        assert!(text.contains("\"secret_difference\": [\n"));
    }

    #[test]
    fn bundle_validation() {
        let v = make_verification(b"ab", 1).unwrap();
        assert!(Bundle::new(vec![], v.clone()).validate().is_err());
        assert!(matches!(
            hide_redundant(b"ab", &[], &[], 1),
            Err(ProtocolError::InvalidInput(_))
        ));
    }
}
