//! Byte/text conversion and difference coding.
//!
//! A secret message and a stego output are both viewed as arrays of byte
//! values. Hiding stores `message - stego` element by element as plain signed
//! integers; extraction adds the difference back onto a freshly computed
//! stego output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the difference scheme written into bundles.
pub const CODEC_SCHEME: &str = "sub-v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("element {value} at index {index} is outside [0, 255]")]
    ElementOutOfRange { index: usize, value: i64 },
    #[error("difference {value} at index {index} is outside [-255, 255]")]
    DifferenceOutOfRange { index: usize, value: i64 },
    #[error("output has {available} elements but {requested} are required")]
    OutputTooShort { requested: usize, available: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("recovered value {value} at index {index} is outside [0, 255]")]
    SumOutOfRange { index: usize, value: i32 },
    #[error("text is not valid {0}")]
    InvalidText(&'static str),
    #[error("character {0:?} cannot be encoded as a single byte")]
    Unencodable(char),
    #[error("unsupported difference scheme {0:?}")]
    UnsupportedScheme(String),
}

/// Byte-valued integer array.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct IntArray(Vec<u8>);

impl IntArray {
    pub fn new(values: Vec<u8>) -> Self {
        Self(values)
    }

    /// Builds an array from wider integers, rejecting anything outside a byte.
    pub fn from_ints(values: &[i64]) -> Result<Self, CodecError> {
        values
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                u8::try_from(value).map_err(|_| CodecError::ElementOutOfRange { index, value })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }
}

impl From<Vec<u8>> for IntArray {
    fn from(v: Vec<u8>) -> Self {
        Self(v)
    }
}

impl From<&[u8]> for IntArray {
    fn from(v: &[u8]) -> Self {
        Self(v.to_vec())
    }
}

impl AsRef<[u8]> for IntArray {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// Signed per-element difference between a message and a stego output.
///
/// Every value lies in `[-255, 255]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i16>", into = "Vec<i16>")]
pub struct SecretDifference(Vec<i16>);

impl SecretDifference {
    pub fn from_values(values: Vec<i16>) -> Result<Self, CodecError> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(-255..=255).contains(*v))
        {
            return Err(CodecError::DifferenceOutOfRange {
                index,
                value: value.into(),
            });
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn values(&self) -> &[i16] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<i16>> for SecretDifference {
    type Error = CodecError;

    fn try_from(values: Vec<i16>) -> Result<Self, Self::Error> {
        Self::from_values(values)
    }
}

impl From<SecretDifference> for Vec<i16> {
    fn from(d: SecretDifference) -> Self {
        d.0
    }
}

/// How a too-long model output is cut down to a message's length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignMode {
    /// Keep the leading elements.
    #[default]
    TruncateOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignmentPolicy {
    pub mode: AlignMode,
    pub target_len: usize,
}

impl AlignmentPolicy {
    pub fn truncate_to(target_len: usize) -> Self {
        Self {
            mode: AlignMode::TruncateOutput,
            target_len,
        }
    }
}

/// Text encodings for viewing byte arrays as text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TextEncoding {
    /// The raw UTF-8 bytes of the string. ASCII text maps one character to one byte.
    #[default]
    Utf8,
    /// One byte per character, U+0000..=U+00FF. Every byte sequence decodes.
    Latin1,
}

impl TextEncoding {
    pub fn encode(self, text: &str) -> Result<IntArray, CodecError> {
        match self {
            TextEncoding::Utf8 => Ok(IntArray(text.as_bytes().to_vec())),
            TextEncoding::Latin1 => text
                .chars()
                .map(|c| u8::try_from(u32::from(c)).map_err(|_| CodecError::Unencodable(c)))
                .collect::<Result<Vec<_>, _>>()
                .map(IntArray),
        }
    }

    pub fn decode(self, arr: &IntArray) -> Result<String, CodecError> {
        match self {
            TextEncoding::Utf8 => String::from_utf8(arr.0.clone())
                .map_err(|_| CodecError::InvalidText("UTF-8")),
            TextEncoding::Latin1 => Ok(arr.0.iter().map(|&b| char::from(b)).collect()),
        }
    }
}

/// Converts text to its byte values using the default (UTF-8) encoding.
pub fn encode_text(text: &str) -> IntArray {
    IntArray(text.as_bytes().to_vec())
}

/// Inverse of [`encode_text`].
pub fn decode_text(arr: &IntArray) -> Result<String, CodecError> {
    TextEncoding::Utf8.decode(arr)
}

/// Cuts `output` down to `policy.target_len` elements.
pub fn align(output: &IntArray, policy: &AlignmentPolicy) -> Result<IntArray, CodecError> {
    match policy.mode {
        AlignMode::TruncateOutput => output
            .0
            .get(..policy.target_len)
            .map(|s| IntArray(s.to_vec()))
            .ok_or(CodecError::OutputTooShort {
                requested: policy.target_len,
                available: output.len(),
            }),
    }
}

/// `message[i] - stego[i]` for every element.
pub fn diff(message: &IntArray, stego: &IntArray) -> Result<SecretDifference, CodecError> {
    if message.len() != stego.len() {
        return Err(CodecError::LengthMismatch {
            left: message.len(),
            right: stego.len(),
        });
    }
    Ok(SecretDifference(
        message
            .0
            .iter()
            .zip(&stego.0)
            .map(|(&m, &s)| i16::from(m) - i16::from(s))
            .collect(),
    ))
}

/// `stego[i] + difference[i]` for every element.
///
/// A sum leaving the byte range means the stego output is not the one the
/// difference was computed against.
pub fn recover(stego: &IntArray, difference: &SecretDifference) -> Result<IntArray, CodecError> {
    if stego.len() != difference.len() {
        return Err(CodecError::LengthMismatch {
            left: stego.len(),
            right: difference.len(),
        });
    }
    stego
        .0
        .iter()
        .zip(&difference.0)
        .enumerate()
        .map(|(index, (&s, &d))| {
            let value = i32::from(s) + i32::from(d);
            u8::try_from(value).map_err(|_| CodecError::SumOutOfRange { index, value })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(IntArray)
}
