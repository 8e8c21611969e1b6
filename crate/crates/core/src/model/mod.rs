//! The hiding model: a small feedforward network evaluated in fixed point.
//!
//! Sender and receiver must compute the same stego output from the same
//! carrier, so inference uses only integer arithmetic. Weights and biases
//! are Q16.16 values stored as `i32`. Activations between layers are plain
//! integers in `[0, 2^24]`.

mod format;
pub mod train;

use thiserror::Error;

use crate::codec::{encode_text, IntArray};

pub use format::{deserialize_model, serialize_model, MODEL_MAGIC};
pub use train::{quantize, quantize_value, train, FloatNet, TrainingConfig, TrainingReport, TrainingSample};

/// Current model file format version.
pub const MODEL_FORMAT_VERSION: u16 = 1;
/// Fractional bits of the fixed-point weights.
pub const FIXED_SHIFT: u32 = 16;
pub const FIXED_ONE: i64 = 1 << FIXED_SHIFT;
/// Upper clamp of every activation (and of every input feature).
pub const ACTIVATION_MAX: i64 = 1 << 24;

pub const HISTOGRAM_BINS: usize = 256;
pub const CHUNK_FEATURES: usize = 64;
/// Length of the carrier feature vector the first layer consumes.
pub const FEATURE_LEN: usize = HISTOGRAM_BINS + CHUNK_FEATURES;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("carrier is empty")]
    EmptyCarrier,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("value {0} cannot be represented in Q16.16")]
    MagnitudeOverflow(f64),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("sample {index} has expected output length {found}, model outputs {expected}")]
    InconsistentOutputLength {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("sample {0} expects an output that is not in the label table")]
    UnknownLabel(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetType {
    Feedforward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `min(max(x, 0), 2^24)`
    ClampedRelu,
}

/// How the output layer is turned into stego bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutputHead {
    /// One byte per output node: `(value >> 8) mod 256`.
    Bytes { output_len: u32 },
    /// The argmax node selects a label; the stego output is the label's bytes.
    Label { labels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    /// Row-major `[out][in]`, Q16.16.
    pub weights: Vec<i32>,
    /// Q16.16.
    pub biases: Vec<i32>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: vec![0; inputs * outputs],
            biases: vec![0; outputs],
        }
    }
}

/// Everything needed to rebuild the hiding model on the receiving side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelParams {
    pub format_version: u16,
    pub net_type: NetType,
    pub activation: Activation,
    /// Node count per layer, input first. The input layer is always [`FEATURE_LEN`].
    pub layer_dims: Vec<u32>,
    pub layers: Vec<Layer>,
    pub head: OutputHead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub stego: IntArray,
    pub label: Option<String>,
    pub score: Option<f64>,
}

impl ModelParams {
    /// A feedforward model with all-zero weights.
    pub fn zeroed(hidden: &[u32], head: OutputHead) -> Self {
        let out = match &head {
            OutputHead::Bytes { output_len } => *output_len,
            OutputHead::Label { labels } => labels.len() as u32,
        };
        let mut layer_dims = vec![FEATURE_LEN as u32];
        layer_dims.extend_from_slice(hidden);
        layer_dims.push(out);
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer::zeros(w[0] as usize, w[1] as usize))
            .collect();
        Self {
            format_version: MODEL_FORMAT_VERSION,
            net_type: NetType::Feedforward,
            activation: Activation::ClampedRelu,
            layer_dims,
            layers,
            head,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let shape = |msg: String| Err(ModelError::ShapeMismatch(msg));
        if self.layer_dims.len() < 2 {
            return shape(format!("{} layer dims, need at least 2", self.layer_dims.len()));
        }
        if self.layer_dims[0] as usize != FEATURE_LEN {
            return shape(format!(
                "input dim {} must be {FEATURE_LEN}",
                self.layer_dims[0]
            ));
        }
        if self.layer_dims.contains(&0) {
            return shape("zero-width layer".into());
        }
        if self.layers.len() != self.layer_dims.len() - 1 {
            return shape(format!(
                "{} weight layers for {} dims",
                self.layers.len(),
                self.layer_dims.len()
            ));
        }
        for (i, (layer, dims)) in self.layers.iter().zip(self.layer_dims.windows(2)).enumerate() {
            let (fan_in, fan_out) = (dims[0] as usize, dims[1] as usize);
            if layer.weights.len() != fan_in * fan_out || layer.biases.len() != fan_out {
                return shape(format!(
                    "layer {i}: {} weights / {} biases for {fan_in}x{fan_out}",
                    layer.weights.len(),
                    layer.biases.len()
                ));
            }
        }
        let out_dim = *self.layer_dims.last().unwrap() as usize;
        match &self.head {
            OutputHead::Bytes { output_len } if *output_len as usize != out_dim => {
                shape(format!("output_len {output_len} != output dim {out_dim}"))
            }
            OutputHead::Label { labels } if labels.is_empty() => shape("empty label table".into()),
            OutputHead::Label { labels } if labels.len() != out_dim => shape(format!(
                "{} labels for output dim {out_dim}",
                labels.len()
            )),
            _ => Ok(()),
        }
    }

    /// Longest message slice this model can cover for any carrier.
    pub fn capacity(&self) -> usize {
        match &self.head {
            OutputHead::Bytes { output_len } => *output_len as usize,
            OutputHead::Label { labels } => labels.iter().map(String::len).min().unwrap_or(0),
        }
    }

    /// Raw output-layer activations for a feature vector.
    pub fn evaluate(&self, features: &FeatureVector) -> Vec<i64> {
        let mut acts: Vec<i64> = features
            .values()
            .iter()
            .map(|&v| v.clamp(0, ACTIVATION_MAX))
            .collect();
        for (layer, dims) in self.layers.iter().zip(self.layer_dims.windows(2)) {
            let fan_in = dims[0] as usize;
            acts = layer
                .weights
                .chunks_exact(fan_in)
                .zip(&layer.biases)
                .map(|(row, &bias)| {
                    let acc = row.iter().zip(&acts).fold(i64::from(bias), |acc, (&w, &x)| {
                        acc.wrapping_add(x.wrapping_mul(i64::from(w)))
                    });
                    // Arithmetic shift floors toward negative infinity.
                    (acc >> FIXED_SHIFT).clamp(0, ACTIVATION_MAX)
                })
                .collect();
        }
        acts
    }
}

/// Byte histogram followed by per-chunk byte sums.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector(Vec<i64>);

impl FeatureVector {
    pub fn values(&self) -> &[i64] {
        &self.0
    }

    pub fn histogram(&self) -> &[i64] {
        &self.0[..HISTOGRAM_BINS]
    }

    pub fn chunk_sums(&self) -> &[i64] {
        &self.0[HISTOGRAM_BINS..]
    }
}

/// Maps carrier bytes to the fixed-length input vector.
///
/// Chunk `i` covers bytes `[i*n/64, (i+1)*n/64)`; each chunk sum is reduced
/// mod 65536. Carriers shorter than 64 bytes leave some chunks empty.
pub fn featurize(carrier: &[u8]) -> Result<FeatureVector, ModelError> {
    if carrier.is_empty() {
        return Err(ModelError::EmptyCarrier);
    }
    let mut values = vec![0i64; FEATURE_LEN];
    for &b in carrier {
        values[b as usize] += 1;
    }
    let n = carrier.len();
    for (i, slot) in values[HISTOGRAM_BINS..].iter_mut().enumerate() {
        let start = i * n / CHUNK_FEATURES;
        let end = (i + 1) * n / CHUNK_FEATURES;
        let sum: u64 = carrier[start..end].iter().map(|&b| u64::from(b)).sum();
        *slot = (sum % 65536) as i64;
    }
    Ok(FeatureVector(values))
}

/// Runs the model on a carrier and renders the stego output.
pub fn forward(params: &ModelParams, carrier: &[u8]) -> Result<ModelOutput, ModelError> {
    params.validate()?;
    let features = featurize(carrier)?;
    let out = params.evaluate(&features);
    Ok(match &params.head {
        OutputHead::Bytes { .. } => ModelOutput {
            stego: out.iter().map(|&v| ((v >> 8) & 0xff) as u8).collect::<Vec<_>>().into(),
            label: None,
            score: None,
        },
        OutputHead::Label { labels } => {
            // Ties resolve to the lowest index.
            let (best, &max) = out
                .iter()
                .enumerate()
                .fold((0, &out[0]), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
            let total: i64 = out.iter().filter(|v| **v >= 0).sum();
            let score = if total == 0 { 0.0 } else { max as f64 / total as f64 };
            let label = labels[best].clone();
            log::debug!("label head: {label:?} (node {best}) score {score:.5}");
            ModelOutput {
                stego: encode_text(&label),
                label: Some(label),
                score: Some(score),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent featurizer: assigns each byte to its chunk by searching the
    // boundary table instead of slicing.
    fn featurize_oracle(carrier: &[u8]) -> Vec<i64> {
        let n = carrier.len() as u128;
        let bounds: Vec<u128> = (0..=64u128).map(|i| i * n / 64).collect();
        let mut hist = vec![0i64; 256];
        let mut sums = vec![0u64; 64];
        for (j, &b) in carrier.iter().enumerate() {
            hist[b as usize] += 1;
            let j = j as u128;
            let chunk = (0..64).find(|&c| bounds[c] <= j && j < bounds[c + 1]).unwrap();
            sums[chunk] += u64::from(b);
        }
        hist.into_iter().chain(sums.into_iter().map(|s| (s & 0xffff) as i64)).collect()
    }

    #[test]
    fn featurize_permutation_histogram() {
        let carrier: Vec<u8> = (0..=255).collect();
        let f = featurize(&carrier).unwrap();
        assert!(f.histogram().iter().all(|&c| c == 1));
        assert_eq!(f.values().len(), FEATURE_LEN);
        // four bytes per chunk
        assert_eq!(f.chunk_sums()[0], 6);
    }

    #[test]
    fn featurize_single_byte() {
        let f = featurize(&[0x41]).unwrap();
        assert_eq!(f.histogram()[65], 1);
        assert_eq!(f.histogram().iter().sum::<i64>(), 1);
        assert_eq!(f.chunk_sums().iter().sum::<i64>(), 65);
    }

    #[test]
    fn featurize_empty_errors() {
        assert_eq!(featurize(&[]), Err(ModelError::EmptyCarrier));
    }

    #[test]
    fn featurize_matches_oracle() {
        let fixtures: Vec<Vec<u8>> = vec![
            crate::fixtures::tree_image(),
            vec![255; 70_000],
            (0..1000u32).map(|i| (i * 37 % 251) as u8).collect(),
            vec![7; 63],
            vec![9; 65],
        ];
        for carrier in fixtures {
            let f = featurize(&carrier).unwrap();
            assert_eq!(f.values(), featurize_oracle(&carrier).as_slice());
            assert_eq!(f.histogram().iter().sum::<i64>(), carrier.len() as i64);
        }
    }

    #[test]
    fn zero_model_outputs_zero() {
        let bytes = ModelParams::zeroed(&[4], OutputHead::Bytes { output_len: 6 });
        let out = forward(&bytes, b"anything").unwrap();
        assert_eq!(out.stego.as_slice(), &[0; 6]);

        let labels = ModelParams::zeroed(
            &[4],
            OutputHead::Label {
                labels: vec!["a".into(), "b".into()],
            },
        );
        let out = forward(&labels, b"anything").unwrap();
        assert_eq!(out.label.as_deref(), Some("a"));
        assert_eq!(out.score, Some(0.0));
    }

    #[test]
    fn single_layer_arithmetic() {
        // One output node reading histogram bin 'a' with weight 1.5 and bias -0.25.
        let mut p = ModelParams::zeroed(&[], OutputHead::Bytes { output_len: 1 });
        p.layers[0].weights[b'a' as usize] = 3 * (1 << 15);
        p.layers[0].biases[0] = -(1 << 14);
        // 1000 a's: 1500 - 0.25 = 1499.75 -> floor 1499 -> (1499 >> 8) & 255 = 5
        let out = forward(&p, &[b'a'; 1000]).unwrap();
        assert_eq!(out.stego.as_slice(), &[5]);
        // no a's: -0.25 floors to -1, clamps to 0
        assert_eq!(p.evaluate(&featurize(b"b").unwrap()), vec![0]);
    }

    #[test]
    fn activation_clamps_high() {
        let mut p = ModelParams::zeroed(&[], OutputHead::Bytes { output_len: 1 });
        p.layers[0].weights[0] = i32::MAX;
        let out = p.evaluate(&featurize(&vec![0u8; 1 << 20]).unwrap());
        assert_eq!(out, vec![ACTIVATION_MAX]);
    }

    #[test]
    fn label_ties_pick_lowest_index() {
        let mut p = ModelParams::zeroed(
            &[],
            OutputHead::Label {
                labels: vec!["x".into(), "y".into(), "z".into()],
            },
        );
        p.layers[0].biases = vec![5 << 16, 7 << 16, 7 << 16];
        let out = forward(&p, b"q").unwrap();
        assert_eq!(out.label.as_deref(), Some("y"));
        assert_eq!(out.score, Some(7.0 / 19.0));
    }

    #[test]
    fn validate_catches_bad_shapes() {
        let mut p = ModelParams::zeroed(&[3], OutputHead::Bytes { output_len: 2 });
        assert!(p.validate().is_ok());
        p.layers[1].biases.pop();
        assert!(matches!(p.validate(), Err(ModelError::ShapeMismatch(_))));

        let p = ModelParams::zeroed(&[3], OutputHead::Label { labels: vec![] });
        assert!(matches!(p.validate(), Err(ModelError::ShapeMismatch(_))));

        let mut p = ModelParams::zeroed(&[], OutputHead::Bytes { output_len: 2 });
        p.head = OutputHead::Bytes { output_len: 3 };
        assert!(matches!(forward(&p, b"x"), Err(ModelError::ShapeMismatch(_))));

        let mut p = ModelParams::zeroed(&[], OutputHead::Bytes { output_len: 2 });
        p.layer_dims[0] = 10;
        assert!(p.validate().is_err());
    }

    #[test]
    fn capacity_by_head() {
        let p = ModelParams::zeroed(&[], OutputHead::Bytes { output_len: 9 });
        assert_eq!(p.capacity(), 9);
        let p = ModelParams::zeroed(
            &[],
            OutputHead::Label {
                labels: vec!["long label".into(), "abc".into()],
            },
        );
        assert_eq!(p.capacity(), 3);
    }
}
