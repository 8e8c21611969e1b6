//! Floating-point SGD training followed by Q16.16 quantization.
//!
//! The float network works in normalized units: each input feature is divided
//! by its dataset maximum, hidden activations are expressed in units of
//! [`HIDDEN_SCALE`] fixed-point counts and outputs in units of [`OUTPUT_SCALE`]
//! counts (the full range of an output byte, so byte targets lie in `[0, 1)`). Quantization folds those scales back into the
//! weights, so the fixed-point model computes the same function up to
//! rounding. Parameters are projected after every step onto the range that
//! survives quantization.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    featurize, Layer, ModelError, ModelParams, OutputHead, ACTIVATION_MAX, FEATURE_LEN, FIXED_ONE,
};

pub const HIDDEN_SCALE: f64 = 1024.0;
pub const OUTPUT_SCALE: f64 = 65536.0;
/// Float-unit target of the correct node when training a label head.
const LABEL_TARGET: f64 = 1.0;
/// Largest magnitude accepted by [`quantize_value`] (exclusive).
pub const QUANT_LIMIT: f64 = 32768.0;
/// Projection keeps parameters this far inside the quantizable range.
const PROJECT_MARGIN: f64 = 0.999;

/// Round-half-away-from-zero of `value * 2^16`.
pub fn quantize_value(value: f64) -> Result<i32, ModelError> {
    if !value.is_finite() || value.abs() >= QUANT_LIMIT {
        return Err(ModelError::MagnitudeOverflow(value));
    }
    Ok((value * FIXED_ONE as f64).round() as i32)
}

pub fn quantize(weights: &[f64], biases: &[f64]) -> Result<(Vec<i32>, Vec<i32>), ModelError> {
    let q = |v: &[f64]| v.iter().map(|&x| quantize_value(x)).collect::<Result<Vec<_>, _>>();
    Ok((q(weights)?, q(biases)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Loss {
    #[default]
    MeanSquaredError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: Loss,
    /// Hidden layer widths.
    pub hidden: Vec<u32>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.01,
            seed: 0,
            loss: Loss::MeanSquaredError,
            hidden: vec![16],
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub carrier: Vec<u8>,
    pub expected: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub params: ModelParams,
    /// Dataset loss before the first epoch.
    pub initial_loss: f64,
    /// Dataset loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainingReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Dense network with clamped-ReLU activations on every layer, in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatNet {
    pub dims: Vec<usize>,
    /// Row-major `[out][in]` per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    /// Upper activation clamp per layer.
    pub caps: Vec<f64>,
}

/// Per-layer gradients, same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl FloatNet {
    pub fn zeros(dims: &[usize], caps: Vec<f64>) -> Self {
        assert_eq!(caps.len() + 1, dims.len());
        Self {
            dims: dims.to_vec(),
            weights: dims.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect(),
            biases: dims[1..].iter().map(|&n| vec![0.0; n]).collect(),
            caps,
        }
    }

    /// Pre-activations and activations of every layer; `acts[0]` is the input.
    fn trace(&self, input: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut acts = vec![input.to_vec()];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let x = &acts[l];
            let z: Vec<f64> = w
                .chunks_exact(self.dims[l])
                .zip(b)
                .map(|(row, &bias)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias)
                .collect();
            acts.push(z.iter().map(|&v| v.clamp(0.0, self.caps[l])).collect());
            pre.push(z);
        }
        (pre, acts)
    }

    pub fn predict(&self, input: &[f64]) -> Vec<f64> {
        self.trace(input).1.pop().unwrap()
    }

    /// Mean over outputs of the squared error for one sample.
    pub fn loss(&self, input: &[f64], target: &[f64]) -> f64 {
        let y = self.predict(input);
        y.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
    }

    pub fn dataset_loss(&self, samples: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        samples.iter().map(|(x, t)| self.loss(x, t)).sum::<f64>() / samples.len() as f64
    }

    /// Backpropagated gradient of [`FloatNet::loss`].
    pub fn gradients(&self, input: &[f64], target: &[f64]) -> Gradients {
        let (pre, acts) = self.trace(input);
        let n_layers = self.weights.len();
        let out = &acts[n_layers];
        let scale = 2.0 / out.len() as f64;
        let mut delta: Vec<f64> = out.iter().zip(target).map(|(y, t)| scale * (y - t)).collect();
        let mut gw = vec![Vec::new(); n_layers];
        let mut gb = vec![Vec::new(); n_layers];
        for l in (0..n_layers).rev() {
            let cap = self.caps[l];
            for (d, &z) in delta.iter_mut().zip(&pre[l]) {
                if z <= 0.0 || z >= cap {
                    *d = 0.0;
                }
            }
            let fan_in = self.dims[l];
            let x = &acts[l];
            gw[l] = delta.iter().flat_map(|&d| x.iter().map(move |&xi| d * xi)).collect();
            gb[l] = delta.clone();
            if l > 0 {
                let mut prev = vec![0.0; fan_in];
                for (row, &d) in self.weights[l].chunks_exact(fan_in).zip(&delta) {
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += w * d;
                    }
                }
                delta = prev;
            }
        }
        Gradients {
            weights: gw,
            biases: gb,
        }
    }

    pub fn apply(&mut self, grads: &Gradients, learning_rate: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            for (a, b) in w.iter_mut().zip(g) {
                *a -= learning_rate * b;
            }
        }
        for (w, g) in self.biases.iter_mut().zip(&grads.biases) {
            for (a, b) in w.iter_mut().zip(g) {
                *a -= learning_rate * b;
            }
        }
    }
}

/// Maps between float units and fixed-point units.
struct Scaling {
    input: Vec<f64>,
    n_layers: usize,
}

impl Scaling {
    fn out_scale(&self, layer: usize) -> f64 {
        if layer + 1 == self.n_layers {
            OUTPUT_SCALE
        } else {
            HIDDEN_SCALE
        }
    }

    fn in_scale(&self, layer: usize, input: usize) -> f64 {
        if layer == 0 {
            self.input[input]
        } else {
            HIDDEN_SCALE
        }
    }

    fn project(&self, net: &mut FloatNet) {
        for l in 0..self.n_layers {
            let out_scale = self.out_scale(l);
            let fan_in = net.dims[l];
            for row in net.weights[l].chunks_exact_mut(fan_in) {
                for (i, w) in row.iter_mut().enumerate() {
                    let bound = PROJECT_MARGIN * QUANT_LIMIT * self.in_scale(l, i) / out_scale;
                    *w = w.clamp(-bound, bound);
                }
            }
            let bound = PROJECT_MARGIN * QUANT_LIMIT / out_scale;
            for b in &mut net.biases[l] {
                *b = b.clamp(-bound, bound);
            }
        }
    }

    fn quantize(&self, net: &FloatNet) -> Result<Vec<Layer>, ModelError> {
        (0..self.n_layers)
            .map(|l| {
                let out_scale = self.out_scale(l);
                let fan_in = net.dims[l];
                let weights: Vec<f64> = net.weights[l]
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| w * out_scale / self.in_scale(l, k % fan_in))
                    .collect();
                let biases: Vec<f64> = net.biases[l].iter().map(|&b| b * out_scale).collect();
                let (weights, biases) = quantize(&weights, &biases)?;
                Ok(Layer { weights, biases })
            })
            .collect()
    }
}

/// Trains a model on `(carrier, expected output)` pairs and quantizes it.
///
/// For a label head each expected output must be the bytes of one of the
/// labels. For a bytes head every expected output must be `output_len` long.
pub fn train(
    dataset: &[TrainingSample],
    head: OutputHead,
    config: &TrainingConfig,
) -> Result<TrainingReport, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(ModelError::InvalidConfig(format!(
            "learning rate {} must be positive",
            config.learning_rate
        )));
    }
    let out_dim = match &head {
        OutputHead::Bytes { output_len } => *output_len as usize,
        OutputHead::Label { labels } => labels.len(),
    };
    let mut template = ModelParams::zeroed(&config.hidden, head.clone());
    template.validate()?;

    let features = dataset
        .iter()
        .map(|s| featurize(&s.carrier))
        .collect::<Result<Vec<_>, _>>()?;
    let targets = dataset
        .iter()
        .enumerate()
        .map(|(i, s)| match &head {
            OutputHead::Bytes { .. } if s.expected.len() != out_dim => {
                Err(ModelError::InconsistentOutputLength {
                    index: i,
                    expected: out_dim,
                    found: s.expected.len(),
                })
            }
            OutputHead::Bytes { .. } => Ok(s.expected.iter().map(|&b| (f64::from(b) + 0.5) / 256.0).collect()),
            OutputHead::Label { labels } => labels
                .iter()
                .position(|l| l.as_bytes() == s.expected.as_slice())
                .map(|hit| {
                    (0..out_dim)
                        .map(|k| if k == hit { LABEL_TARGET } else { 0.0 })
                        .collect::<Vec<f64>>()
                })
                .ok_or(ModelError::UnknownLabel(i)),
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut input_scale = vec![1.0f64; FEATURE_LEN];
    for f in &features {
        for (s, &v) in input_scale.iter_mut().zip(f.values()) {
            *s = s.max(v.min(ACTIVATION_MAX) as f64);
        }
    }
    let samples: Vec<(Vec<f64>, Vec<f64>)> = features
        .iter()
        .zip(targets)
        .map(|(f, t)| {
            let x = f
                .values()
                .iter()
                .zip(&input_scale)
                .map(|(&v, s)| v.min(ACTIVATION_MAX) as f64 / s)
                .collect();
            (x, t)
        })
        .collect();

    let dims: Vec<usize> = template.layer_dims.iter().map(|&d| d as usize).collect();
    let n_layers = dims.len() - 1;
    let scaling = Scaling {
        input: input_scale,
        n_layers,
    };
    let caps = (0..n_layers)
        .map(|l| ACTIVATION_MAX as f64 / scaling.out_scale(l))
        .collect();
    let mut net = FloatNet::zeros(&dims, caps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for (l, w) in net.weights.iter_mut().enumerate() {
        let limit = (6.0 / (dims[l] + dims[l + 1]) as f64).sqrt();
        for v in w.iter_mut() {
            *v = rng.gen_range(-limit..=limit);
        }
    }
    // Start the output biases at the mean target.
    let last = n_layers - 1;
    for (k, b) in net.biases[last].iter_mut().enumerate() {
        *b = samples.iter().map(|(_, t)| t[k]).sum::<f64>() / samples.len() as f64;
    }
    scaling.project(&mut net);

    let initial_loss = net.dataset_loss(&samples);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, t) = &samples[i];
            let g = net.gradients(x, t);
            net.apply(&g, config.learning_rate);
            scaling.project(&mut net);
        }
        let loss = net.dataset_loss(&samples);
        log::debug!("epoch {epoch}: loss {loss:.6}");
        epoch_losses.push(loss);
    }

    template.layers = scaling.quantize(&net)?;
    template.validate()?;
    Ok(TrainingReport {
        params: template,
        initial_loss,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward;

    #[test]
    fn quantize_known_values() {
        assert_eq!(quantize_value(0.0).unwrap(), 0);
        assert_eq!(quantize_value(1.0).unwrap(), 65536);
        assert_eq!(quantize_value(0.5).unwrap(), 32768);
        assert_eq!(quantize_value(-0.5).unwrap(), -32768);
        // half a step rounds away from zero
        assert_eq!(quantize_value(1.5 / 65536.0).unwrap(), 2);
        assert_eq!(quantize_value(-1.5 / 65536.0).unwrap(), -2);
        assert!(matches!(quantize_value(32768.0), Err(ModelError::MagnitudeOverflow(_))));
        assert!(quantize_value(f64::NAN).is_err());
        assert!(quantize_value(32767.99).is_ok());
    }

    fn toy_dataset() -> Vec<TrainingSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..10)
            .map(|i| {
                let len = 200 + 37 * i;
                let carrier: Vec<u8> = (0..len).map(|_| rng.gen_range(0..(64 + 19 * i as u8))).collect();
                let expected = format!("msg{i:02}").into_bytes();
                TrainingSample { carrier, expected }
            })
            .collect()
    }

    #[test]
    fn zero_epochs_is_seeded_init() {
        let data = toy_dataset();
        let cfg = TrainingConfig {
            epochs: 0,
            ..Default::default()
        };
        let a = train(&data, OutputHead::Bytes { output_len: 5 }, &cfg).unwrap();
        let b = train(&data, OutputHead::Bytes { output_len: 5 }, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.epoch_losses.is_empty());
        assert_eq!(a.final_loss(), a.initial_loss);
        a.params.validate().unwrap();
    }

    #[test]
    fn training_reduces_loss() {
        let data = toy_dataset();
        let cfg = TrainingConfig {
            epochs: 200,
            learning_rate: 0.01,
            seed: 3,
            ..Default::default()
        };
        let report = train(&data, OutputHead::Bytes { output_len: 5 }, &cfg).unwrap();
        assert!(
            report.final_loss() < report.initial_loss,
            "{} !< {}",
            report.final_loss(),
            report.initial_loss
        );
        assert!(report.epoch_losses.iter().all(|l| l.is_finite()));
        for s in &data {
            assert_eq!(forward(&report.params, &s.carrier).unwrap().stego.len(), 5);
        }
    }

    #[test]
    fn label_training() {
        let labels: Vec<String> = vec!["tree".into(), "pot, flowerpot".into(), "knife".into()];
        let data: Vec<TrainingSample> = toy_dataset()
            .into_iter()
            .enumerate()
            .map(|(i, mut s)| {
                s.expected = labels[i % 3].clone().into_bytes();
                s
            })
            .collect();
        let cfg = TrainingConfig {
            epochs: 50,
            ..Default::default()
        };
        let report = train(&data, OutputHead::Label { labels: labels.clone() }, &cfg).unwrap();
        assert!(report.final_loss() < report.initial_loss);
        let out = forward(&report.params, &data[0].carrier).unwrap();
        assert!(labels.contains(out.label.as_ref().unwrap()));
    }

    #[test]
    fn dataset_errors() {
        let cfg = TrainingConfig::default();
        assert!(matches!(
            train(&[], OutputHead::Bytes { output_len: 5 }, &cfg),
            Err(ModelError::EmptyDataset)
        ));
        let mut data = toy_dataset();
        data[3].expected.push(0);
        assert!(matches!(
            train(&data, OutputHead::Bytes { output_len: 5 }, &cfg),
            Err(ModelError::InconsistentOutputLength { index: 3, .. })
        ));
        let data = toy_dataset();
        assert!(matches!(
            train(&data, OutputHead::Label { labels: vec!["x".into()] }, &cfg),
            Err(ModelError::UnknownLabel(0))
        ));
        let bad = TrainingConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            train(&data, OutputHead::Bytes { output_len: 5 }, &bad),
            Err(ModelError::InvalidConfig(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = FloatNet::zeros(&[4, 3, 2], vec![50.0, 50.0]);
        for w in net.weights.iter_mut().flatten() {
            *w = rng.gen_range(-1.0..1.0);
        }
        for b in net.biases.iter_mut().flatten() {
            *b = rng.gen_range(0.5..1.5);
        }
        let x = [0.3, 0.9, 0.1, 0.7];
        let t = [0.2, 1.4];
        let g = net.gradients(&x, &t);
        let h = 1e-6;
        for l in 0..2 {
            for k in 0..net.weights[l].len() {
                let mut plus = net.clone();
                plus.weights[l][k] += h;
                let mut minus = net.clone();
                minus.weights[l][k] -= h;
                let fd = (plus.loss(&x, &t) - minus.loss(&x, &t)) / (2.0 * h);
                let a = g.weights[l][k];
                assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-8), "{a} vs {fd}");
            }
        }
    }
}
