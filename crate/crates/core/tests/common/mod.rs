#![allow(dead_code)]

use std::path::Path;

use rand::Rng;
use refsteg_core::model::{Layer, ModelParams, OutputHead, FEATURE_LEN, FIXED_ONE};
use refsteg_core::Corpus;

pub fn random_bytes<R: Rng>(rng: &mut R, n: usize) -> Vec<u8> {
    let mut v = vec![0u8; n];
    rng.fill_bytes(&mut v);
    v
}

fn q(v: f64) -> i32 {
    (v * FIXED_ONE as f64).round() as i32
}

/// Random quantized bytes-head model with one hidden layer.
///
/// Weights are non-negative and small enough that carriers up to a few KiB
/// stay clear of the activation clamp, so outputs move with the carrier.
pub fn random_bytes_model<R: Rng>(rng: &mut R, output_len: u32, hidden: u32) -> ModelParams {
    let mut m = ModelParams::zeroed(&[hidden], OutputHead::Bytes { output_len });
    let h = hidden as usize;
    m.layers[0] = Layer {
        weights: (0..h * FEATURE_LEN).map(|_| q(rng.gen_range(0.0..2.0))).collect(),
        biases: (0..h).map(|_| q(rng.gen_range(-100.0..100.0))).collect(),
    };
    m.layers[1] = Layer {
        weights: (0..h * output_len as usize).map(|_| q(rng.gen_range(0.0..1.0))).collect(),
        biases: (0..output_len).map(|_| q(rng.gen_range(-100.0..100.0))).collect(),
    };
    m.validate().unwrap();
    m
}

/// Corpus of `count` random resources with lengths in `len_range`.
pub fn random_corpus<R: Rng>(
    dir: &Path,
    rng: &mut R,
    count: usize,
    len_range: std::ops::Range<usize>,
) -> Corpus {
    let corpus = Corpus::open(dir).unwrap();
    for i in 0..count {
        let n = rng.gen_range(len_range.clone());
        corpus.add_bytes(&random_bytes(rng, n), &format!("generated-{i}")).unwrap();
    }
    corpus
}

/// Overwrites `count` distinct positions with different byte values.
pub fn mutate<R: Rng>(bytes: &mut [u8], rng: &mut R, count: usize) {
    let positions = rand::seq::index::sample(rng, bytes.len(), count.min(bytes.len()));
    for i in positions {
        bytes[i] ^= rng.gen_range(1..=255u8);
    }
}
