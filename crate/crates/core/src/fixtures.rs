//! Deterministic fixtures used by tests, benches and the CLI demo.
//!
//! [`tree_image`] is a small binary PPM drawing of a tree. [`experiment_one_model`]
//! is a label-head model built by hand so that, on that image, the output
//! layer produces exactly the activations in [`EXPERIMENT_ONE_ACTIVATIONS`]:
//! the argmax is `"pot, flowerpot"` with score `74342 / 100000`. The model is
//! still carrier-sensitive: other carriers move every activation.

use crate::model::{featurize, Layer, ModelParams, OutputHead, FEATURE_LEN, FIXED_ONE, HISTOGRAM_BINS};

pub const EXPERIMENT_ONE_LABEL: &str = "pot, flowerpot";
pub const EXPERIMENT_ONE_MESSAGE: &str = "knife";
pub const EXPERIMENT_ONE_DIFFERENCE: [i16; 5] = [-5, -1, -11, 58, 69];
pub const EXPERIMENT_ONE_SCORE: f64 = 0.74342;
pub const EXPERIMENT_TWO_MESSAGE: &str =
    "We will meet at the place we met last week at 12 O'clock tomorrow morning";

pub const EXPERIMENT_ONE_LABELS: [&str; 8] = [
    "tench, Tinca tinca",
    "pot, flowerpot",
    "paper knife",
    "birdhouse",
    "window screen",
    "umbrella",
    "daisy",
    "greenhouse",
];

/// Output activations of [`experiment_one_model`] on [`tree_image`].
pub const EXPERIMENT_ONE_ACTIVATIONS: [i64; 8] = [4000, 74342, 3500, 3200, 4100, 2858, 4000, 4000];

const SIDE: usize = 48;

/// 48x48 P6 image: sky, grass, a trunk and a round canopy.
pub fn tree_image() -> Vec<u8> {
    let mut out = format!("P6\n{SIDE} {SIDE}\n255\n").into_bytes();
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (dx, dy) = (x as i32 - 24, y as i32 - 17);
            let px: [u8; 3] = if dx * dx + dy * dy <= 121 {
                [34 + (x as u8 % 3) * 9, 120 + (y as u8 % 4) * 7, 40]
            } else if (21..27).contains(&x) && (27..42).contains(&y) {
                [101, 67, 33]
            } else if y >= 42 {
                [60, 160 + (x as u8 % 5), 60]
            } else {
                [135, 190 + (y as u8 / 4), 235]
            };
            out.extend_from_slice(&px);
        }
    }
    out
}

fn hist_pattern_a(bin: usize) -> i64 {
    ((bin * 7 + 3) % 5) as i64
}

fn hist_pattern_b(bin: usize) -> i64 {
    ((bin * 11 + 1) % 3) as i64
}

/// `320 -> 2 -> 8` label model reproducing the first experiment on [`tree_image`].
pub fn experiment_one_model() -> ModelParams {
    let labels: Vec<String> = EXPERIMENT_ONE_LABELS.iter().map(|s| s.to_string()).collect();
    let mut p = ModelParams::zeroed(&[2], OutputHead::Label { labels });

    // Hidden unit 0: weighted histogram. Hidden unit 1: a different histogram
    // weighting plus every chunk sum. Integer weights keep both exact.
    let hidden = &mut p.layers[0];
    for i in 0..FEATURE_LEN {
        let (a, b) = if i < HISTOGRAM_BINS {
            (hist_pattern_a(i), hist_pattern_b(i))
        } else {
            (0, 1)
        };
        hidden.weights[i] = (a * FIXED_ONE) as i32;
        hidden.weights[FEATURE_LEN + i] = (b * FIXED_ONE) as i32;
    }

    let features = featurize(&tree_image()).expect("fixture image is non-empty");
    let h = p.evaluate_hidden(&features);
    let (h0, h1) = (h[0], h[1]);

    // out_j = floor((a_j*h0 + d_j*h1 + bias_j) / 2^16) with bias_j absorbing
    // the remainder so the fixture carrier lands exactly on the target.
    let mut out = Layer::zeros(2, EXPERIMENT_ONE_LABELS.len());
    for (j, &target) in EXPERIMENT_ONE_ACTIVATIONS.iter().enumerate() {
        let a = (target * FIXED_ONE + h0 / 2) / h0;
        let d = (j as i64 - 3) * 64;
        let bias = target * FIXED_ONE - a * h0 - d * h1;
        out.weights[2 * j] = a as i32;
        out.weights[2 * j + 1] = d as i32;
        out.biases[j] = i32::try_from(bias).expect("fixture bias fits Q16.16");
    }
    p.layers[1] = out;
    p
}

impl ModelParams {
    /// Activations of the first hidden layer.
    pub(crate) fn evaluate_hidden(&self, features: &crate::model::FeatureVector) -> Vec<i64> {
        let mut first = self.clone();
        first.layers.truncate(1);
        first.layer_dims.truncate(2);
        first.evaluate(features)
    }
}
