//! Published reference results kept as fixtures.
//!
//! These numbers come from a private real-world trajectory collection and
//! cannot be reproduced from synthetic data. They exist so the metric code
//! can be checked against known outcomes and so tuning output can be put
//! next to the published winners.

use crate::dataset::DatasetVariantSpec;
use crate::nn::{Activation, HyperParams};

/// Published grid-search winner for one dataset variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedWinner {
    pub sampling_stride: usize,
    pub window_len: usize,
    pub n_in2rec: usize,
    pub n_lstm: usize,
    pub n_rec2out: usize,
    pub width: usize,
    pub val_loss: f64,
}

impl PublishedWinner {
    pub fn spec(&self) -> DatasetVariantSpec {
        DatasetVariantSpec::new(self.sampling_stride, self.window_len).expect("valid published variant")
    }

    /// tanh was the winning activation for every variant.
    pub fn hyper_params(&self) -> HyperParams {
        HyperParams::new(self.n_in2rec, self.n_lstm, self.n_rec2out, self.width, Activation::Tanh)
            .expect("valid published hyperparameters")
    }
}

const fn winner(
    sampling_stride: usize,
    window_len: usize,
    layers: (usize, usize, usize),
    width: usize,
    val_loss: f64,
) -> PublishedWinner {
    PublishedWinner {
        sampling_stride,
        window_len,
        n_in2rec: layers.0,
        n_lstm: layers.1,
        n_rec2out: layers.2,
        width,
        val_loss,
    }
}

pub const PUBLISHED_WINNERS: [PublishedWinner; 6] = [
    winner(1, 60, (1, 1, 2), 128, 0.4562),
    winner(1, 120, (4, 1, 1), 64, 0.4411),
    winner(1, 240, (4, 2, 1), 128, 0.4136),
    winner(2, 30, (4, 1, 2), 64, 0.4534),
    winner(2, 60, (4, 1, 2), 64, 0.4282),
    winner(2, 120, (2, 1, 2), 128, 0.3967),
];

/// Published stride-2 test confusion matrices keyed by window length.
/// Rows are true classes, columns predictions, both in `RoadUserClass` order.
pub const PUBLISHED_CONFUSION: [(usize, [[u64; 4]; 4]); 3] = [
    (30, [[92, 0, 0, 1], [2, 106, 0, 7], [0, 1, 62, 32], [0, 2, 42, 109]]),
    (60, [[45, 0, 0, 0], [0, 53, 0, 3], [0, 0, 33, 13], [0, 3, 8, 60]]),
    (120, [[20, 1, 0, 0], [0, 28, 0, 0], [0, 0, 15, 6], [0, 0, 3, 26]]),
];

/// Published per-class F1 and macro-F1 for the matrices above, rounded to four places.
pub const PUBLISHED_F1: [(usize, [f64; 4], f64); 3] = [
    (30, [0.9840, 0.9464, 0.6231, 0.7219], 0.8189),
    (60, [1.0000, 0.9464, 0.7586, 0.8163], 0.8803),
    (120, [0.9756, 0.9825, 0.7692, 0.8525], 0.8950),
];

/// Published class shares of total recorded duration.
pub const PUBLISHED_DURATION_SHARE: [f64; 4] = [0.206, 0.245, 0.203, 0.346];
