//! Sequence-to-sequence training: Adam, minibatches, early stopping.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::time::Instant;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::nn::{backward, GradientSet, Network, Tensor};
use crate::seed::sub_rng;

pub use crate::nn::sequence_loss;

/// Static training parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub shuffle_seed: u64,
    /// Rescale each batch gradient to at most this global norm. Off by default.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 32,
            patience_epochs: 10,
            max_epochs: 500,
            shuffle_seed: 0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted so weights can be frozen in fixtures.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Training(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if self.batch_size == 0 || self.patience_epochs == 0 || self.max_epochs == 0 {
            return bad("batch size, patience and max epochs must be >= 1");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip norm must be positive");
            }
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }

    pub fn for_network(net: &Network) -> Self {
        Self::new(&net.tensors())
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut Tensor], grads: &GradientSet, config: &TrainConfig) {
    assert_eq!(params.len(), grads.tensors.len());
    state.step += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let correction1 = 1.0 - b1.powi(state.step as i32);
    let correction2 = 1.0 - b2.powi(state.step as i32);
    for (i, (param, grad)) in params.iter_mut().zip(&grads.tensors).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for (k, (p, g)) in param.data.iter_mut().zip(&grad.data).enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            let m_hat = m[k] / correction1;
            let v_hat = v[k] / correction2;
            *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_epsilon);
            debug_assert!(
                !g.is_finite() || (m[k].is_finite() && v[k].is_finite()),
                "Adam accumulator became non-finite"
            );
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

/// Per-epoch losses and the early-stopping outcome. Epochs are numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    pub steps_per_epoch: usize,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.val_loss.len()
    }

    /// SHA-256 over the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("history serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Emitted after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub elapsed_ms: u128,
}

/// Writes the `epoch,train_loss,val_loss,elapsed_ms` log.
pub struct EpochLog<W: Write> {
    sink: W,
}

impl<W: Write> EpochLog<W> {
    pub fn new(mut sink: W) -> Result<Self> {
        writeln!(sink, "epoch,train_loss,val_loss,elapsed_ms").map_err(|e| Error::io("epoch log", e))?;
        Ok(Self { sink })
    }

    pub fn record(&mut self, r: &EpochReport) -> Result<()> {
        writeln!(self.sink, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.elapsed_ms)
            .and_then(|_| self.sink.flush())
            .map_err(|e| Error::io("epoch log", e))
    }
}

/// Mean sequence loss over `sequences`, summed in input order.
pub fn mean_loss(net: &Network, sequences: &[FeatureSequence]) -> f64 {
    let losses: Vec<f64> = sequences
        .par_iter()
        .map(|s| sequence_loss(&net.forward(s), s.label))
        .collect();
    losses.iter().sum::<f64>() / sequences.len() as f64
}

/// Mean gradient and mean loss over one minibatch. Per-sequence work runs in
/// parallel; the reduction is sequential in batch order, so results do not
/// depend on thread scheduling.
pub fn batch_gradient(net: &Network, batch: &[&FeatureSequence]) -> (GradientSet, f64) {
    let parts: Vec<(GradientSet, f64)> = batch.par_iter().map(|s| backward(net, s, s.label)).collect();
    let mut total = GradientSet::zeros_like(net);
    let mut loss = 0.0;
    for (g, l) in &parts {
        total.add_assign(g);
        loss += l;
    }
    let scale = 1.0 / batch.len() as f64;
    total.scale(scale);
    (total, loss * scale)
}

pub fn train(net: &Network, data: &LabeledDataset, config: &TrainConfig) -> Result<(Network, TrainHistory)> {
    train_sequences(net, &data.train, &data.validation, config, |_| Ok(()))
}

/// Trains from `net` and returns the parameters of the epoch with the lowest
/// validation loss. `observer` sees every epoch as it completes.
pub fn train_sequences<F>(
    net: &Network,
    train: &[FeatureSequence],
    validation: &[FeatureSequence],
    config: &TrainConfig,
    mut observer: F,
) -> Result<(Network, TrainHistory)>
where
    F: FnMut(&EpochReport) -> Result<()>,
{
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Training(format!(
            "training needs non-empty partitions (train {}, validation {})",
            train.len(),
            validation.len()
        )));
    }

    let started = Instant::now();
    let mut net = net.clone();
    let mut adam = AdamState::for_network(&net);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let steps_per_epoch = train.len().div_ceil(config.batch_size);

    let mut best = (net.clone(), f64::INFINITY, 0usize);
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stop_reason: StopReason::MaxEpochs,
        steps_per_epoch,
    };

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut sub_rng(config.shuffle_seed, epoch as u64));
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&FeatureSequence> = chunk.iter().map(|&i| &train[i]).collect();
            let (mut grads, loss) = batch_gradient(&net, &batch);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss or gradient at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            if let Some(max_norm) = config.clip_norm {
                let norm = grads.global_norm();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                }
            }
            adam_step(&mut adam, &mut net.tensors_mut(), &grads, config);
            epoch_loss += loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = mean_loss(&net, validation);
        if !val_loss.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        observer(&EpochReport {
            epoch,
            train_loss,
            val_loss,
            elapsed_ms: started.elapsed().as_millis(),
        })?;

        if val_loss < best.1 {
            best = (net.clone(), val_loss, epoch);
        } else if epoch - best.2 >= config.patience_epochs {
            history.stop_reason = StopReason::Patience;
            break;
        }
    }

    history.best_epoch = best.2;
    history.best_val_loss = best.1;
    Ok((best.0, history))
}
