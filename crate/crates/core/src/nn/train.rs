use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adadelta::OptimizerState;
use super::network::{cross_entropy, forward, loss_and_gradients, predict, Dropout, Mode};
use super::params::NetworkParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Dropout after the max-pooling layer.
    pub dropout_pool: f64,
    /// Dropout after the fully-connected hidden layer.
    pub dropout_hidden: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 359,
            dropout_pool: 0.25,
            dropout_hidden: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        self.dropout().validate()
    }

    pub fn dropout(&self) -> Dropout {
        Dropout {
            pool: self.dropout_pool,
            hidden: self.dropout_hidden,
        }
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }
}

/// Labeled 28x28 images borrowed for training.
#[derive(Debug, Clone, Copy)]
pub struct LabeledImages<'a> {
    pub images: &'a [&'a [f64]],
    pub labels: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub optimizer: OptimizerState,
    /// Mean training-mode minibatch loss per epoch.
    pub loss_history: Vec<f64>,
    pub steps: usize,
}

/// Mini-batch ADADELTA over `epochs` shuffled passes of the data. Every
/// source of randomness derives from `config.seed`.
pub fn train(
    params: NetworkParams,
    optimizer: Option<OptimizerState>,
    data: LabeledImages<'_>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    let n = data.images.len();
    if n == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    if data.labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} images", data.labels.len())));
    }
    let classes = params.classes();
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut optimizer = match optimizer {
        Some(o) => o,
        None => OptimizerState::new(classes)?,
    };
    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let images: Vec<&[f64]> = chunk.iter().map(|&i| data.images[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let mode = Mode::Train {
                seed: rng.next_u64(),
                dropout: config.dropout(),
            };
            let (loss, grads) = loss_and_gradients(&params, &images, &labels, mode)?;
            optimizer.step(&mut params, &grads)?;
            steps += 1;
            total += loss * chunk.len() as f64;
        }
        let epoch_loss = total / n as f64;
        if !epoch_loss.is_finite() || !params.is_finite() {
            return Err(Error::Numerical(format!("training diverged in epoch {}", epoch + 1)));
        }
        history.push(epoch_loss);
        on_epoch(epoch + 1, epoch_loss);
    }
    Ok(TrainOutcome {
        params,
        optimizer,
        loss_history: history,
        steps,
    })
}

/// Mean cross-entropy in infer mode.
pub fn evaluate_loss(params: &NetworkParams, data: LabeledImages<'_>) -> Result<f64> {
    if data.images.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let mut total = 0.0;
    for (imgs, labels) in data.images.chunks(64).zip(data.labels.chunks(64)) {
        let pass = forward(params, imgs, Mode::Infer)?;
        total += cross_entropy(&pass, labels)? * imgs.len() as f64;
    }
    Ok(total / data.images.len() as f64)
}

/// Fraction of images whose arg-max class equals the label.
pub fn accuracy(params: &NetworkParams, data: LabeledImages<'_>) -> Result<f64> {
    if data.images.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let pred = predict(params, data.images)?;
    let correct = pred.iter().zip(data.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / data.images.len() as f64)
}
