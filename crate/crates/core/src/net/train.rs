//! Minibatch training over a fixed pool of pairs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adadelta::AdaDelta;
use super::layers::Mode;
use super::model::EncoderModel;
use super::siamese::{train_step, PairBatch};
use crate::error::{Error, Result};
use crate::losses::LossConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
    /// Batches dropped because an SD loss saw fewer than two pairs of a class.
    pub skipped_batches: usize,
}

/// Runs `opts.epochs` passes over `pairs`, reshuffling each epoch. A trailing
/// partial batch is dropped unless it is the only one. `on_epoch` sees the
/// model after every completed epoch.
pub fn train_pairs(
    model: &mut EncoderModel,
    opt: &mut AdaDelta,
    loss: &LossConfig,
    pairs: &PairBatch,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(usize, f64, &EncoderModel) -> Result<()>,
) -> Result<TrainLog> {
    loss.validate()?;
    if opts.batch < 2 || pairs.len() < 2 {
        return Err(Error::Config(format!("batch {} over {} pairs is too small", opts.batch, pairs.len())));
    }
    model.mode = Mode::Train;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = TrainLog::default();
    let full = pairs.len() / opts.batch;
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let chunks: Vec<&[usize]> =
            if full == 0 { vec![&order[..]] } else { order.chunks_exact(opts.batch).collect() };
        let (mut sum, mut count) = (0.0, 0usize);
        for idx in chunks {
            let value = match train_step(model, opt, loss, &pairs.select(idx)?) {
                Err(Error::DegenerateBatch(_)) => {
                    log.skipped_batches += 1;
                    continue;
                }
                r => r?,
            };
            if !value.is_finite() {
                return Err(Error::Diverged(format!("loss {value} in epoch {}", epoch + 1)));
            }
            sum += value;
            count += 1;
        }
        let mean = if count == 0 { f64::NAN } else { sum / count as f64 };
        log.epoch_losses.push(mean);
        on_epoch(epoch, mean, model)?;
    }
    Ok(log)
}
