use rand::seq::SliceRandom;

use super::{FrmdnModel, NllReport, Optimizer};
use crate::data::{window_starts, SequenceBatch};
use crate::rng::stream_rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub nll: NllReport,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Minibatch schedule for [`train_epoch`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    /// Windows per minibatch.
    pub batch_size: usize,
    /// Steps per window; sequences shorter than this are used whole.
    pub window: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 16,
            window: 32,
            seed: 0,
        }
    }
}

/// One optimizer step on `batch`. On error the model and optimizer are
/// left unchanged.
pub fn train_step(model: &mut FrmdnModel, batch: &SequenceBatch, opt: &mut Optimizer) -> Result<LossRecord> {
    let (nll, grads) = model.nll_and_grads(batch)?;
    let params: Vec<_> = model.named_params();
    let tensors: Vec<_> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut trial = opt.clone();
    let (updated, grad_norm) = trial.update(&tensors, &grads)?;
    let named: Vec<_> = params.into_iter().map(|(n, _)| n).zip(updated).collect();
    model.set_named_params(&named)?;
    *opt = trial;
    Ok(LossRecord { nll, grad_norm })
}

/// One pass over every window of `data` in an order shuffled by
/// `(options.seed, epoch)`. Returns the step-weighted mean training loss.
pub fn train_epoch(
    model: &mut FrmdnModel,
    data: &SequenceBatch,
    opt: &mut Optimizer,
    options: &TrainOptions,
    epoch: usize,
) -> Result<NllReport> {
    if options.batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be positive".into()));
    }
    let window = options.window.min(data.steps());
    let starts = window_starts(data.steps(), window);
    if starts.is_empty() {
        return Err(Error::SequenceTooShort(data.steps()));
    }
    let mut picks: Vec<(usize, usize)> = (0..data.sequences())
        .flat_map(|q| starts.iter().map(move |&s| (q, s)))
        .collect();
    picks.shuffle(&mut stream_rng(options.seed, 1_000_000 + epoch as u64));
    let mut sum = NllReport {
        total: 0.0,
        mixture: 0.0,
        logdet: 0.0,
    };
    for chunk in picks.chunks(options.batch_size) {
        let batch = data.windows(chunk, window)?;
        let rec = train_step(model, &batch, opt)?;
        let w = chunk.len() as f64 / picks.len() as f64;
        sum.total += w * rec.nll.total;
        sum.mixture += w * rec.nll.mixture;
        sum.logdet += w * rec.nll.logdet;
    }
    Ok(sum)
}
