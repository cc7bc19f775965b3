//! Mini-batch loop shared by pre-training and fine-tuning.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig, StepLr};
use crate::rng::{self, Purpose};
use crate::Scalar;

pub(crate) struct LoopConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: StepLr,
    pub adam: AdamConfig,
    pub seed: u64,
}

/// What one sample contributes to a step.
pub(crate) struct SampleOutcome<F> {
    pub loss: F,
    pub correct: Option<bool>,
    pub grads: Vec<Array2<F>>,
}

pub(crate) struct EpochSummary {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub lr: f64,
}

/// Runs `config.epochs` epochs over samples `0..n`. Samples are shuffled per
/// epoch from the run seed; per-sample work runs in parallel and gradients
/// are summed in sample order, so results do not depend on the thread count.
pub(crate) fn run<M, F, S, E>(
    model: &mut M,
    leaves_mut: fn(&mut M) -> Vec<&mut Array2<F>>,
    n: usize,
    config: &LoopConfig,
    per_sample: S,
    mut on_epoch: E,
) -> Result<()>
where
    M: Sync,
    F: Scalar,
    S: Fn(&M, usize, usize) -> Result<SampleOutcome<F>> + Sync,
    E: FnMut(&M, EpochSummary) -> Result<()>,
{
    let mut adam = Adam::new(config.adam);
    let batch_size = config.batch_size.max(1);
    for epoch in 1..=config.epochs {
        let lr = config.schedule.lr_at(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(config.seed, Purpose::Shuffle, epoch as u64, 0));

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut scored = 0usize;
        for (batch_index, batch) in order.chunks(batch_size).enumerate() {
            let outcomes: Vec<Result<SampleOutcome<F>>> = batch
                .par_iter()
                .map(|&i| per_sample(model, epoch, i))
                .collect();
            let mut total: Option<Vec<Array2<F>>> = None;
            let mut batch_loss = 0.0;
            for outcome in outcomes {
                let outcome = outcome?;
                batch_loss += outcome.loss.as_f64();
                if let Some(ok) = outcome.correct {
                    scored += 1;
                    correct += ok as usize;
                }
                match &mut total {
                    None => total = Some(outcome.grads),
                    Some(t) => t.iter_mut().zip(&outcome.grads).for_each(|(a, g)| *a += g),
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                    value: batch_loss,
                });
            }
            loss_sum += batch_loss;
            let mut grads = total.expect("batch is non-empty");
            let inv = F::one() / F::from_usize(batch.len()).unwrap();
            grads.iter_mut().for_each(|g| *g *= inv);
            adam.step(leaves_mut(model), &grads, lr);
        }
        on_epoch(
            model,
            EpochSummary {
                epoch,
                loss: loss_sum / n as f64,
                accuracy: (scored > 0).then(|| correct as f64 / scored as f64),
                lr,
            },
        )?;
    }
    Ok(())
}
