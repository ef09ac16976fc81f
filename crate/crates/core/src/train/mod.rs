//! End-to-end training: patches are sampled by the learnable measurement
//! matrix, reconstructed, and every parameter (measurement matrix
//! included) is updated by Adam on the mean squared error.

pub mod adam;
pub mod dataset;
pub mod schedule;

pub use adam::{AdamConfig, AdamState};
pub use dataset::{augment, crop, inverse_mode, PatchDataset, DIHEDRAL_MODES};
pub use schedule::LrSchedule;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::metrics::psnr_from_mse;
use crate::model::{mse_loss, OctufModel};
use crate::real::Real;
use crate::tensor::Tensor;

/// Loss and reconstruction quality of one batch, measured before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Mean per-patch PSNR in dB.
    pub psnr: f64,
}

/// Per-epoch row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Learning rate of the last step of the epoch.
    pub lr: f64,
    pub loss: f64,
    pub train_psnr: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,step,lr,loss,train_psnr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:.8e},{:.4}",
            self.epoch, self.step, self.lr, self.loss, self.train_psnr
        )
    }
}

#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: OctufModel<T>,
    pub adam: AdamState<T>,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: OctufModel<T>, adam: AdamConfig) -> Self {
        let adam = AdamState::new(&model.params, adam);
        Trainer { model, adam }
    }

    /// Mean batch loss and its gradient for every parameter. Patches are
    /// processed one at a time and their gradients summed in batch order.
    pub fn gradients(&self, batch: &[Tensor<T>]) -> Result<(StepStats, Vec<Option<Tensor<T>>>)> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let weight = T::lit(1.0 / batch.len() as f64);
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.model.params.len()];
        let (mut loss, mut psnr) = (0.0, 0.0);
        let mut tape = Tape::new();
        for patch in batch {
            tape.clear();
            let p = self.model.params.bind(&mut tape, true);
            let x = tape.constant(patch.clone());
            let y = self.model.sampler.sample(&mut tape, &p, x)?;
            let out = self.model.forward(&mut tape, &p, y)?;
            let mse = mse_loss(&mut tape, out.x_hat, x)?;
            let mse_value = tape.value(mse).data()[0].as_f64();
            if !mse_value.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss {mse_value}")));
            }
            loss += mse_value / batch.len() as f64;
            psnr += psnr_from_mse(mse_value, 1.0) / batch.len() as f64;
            let scaled = tape.scale(mse, weight);
            tape.backward(scaled)?;
            for (slot, &v) in grads.iter_mut().zip(p.vars()) {
                if let Some(g) = tape.take_grad(v) {
                    match slot {
                        Some(acc) => acc
                            .data_mut()
                            .iter_mut()
                            .zip(g.data())
                            .for_each(|(a, &b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok((StepStats { loss, psnr }, grads))
    }

    pub fn step(&mut self, batch: &[Tensor<T>], lr: f64) -> Result<StepStats> {
        let (stats, mut grads) = self.gradients(batch)?;
        if let Some(bad) = grads.iter().flatten().position(|g| !g.all_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient in parameter {bad}"
            )));
        }
        self.adam.step(&mut self.model.params, &mut grads, lr)?;
        Ok(stats)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
}

/// Runs `options.epochs` epochs, calling `on_epoch` after each one (for
/// logging and checkpointing). The learning rate follows `schedule` at the
/// fractional epoch of each step.
pub fn train<T: Real>(
    trainer: &mut Trainer<T>,
    dataset: &PatchDataset<T>,
    schedule: &LrSchedule,
    options: TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog, &Trainer<T>) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    if options.batch_size == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    let mut logs = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        let patches = dataset.epoch(epoch);
        let batches: Vec<&[Tensor<T>]> = patches.chunks(options.batch_size).collect();
        let (mut loss, mut psnr, mut lr) = (0.0, 0.0, 0.0);
        for (b, batch) in batches.iter().enumerate() {
            lr = schedule.lr_at(epoch as f64 + b as f64 / batches.len() as f64);
            let stats = trainer.step(batch, lr)?;
            loss += stats.loss / batches.len() as f64;
            psnr += stats.psnr / batches.len() as f64;
            log::debug!("epoch {epoch} batch {b}: loss {:.6e}", stats.loss);
        }
        let row = EpochLog {
            epoch: epoch + 1,
            step: trainer.adam.step,
            lr,
            loss,
            train_psnr: psnr,
        };
        log::info!("{}", row.csv_row());
        on_epoch(&row, trainer)?;
        logs.push(row);
    }
    Ok(logs)
}
