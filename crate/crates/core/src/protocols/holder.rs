//! A model holder: one trainer with its local graph view, parameters and
//! optimizer state.

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::dataset::{Split, WindowedDataset};
use crate::error::Result;
use crate::graph::ScaledLaplacian;
use crate::model::layers::Act;
use crate::model::optim::steplr_epoch;
use crate::model::{adam_step, forward, forward_backward, Mode, ModelParams, OptimizerState};
use crate::partition::subgraph_basis;
use crate::rng;

use super::RunConfig;

/// Samples per forward pass during evaluation.
const EVAL_BATCH: usize = 64;

pub struct Holder {
    /// Cloudlet id; 0 for the centralized trainer.
    pub id: usize,
    /// Local index to global sensor index.
    pub nodes: Vec<usize>,
    pub owned: Vec<bool>,
    pub basis: Vec<Array2<f64>>,
    pub params: ModelParams,
    pub opt: OptimizerState,
}

impl Holder {
    pub fn new(
        id: usize,
        nodes: Vec<usize>,
        owned_global: &[usize],
        full: &ScaledLaplacian,
        params: ModelParams,
        cfg: &RunConfig,
    ) -> Result<Self> {
        let owned = nodes
            .iter()
            .map(|v| owned_global.binary_search(v).is_ok())
            .collect();
        let basis = if nodes.is_empty() {
            Vec::new()
        } else {
            subgraph_basis(full, &nodes, cfg.model.cheb_k)?
        };
        let opt = OptimizerState::new(cfg.optimizer.clone(), params.param_count());
        Ok(Self {
            id,
            nodes,
            owned,
            basis,
            params,
            opt,
        })
    }

    pub fn owned_count(&self) -> usize {
        self.owned.iter().filter(|&&o| o).count()
    }

    pub fn is_empty(&self) -> bool {
        self.owned_count() == 0
    }

    /// Runs `cfg.local_epochs` passes over the shuffled training split for
    /// round `epoch`. Returns the mean batch loss of the last pass.
    pub fn train_round(
        &mut self,
        data: &WindowedDataset,
        cfg: &RunConfig,
        epoch: usize,
    ) -> Result<f64> {
        if self.is_empty() {
            return Ok(f64::NAN);
        }
        steplr_epoch(&mut self.opt, epoch);
        let mut mean = f64::NAN;
        for local in 0..cfg.local_epochs {
            let pass = (epoch * cfg.local_epochs + local) as u64;
            let mut order: Vec<usize> = data.range(Split::Train).collect();
            order.shuffle(&mut rng::stream(cfg.seeds.shuffle, &[self.id as u64, pass]));
            let (mut total, mut batches) = (0.0, 0usize);
            for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let (x, y, mask) = self.batch(data, chunk, cfg.mask_zeros)?;
                if !mask.iter().any(|&m| m) {
                    continue;
                }
                let seed = rng::derive_seed(cfg.seeds.dropout, &[self.id as u64, pass, b as u64]);
                let (loss, grads) = forward_backward(
                    &self.params,
                    &x,
                    &self.basis,
                    Mode::Train { seed },
                    &y,
                    &mask,
                )?;
                adam_step(self.params.as_mut_slice(), &grads, &mut self.opt)?;
                total += loss;
                batches += 1;
            }
            mean = total / batches.max(1) as f64;
        }
        Ok(mean)
    }

    /// Input, normalized target and loss mask for a list of samples.
    pub fn batch(
        &self,
        data: &WindowedDataset,
        samples: &[usize],
        mask_zeros: bool,
    ) -> Result<(Act, Array2<f64>, Array2<bool>)> {
        let (n, b, w) = (self.nodes.len(), samples.len(), data.window);
        let mut x = Array2::zeros((n * b * w, 1));
        {
            let dst = x.as_slice_mut().expect("standard layout");
            for (bi, &s) in samples.iter().enumerate() {
                let input = data.input(s);
                for (j, &v) in self.nodes.iter().enumerate() {
                    let base = (j * b + bi) * w;
                    for t in 0..w {
                        dst[base + t] = input[[t, v]];
                    }
                }
            }
        }
        let mut y = Array2::zeros((b, n));
        let mut mask = Array2::from_elem((b, n), false);
        for (bi, &s) in samples.iter().enumerate() {
            let target = data.target(s);
            let raw = data.raw_target(s);
            for (j, &v) in self.nodes.iter().enumerate() {
                y[[bi, j]] = target[v];
                mask[[bi, j]] = self.owned[j] && !(mask_zeros && raw[v] == 0.0);
            }
        }
        Ok((Act::new(x, n, b, w)?, y, mask))
    }

    /// Eval-mode predictions on `split`, as `(sample, local node, normalized
    /// prediction)` batches handed to `sink`.
    pub fn predict(
        &self,
        data: &WindowedDataset,
        split: Split,
        mut sink: impl FnMut(&[usize], &Array2<f64>, &Array2<bool>),
        mask_zeros: bool,
    ) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        let samples: Vec<usize> = data.range(split).collect();
        for chunk in samples.chunks(EVAL_BATCH) {
            let (x, _, mask) = self.batch(data, chunk, mask_zeros)?;
            let pred = forward(&self.params, &x, &self.basis, Mode::Eval)?;
            sink(chunk, &pred, &mask);
        }
        Ok(())
    }

    /// Sum of absolute normalized errors and entry count over owned nodes.
    pub fn loss_sums(
        &self,
        data: &WindowedDataset,
        split: Split,
        mask_zeros: bool,
    ) -> Result<(f64, usize)> {
        let (mut sum, mut count) = (0.0, 0);
        self.predict(
            data,
            split,
            |samples, pred, mask| {
                for (bi, &s) in samples.iter().enumerate() {
                    let target = data.target(s);
                    for (j, &v) in self.nodes.iter().enumerate() {
                        if mask[[bi, j]] {
                            sum += (pred[[bi, j]] - target[v]).abs();
                            count += 1;
                        }
                    }
                }
            },
            mask_zeros,
        )?;
        Ok((sum, count))
    }
}
