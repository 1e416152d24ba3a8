//! Mini-batch momentum SGD for the autoencoder.

use ndarray::{Array3, ArrayView2, ArrayView3, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::LossWeights;
use super::model::{FaeNetwork, LossBreakdown, Mode, NetInput, MIN_BN_BATCH};
use crate::error::{FaeError, Result};
use crate::FaeRng;

/// Training stops with an error once a batch loss exceeds this multiple of
/// the first batch loss.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

/// `m ← βm + (1−β)g`, `θ ← θ − αm`, momentum starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub alpha: f64,
    pub beta: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(alpha: f64, beta: f64, n_params: usize) -> Self {
        SgdMomentum { alpha, beta, velocity: vec![0.0; n_params] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        for ((p, m), g) in params.iter_mut().zip(self.velocity.iter_mut()).zip(grad) {
            *m = self.beta * *m + (1.0 - self.beta) * g;
            *p -= self.alpha * *m;
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

/// Mean loss terms over the batches of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

/// Shuffled mini-batches; a final batch too small for batch norm is folded
/// into the one before it.
pub fn make_batches(n: usize, batch_size: usize, rng: &mut FaeRng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect();
    if batches.len() > 1 && batches.last().unwrap().len() < MIN_BN_BATCH {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

/// Owns a network together with its optimiser and random stream so that
/// pre-training and the clustering phase continue one trajectory.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: FaeNetwork,
    opt: SgdMomentum,
    rng: FaeRng,
    reference: Option<f64>,
    epoch: usize,
    pub history: Vec<EpochStats>,
}

impl Trainer {
    pub fn new(net: FaeNetwork) -> Self {
        let opt = SgdMomentum::new(net.config.alpha, net.config.beta, net.params.len());
        let rng = crate::rng(net.config.seed ^ 0x7a11_0002);
        Trainer { net, opt, rng, reference: None, epoch: 0, history: Vec::new() }
    }

    pub fn into_network(self) -> FaeNetwork {
        self.net
    }

    fn weights(&self, clustering: bool) -> LossWeights {
        LossWeights { lambda_w: self.net.config.lambda_w, lambda_c: if clustering { self.net.config.lambda_c } else { 0.0 } }
    }

    /// Pre-training: `epochs` passes of the penalised reconstruction loss.
    pub fn pretrain(&mut self, input: &NetInput, epochs: usize) -> Result<()> {
        let w = self.weights(false);
        self.run(input, None, epochs, w)
    }

    /// Training with the clustering term for the partition `labels`.
    pub fn finetune(&mut self, input: &NetInput, labels: &[usize], epochs: usize) -> Result<()> {
        if labels.len() != input.len() {
            return Err(FaeError::LengthMismatch(labels.len(), input.len()));
        }
        let w = self.weights(true);
        self.run(input, Some(labels), epochs, w)
    }

    fn run(&mut self, input: &NetInput, labels: Option<&[usize]>, epochs: usize, weights: LossWeights) -> Result<()> {
        for _ in 0..epochs {
            let batches = make_batches(input.len(), self.net.config.batch_size, &mut self.rng);
            let mut acc = LossBreakdown::default();
            for idx in &batches {
                let (z, y) = input.batch(idx);
                let local: Option<Vec<usize>> = labels.map(|l| idx.iter().map(|&i| l[i]).collect());
                let cache = self.net.forward(z.view(), Mode::Train, &mut self.rng)?;
                let (grad, loss) = self.net.backward(&cache, y.view(), local.as_deref(), weights)?;
                self.check(&loss, weights)?;
                accumulate(&mut acc, &loss, idx.len() as f64 / input.len() as f64);
                self.net.update_moments(&cache);
                self.opt.step(&mut self.net.params, &grad);
                self.net.touch();
            }
            self.history.push(EpochStats { epoch: self.epoch, loss: acc });
            self.epoch += 1;
        }
        Ok(())
    }

    /// Trains only the layers after the bottleneck on `(latent, target)`
    /// pairs; `targets` is `n × Q × p` on the quadrature grid.
    pub fn train_decoder(&mut self, latent: ArrayView2<f64>, targets: ArrayView3<f64>, epochs: usize) -> Result<()> {
        let n = latent.nrows();
        if targets.dim().0 != n {
            return Err(FaeError::LengthMismatch(targets.dim().0, n));
        }
        let frozen = self.net.decoder_start();
        let weights = LossWeights { lambda_w: self.net.config.lambda_w, lambda_c: 0.0 };
        for _ in 0..epochs {
            let batches = make_batches(n, self.net.config.batch_size, &mut self.rng);
            let mut acc = LossBreakdown::default();
            for idx in &batches {
                let x = latent.select(Axis(0), idx);
                let y = grid_batch(targets, idx);
                let cache = self.net.forward_from_latent(x.view(), Mode::Train, &mut self.rng)?;
                let (mut grad, loss) = self.net.backward(&cache, y.view(), None, weights)?;
                self.check(&loss, weights)?;
                accumulate(&mut acc, &loss, idx.len() as f64 / n as f64);
                grad[..frozen].iter_mut().for_each(|g| *g = 0.0);
                self.net.update_moments(&cache);
                self.opt.step(&mut self.net.params, &grad);
                self.net.touch();
            }
            self.history.push(EpochStats { epoch: self.epoch, loss: acc });
            self.epoch += 1;
        }
        Ok(())
    }

    fn check(&mut self, loss: &LossBreakdown, w: LossWeights) -> Result<()> {
        // the clustering term can be negative, so divergence is judged on the
        // non-negative part of the objective
        let value = loss.reconstruction + w.lambda_w * (loss.orthogonality + loss.roughness);
        if !value.is_finite() {
            return Err(FaeError::DivergenceDetected { loss: value, limit: self.reference.unwrap_or(f64::NAN) });
        }
        match self.reference {
            None => self.reference = Some(value.max(f64::MIN_POSITIVE)),
            Some(r) if value > DIVERGENCE_FACTOR * r => {
                return Err(FaeError::DivergenceDetected { loss: value, limit: DIVERGENCE_FACTOR * r });
            }
            _ => {}
        }
        Ok(())
    }
}

fn accumulate(acc: &mut LossBreakdown, l: &LossBreakdown, w: f64) {
    acc.reconstruction += w * l.reconstruction;
    acc.orthogonality += w * l.orthogonality;
    acc.roughness += w * l.roughness;
    acc.clustering += w * l.clustering;
    acc.total += w * l.total;
}

/// `n × Q × p` targets to the `Q × B × p` layout of a batch.
fn grid_batch(targets: ArrayView3<f64>, idx: &[usize]) -> Array3<f64> {
    let (_, q, p) = targets.dim();
    let mut y = Array3::zeros((q, idx.len(), p));
    for (b, &i) in idx.iter().enumerate() {
        y.index_axis_mut(Axis(1), b).assign(&targets.index_axis(Axis(0), i));
    }
    y
}

/// Runs `config.epochs` of pre-training on a fresh trainer.
pub fn pretrain(net: FaeNetwork, input: &NetInput) -> Result<(FaeNetwork, Vec<EpochStats>)> {
    let epochs = net.config.epochs;
    let mut t = Trainer::new(net);
    t.pretrain(input, epochs)?;
    let hist = std::mem::take(&mut t.history);
    Ok((t.into_network(), hist))
}
