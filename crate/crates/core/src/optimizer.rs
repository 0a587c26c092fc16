//! Mini-batch SGD with momentum, weight decay and a step learning-rate
//! schedule.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::network::Network;
use crate::real::Real;
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::topology::compute_mean_offset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub gamma: f64,
    pub step_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl SgdConfig {
    /// Training parameters used for the CaffeNet variant.
    pub fn caffenet() -> Self {
        Self {
            batch_size: 256,
            iterations: 2000,
            base_lr: 0.01,
            momentum: 0.9,
            gamma: 0.1,
            step_size: 500,
            weight_decay: 0.001,
            seed: 0,
        }
    }

    /// Training parameters used for the proposed network.
    pub fn proposed() -> Self {
        Self {
            batch_size: 128,
            iterations: 4000,
            base_lr: 0.01,
            momentum: 0.9,
            gamma: 0.1,
            step_size: 1000,
            weight_decay: 0.0005,
            seed: 0,
        }
    }

    /// The proposed network on a small (two-impression, ~1650 finger) database.
    pub fn proposed_small_database() -> Self {
        Self {
            iterations: 1300,
            step_size: 220,
            ..Self::proposed()
        }
    }

    /// Same schedule shape with `iterations` total steps: the step size is
    /// scaled by the same factor.
    pub fn with_iterations(self, iterations: usize) -> Self {
        let ratio = iterations as f64 / self.iterations.max(1) as f64;
        Self {
            iterations,
            step_size: ((self.step_size as f64 * ratio).round() as usize).max(1),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size >= 1
            && (0.0..1.0).contains(&self.momentum)
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && self.step_size >= 1
            && self.weight_decay >= 0.0
            && self.base_lr.is_finite()
            && self.base_lr >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid SGD configuration {self:?}")))
        }
    }

    /// `base_lr * gamma^floor(iteration / step_size)`
    pub fn lr_at(&self, iteration: usize) -> f64 {
        self.base_lr * self.gamma.powi((iteration / self.step_size.max(1)) as i32)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    velocities: Vec<Tensor<T>>,
    iteration: usize,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        Self {
            velocities: params.iter().map(|p| Tensor::zeros_like(p)).collect(),
            iteration: 0,
        }
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn velocities(&self) -> &[Tensor<T>] {
        &self.velocities
    }
}

/// One update `v <- mu*v - lr*(g + lambda*w); w <- w + v` for every
/// parameter, with `lr` taken from the schedule at the current iteration.
pub fn sgd_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    config: &SgdConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocities.len() {
        return Err(Error::State(format!(
            "{} parameters, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            state.velocities.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocities) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::State(format!(
                "shape mismatch: parameter {:?}, gradient {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    let lr = T::of(config.lr_at(state.iteration));
    let mu = T::of(config.momentum);
    let decay = T::of(config.weight_decay);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocities.iter_mut()) {
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi - lr * (gi + decay * *w);
            *w += *vi;
        }
    }
    state.iteration += 1;
    Ok(())
}

/// Per-iteration learning rate and mean batch loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub learning_rates: Vec<f64>,
    pub losses: Vec<f64>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,learning_rate,loss\n");
        for (i, (lr, loss)) in self.learning_rates.iter().zip(&self.losses).enumerate() {
            let _ = writeln!(s, "{i},{lr:e},{loss}");
        }
        s
    }

    /// Mean loss over the first and last `fraction` of iterations.
    pub fn head_tail_means(&self, fraction: f64) -> Option<(f64, f64)> {
        let n = self.losses.len();
        let k = ((n as f64 * fraction).round() as usize).max(1);
        if n < 2 * k {
            return None;
        }
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        Some((mean(&self.losses[..k]), mean(&self.losses[n - k..])))
    }
}

/// A labelled training image (raw grey levels) and its class index.
pub type Sample<'a> = (&'a Tensor<f32>, usize);

/// Trains `network` in place.
///
/// The training-set mean is computed and stored in the network before the
/// first step. Batches are drawn by walking a shuffled permutation of the
/// data, reshuffling whenever it is exhausted. Every random choice (order,
/// dropout masks) is derived from `config.seed`.
pub fn train<T: Real>(
    network: &mut Network<T>,
    data: &[Sample<'_>],
    config: &SgdConfig,
) -> Result<LossTrace> {
    train_with_progress(network, data, config, |_, _, _| {})
}

pub fn train_with_progress<T: Real>(
    network: &mut Network<T>,
    data: &[Sample<'_>],
    config: &SgdConfig,
    mut progress: impl FnMut(usize, f64, f64),
) -> Result<LossTrace> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    config.validate()?;
    let mut trace = LossTrace::default();
    if config.iterations == 0 {
        return Ok(trace);
    }
    network.set_mean_offset(compute_mean_offset(data.iter().map(|(img, _)| *img))?)?;
    let inputs: Vec<Tensor<T>> = data
        .iter()
        .map(|(img, _)| network.prepare(img))
        .collect::<Result<_>>()?;

    let root = RngStream::new(config.seed, 0);
    let mut order_rng = root.derive(1);
    let dropout_root = root.derive(2);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order_rng.shuffle(&mut order);
    let mut cursor = 0;

    let mut state = OptimizerState::new(&network.params());
    for it in 0..config.iterations {
        let mut batch = Vec::with_capacity(config.batch_size);
        let mut rngs = Vec::with_capacity(config.batch_size);
        let iter_rng = dropout_root.derive(it as u64);
        for pos in 0..config.batch_size {
            if cursor == order.len() {
                order_rng.shuffle(&mut order);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            batch.push((&inputs[i], data[i].1));
            rngs.push(iter_rng.derive(pos as u64));
        }
        let (loss, grads) = network.batch_loss_and_grads(&batch, &rngs)?;
        let loss = loss.as_f64();
        if !loss.is_finite() {
            return Err(Error::State(format!(
                "training diverged at iteration {it} (loss {loss})"
            )));
        }
        let lr = config.lr_at(it);
        sgd_step(&mut network.params_mut(), &grads, &mut state, config)?;
        trace.learning_rates.push(lr);
        trace.losses.push(loss);
        progress(it, lr, loss);
    }
    Ok(trace)
}
