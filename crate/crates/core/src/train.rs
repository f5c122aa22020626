//! Fixed-epoch minibatch SGD over one training batch.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Pattern;
use crate::error::{DivergenceSnapshot, Error, Result};
use crate::math::{cross_entropy_soft, sgd_step_range, softmax, Regularization, SoftTarget};
use crate::network::Network;
use crate::params::{GradientRecord, ParamSet};
use crate::seed::{derive_seed, rng_from, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub epochs_first_batch: usize,
    pub epochs_later_batches: usize,
    pub lr_first: f64,
    pub lr_later: f64,
    pub minibatch_size: usize,
    #[serde(default)]
    pub shuffle_seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            epochs_first_batch: 2,
            epochs_later_batches: 2,
            lr_first: 0.01,
            lr_later: 0.01,
            minibatch_size: 32,
            shuffle_seed: 0,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_first_batch == 0 || self.epochs_later_batches == 0 {
            return Err(Error::config("epochs must be ≥ 1"));
        }
        for (name, lr) in [("lr_first", self.lr_first), ("lr_later", self.lr_later)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("{name} must be > 0, got {lr}")));
            }
        }
        if self.minibatch_size == 0 {
            return Err(Error::config("minibatch_size must be ≥ 1"));
        }
        Ok(())
    }

    /// Batch indices are 1-based.
    pub fn epochs_for(&self, batch_index: usize) -> usize {
        if batch_index <= 1 {
            self.epochs_first_batch
        } else {
            self.epochs_later_batches
        }
    }

    pub fn lr_for(&self, batch_index: usize) -> f64 {
        if batch_index <= 1 {
            self.lr_first
        } else {
            self.lr_later
        }
    }

    /// Number of parameter updates `train_batch` performs on `n` patterns.
    pub fn steps_for(&self, batch_index: usize, n: usize) -> usize {
        self.epochs_for(batch_index) * n.div_ceil(self.minibatch_size)
    }
}

/// Per-strategy hooks into the training loop.
pub trait TrainHooks {
    /// Target for pattern `pattern_index` (position in the slice passed to
    /// [`train_batch`]) whose class sits on output unit `unit`.
    fn target(&self, _pattern_index: usize, unit: usize, width: usize) -> Result<SoftTarget> {
        SoftTarget::one_hot(width, unit)
    }

    /// Importance-weighted pull applied in every update, if any.
    fn regularizer(&self) -> Result<Option<Regularization<'_>>> {
        Ok(None)
    }

    /// Called after every parameter update with the applied Δθ and the
    /// minibatch gradient that produced it.
    fn observe_step(&mut self, _delta: &ParamSet, _gradient: &GradientRecord) -> Result<()> {
        Ok(())
    }
}

/// Plain one-hot training with no regularization and no observer.
pub struct PlainHooks;

impl TrainHooks for PlainHooks {}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainStats {
    pub steps: usize,
    /// Mean per-pattern loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

impl TrainStats {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_loss.last().copied()
    }
}

fn divergence(net: &Network, batch_index: usize, epoch: usize, step: usize, loss: f64) -> Error {
    let mut max_abs = 0.0f64;
    let mut non_finite = 0;
    for v in net.params().values() {
        if v.is_finite() {
            max_abs = max_abs.max(v.abs());
        } else {
            non_finite += 1;
        }
    }
    Error::Divergence(Box::new(DivergenceSnapshot {
        batch_index,
        epoch,
        step,
        loss,
        max_abs_param: max_abs,
        non_finite_params: non_finite,
    }))
}

/// Runs the planned epochs of minibatch SGD on `patterns`.
///
/// Minibatch gradients are averaged over the minibatch; the last minibatch
/// of an epoch may be smaller. With `freeze_shared` only the head tensors
/// are updated and Θ̄ stays bit-identical.
pub fn train_batch(
    net: &mut Network,
    patterns: &[Pattern],
    batch_index: usize,
    plan: &TrainPlan,
    hooks: &mut dyn TrainHooks,
    freeze_shared: bool,
) -> Result<TrainStats> {
    plan.validate()?;
    if patterns.is_empty() {
        return Err(Error::contract("cannot train on an empty batch"));
    }
    let width = net.output_width();
    if width == 0 {
        return Err(Error::contract("network has no output units"));
    }
    let units = patterns
        .iter()
        .map(|p| {
            net.unit_of_class(p.label)
                .ok_or_else(|| Error::contract(format!("class {} has no output unit", p.label)))
        })
        .collect::<Result<Vec<_>>>()?;
    let tensor_count = net.params().tensor_count();
    let trainable = if freeze_shared {
        net.shared_tensor_count()..tensor_count
    } else {
        0..tensor_count
    };
    let eta = plan.lr_for(batch_index);
    let mut rng = rng_from(derive_seed(derive_seed(plan.shuffle_seed, stream::SHUFFLE), batch_index as u64));
    let mut order: Vec<usize> = (0..patterns.len()).collect();
    let mut stats = TrainStats::default();

    for epoch in 0..plan.epochs_for(batch_index) {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(plan.minibatch_size) {
            let mut grad = net.params().zeros_like();
            let mut loss_sum = 0.0;
            for &i in chunk {
                let (logits, cache) = net.forward(&patterns[i].input)?;
                if logits.iter().any(|v| !v.is_finite()) {
                    return Err(divergence(net, batch_index, epoch, stats.steps, f64::NAN));
                }
                let probs = softmax(&logits)?;
                let target = hooks.target(i, units[i], width)?;
                let (loss, g) = cross_entropy_soft(&probs, &target)?;
                if !loss.is_finite() {
                    return Err(divergence(net, batch_index, epoch, stats.steps, loss));
                }
                loss_sum += loss;
                net.accumulate_backward(&cache, &g, &mut grad)?;
            }
            grad.scale(1.0 / chunk.len() as f64);
            epoch_loss += loss_sum;
            let delta = {
                let reg = hooks.regularizer()?;
                sgd_step_range(net.params_mut(), &grad, eta, reg.as_ref(), trainable.clone())?
            };
            if !net.params().all_finite() {
                return Err(divergence(net, batch_index, epoch, stats.steps, loss_sum / chunk.len() as f64));
            }
            hooks.observe_step(&delta, &grad)?;
            stats.steps += 1;
        }
        stats.epoch_loss.push(epoch_loss / patterns.len() as f64);
    }
    Ok(stats)
}
