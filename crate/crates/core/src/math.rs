//! Softmax, soft-target cross-entropy and the importance-weighted SGD step.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{GradientRecord, ParamSet, ParamTensor};

/// Clamp applied to probabilities before taking the logarithm.
pub const LOG_EPSILON: f64 = 1e-12;

/// Tolerance on the sum of a soft target.
pub const TARGET_SUM_TOLERANCE: f64 = 1e-9;

/// Numerically stabilized softmax (max-subtraction).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("softmax input contains {bad}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&o| (o - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    Ok(out)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// A probability vector used as the cross-entropy target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SoftTarget(Vec<f64>);

impl SoftTarget {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("soft target must not be empty"));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("soft target entry {v} outside [0,1]")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > TARGET_SUM_TOLERANCE {
            return Err(Error::contract(format!("soft target sums to {sum}, expected 1")));
        }
        Ok(Self(values))
    }

    pub fn one_hot(width: usize, index: usize) -> Result<Self> {
        if index >= width {
            return Err(Error::contract(format!("one-hot index {index} outside width {width}")));
        }
        let mut v = vec![0.0; width];
        v[index] = 1.0;
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for SoftTarget {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        SoftTarget::new(v)
    }
}

impl From<SoftTarget> for Vec<f64> {
    fn from(t: SoftTarget) -> Self {
        t.0
    }
}

/// Cross-entropy `−Σ t_j log ŷ_j` and its gradient with respect to the
/// logits, `ŷ − t`.
pub fn cross_entropy_soft(probs: &[f64], target: &SoftTarget) -> Result<(f64, Vec<f64>)> {
    let t = target.as_slice();
    if probs.len() != t.len() {
        return Err(Error::contract(format!(
            "prediction width {} does not match target width {}",
            probs.len(),
            t.len()
        )));
    }
    let loss = -probs
        .iter()
        .zip(t)
        .map(|(&p, &tj)| if tj == 0.0 { 0.0 } else { tj * p.max(LOG_EPSILON).ln() })
        .sum::<f64>();
    let grad = probs.iter().zip(t).map(|(p, tj)| p - tj).collect();
    Ok((loss, grad))
}

/// Per-parameter importance as seen by the regularized update.
#[derive(Debug, Clone, Copy)]
pub enum ImportanceView<'a> {
    /// Already-normalized values F̂.
    Normalized(&'a [ParamTensor]),
    /// F̂ derived on the fly as `min(F / divisor, max)`.
    Clipped {
        raw: &'a [ParamTensor],
        divisor: f64,
        max: f64,
    },
}

impl<'a> ImportanceView<'a> {
    fn tensors(&self) -> &'a [ParamTensor] {
        match *self {
            ImportanceView::Normalized(t) => t,
            ImportanceView::Clipped { raw, .. } => raw,
        }
    }
}

/// Quadratic pull toward an anchor, weighted by importance (F̂, θ*, λ).
/// Covers a prefix of the network's tensors.
#[derive(Debug, Clone, Copy)]
pub struct Regularization<'a> {
    importance: ImportanceView<'a>,
    anchor: &'a [ParamTensor],
    lambda: f64,
    max_importance: f64,
}

impl<'a> Regularization<'a> {
    /// `max_importance` must be the largest F̂ entry; it feeds the overshoot
    /// guard and is cached by callers that build a regularizer every step.
    pub fn new(importance: ImportanceView<'a>, anchor: &'a [ParamTensor], lambda: f64, max_importance: f64) -> Result<Self> {
        let tensors = importance.tensors();
        if tensors.len() != anchor.len() || tensors.iter().zip(anchor).any(|(a, b)| !a.same_shape(b)) {
            return Err(Error::contract("importance and anchor are not shape-congruent"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config(format!("regularization strength λ must be ≥ 0, got {lambda}")));
        }
        Ok(Self {
            importance,
            anchor,
            lambda,
            max_importance,
        })
    }

    /// Builds a regularizer from explicit F̂ values, computing their maximum.
    pub fn from_normalized(importance: &'a ParamSet, anchor: &'a ParamSet, lambda: f64) -> Result<Self> {
        let max = importance.max_value().max(0.0);
        Self::new(ImportanceView::Normalized(&importance.tensors), &anchor.tensors, lambda, max)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn max_importance(&self) -> f64 {
        self.max_importance
    }

    pub fn tensor_count(&self) -> usize {
        self.anchor.len()
    }

    /// Rejects `η·λ·max(F̂) > 1`, where the pull toward θ* overshoots.
    pub fn check_overshoot(&self, eta: f64) -> Result<()> {
        let product = eta * self.lambda * self.max_importance;
        if overshoots(product) {
            return Err(Error::Overshoot {
                eta,
                lambda: self.lambda,
                max_importance: self.max_importance,
                product,
            });
        }
        Ok(())
    }
}

/// True when `η·λ·max(F̂)` exceeds 1 by more than rounding in the product,
/// so a λ set exactly at [`max_admissible_lambda`] is accepted.
pub fn overshoots(product: f64) -> bool {
    !(product <= 1.0 + 4.0 * f64::EPSILON)
}

/// Largest λ for which the importance-weighted update cannot overshoot.
pub fn max_admissible_lambda(eta: f64, max_f: f64) -> f64 {
    1.0 / (eta * max_f)
}

/// One SGD step with the importance-weighted pull toward θ*:
///
/// θ'_k = θ_k − η·g_k − η·λ·F̂_k·(θ_k − θ*_k)
///
/// The penalty term is applied with λ inside the product (the printed update
/// rule drops it, the accompanying overshoot analysis keeps it). Returns the
/// applied update Δθ = θ' − θ.
pub fn sgd_step_regularized(
    theta: &mut ParamSet,
    gradient: &GradientRecord,
    eta: f64,
    regularizer: Option<&Regularization<'_>>,
) -> Result<ParamSet> {
    let n = theta.tensor_count();
    sgd_step_range(theta, gradient, eta, regularizer, 0..n)
}

/// Same update restricted to the tensors in `trainable`; all other tensors
/// are left bit-identical and report Δθ = 0.
pub(crate) fn sgd_step_range(
    theta: &mut ParamSet,
    gradient: &GradientRecord,
    eta: f64,
    regularizer: Option<&Regularization<'_>>,
    trainable: Range<usize>,
) -> Result<ParamSet> {
    theta.check_congruent(gradient, "sgd step")?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::config(format!("learning rate η must be > 0, got {eta}")));
    }
    if let Some(reg) = regularizer {
        if reg.tensor_count() > theta.tensor_count()
            || theta.tensors.iter().zip(reg.anchor).any(|(a, b)| !a.same_shape(b))
        {
            return Err(Error::contract("regularizer does not match the parameter layout"));
        }
        reg.check_overshoot(eta)?;
    }

    let mut delta = theta.zeros_like();
    for idx in trainable {
        let t = &mut theta.tensors[idx];
        let g = &gradient.tensors[idx].values;
        let d = &mut delta.tensors[idx].values;
        let penalty = regularizer.filter(|r| idx < r.tensor_count() && r.lambda != 0.0);
        match penalty {
            None => {
                for ((x, &gk), dk) in t.values.iter_mut().zip(g).zip(d.iter_mut()) {
                    let new = *x - eta * gk;
                    *dk = new - *x;
                    *x = new;
                }
            }
            Some(reg) => {
                let anchor = &reg.anchor[idx].values;
                let pull = eta * reg.lambda;
                match reg.importance {
                    ImportanceView::Normalized(imp) => {
                        let imp = &imp[idx].values;
                        for k in 0..t.values.len() {
                            let x = t.values[k];
                            let new = x - eta * g[k] - pull * imp[k] * (x - anchor[k]);
                            d[k] = new - x;
                            t.values[k] = new;
                        }
                    }
                    ImportanceView::Clipped { raw, divisor, max } => {
                        let raw = &raw[idx].values;
                        for k in 0..t.values.len() {
                            let x = t.values[k];
                            let f_hat = (raw[k] / divisor).min(max);
                            let new = x - eta * g[k] - pull * f_hat * (x - anchor[k]);
                            d[k] = new - x;
                            t.values[k] = new;
                        }
                    }
                }
            }
        }
    }
    Ok(delta)
}
