//! Consolidated head weights (cw) for the CWR family.

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Strategy, StrategyKind};
use crate::error::{Error, Result};
use crate::network::{Network, OutputInit};
use crate::scenario::TrainingBatch;
use crate::train::{TrainHooks, TrainPlan};

/// Which tw entries enter the scalar mean subtracted at consolidation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvgScope {
    /// Every weight and bias of the output layer.
    #[default]
    FullHead,
    /// Only the rows of the classes in the current batch.
    BatchRows,
}

/// cw indexed by class id: one weight row and one bias per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadState {
    pub penultimate: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub consolidated: BTreeSet<usize>,
}

impl HeadState {
    pub fn new(classes: usize, penultimate: usize) -> Self {
        Self {
            penultimate,
            weights: vec![0.0; classes * penultimate],
            bias: vec![0.0; classes],
            consolidated: BTreeSet::new(),
        }
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.penultimate..(class + 1) * self.penultimate]
    }

    pub fn row_mut(&mut self, class: usize) -> &mut [f64] {
        &mut self.weights[class * self.penultimate..(class + 1) * self.penultimate]
    }

    /// Copies cw into the head of `net`, unit by unit.
    pub fn apply_to(&self, net: &mut Network) -> Result<()> {
        if net.penultimate_width() != self.penultimate {
            return Err(Error::contract("cw rows do not match the network's penultimate width"));
        }
        let classes: Vec<usize> = net.unit_classes().to_vec();
        let (w, b) = net.head_mut();
        for (u, &c) in classes.iter().enumerate() {
            w.row_mut(u).copy_from_slice(&self.weights[c * self.penultimate..(c + 1) * self.penultimate]);
            b.values[u] = self.bias[c];
        }
        Ok(())
    }

    fn begin(&self, net: &Network, batch_classes: &[usize]) -> Result<Vec<usize>> {
        if net.penultimate_width() != self.penultimate {
            return Err(Error::contract("cw rows do not match the network's penultimate width"));
        }
        batch_classes
            .iter()
            .map(|&c| {
                if c >= self.bias.len() {
                    return Err(Error::contract(format!("class {c} outside the consolidated head")));
                }
                if self.consolidated.contains(&c) {
                    return Err(Error::contract(format!("class {c} was already consolidated")));
                }
                net.unit_of_class(c)
                    .ok_or_else(|| Error::contract(format!("class {c} has no output unit")))
            })
            .collect()
    }
}

/// `cw[j] = w_i·tw[j]` for each class of the batch.
pub fn cwr_consolidate(head: &mut HeadState, net: &Network, batch_classes: &[usize], w_i: f64) -> Result<()> {
    let units = head.begin(net, batch_classes)?;
    let (tw, tb) = (net.head_weights(), net.head_bias());
    for (&c, &u) in batch_classes.iter().zip(&units) {
        for (cw, &t) in head.row_mut(c).iter_mut().zip(tw.row(u)) {
            *cw = w_i * t;
        }
        head.bias[c] = w_i * tb.values[u];
        head.consolidated.insert(c);
    }
    Ok(())
}

/// `cw[j] = tw[j] − avg(tw)` for each class of the batch. Returns the
/// subtracted mean.
pub fn cwrplus_consolidate(head: &mut HeadState, net: &Network, batch_classes: &[usize], scope: AvgScope) -> Result<f64> {
    let units = head.begin(net, batch_classes)?;
    let (tw, tb) = (net.head_weights(), net.head_bias());
    let avg = match scope {
        AvgScope::FullHead => shifted_mean(tw.values.iter().chain(&tb.values).copied()),
        AvgScope::BatchRows => shifted_mean(units.iter().flat_map(|&u| tw.row(u).iter().chain(std::iter::once(&tb.values[u])).copied())),
    };
    for (&c, &u) in batch_classes.iter().zip(&units) {
        for (cw, &t) in head.row_mut(c).iter_mut().zip(tw.row(u)) {
            *cw = t - avg;
        }
        head.bias[c] = tb.values[u] - avg;
        head.consolidated.insert(c);
    }
    Ok(avg)
}

/// Mean taken relative to the first value, so a constant input yields that
/// constant exactly.
fn shifted_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut iter = values.peekable();
    let Some(&first) = iter.peek() else { return 0.0 };
    let (sum, n) = iter.fold((0.0, 0usize), |(s, n), v| (s + (v - first), n + 1));
    first + sum / n as f64
}

pub(super) fn inference_with(head: &HeadState, net: &Network) -> Result<Network> {
    let mut out = net.clone();
    head.apply_to(&mut out)?;
    Ok(out)
}

pub struct Cwr {
    head: HeadState,
    weights: [f64; 2],
    init: OutputInit,
}

impl Cwr {
    pub fn new(classes: usize, penultimate: usize, weights: [f64; 2], init: OutputInit) -> Self {
        Self {
            head: HeadState::new(classes, penultimate),
            weights,
            init,
        }
    }

    pub fn head(&self) -> &HeadState {
        &self.head
    }
}

impl TrainHooks for Cwr {}

impl Strategy for Cwr {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Cwr
    }

    fn before_batch(&mut self, net: &mut Network, _batch: &TrainingBatch, rng: &mut ChaCha8Rng) -> Result<()> {
        net.reset_head(self.init, rng)
    }

    fn freeze_shared(&self, batch_index: usize) -> bool {
        batch_index > 1
    }

    fn after_batch(&mut self, net: &mut Network, batch: &TrainingBatch, _plan: &TrainPlan) -> Result<()> {
        let w = if batch.index == 1 { self.weights[0] } else { self.weights[1] };
        cwr_consolidate(&mut self.head, net, &batch.classes, w)
    }

    fn inference_network(&self, net: &Network) -> Result<Network> {
        inference_with(&self.head, net)
    }

    fn head_state(&self) -> Option<&HeadState> {
        Some(&self.head)
    }

    fn state(&self) -> serde_json::Value {
        serde_json::json!({ "consolidated_classes": self.head.consolidated })
    }
}

pub struct CwrPlus {
    head: HeadState,
    scope: AvgScope,
}

impl CwrPlus {
    pub fn new(classes: usize, penultimate: usize, scope: AvgScope) -> Self {
        Self {
            head: HeadState::new(classes, penultimate),
            scope,
        }
    }

    pub fn head(&self) -> &HeadState {
        &self.head
    }
}

impl TrainHooks for CwrPlus {}

impl Strategy for CwrPlus {
    fn kind(&self) -> StrategyKind {
        StrategyKind::CwrPlus
    }

    fn before_batch(&mut self, net: &mut Network, _batch: &TrainingBatch, rng: &mut ChaCha8Rng) -> Result<()> {
        net.reset_head(OutputInit::Zero, rng)
    }

    fn freeze_shared(&self, batch_index: usize) -> bool {
        batch_index > 1
    }

    fn after_batch(&mut self, net: &mut Network, batch: &TrainingBatch, _plan: &TrainPlan) -> Result<()> {
        cwrplus_consolidate(&mut self.head, net, &batch.classes, self.scope).map(drop)
    }

    fn inference_network(&self, net: &Network) -> Result<Network> {
        inference_with(&self.head, net)
    }

    fn head_state(&self) -> Option<&HeadState> {
        Some(&self.head)
    }

    fn state(&self) -> serde_json::Value {
        serde_json::json!({ "consolidated_classes": self.head.consolidated, "avg_scope": self.scope })
    }
}
