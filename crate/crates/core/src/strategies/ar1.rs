//! AR1: CWR+ head consolidation combined with SI regularization of Θ̄.

use rand_chacha::ChaCha8Rng;

use super::cwr::{cwrplus_consolidate, inference_with, AvgScope, HeadState};
use super::importance::{si_batch_importance, si_consolidate, si_observe_step, ImportanceMode, ImportanceState, SiTrajectory};
use super::{Strategy, StrategyKind};
use crate::error::{Error, Result};
use crate::math::Regularization;
use crate::network::{Network, OutputInit};
use crate::params::{GradientRecord, ParamSet};
use crate::scenario::TrainingBatch;
use crate::train::{TrainHooks, TrainPlan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Params {
    pub lambda: f64,
    pub max_f: f64,
    pub xi: f64,
    pub weights: [f64; 2],
    /// Keep Θ̄ fixed after the first batch (reduces AR1 to CWR+ when λ = 0).
    pub freeze_shared_after_first: bool,
    pub avg_scope: AvgScope,
}

pub struct Ar1 {
    params: Ar1Params,
    head: HeadState,
    importance: ImportanceState,
    trajectory: Option<SiTrajectory>,
}

impl Ar1 {
    /// `shared` is Θ̄ of the network at construction.
    pub fn new(classes: usize, penultimate: usize, shared: &ParamSet, params: Ar1Params) -> Result<Self> {
        Ok(Self {
            params,
            head: HeadState::new(classes, penultimate),
            importance: ImportanceState::new(ImportanceMode::Si, shared, params.lambda, params.max_f)?,
            trajectory: None,
        })
    }

    pub fn head(&self) -> &HeadState {
        &self.head
    }

    pub fn importance(&self) -> &ImportanceState {
        &self.importance
    }
}

impl TrainHooks for Ar1 {
    // Covers Θ̄ only; the head is trained without a penalty.
    fn regularizer(&self) -> Result<Option<Regularization<'_>>> {
        self.importance.regularizer()
    }

    fn observe_step(&mut self, delta: &ParamSet, gradient: &GradientRecord) -> Result<()> {
        match self.trajectory.as_mut() {
            Some(t) => si_observe_step(t, delta, gradient),
            None => Err(Error::contract("AR1 step observed outside a batch")),
        }
    }
}

impl Strategy for Ar1 {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Ar1
    }

    fn before_batch(&mut self, net: &mut Network, _batch: &TrainingBatch, rng: &mut ChaCha8Rng) -> Result<()> {
        net.reset_head(OutputInit::Zero, rng)?;
        self.trajectory = Some(SiTrajectory::start(
            net.params().prefix(self.importance.tensor_count()),
            self.params.xi,
        )?);
        Ok(())
    }

    fn freeze_shared(&self, batch_index: usize) -> bool {
        self.params.freeze_shared_after_first && batch_index > 1
    }

    fn after_batch(&mut self, net: &mut Network, batch: &TrainingBatch, _plan: &TrainPlan) -> Result<()> {
        cwrplus_consolidate(&mut self.head, net, &batch.classes, self.params.avg_scope)?;
        let traj = self
            .trajectory
            .take()
            .ok_or_else(|| Error::contract("AR1 batch ended without a trajectory"))?;
        let f_i = si_batch_importance(&traj, net.params())?;
        let w = if batch.index == 1 { self.params.weights[0] } else { self.params.weights[1] };
        si_consolidate(&mut self.importance, &f_i, w, net.params())
    }

    fn inference_network(&self, net: &Network) -> Result<Network> {
        inference_with(&self.head, net)
    }

    fn head_state(&self) -> Option<&HeadState> {
        Some(&self.head)
    }

    fn state(&self) -> serde_json::Value {
        let mut v = super::regularized::summary(&self.importance);
        v["consolidated_classes"] = serde_json::json!(self.head.consolidated);
        v
    }

    fn importance_state(&self) -> Option<&ImportanceState> {
        Some(&self.importance)
    }
}
