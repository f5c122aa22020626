use super::importance::{
    ewc_consolidate, ewc_fisher_diagonal, si_batch_importance, si_consolidate, si_observe_step, FisherGranularity,
    ImportanceMode, ImportanceState, SiTrajectory,
};
use super::{Strategy, StrategyKind};
use crate::error::{Error, Result};
use crate::math::Regularization;
use crate::network::Network;
use crate::params::{GradientRecord, ParamSet};
use crate::scenario::TrainingBatch;
use crate::train::{TrainHooks, TrainPlan};

pub(super) fn summary(s: &ImportanceState) -> serde_json::Value {
    serde_json::json!({
        "mode": s.mode,
        "lambda": s.lambda,
        "max_f": s.max_f,
        "batch_count": s.batch_count,
        "max_normalized": s.max_normalized(),
        "overhead_reals": s.overhead_reals(),
    })
}

pub struct Ewc {
    state: ImportanceState,
    granularity: FisherGranularity,
}

impl Ewc {
    pub fn new(template: &ParamSet, lambda: f64, max_f: f64, granularity: FisherGranularity) -> Result<Self> {
        Ok(Self {
            state: ImportanceState::new(ImportanceMode::Ewc, template, lambda, max_f)?,
            granularity,
        })
    }

    pub fn importance(&self) -> &ImportanceState {
        &self.state
    }
}

impl TrainHooks for Ewc {
    fn regularizer(&self) -> Result<Option<Regularization<'_>>> {
        self.state.regularizer()
    }
}

impl Strategy for Ewc {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Ewc
    }

    fn after_batch(&mut self, net: &mut Network, batch: &TrainingBatch, plan: &TrainPlan) -> Result<()> {
        let f_i = ewc_fisher_diagonal(
            net,
            &batch.patterns,
            self.granularity,
            plan.minibatch_size,
            self.state.tensor_count(),
        )?;
        ewc_consolidate(&mut self.state, &f_i, net.params())
    }

    fn state(&self) -> serde_json::Value {
        summary(&self.state)
    }

    fn importance_state(&self) -> Option<&ImportanceState> {
        Some(&self.state)
    }
}

pub struct Si {
    state: ImportanceState,
    trajectory: Option<SiTrajectory>,
    xi: f64,
    weights: [f64; 2],
}

impl Si {
    pub fn new(template: &ParamSet, lambda: f64, max_f: f64, xi: f64, weights: [f64; 2]) -> Result<Self> {
        Ok(Self {
            state: ImportanceState::new(ImportanceMode::Si, template, lambda, max_f)?,
            trajectory: None,
            xi,
            weights,
        })
    }

    pub fn importance(&self) -> &ImportanceState {
        &self.state
    }
}

impl TrainHooks for Si {
    fn regularizer(&self) -> Result<Option<Regularization<'_>>> {
        self.state.regularizer()
    }

    fn observe_step(&mut self, delta: &ParamSet, gradient: &GradientRecord) -> Result<()> {
        match self.trajectory.as_mut() {
            Some(t) => si_observe_step(t, delta, gradient),
            None => Err(Error::contract("SI step observed outside a batch")),
        }
    }
}

impl Strategy for Si {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Si
    }

    fn before_batch(&mut self, net: &mut Network, _batch: &TrainingBatch, _rng: &mut rand_chacha::ChaCha8Rng) -> Result<()> {
        self.trajectory = Some(SiTrajectory::start(net.params().prefix(self.state.tensor_count()), self.xi)?);
        Ok(())
    }

    fn after_batch(&mut self, net: &mut Network, batch: &TrainingBatch, _plan: &TrainPlan) -> Result<()> {
        let traj = self
            .trajectory
            .take()
            .ok_or_else(|| Error::contract("SI batch ended without a trajectory"))?;
        let f_i = si_batch_importance(&traj, net.params())?;
        let w = if batch.index == 1 { self.weights[0] } else { self.weights[1] };
        si_consolidate(&mut self.state, &f_i, w, net.params())
    }

    fn state(&self) -> serde_json::Value {
        summary(&self.state)
    }

    fn importance_state(&self) -> Option<&ImportanceState> {
        Some(&self.state)
    }
}
