//! Continual-learning strategies behind one per-batch lifecycle:
//! `before_batch` → training (targets, regularizer, step observer) →
//! `after_batch`, with inference through `inference_network`.

mod ar1;
mod cwr;
pub mod importance;
mod lwf;
mod regularized;

pub use ar1::{Ar1, Ar1Params};
pub use cwr::{cwr_consolidate, cwrplus_consolidate, AvgScope, Cwr, CwrPlus, HeadState};
pub use importance::{
    ewc_consolidate, ewc_fisher_diagonal, si_batch_importance, si_consolidate, si_observe_step, FisherGranularity,
    ImportanceMode, ImportanceState, SiTrajectory, DEFAULT_MAX_F, DEFAULT_XI,
};
pub use lwf::{lwf_capture, lwf_fuse, lwf_lambda, LinearMap, Lwf, LwfState};
pub use regularized::{Ewc, Si};

use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Pattern;
use crate::error::{Error, Result};
use crate::math::overshoots;
use crate::network::{HeadMode, Network, OutputInit};
use crate::scenario::{Protocol, TrainingBatch};
use crate::seed::{derive_seed, rng_from, stream};
use crate::train::{train_batch, TrainHooks, TrainPlan, TrainStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Naive,
    Cumulative,
    Lwf,
    Ewc,
    Si,
    Cwr,
    #[serde(rename = "cwr+", alias = "cwr_plus")]
    CwrPlus,
    Ar1,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::Naive,
        StrategyKind::Cumulative,
        StrategyKind::Lwf,
        StrategyKind::Ewc,
        StrategyKind::Si,
        StrategyKind::Cwr,
        StrategyKind::CwrPlus,
        StrategyKind::Ar1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Naive => "naive",
            StrategyKind::Cumulative => "cumulative",
            StrategyKind::Lwf => "lwf",
            StrategyKind::Ewc => "ewc",
            StrategyKind::Si => "si",
            StrategyKind::Cwr => "cwr",
            StrategyKind::CwrPlus => "cwr+",
            StrategyKind::Ar1 => "ar1",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s || (s == "cwr_plus" && *k == StrategyKind::CwrPlus))
            .ok_or_else(|| Error::config(format!("unknown strategy id {s:?}")))
    }
}

/// Strategy-specific hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "id")]
pub enum StrategyParams {
    Naive,
    Cumulative,
    Lwf {
        map: LinearMap,
    },
    Ewc {
        lambda: f64,
        max_f: f64,
        fisher: FisherGranularity,
    },
    Si {
        lambda: f64,
        max_f: f64,
        xi: f64,
        w: [f64; 2],
    },
    Cwr {
        w: [f64; 2],
    },
    #[serde(rename = "cwr+")]
    CwrPlus {
        avg_scope: AvgScope,
    },
    Ar1 {
        lambda: f64,
        max_f: f64,
        xi: f64,
        w: [f64; 2],
        freeze_shared_after_first: bool,
        avg_scope: AvgScope,
    },
}

/// A fully resolved strategy: hyperparameters plus head configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategySpec {
    pub params: StrategyParams,
    pub head_mode: HeadMode,
    pub output_init: OutputInit,
}

impl StrategySpec {
    pub fn kind(&self) -> StrategyKind {
        match self.params {
            StrategyParams::Naive => StrategyKind::Naive,
            StrategyParams::Cumulative => StrategyKind::Cumulative,
            StrategyParams::Lwf { .. } => StrategyKind::Lwf,
            StrategyParams::Ewc { .. } => StrategyKind::Ewc,
            StrategyParams::Si { .. } => StrategyKind::Si,
            StrategyParams::Cwr { .. } => StrategyKind::Cwr,
            StrategyParams::CwrPlus { .. } => StrategyKind::CwrPlus,
            StrategyParams::Ar1 { .. } => StrategyKind::Ar1,
        }
    }

    /// Spec with default head settings for the given parameters.
    pub fn with_params(params: StrategyParams) -> Self {
        let head_mode = match params {
            StrategyParams::Lwf { .. } => HeadMode::Expanding,
            _ => HeadMode::Maximal,
        };
        let output_init = match params {
            StrategyParams::CwrPlus { .. } | StrategyParams::Ar1 { .. } => OutputInit::Zero,
            _ => OutputInit::default(),
        };
        Self {
            params,
            head_mode,
            output_init,
        }
    }

    pub fn naive() -> Self {
        Self::with_params(StrategyParams::Naive)
    }

    pub fn cumulative() -> Self {
        Self::with_params(StrategyParams::Cumulative)
    }

    pub fn lwf(map: LinearMap) -> Self {
        Self::with_params(StrategyParams::Lwf { map })
    }

    pub fn ewc(lambda: f64) -> Self {
        Self::with_params(StrategyParams::Ewc {
            lambda,
            max_f: DEFAULT_MAX_F,
            fisher: FisherGranularity::PerMinibatch,
        })
    }

    pub fn si(lambda: f64) -> Self {
        Self::with_params(StrategyParams::Si {
            lambda,
            max_f: DEFAULT_MAX_F,
            xi: DEFAULT_XI,
            w: [0.00001, 0.005],
        })
    }

    pub fn cwr() -> Self {
        Self::with_params(StrategyParams::Cwr { w: [1.0, 1.0] })
    }

    pub fn cwr_plus() -> Self {
        Self::with_params(StrategyParams::CwrPlus {
            avg_scope: AvgScope::FullHead,
        })
    }

    pub fn ar1(lambda: f64) -> Self {
        Self::with_params(StrategyParams::Ar1 {
            lambda,
            max_f: DEFAULT_MAX_F,
            xi: DEFAULT_XI,
            w: [0.0015, 0.0015],
            freeze_shared_after_first: false,
            avg_scope: AvgScope::FullHead,
        })
    }

    /// Checks the spec against itself and the training plan.
    pub fn validate(&self, plan: &TrainPlan, protocol: Protocol) -> Result<()> {
        let kind = self.kind();
        let check_reg = |lambda: f64, max_f: f64| -> Result<()> {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::config(format!("{kind}: λ must be ≥ 0, got {lambda}")));
            }
            if !(max_f > 0.0 && max_f.is_finite()) {
                return Err(Error::config(format!("{kind}: max_f must be > 0, got {max_f}")));
            }
            // The penalty is first active on batch 2, trained at lr_later.
            if overshoots(plan.lr_later * lambda * max_f) {
                return Err(Error::Overshoot {
                    eta: plan.lr_later,
                    lambda,
                    max_importance: max_f,
                    product: plan.lr_later * lambda * max_f,
                });
            }
            Ok(())
        };
        let check_w = |w: &[f64; 2]| -> Result<()> {
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::config(format!("{kind}: batch weights must be ≥ 0, got {w:?}")));
            }
            Ok(())
        };
        let check_xi = |xi: f64| -> Result<()> {
            if !(xi > 0.0 && xi.is_finite()) {
                return Err(Error::config(format!("{kind}: ξ must be > 0, got {xi}")));
            }
            Ok(())
        };
        match &self.params {
            StrategyParams::Ewc { lambda, max_f, .. } => check_reg(*lambda, *max_f)?,
            StrategyParams::Si { lambda, max_f, xi, w } => {
                check_reg(*lambda, *max_f)?;
                check_xi(*xi)?;
                check_w(w)?;
            }
            StrategyParams::Cwr { w } => check_w(w)?,
            StrategyParams::Ar1 { lambda, max_f, xi, w, .. } => {
                check_reg(*lambda, *max_f)?;
                check_xi(*xi)?;
                check_w(w)?;
            }
            _ => {}
        }
        if self.head_mode == HeadMode::Expanding
            && matches!(kind, StrategyKind::Ewc | StrategyKind::Si | StrategyKind::Ar1)
        {
            return Err(Error::config(format!(
                "{kind} needs a maximal head: importance is tracked per head parameter"
            )));
        }
        if matches!(kind, StrategyKind::CwrPlus | StrategyKind::Ar1) && self.output_init != OutputInit::Zero {
            return Err(Error::config(format!("{kind} trains tw from zero; output_init must be zero")));
        }
        if let OutputInit::Gaussian { std } = self.output_init {
            if !(std > 0.0 && std.is_finite()) {
                return Err(Error::config(format!("output init std must be > 0, got {std}")));
            }
        }
        if protocol == Protocol::Mt && matches!(kind, StrategyKind::Lwf | StrategyKind::Cumulative) {
            return Err(Error::config(format!("{kind} is only supported in the SIT protocol")));
        }
        if protocol == Protocol::Mt && self.head_mode == HeadMode::Expanding {
            return Err(Error::config("the MT protocol manages its own per-task heads; use a maximal head"));
        }
        Ok(())
    }
}

/// Per-batch lifecycle of a strategy. Training hooks come from the
/// [`TrainHooks`] supertrait.
pub trait Strategy: TrainHooks + Send {
    fn kind(&self) -> StrategyKind;

    /// Runs after head expansion and before any training on the batch.
    fn before_batch(&mut self, _net: &mut Network, _batch: &TrainingBatch, _rng: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }

    /// Patterns to train on instead of the batch itself.
    fn training_patterns(&mut self, _batch: &TrainingBatch) -> Option<Vec<Pattern>> {
        None
    }

    fn freeze_shared(&self, _batch_index: usize) -> bool {
        false
    }

    fn after_batch(&mut self, _net: &mut Network, _batch: &TrainingBatch, _plan: &TrainPlan) -> Result<()> {
        Ok(())
    }

    /// The network used for evaluation.
    fn inference_network(&self, net: &Network) -> Result<Network> {
        Ok(net.clone())
    }

    fn drain_warnings(&mut self) -> Vec<String> {
        Vec::new()
    }

    /// Compact, serializable summary of the strategy state.
    fn state(&self) -> serde_json::Value {
        serde_json::json!({})
    }

    fn importance_state(&self) -> Option<&ImportanceState> {
        None
    }

    fn head_state(&self) -> Option<&HeadState> {
        None
    }
}

pub struct Naive;

impl TrainHooks for Naive {}

impl Strategy for Naive {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Naive
    }
}

/// Trains on the union of all batches seen so far.
#[derive(Default)]
pub struct Cumulative {
    memory: Vec<Pattern>,
}

impl TrainHooks for Cumulative {}

impl Strategy for Cumulative {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Cumulative
    }

    fn training_patterns(&mut self, batch: &TrainingBatch) -> Option<Vec<Pattern>> {
        self.memory.extend_from_slice(&batch.patterns);
        Some(self.memory.clone())
    }

    fn state(&self) -> serde_json::Value {
        serde_json::json!({ "stored_patterns": self.memory.len() })
    }
}

/// Builds the strategy for `net`, which must already carry the spec's head.
pub fn build_strategy(spec: &StrategySpec, net: &Network, protocol: Protocol) -> Result<Box<dyn Strategy>> {
    let classes = net.class_universe();
    let pn = net.penultimate_width();
    let shared = net.params().prefix(net.shared_tensor_count());
    let scope = match protocol {
        Protocol::Sit => net.params().clone(),
        Protocol::Mt => shared.clone(),
    };
    Ok(match &spec.params {
        StrategyParams::Naive => Box::new(Naive),
        StrategyParams::Cumulative => Box::new(Cumulative::default()),
        StrategyParams::Lwf { map } => Box::new(Lwf::new(*map)),
        StrategyParams::Ewc { lambda, max_f, fisher } => Box::new(Ewc::new(&scope, *lambda, *max_f, *fisher)?),
        StrategyParams::Si { lambda, max_f, xi, w } => Box::new(Si::new(&scope, *lambda, *max_f, *xi, *w)?),
        StrategyParams::Cwr { w } => Box::new(Cwr::new(classes, pn, *w, spec.output_init)),
        StrategyParams::CwrPlus { avg_scope } => Box::new(CwrPlus::new(classes, pn, *avg_scope)),
        StrategyParams::Ar1 {
            lambda,
            max_f,
            xi,
            w,
            freeze_shared_after_first,
            avg_scope,
        } => Box::new(Ar1::new(
            classes,
            pn,
            &shared,
            Ar1Params {
                lambda: *lambda,
                max_f: *max_f,
                xi: *xi,
                weights: *w,
                freeze_shared_after_first: *freeze_shared_after_first,
                avg_scope: *avg_scope,
            },
        )?),
    })
}

/// A strategy bound to one run: enforces batch order, owns the head RNG
/// and collects warnings.
pub struct Learner {
    spec: StrategySpec,
    strategy: Box<dyn Strategy>,
    next_index: usize,
    rng: ChaCha8Rng,
    warnings: Vec<String>,
}

impl Learner {
    pub fn new(spec: &StrategySpec, net: &Network, protocol: Protocol, seed: u64) -> Result<Self> {
        if net.head_mode() != spec.head_mode {
            return Err(Error::contract(format!(
                "network head is {:?} but the strategy expects {:?}",
                net.head_mode(),
                spec.head_mode
            )));
        }
        Ok(Self {
            spec: spec.clone(),
            strategy: build_strategy(spec, net, protocol)?,
            next_index: 1,
            rng: rng_from(derive_seed(seed, stream::HEAD_INIT)),
            warnings: Vec::new(),
        })
    }

    pub fn spec(&self) -> &StrategySpec {
        &self.spec
    }

    pub fn strategy(&self) -> &dyn Strategy {
        self.strategy.as_ref()
    }

    pub fn inference_network(&self, net: &Network) -> Result<Network> {
        self.strategy.inference_network(net)
    }

    pub fn drain_warnings(&mut self) -> Vec<String> {
        std::mem::take(&mut self.warnings)
    }

    /// Replaces the head with freshly initialized units for `classes`.
    pub fn fresh_head(&mut self, net: &mut Network, classes: &[usize]) -> Result<()> {
        let pn = net.penultimate_width();
        let layer = net.layer_count() - 1;
        let mut w = crate::params::ParamTensor::zeros(layer, crate::params::TensorKind::Weight, classes.len(), pn);
        let mut b = crate::params::ParamTensor::zeros(layer, crate::params::TensorKind::Bias, classes.len(), 1);
        if let OutputInit::Gaussian { std } = self.spec.output_init {
            use rand_distr::{Distribution, Normal};
            let normal = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
            for v in w.values.iter_mut().chain(b.values.iter_mut()) {
                *v = normal.sample(&mut self.rng);
            }
        }
        net.replace_head(classes.to_vec(), w, b)
    }

    /// Runs the full lifecycle of one batch.
    pub fn run_batch(&mut self, net: &mut Network, batch: &TrainingBatch, plan: &TrainPlan) -> Result<TrainStats> {
        if batch.index != self.next_index {
            return Err(Error::contract(format!(
                "batch {} received, batch {} expected",
                batch.index, self.next_index
            )));
        }
        if net.head_mode() == HeadMode::Expanding {
            let new: Vec<usize> = batch
                .classes
                .iter()
                .copied()
                .filter(|c| net.unit_of_class(*c).is_none())
                .collect();
            net.expand_head(&new, self.spec.output_init, &mut self.rng)?;
        }
        self.strategy.before_batch(net, batch, &mut self.rng)?;
        let own = self.strategy.training_patterns(batch);
        let patterns = own.as_deref().unwrap_or(&batch.patterns);
        let freeze = self.strategy.freeze_shared(batch.index);
        let stats = train_batch(net, patterns, batch.index, plan, self.strategy.as_mut(), freeze)?;
        self.strategy.after_batch(net, batch, plan)?;
        self.next_index += 1;
        self.warnings.extend(self.strategy.drain_warnings());
        Ok(stats)
    }
}
