//! Learning without Forgetting with a single fused soft target.

use serde::{Deserialize, Serialize};

use super::{Strategy, StrategyKind};
use crate::error::{Error, Result};
use crate::math::{softmax, SoftTarget};
use crate::network::Network;
use crate::scenario::TrainingBatch;
use crate::train::TrainHooks;

/// Linear map `[in_lo, in_hi] → [out_lo, out_hi]`, extrapolated outside the
/// input range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct LinearMap {
    pub in_lo: f64,
    pub in_hi: f64,
    pub out_lo: f64,
    pub out_hi: f64,
}

impl LinearMap {
    pub const IDENTITY: LinearMap = LinearMap {
        in_lo: 0.0,
        in_hi: 1.0,
        out_lo: 0.0,
        out_hi: 1.0,
    };

    pub fn new(in_lo: f64, in_hi: f64, out_lo: f64, out_hi: f64) -> Result<Self> {
        if ![in_lo, in_hi, out_lo, out_hi].iter().all(|v| v.is_finite()) || in_hi <= in_lo {
            return Err(Error::config(format!(
                "λ map needs finite values with in_hi > in_lo, got [{in_lo}, {in_hi}, {out_lo}, {out_hi}]"
            )));
        }
        Ok(Self {
            in_lo,
            in_hi,
            out_lo,
            out_hi,
        })
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.out_lo + (x - self.in_lo) * (self.out_hi - self.out_lo) / (self.in_hi - self.in_lo)
    }
}

impl Default for LinearMap {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl TryFrom<[f64; 4]> for LinearMap {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        LinearMap::new(v[0], v[1], v[2], v[3])
    }
}

impl From<LinearMap> for [f64; 4] {
    fn from(m: LinearMap) -> Self {
        [m.in_lo, m.in_hi, m.out_lo, m.out_hi]
    }
}

/// Stability weight for batch `i` (1-based) given the pattern counts of
/// batches `1..=i`: 0 for the first batch, otherwise
/// `map(1 − n_i / Σ_{j≤i} n_j)` clamped to [0,1]. Returns a warning when
/// the clamp engaged.
pub fn lwf_lambda(i: usize, counts: &[usize], map: &LinearMap) -> Result<(f64, Option<String>)> {
    if i == 0 || counts.len() < i {
        return Err(Error::contract(format!("λ requested for batch {i} with {} known batch sizes", counts.len())));
    }
    if counts[..i].contains(&0) {
        return Err(Error::contract("batch pattern counts must be positive"));
    }
    if i == 1 {
        return Ok((0.0, None));
    }
    let total: usize = counts[..i].iter().sum();
    // (S − n_i)/S rather than 1 − n_i/S: exact whenever the ratio is.
    let raw = map.apply((total - counts[i - 1]) as f64 / total as f64);
    if (0.0..=1.0).contains(&raw) {
        Ok((raw, None))
    } else {
        let clamped = raw.clamp(0.0, 1.0);
        let msg = format!("λ_{i} = {raw} from the configured map lies outside [0,1]; clamped to {clamped}");
        log::warn!("{msg}");
        Ok((clamped, Some(msg)))
    }
}

/// `t = (1−λ)·ŷ_1h + λ·ŷ_lwf`.
pub fn lwf_fuse(one_hot: &[f64], stored: &[f64], lambda: f64) -> Result<SoftTarget> {
    if one_hot.len() != stored.len() {
        return Err(Error::contract(format!(
            "cannot fuse targets of widths {} and {}",
            one_hot.len(),
            stored.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::contract(format!("λ = {lambda} outside [0,1]")));
    }
    SoftTarget::new(
        one_hot
            .iter()
            .zip(stored)
            .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
            .collect(),
    )
}

/// Softmax prediction of the current network for each pattern.
pub fn lwf_capture(net: &Network, patterns: &[crate::data::Pattern]) -> Result<Vec<Vec<f64>>> {
    patterns.iter().map(|p| softmax(&net.logits(&p.input)?)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LwfState {
    pub stored_targets: Vec<Vec<f64>>,
    pub lambda: f64,
    pub map: LinearMap,
    pub seen_counts: Vec<usize>,
    training: bool,
}

impl LwfState {
    pub fn new(map: LinearMap) -> Self {
        Self {
            stored_targets: Vec::new(),
            lambda: 0.0,
            map,
            seen_counts: Vec::new(),
            training: false,
        }
    }

    /// Stores ŷ_lwf for the batch. Must run before any training on it.
    pub fn capture(&mut self, net: &Network, batch: &TrainingBatch) -> Result<()> {
        if self.training {
            return Err(Error::contract("LWF capture requested while the batch is being trained"));
        }
        self.stored_targets = lwf_capture(net, &batch.patterns)?;
        Ok(())
    }

    /// Number of reals held for the batch lifespan (n_i·s).
    pub fn overhead_reals(&self) -> usize {
        self.stored_targets.iter().map(Vec::len).sum()
    }
}

pub struct Lwf {
    state: LwfState,
    warnings: Vec<String>,
}

impl Lwf {
    pub fn new(map: LinearMap) -> Self {
        Self {
            state: LwfState::new(map),
            warnings: Vec::new(),
        }
    }

    pub fn state_ref(&self) -> &LwfState {
        &self.state
    }
}

impl TrainHooks for Lwf {
    fn target(&self, pattern_index: usize, unit: usize, width: usize) -> Result<SoftTarget> {
        let stored = self
            .state
            .stored_targets
            .get(pattern_index)
            .ok_or_else(|| Error::contract(format!("no stored LWF target for pattern {pattern_index}")))?;
        if self.state.lambda == 0.0 {
            return SoftTarget::one_hot(width, unit);
        }
        lwf_fuse(SoftTarget::one_hot(width, unit)?.as_slice(), stored, self.state.lambda)
    }
}

impl Strategy for Lwf {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Lwf
    }

    fn before_batch(&mut self, net: &mut Network, batch: &TrainingBatch, _rng: &mut rand_chacha::ChaCha8Rng) -> Result<()> {
        self.state.seen_counts.push(batch.patterns.len());
        let (lambda, warning) = lwf_lambda(batch.index, &self.state.seen_counts, &self.state.map)?;
        self.warnings.extend(warning);
        self.state.lambda = lambda;
        self.state.capture(net, batch)?;
        self.state.training = true;
        Ok(())
    }

    fn after_batch(&mut self, _net: &mut Network, _batch: &TrainingBatch, _plan: &crate::train::TrainPlan) -> Result<()> {
        self.state.training = false;
        self.state.stored_targets.clear();
        Ok(())
    }

    fn drain_warnings(&mut self) -> Vec<String> {
        std::mem::take(&mut self.warnings)
    }

    fn state(&self) -> serde_json::Value {
        serde_json::json!({
            "lambda": self.state.lambda,
            "map": <[f64; 4]>::from(self.state.map),
            "seen_counts": self.state.seen_counts,
        })
    }
}
