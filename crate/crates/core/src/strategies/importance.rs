//! Per-parameter importance for the regularization strategies: Fisher
//! diagonal (EWC) and path-integral trajectories (SI).

use serde::{Deserialize, Serialize};

use crate::data::Pattern;
use crate::error::{Error, Result};
use crate::math::{cross_entropy_soft, softmax, ImportanceView, Regularization, SoftTarget};
use crate::network::Network;
use crate::params::{GradientRecord, ParamSet};

/// Damping added to the squared displacement in the SI denominator.
pub const DEFAULT_XI: f64 = 1e-7;

/// Default importance ceiling.
pub const DEFAULT_MAX_F: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMode {
    Ewc,
    Si,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherGranularity {
    PerPattern,
    PerMinibatch,
}

/// Accumulated importance F and anchor θ* over a prefix of the network's
/// tensors. F̂ is never stored: it is derived as `min(F/divisor, max_F)`
/// with divisor `i` for EWC and 1 for SI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceState {
    pub mode: ImportanceMode,
    pub max_f: f64,
    pub lambda: f64,
    pub accumulated: ParamSet,
    pub anchor: ParamSet,
    pub batch_count: usize,
    max_normalized: f64,
}

impl ImportanceState {
    /// `template` fixes the covered tensors (usually `Θ̄` or all params).
    pub fn new(mode: ImportanceMode, template: &ParamSet, lambda: f64, max_f: f64) -> Result<Self> {
        if !(max_f > 0.0 && max_f.is_finite()) {
            return Err(Error::config(format!("max_F must be > 0, got {max_f}")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config(format!("λ must be ≥ 0, got {lambda}")));
        }
        Ok(Self {
            mode,
            max_f,
            lambda,
            accumulated: template.zeros_like(),
            anchor: template.clone(),
            batch_count: 0,
            max_normalized: 0.0,
        })
    }

    pub fn tensor_count(&self) -> usize {
        self.accumulated.tensor_count()
    }

    fn divisor(&self) -> f64 {
        match self.mode {
            ImportanceMode::Ewc => self.batch_count.max(1) as f64,
            ImportanceMode::Si => 1.0,
        }
    }

    /// Explicit F̂.
    pub fn normalized(&self) -> ParamSet {
        let (div, max) = (self.divisor(), self.max_f);
        let mut out = self.accumulated.clone();
        for t in &mut out.tensors {
            for v in &mut t.values {
                *v = (*v / div).min(max);
            }
        }
        out
    }

    pub fn max_normalized(&self) -> f64 {
        self.max_normalized
    }

    /// Reals held between batches: F and θ*.
    pub fn overhead_reals(&self) -> usize {
        self.accumulated.len() + self.anchor.len()
    }

    /// The pull toward θ*, or nothing before the first consolidation.
    pub fn regularizer(&self) -> Result<Option<Regularization<'_>>> {
        if self.batch_count == 0 {
            return Ok(None);
        }
        Regularization::new(
            ImportanceView::Clipped {
                raw: &self.accumulated.tensors,
                divisor: self.divisor(),
                max: self.max_f,
            },
            &self.anchor.tensors,
            self.lambda,
            self.max_normalized,
        )
        .map(Some)
    }

    fn refresh(&mut self, theta: &ParamSet) -> Result<()> {
        if !theta.congruent_prefix(&self.anchor) {
            return Err(Error::contract("parameters are not congruent with the importance state"));
        }
        self.anchor = theta.prefix(self.tensor_count());
        let (div, max) = (self.divisor(), self.max_f);
        self.max_normalized = self.accumulated.values().map(|v| (v / div).min(max)).fold(0.0, f64::max);
        Ok(())
    }

    fn check_mode(&self, mode: ImportanceMode) -> Result<()> {
        if self.mode != mode {
            return Err(Error::contract(format!("importance state is {:?}, operation needs {mode:?}", self.mode)));
        }
        Ok(())
    }
}

/// `F += F^i; i += 1; F̂ = clip(F/i, max_F); θ* = θ`.
pub fn ewc_consolidate(state: &mut ImportanceState, f_i: &ParamSet, theta: &ParamSet) -> Result<()> {
    state.check_mode(ImportanceMode::Ewc)?;
    state.accumulated.check_congruent(f_i, "EWC consolidation")?;
    state.accumulated.add_scaled(f_i, 1.0);
    state.batch_count += 1;
    state.refresh(theta)
}

/// `F += w_i·F^i; F̂ = clip(F, max_F); θ* = θ`. Negative F^i entries (the
/// loss went up along that coordinate) contribute nothing, which keeps F ≥ 0.
pub fn si_consolidate(state: &mut ImportanceState, f_i: &ParamSet, w_i: f64, theta: &ParamSet) -> Result<()> {
    state.check_mode(ImportanceMode::Si)?;
    if !(w_i >= 0.0 && w_i.is_finite()) {
        return Err(Error::config(format!("SI batch weight w_i must be ≥ 0, got {w_i}")));
    }
    state.accumulated.check_congruent(f_i, "SI consolidation")?;
    if w_i != 0.0 {
        for (acc, f) in state.accumulated.tensors.iter_mut().zip(&f_i.tensors) {
            for (a, &v) in acc.values.iter_mut().zip(&f.values) {
                *a += w_i * v.max(0.0);
            }
        }
    }
    state.batch_count += 1;
    state.refresh(theta)
}

/// Per-parameter population variance of the cross-entropy gradient over
/// patterns or over consecutive minibatches (mean gradient per minibatch).
/// Covers the first `tensor_count` tensors.
pub fn ewc_fisher_diagonal(
    net: &Network,
    patterns: &[Pattern],
    granularity: FisherGranularity,
    minibatch_size: usize,
    tensor_count: usize,
) -> Result<ParamSet> {
    let unit_size = match granularity {
        FisherGranularity::PerPattern => 1,
        FisherGranularity::PerMinibatch => minibatch_size.max(1),
    };
    let units = patterns.len().div_ceil(unit_size);
    if units < 2 {
        return Err(Error::Undefined(format!(
            "gradient variance needs at least 2 units, batch has {units} ({} patterns, unit size {unit_size})",
            patterns.len()
        )));
    }
    let width = net.output_width();
    let template = net.params().prefix(tensor_count);
    let mut mean = template.zeros_like();
    let mut m2 = template.zeros_like();
    for (n, chunk) in patterns.chunks(unit_size).enumerate() {
        let mut g = net.params().zeros_like();
        for p in chunk {
            let unit = net
                .unit_of_class(p.label)
                .ok_or_else(|| Error::contract(format!("class {} has no output unit", p.label)))?;
            let (logits, cache) = net.forward(&p.input)?;
            let (_, dl) = cross_entropy_soft(&softmax(&logits)?, &SoftTarget::one_hot(width, unit)?)?;
            net.accumulate_backward(&cache, &dl, &mut g)?;
        }
        if chunk.len() > 1 {
            g.scale(1.0 / chunk.len() as f64);
        }
        // Welford update.
        let count = (n + 1) as f64;
        for ((mt, st), gt) in mean.tensors.iter_mut().zip(&mut m2.tensors).zip(&g.tensors) {
            for ((m, s), &x) in mt.values.iter_mut().zip(&mut st.values).zip(&gt.values) {
                let d = x - *m;
                *m += d / count;
                *s += d * (x - *m);
            }
        }
    }
    m2.scale(1.0 / units as f64);
    Ok(m2)
}

/// Running path integral of one batch for SI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiTrajectory {
    pub running_sum: ParamSet,
    pub theta_start: ParamSet,
    pub xi: f64,
}

impl SiTrajectory {
    /// Starts a trajectory over `theta_start` (the covered tensors).
    pub fn start(theta_start: ParamSet, xi: f64) -> Result<Self> {
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(Error::config(format!("ξ must be > 0, got {xi}")));
        }
        Ok(Self {
            running_sum: theta_start.zeros_like(),
            theta_start,
            xi,
        })
    }
}

/// `running_sum_k += −Δθ_k·g_k` over the covered tensors. `delta` and
/// `gradient` may span more tensors than the trajectory.
pub fn si_observe_step(traj: &mut SiTrajectory, delta: &ParamSet, gradient: &GradientRecord) -> Result<()> {
    if !delta.congruent_prefix(&traj.running_sum) || !gradient.congruent_prefix(&traj.running_sum) {
        return Err(Error::contract("SI step does not match the trajectory layout"));
    }
    for ((acc, d), g) in traj.running_sum.tensors.iter_mut().zip(&delta.tensors).zip(&gradient.tensors) {
        for ((a, &dk), &gk) in acc.values.iter_mut().zip(&d.values).zip(&g.values) {
            *a += -dk * gk;
        }
    }
    Ok(())
}

/// `F^i_k = running_sum_k / ((θ_end,k − θ_start,k)² + ξ)`.
pub fn si_batch_importance(traj: &SiTrajectory, theta_end: &ParamSet) -> Result<ParamSet> {
    if !theta_end.congruent_prefix(&traj.theta_start) {
        return Err(Error::contract("end parameters do not match the trajectory layout"));
    }
    let mut out = traj.running_sum.clone();
    for ((o, s), e) in out.tensors.iter_mut().zip(&traj.theta_start.tensors).zip(&theta_end.tensors) {
        for ((v, &a), &b) in o.values.iter_mut().zip(&s.values).zip(&e.values) {
            let t = b - a;
            *v /= t * t + traj.xi;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ParamTensor, TensorKind};

    fn set(values: &[f64]) -> ParamSet {
        ParamSet::new(vec![ParamTensor {
            layer: 0,
            kind: TensorKind::Weight,
            rows: 1,
            cols: values.len(),
            values: values.to_vec(),
        }])
    }

    #[test]
    fn ewc_zero_first_batch_gives_zero_importance() {
        let theta = set(&[0.1, 0.2]);
        let mut s = ImportanceState::new(ImportanceMode::Ewc, &theta, 1.0, DEFAULT_MAX_F).unwrap();
        ewc_consolidate(&mut s, &set(&[0.0, 0.0]), &theta).unwrap();
        assert_eq!(s.normalized(), set(&[0.0, 0.0]));
    }

    #[test]
    fn ewc_saturation_compensates_averaging() {
        let theta = set(&[0.0; 6]);
        let mut s = ImportanceState::new(ImportanceMode::Ewc, &theta, 1.0, DEFAULT_MAX_F).unwrap();
        let mut f1 = vec![0.0; 6];
        f1[5] = 0.004;
        ewc_consolidate(&mut s, &set(&f1), &theta).unwrap();
        ewc_consolidate(&mut s, &set(&[0.0; 6]), &theta).unwrap();
        assert_eq!(s.accumulated.tensors[0].values[5] / 2.0, 0.002);
        assert_eq!(s.normalized().tensors[0].values[5], 0.001);
        assert_eq!(s.max_normalized(), 0.001);
    }

    #[test]
    fn si_clips_without_dividing() {
        let theta = set(&[0.0; 2]);
        let mut s = ImportanceState::new(ImportanceMode::Si, &theta, 1.0, DEFAULT_MAX_F).unwrap();
        si_consolidate(&mut s, &set(&[0.01, 0.0004]), 1.0, &theta).unwrap();
        si_consolidate(&mut s, &set(&[0.0, 0.0004]), 1.0, &theta).unwrap();
        assert_eq!(s.normalized().tensors[0].values, vec![0.001, 0.0008]);
    }

    #[test]
    fn si_zero_weight_only_moves_the_anchor() {
        let theta = set(&[0.0; 2]);
        let mut s = ImportanceState::new(ImportanceMode::Si, &theta, 1.0, DEFAULT_MAX_F).unwrap();
        si_consolidate(&mut s, &set(&[0.5, 0.5]), 0.001, &theta).unwrap();
        let before = s.accumulated.clone();
        let moved = set(&[1.0, -1.0]);
        si_consolidate(&mut s, &set(&[7.0, 9.0]), 0.0, &moved).unwrap();
        assert_eq!(s.accumulated, before);
        assert_eq!(s.anchor, moved);
    }

    #[test]
    fn si_negative_weight_is_rejected() {
        let theta = set(&[0.0]);
        let mut s = ImportanceState::new(ImportanceMode::Si, &theta, 1.0, DEFAULT_MAX_F).unwrap();
        assert!(si_consolidate(&mut s, &set(&[1.0]), -0.1, &theta).is_err());
    }

    #[test]
    fn mode_mismatch_is_contract_error() {
        let theta = set(&[0.0]);
        let mut s = ImportanceState::new(ImportanceMode::Si, &theta, 1.0, DEFAULT_MAX_F).unwrap();
        assert!(matches!(ewc_consolidate(&mut s, &set(&[1.0]), &theta), Err(Error::Contract(_))));
    }

    #[test]
    fn plain_descent_step_contributes_eta_g_squared() {
        let mut traj = SiTrajectory::start(set(&[0.0, 0.0]), DEFAULT_XI).unwrap();
        let g = set(&[0.5, -2.0]);
        let eta = 0.25;
        let delta = set(&[-eta * 0.5, eta * 2.0]);
        si_observe_step(&mut traj, &delta, &g).unwrap();
        assert_eq!(traj.running_sum.tensors[0].values, vec![eta * 0.25, eta * 4.0]);
    }

    #[test]
    fn unmoved_weight_has_zero_importance() {
        let traj = SiTrajectory::start(set(&[0.3]), DEFAULT_XI).unwrap();
        assert_eq!(si_batch_importance(&traj, &set(&[0.3])).unwrap(), set(&[0.0]));
    }

    #[test]
    fn closed_trajectory_blows_up() {
        let mut traj = SiTrajectory::start(set(&[0.3]), DEFAULT_XI).unwrap();
        traj.running_sum = set(&[0.01]);
        let f = si_batch_importance(&traj, &set(&[0.3])).unwrap();
        assert!((f.tensors[0].values[0] - 0.01 / DEFAULT_XI).abs() < 1e-3);
    }

    #[test]
    fn overhead_is_two_m() {
        let theta = set(&[0.0; 7]);
        let s = ImportanceState::new(ImportanceMode::Ewc, &theta, 1.0, DEFAULT_MAX_F).unwrap();
        assert_eq!(s.overhead_reals(), 14);
    }
}
