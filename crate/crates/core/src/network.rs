//! Dense feed-forward network: ReLU hidden layers, identity output logits.
//!
//! Everything below the output layer is the shared part Θ̄; the output
//! layer is the head. Each head unit is bound to a class id so that an
//! expanding head can grow in class-arrival order while a maximal head maps
//! unit `u` to class `u`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{GradientRecord, ParamSet, ParamTensor, TensorKind};
use crate::seed::rng_from;

/// Standard deviation of the default Gaussian initialization.
pub const DEFAULT_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// Output width fixed to the full class universe from the first batch.
    Maximal,
    /// Output width grows by the number of new classes in each batch.
    Expanding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OutputInit {
    Zero,
    Gaussian { std: f64 },
}

impl Default for OutputInit {
    fn default() -> Self {
        OutputInit::Gaussian { std: DEFAULT_INIT_STD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitPolicy {
    pub hidden_std: f64,
    pub output: OutputInit,
}

impl Default for InitPolicy {
    fn default() -> Self {
        Self {
            hidden_std: DEFAULT_INIT_STD,
            output: OutputInit::default(),
        }
    }
}

impl InitPolicy {
    pub fn zero_output(hidden_std: f64) -> Self {
        Self {
            hidden_std,
            output: OutputInit::Zero,
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![100, 50]
}

fn default_std() -> f64 {
    DEFAULT_INIT_STD
}

/// Architecture below the head: hidden widths and their init std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_std")]
    pub hidden_init_std: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            hidden_init_std: DEFAULT_INIT_STD,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("network.hidden needs at least one non-empty hidden layer"));
        }
        if !(self.hidden_init_std > 0.0 && self.hidden_init_std.is_finite()) {
            return Err(Error::config(
                "network.hidden_init_std must be > 0: zero hidden activations block backpropagation",
            ));
        }
        Ok(())
    }

    pub fn build(&self, input_dim: usize, classes: usize, head: HeadMode, output: OutputInit, seed: u64) -> Result<Network> {
        self.validate()?;
        let mut body = vec![input_dim];
        body.extend_from_slice(&self.hidden);
        let policy = InitPolicy {
            hidden_std: self.hidden_init_std,
            output,
        };
        Network::init_with_head(&body, classes, head, &policy, seed)
    }
}

/// Result of a head expansion request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExpandOutcome {
    Expanded { added: usize },
    /// A maximal head already covers every class; nothing was changed.
    MaximalNoOp { warning: String },
}

/// Per-pattern forward state needed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of each layer: the pattern itself, then every hidden output.
    activations: Vec<Vec<f64>>,
    version: u64,
}

#[derive(Debug, Clone)]
pub struct Network {
    sizes: Vec<usize>,
    params: ParamSet,
    head_mode: HeadMode,
    unit_classes: Vec<usize>,
    class_universe: usize,
    version: u64,
}

fn gaussian_fill(values: &mut [f64], std: f64, rng: &mut impl Rng) -> Result<()> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::config(format!("invalid init std {std}: {e}")))?;
    for v in values {
        *v = normal.sample(rng);
    }
    Ok(())
}

fn init_output(w: &mut [f64], b: &mut [f64], init: OutputInit, rng: &mut impl Rng) -> Result<()> {
    match init {
        OutputInit::Zero => {
            w.fill(0.0);
            b.fill(0.0);
            Ok(())
        }
        OutputInit::Gaussian { std } => {
            gaussian_fill(w, std, rng)?;
            gaussian_fill(b, std, rng)
        }
    }
}

impl Network {
    /// Builds a network with a maximal head. `layer_sizes` is
    /// `[input, hidden..., classes]` and needs at least one hidden layer.
    pub fn init(layer_sizes: &[usize], policy: &InitPolicy, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::config("network needs an input, at least one hidden layer and an output layer"));
        }
        let classes = *layer_sizes.last().unwrap();
        Self::build(&layer_sizes[..layer_sizes.len() - 1], classes, HeadMode::Maximal, policy, seed)
    }

    /// Builds a network over `class_universe` classes. An expanding head
    /// starts with zero output units.
    pub fn init_with_head(
        body_sizes: &[usize],
        class_universe: usize,
        head_mode: HeadMode,
        policy: &InitPolicy,
        seed: u64,
    ) -> Result<Self> {
        if body_sizes.len() < 2 {
            return Err(Error::config("network needs an input and at least one hidden layer"));
        }
        Self::build(body_sizes, class_universe, head_mode, policy, seed)
    }

    fn build(body: &[usize], classes: usize, head_mode: HeadMode, policy: &InitPolicy, seed: u64) -> Result<Self> {
        if body.contains(&0) || classes == 0 {
            return Err(Error::config("layer sizes must be positive"));
        }
        if policy.hidden_std <= 0.0 || !policy.hidden_std.is_finite() {
            return Err(Error::config(
                "hidden layers cannot be initialized to all zeros: zero hidden activations block backpropagation",
            ));
        }
        let width = match head_mode {
            HeadMode::Maximal => classes,
            HeadMode::Expanding => 0,
        };
        let mut sizes = body.to_vec();
        sizes.push(width);
        let mut rng = rng_from(seed);
        let mut tensors = Vec::with_capacity(2 * (sizes.len() - 1));
        let last = sizes.len() - 2;
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let mut w = ParamTensor::zeros(l, TensorKind::Weight, fan_out, fan_in);
            let mut b = ParamTensor::zeros(l, TensorKind::Bias, fan_out, 1);
            if l == last {
                init_output(&mut w.values, &mut b.values, policy.output, &mut rng)?;
            } else {
                gaussian_fill(&mut w.values, policy.hidden_std, &mut rng)?;
                gaussian_fill(&mut b.values, policy.hidden_std, &mut rng)?;
            }
            tensors.push(w);
            tensors.push(b);
        }
        Ok(Self {
            sizes,
            params: ParamSet::new(tensors),
            head_mode,
            unit_classes: (0..width).collect(),
            class_universe: classes,
            version: 0,
        })
    }

    /// Builds a maximal-head network from explicit `(weights, bias)` pairs,
    /// weights given as one row per output unit. Any depth ≥ 1 is accepted.
    pub fn from_weights(input_dim: usize, layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        let mut sizes = vec![input_dim];
        let mut tensors = Vec::new();
        for (l, (rows, bias)) in layers.into_iter().enumerate() {
            let fan_in = *sizes.last().unwrap();
            if rows.len() != bias.len() || rows.iter().any(|r| r.len() != fan_in) {
                return Err(Error::config(format!("layer {l}: weight/bias shapes are inconsistent")));
            }
            let out = rows.len();
            tensors.push(ParamTensor {
                layer: l,
                kind: TensorKind::Weight,
                rows: out,
                cols: fan_in,
                values: rows.into_iter().flatten().collect(),
            });
            tensors.push(ParamTensor {
                layer: l,
                kind: TensorKind::Bias,
                rows: out,
                cols: 1,
                values: bias,
            });
            sizes.push(out);
        }
        let classes = *sizes.last().unwrap();
        Ok(Self {
            sizes,
            params: ParamSet::new(tensors),
            head_mode: HeadMode::Maximal,
            unit_classes: (0..classes).collect(),
            class_universe: classes,
            version: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    /// `[input, hidden..., output width]`.
    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn head_mode(&self) -> HeadMode {
        self.head_mode
    }

    pub fn class_universe(&self) -> usize {
        self.class_universe
    }

    /// Class id bound to each output unit.
    pub fn unit_classes(&self) -> &[usize] {
        &self.unit_classes
    }

    pub fn unit_of_class(&self, class: usize) -> Option<usize> {
        match self.head_mode {
            HeadMode::Maximal if self.unit_classes.len() == self.class_universe => {
                (class < self.class_universe).then_some(class)
            }
            _ => self.unit_classes.iter().position(|&c| c == class),
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable access invalidates every outstanding forward cache.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.version += 1;
        &mut self.params
    }

    /// Number of tensors in Θ̄ (everything below the head).
    pub fn shared_tensor_count(&self) -> usize {
        2 * (self.layer_count() - 1)
    }

    pub fn shared_param_count(&self) -> usize {
        self.params.tensors[..self.shared_tensor_count()].iter().map(ParamTensor::len).sum()
    }

    /// Penultimate-layer width: the number of weights per head unit.
    pub fn penultimate_width(&self) -> usize {
        self.sizes[self.sizes.len() - 2]
    }

    pub fn head_weights(&self) -> &ParamTensor {
        &self.params.tensors[self.params.tensors.len() - 2]
    }

    pub fn head_bias(&self) -> &ParamTensor {
        &self.params.tensors[self.params.tensors.len() - 1]
    }

    pub fn head_mut(&mut self) -> (&mut ParamTensor, &mut ParamTensor) {
        self.version += 1;
        let n = self.params.tensors.len();
        let (lo, hi) = self.params.tensors.split_at_mut(n - 1);
        (&mut lo[n - 2], &mut hi[0])
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let layers = self.layer_count();
        let mut activations = Vec::with_capacity(layers);
        activations.push(x.to_vec());
        for l in 0..layers {
            let out = self.layer_output(l, activations.last().unwrap());
            if l + 1 == layers {
                return Ok((
                    out,
                    ForwardCache {
                        activations,
                        version: self.version,
                    },
                ));
            }
            activations.push(out);
        }
        unreachable!("network has at least one layer")
    }

    /// Output logits without keeping a cache.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for l in 0..self.layer_count() {
            a = self.layer_output(l, &a);
        }
        Ok(a)
    }

    /// Post-activation output of the last hidden layer.
    pub fn penultimate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for l in 0..self.layer_count() - 1 {
            a = self.layer_output(l, &a);
        }
        Ok(a)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::config(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn layer_output(&self, l: usize, input: &[f64]) -> Vec<f64> {
        let w = &self.params.tensors[2 * l];
        let b = &self.params.tensors[2 * l + 1];
        let hidden = l + 1 < self.layer_count();
        (0..w.rows)
            .map(|o| {
                let z = b.values[o] + w.row(o).iter().zip(input).map(|(wi, xi)| wi * xi).sum::<f64>();
                if hidden {
                    z.max(0.0)
                } else {
                    z
                }
            })
            .collect()
    }

    pub fn backward(&self, cache: &ForwardCache, logit_grad: &[f64]) -> Result<GradientRecord> {
        let mut grad = self.params.zeros_like();
        self.accumulate_backward(cache, logit_grad, &mut grad)?;
        Ok(grad)
    }

    /// Adds the gradient for one pattern into `grad`.
    pub fn accumulate_backward(&self, cache: &ForwardCache, logit_grad: &[f64], grad: &mut GradientRecord) -> Result<()> {
        if cache.version != self.version || cache.activations.len() != self.layer_count() {
            return Err(Error::contract("forward cache is stale: parameters changed since the forward pass"));
        }
        if logit_grad.len() != self.output_width() {
            return Err(Error::contract(format!(
                "logit gradient has width {}, output layer has {}",
                logit_grad.len(),
                self.output_width()
            )));
        }
        if !self.params.congruent(grad) {
            return Err(Error::contract("gradient record does not match the network layout"));
        }
        let mut delta = logit_grad.to_vec();
        for l in (0..self.layer_count()).rev() {
            let input = &cache.activations[l];
            let (lo, hi) = grad.tensors.split_at_mut(2 * l + 1);
            let gw = &mut lo[2 * l];
            let gb = &mut hi[0];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb.values[o] += d;
                for (g, a) in gw.row_mut(o).iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params.tensors[2 * l];
            let mut prev = vec![0.0; w.cols];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(w.row(o)) {
                    *p += wi * d;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok(())
    }

    /// Adds output units for `new_classes` (expanding head only). Existing
    /// unit weights are preserved bit for bit.
    pub fn expand_head(&mut self, new_classes: &[usize], init: OutputInit, rng: &mut impl Rng) -> Result<ExpandOutcome> {
        if self.head_mode == HeadMode::Maximal {
            let warning = format!(
                "expand_head ignored for {} class(es): maximal head already covers all {} classes",
                new_classes.len(),
                self.class_universe
            );
            log::warn!("{warning}");
            return Ok(ExpandOutcome::MaximalNoOp { warning });
        }
        for (i, &c) in new_classes.iter().enumerate() {
            if c >= self.class_universe {
                return Err(Error::contract(format!("class {c} outside universe of {}", self.class_universe)));
            }
            if self.unit_classes.contains(&c) || new_classes[..i].contains(&c) {
                return Err(Error::contract(format!("class {c} already has an output unit")));
            }
        }
        if new_classes.is_empty() {
            return Ok(ExpandOutcome::Expanded { added: 0 });
        }
        let pn = self.penultimate_width();
        let added = new_classes.len();
        let mut w_new = vec![0.0; added * pn];
        let mut b_new = vec![0.0; added];
        init_output(&mut w_new, &mut b_new, init, rng)?;
        let (w, b) = self.head_mut();
        w.values.extend_from_slice(&w_new);
        w.rows += added;
        b.values.extend_from_slice(&b_new);
        b.rows += added;
        *self.sizes.last_mut().unwrap() += added;
        self.unit_classes.extend_from_slice(new_classes);
        Ok(ExpandOutcome::Expanded { added })
    }

    /// Re-initializes every head unit in place.
    pub fn reset_head(&mut self, init: OutputInit, rng: &mut impl Rng) -> Result<()> {
        let (w, b) = self.head_mut();
        init_output(&mut w.values, &mut b.values, init, rng)
    }

    /// Swaps in a head with the given unit bindings and parameters.
    pub fn replace_head(&mut self, unit_classes: Vec<usize>, weights: ParamTensor, bias: ParamTensor) -> Result<()> {
        let pn = self.penultimate_width();
        let units = unit_classes.len();
        if weights.rows != units || weights.cols != pn || bias.rows != units || bias.cols != 1 {
            return Err(Error::contract("replacement head has the wrong shape"));
        }
        if unit_classes.iter().any(|&c| c >= self.class_universe) {
            return Err(Error::contract("replacement head binds a class outside the universe"));
        }
        let layer = self.layer_count() - 1;
        let (w, b) = self.head_mut();
        *w = ParamTensor { layer, kind: TensorKind::Weight, ..weights };
        *b = ParamTensor { layer, kind: TensorKind::Bias, ..bias };
        *self.sizes.last_mut().unwrap() = units;
        self.unit_classes = unit_classes;
        Ok(())
    }

    pub fn snapshot(&self) -> NetworkSnapshot {
        NetworkSnapshot {
            layer_sizes: self.sizes.clone(),
            head_mode: self.head_mode,
            class_universe: self.class_universe,
            unit_classes: self.unit_classes.clone(),
            layers: (0..self.layer_count())
                .map(|l| LayerSnapshot {
                    weights: self.params.tensors[2 * l].values.clone(),
                    bias: self.params.tensors[2 * l + 1].values.clone(),
                })
                .collect(),
        }
    }

    pub fn from_snapshot(s: &NetworkSnapshot) -> Result<Self> {
        if s.layer_sizes.len() < 2 || s.layers.len() != s.layer_sizes.len() - 1 {
            return Err(Error::config("snapshot layer list does not match layer sizes"));
        }
        let mut tensors = Vec::new();
        for (l, layer) in s.layers.iter().enumerate() {
            let (fan_in, out) = (s.layer_sizes[l], s.layer_sizes[l + 1]);
            if layer.weights.len() != fan_in * out || layer.bias.len() != out {
                return Err(Error::config(format!("snapshot layer {l} has inconsistent array lengths")));
            }
            tensors.push(ParamTensor {
                layer: l,
                kind: TensorKind::Weight,
                rows: out,
                cols: fan_in,
                values: layer.weights.clone(),
            });
            tensors.push(ParamTensor {
                layer: l,
                kind: TensorKind::Bias,
                rows: out,
                cols: 1,
                values: layer.bias.clone(),
            });
        }
        if s.unit_classes.len() != *s.layer_sizes.last().unwrap() {
            return Err(Error::config("snapshot unit bindings do not match the output width"));
        }
        Ok(Self {
            sizes: s.layer_sizes.clone(),
            params: ParamSet::new(tensors),
            head_mode: s.head_mode,
            unit_classes: s.unit_classes.clone(),
            class_universe: s.class_universe,
            version: 0,
        })
    }
}

/// Portable network dump: layer sizes plus row-major weight arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub layer_sizes: Vec<usize>,
    pub head_mode: HeadMode,
    pub class_universe: usize,
    pub unit_classes: Vec<usize>,
    pub layers: Vec<LayerSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSnapshot {
    /// Row-major, one row per output unit.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}
