//! NC (new classes) protocols: class-disjoint batches trained in sequence,
//! evaluated after every batch, either with a single head (SIT) or with one
//! head per task and a task oracle at test time (MT).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Pattern};
use crate::diagnostics::{weight_change_aligned, ConfusionMatrix};
use crate::error::{Error, Result};
use crate::math::argmax;
use crate::network::{Network, NetworkSnapshot};
use crate::params::ParamTensor;
use crate::seed::{derive_seed, rng_from, stream};
use crate::strategies::{Learner, StrategySpec};
use crate::train::TrainPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Single incremental task: one head over every class, no task oracle.
    Sit,
    /// Multi-task: a separate head per batch, task identity known at test.
    Mt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestPolicy {
    /// Score the whole test set, including classes not seen yet.
    #[default]
    Fixed,
    /// Score only test patterns of classes seen so far.
    Expanding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default = "default_protocol")]
    pub protocol: Protocol,
    pub class_schedule: Vec<usize>,
    #[serde(default)]
    pub class_ordering_seed: u64,
    #[serde(default)]
    pub test_policy: TestPolicy,
}

fn default_protocol() -> Protocol {
    Protocol::Sit
}

impl ScenarioSpec {
    pub fn sit(class_schedule: Vec<usize>) -> Self {
        Self {
            protocol: Protocol::Sit,
            class_schedule,
            class_ordering_seed: 0,
            test_policy: TestPolicy::Fixed,
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.class_schedule.is_empty() || self.class_schedule.contains(&0) {
            return Err(Error::config("class_schedule needs at least one batch and no empty batches"));
        }
        let total: usize = self.class_schedule.iter().sum();
        if total > classes {
            return Err(Error::config(format!(
                "class_schedule covers {total} classes but the dataset has only {classes}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    /// 1-based position in the sequence.
    pub index: usize,
    pub classes: Vec<usize>,
    pub patterns: Vec<Pattern>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcSplit {
    pub class_universe: usize,
    pub batches: Vec<TrainingBatch>,
    /// Test patterns of every scheduled class.
    pub test: Vec<Pattern>,
}

/// Partitions the classes of `data` into batches following the schedule
/// under a seeded class permutation; patterns inside each batch are
/// shuffled from the same seed.
pub fn split_nc(data: &LabeledDataset, spec: &ScenarioSpec) -> Result<NcSplit> {
    spec.validate(data.classes)?;
    let mut order: Vec<usize> = (0..data.classes).collect();
    order.shuffle(&mut rng_from(derive_seed(spec.class_ordering_seed, stream::CLASS_ORDER)));
    let mut pattern_rng = rng_from(derive_seed(spec.class_ordering_seed, stream::PATTERN_ORDER));
    let mut batch_of = vec![None; data.classes];
    let mut batches = Vec::with_capacity(spec.class_schedule.len());
    let mut next = 0;
    for (i, &size) in spec.class_schedule.iter().enumerate() {
        let classes = order[next..next + size].to_vec();
        next += size;
        for &c in &classes {
            batch_of[c] = Some(i);
        }
        let mut patterns: Vec<Pattern> = data
            .train
            .iter()
            .filter(|p| batch_of[p.label] == Some(i))
            .cloned()
            .collect();
        patterns.shuffle(&mut pattern_rng);
        batches.push(TrainingBatch {
            index: i + 1,
            classes,
            patterns,
        });
    }
    let test = data.test.iter().filter(|p| batch_of[p.label].is_some()).cloned().collect();
    Ok(NcSplit {
        class_universe: data.classes,
        batches,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    /// `r[i][j]`: accuracy on the test classes of batch j after batch i
    /// (0-based here).
    pub r: Vec<Vec<f64>>,
    /// Overall accuracy after each batch.
    pub overall: Vec<f64>,
}

/// Class predicted for `x`: argmax over all output units.
pub fn predict(net: &Network, x: &[f64]) -> Result<usize> {
    let logits = net.logits(x)?;
    let unit = argmax(&logits).ok_or_else(|| Error::contract("network has no output units"))?;
    Ok(net.unit_classes()[unit])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// Prediction for every test pattern, in test-set order.
    pub predictions: Vec<usize>,
}

/// Scores `test`. Under the expanding policy only classes in `seen` count
/// towards accuracy and the confusion matrix; predictions are made for
/// every pattern either way. Accuracy is the confusion trace over its total.
pub fn evaluate(net: &Network, test: &[Pattern], policy: TestPolicy, seen: &[bool]) -> Result<Evaluation> {
    let mut confusion = ConfusionMatrix::new(net.class_universe());
    let mut predictions = Vec::with_capacity(test.len());
    for p in test {
        let pred = predict(net, &p.input)?;
        predictions.push(pred);
        if policy == TestPolicy::Fixed || seen.get(p.label).copied().unwrap_or(false) {
            confusion.record(p.label, pred)?;
        }
    }
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        confusion,
        predictions,
    })
}

/// `(1/(T−1))·Σ_{j<T} (R[T][j] − R[j][j])` over the last row of R.
pub fn backward_transfer(m: &AccuracyMatrix) -> Result<f64> {
    let t = m.r.len();
    if t < 2 {
        return Err(Error::Undefined(format!("backward transfer needs at least 2 batches, got {t}")));
    }
    if m.r.iter().any(|row| row.len() < t - 1) {
        return Err(Error::contract("accuracy matrix rows are too short"));
    }
    let last = &m.r[t - 1];
    Ok((0..t - 1).map(|j| last[j] - m.r[j][j]).sum::<f64>() / (t - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub strategy: String,
    pub protocol: Protocol,
    pub seed: u64,
    pub batch_classes: Vec<Vec<usize>>,
    pub matrix: AccuracyMatrix,
    pub confusions: Vec<ConfusionMatrix>,
    /// `weight_change[i][l]`: mean |Δθ| of layer l over batch i.
    pub weight_change: Vec<Vec<f64>>,
    pub train_loss: Vec<f64>,
    pub warnings: Vec<String>,
    pub bwt: Option<f64>,
    pub final_accuracy: Option<f64>,
    /// Set when the run stopped early; the fields above hold what was done.
    pub error: Option<String>,
    /// Inference network before training and after each batch.
    #[serde(skip)]
    pub snapshots: Vec<NetworkSnapshot>,
}

impl RunResults {
    fn new(spec: &StrategySpec, protocol: Protocol, seed: u64, split: &NcSplit) -> Self {
        Self {
            strategy: spec.kind().to_string(),
            protocol,
            seed,
            batch_classes: split.batches.iter().map(|b| b.classes.clone()).collect(),
            matrix: AccuracyMatrix::default(),
            confusions: Vec::new(),
            weight_change: Vec::new(),
            train_loss: Vec::new(),
            warnings: Vec::new(),
            bwt: None,
            final_accuracy: None,
            error: None,
            snapshots: Vec::new(),
        }
    }

    fn finish(&mut self) {
        self.final_accuracy = self.matrix.overall.last().copied();
        self.bwt = backward_transfer(&self.matrix).ok();
    }
}

/// A run that stopped on an error, with everything recorded up to then.
#[derive(Debug)]
pub struct RunFailure {
    pub partial: Box<RunResults>,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} run (seed {}) failed after {} batch(es): {}",
            self.partial.strategy,
            self.partial.seed,
            self.partial.matrix.r.len(),
            self.error
        )
    }
}

impl std::error::Error for RunFailure {}

/// Called after each batch with the batch index, the training network and
/// the learner.
pub type BatchObserver<'a> = dyn FnMut(usize, &Network, &Learner) + 'a;

fn fail(mut partial: RunResults, error: Error) -> RunFailure {
    partial.error = Some(error.to_string());
    partial.finish();
    RunFailure {
        partial: Box::new(partial),
        error,
    }
}

fn per_batch_accuracy(split: &NcSplit, batch_of: &[Option<usize>], predictions: &[usize]) -> Vec<f64> {
    let n = split.batches.len();
    let mut hit = vec![0usize; n];
    let mut total = vec![0usize; n];
    for (p, &pred) in split.test.iter().zip(predictions) {
        if let Some(b) = batch_of[p.label] {
            total[b] += 1;
            hit[b] += usize::from(pred == p.label);
        }
    }
    hit.iter()
        .zip(&total)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect()
}

fn batch_lookup(split: &NcSplit) -> Vec<Option<usize>> {
    let mut batch_of = vec![None; split.class_universe];
    for (i, b) in split.batches.iter().enumerate() {
        for &c in &b.classes {
            batch_of[c] = Some(i);
        }
    }
    batch_of
}

/// Trains `net` on the batches in order with one growing head, evaluating
/// after every batch.
pub fn run_sit(
    spec: &StrategySpec,
    mut net: Network,
    split: &NcSplit,
    policy: TestPolicy,
    plan: &TrainPlan,
    seed: u64,
    mut observer: Option<&mut BatchObserver<'_>>,
) -> std::result::Result<RunResults, RunFailure> {
    let mut results = RunResults::new(spec, Protocol::Sit, seed, split);
    let mut learner = match Learner::new(spec, &net, Protocol::Sit, seed) {
        Ok(l) => l,
        Err(e) => return Err(fail(results, e)),
    };
    let batch_of = batch_lookup(split);
    let mut seen = vec![false; split.class_universe];
    let mut prev = match learner.inference_network(&net) {
        Ok(n) => n.snapshot(),
        Err(e) => return Err(fail(results, e)),
    };
    results.snapshots.push(prev.clone());

    for batch in &split.batches {
        let step = (|| -> Result<_> {
            let stats = learner.run_batch(&mut net, batch, plan)?;
            let inference = learner.inference_network(&net)?;
            for &c in &batch.classes {
                seen[c] = true;
            }
            let eval = evaluate(&inference, &split.test, policy, &seen)?;
            let snapshot = inference.snapshot();
            let change = weight_change_aligned(&prev, &snapshot)?;
            Ok((stats, eval, snapshot, change))
        })();
        results.warnings.extend(learner.drain_warnings());
        let (stats, eval, snapshot, change) = match step {
            Ok(v) => v,
            Err(e) => return Err(fail(results, e)),
        };
        results.matrix.r.push(per_batch_accuracy(split, &batch_of, &eval.predictions));
        results.matrix.overall.push(eval.accuracy);
        results.confusions.push(eval.confusion);
        results.weight_change.push(change);
        results.train_loss.push(stats.final_loss().unwrap_or(f64::NAN));
        results.snapshots.push(snapshot.clone());
        prev = snapshot;
        if let Some(obs) = observer.as_mut() {
            obs(batch.index, &net, &learner);
        }
    }
    results.finish();
    Ok(results)
}

struct TaskHead {
    classes: Vec<usize>,
    weights: ParamTensor,
    bias: ParamTensor,
}

/// Accuracy of `net` (carrying the head of one task) on that task's test
/// patterns. A pattern whose class the head does not cover is a contract
/// violation.
fn evaluate_task(net: &Network, test: &[&Pattern], confusion: &mut ConfusionMatrix) -> Result<f64> {
    let mut hits = 0usize;
    for p in test {
        if net.unit_of_class(p.label).is_none() {
            return Err(Error::contract(format!(
                "test pattern of class {} evaluated against a head for classes {:?}",
                p.label,
                net.unit_classes()
            )));
        }
        let pred = predict(net, &p.input)?;
        confusion.record(p.label, pred)?;
        hits += usize::from(pred == p.label);
    }
    Ok(if test.is_empty() { 0.0 } else { hits as f64 / test.len() as f64 })
}

/// Trains one head per batch on a shared body. After batch i, each task
/// j ≤ i is scored with its own stored head against its own classes;
/// `overall[i]` is the mean over those tasks and `r[i][j]` is 0 for tasks
/// not trained yet.
pub fn run_mt(
    spec: &StrategySpec,
    mut net: Network,
    split: &NcSplit,
    plan: &TrainPlan,
    seed: u64,
    mut observer: Option<&mut BatchObserver<'_>>,
) -> std::result::Result<RunResults, RunFailure> {
    let mut results = RunResults::new(spec, Protocol::Mt, seed, split);
    let mut learner = match Learner::new(spec, &net, Protocol::Mt, seed) {
        Ok(l) => l,
        Err(e) => return Err(fail(results, e)),
    };
    let batch_of = batch_lookup(split);
    let task_tests: Vec<Vec<&Pattern>> = (0..split.batches.len())
        .map(|t| split.test.iter().filter(|p| batch_of[p.label] == Some(t)).collect())
        .collect();
    let mut heads: Vec<TaskHead> = Vec::new();
    let mut prev: Option<NetworkSnapshot> = None;

    for (t, batch) in split.batches.iter().enumerate() {
        let step = (|| -> Result<_> {
            learner.fresh_head(&mut net, &batch.classes)?;
            let before = learner.inference_network(&net)?.snapshot();
            let stats = learner.run_batch(&mut net, batch, plan)?;
            let inference = learner.inference_network(&net)?;
            heads.push(TaskHead {
                classes: inference.unit_classes().to_vec(),
                weights: inference.head_weights().clone(),
                bias: inference.head_bias().clone(),
            });
            let mut row = vec![0.0; split.batches.len()];
            let mut confusion = ConfusionMatrix::new(split.class_universe);
            let mut eval_net = inference.clone();
            for (j, head) in heads.iter().enumerate() {
                eval_net.replace_head(head.classes.clone(), head.weights.clone(), head.bias.clone())?;
                row[j] = evaluate_task(&eval_net, &task_tests[j], &mut confusion)?;
            }
            let snapshot = inference.snapshot();
            // Head layers of different tasks are unrelated; compare the
            // shared layers against the previous task and the head
            // against its own fresh initialization.
            let mut change = weight_change_aligned(prev.as_ref().unwrap_or(&before), &snapshot)?;
            let head_change = weight_change_aligned(&before, &snapshot)?;
            *change.last_mut().unwrap() = *head_change.last().unwrap();
            Ok((stats, row, confusion, snapshot, change))
        })();
        results.warnings.extend(learner.drain_warnings());
        let (stats, row, confusion, snapshot, change) = match step {
            Ok(v) => v,
            Err(e) => return Err(fail(results, e)),
        };
        results.matrix.overall.push(row[..=t].iter().sum::<f64>() / (t + 1) as f64);
        results.matrix.r.push(row);
        results.confusions.push(confusion);
        results.weight_change.push(change);
        results.train_loss.push(stats.final_loss().unwrap_or(f64::NAN));
        results.snapshots.push(snapshot.clone());
        prev = Some(snapshot);
        if let Some(obs) = observer.as_mut() {
            obs(batch.index, &net, &learner);
        }
    }
    results.finish();
    Ok(results)
}
