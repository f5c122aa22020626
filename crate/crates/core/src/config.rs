//! Experiment configuration: JSON in, fully validated settings out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::network::{HeadMode, NetworkSpec, OutputInit};
use crate::scenario::{Protocol, TestPolicy};
use crate::strategies::{
    AvgScope, FisherGranularity, LinearMap, StrategyKind, StrategyParams, StrategySpec, DEFAULT_MAX_F, DEFAULT_XI,
};
use crate::train::TrainPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        split_seed: u64,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

impl DatasetConfig {
    pub fn synthetic(spec: &SyntheticSpec) -> Self {
        DatasetConfig::Synthetic {
            classes: spec.classes,
            dim: spec.dim,
            train_per_class: spec.train_per_class,
            test_per_class: spec.test_per_class,
            spread: spec.spread,
            seed: spec.seed,
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetConfig::Synthetic { .. } => {}
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
            DatasetConfig::Csv { path, .. } => fix(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_protocol")]
    pub protocol: Protocol,
    pub class_schedule: Vec<usize>,
    #[serde(default)]
    pub test_policy: TestPolicy,
}

fn default_protocol() -> Protocol {
    Protocol::Sit
}

/// Training settings; unset fields fall back to the experiment-level
/// values and then to the built-in defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_first_batch: Option<usize>,
    pub epochs_later_batches: Option<usize>,
    pub lr_first: Option<f64>,
    pub lr_later: Option<f64>,
    pub minibatch_size: Option<usize>,
}

impl TrainConfig {
    fn over(&self, base: &TrainPlan) -> TrainPlan {
        TrainPlan {
            epochs_first_batch: self.epochs_first_batch.unwrap_or(base.epochs_first_batch),
            epochs_later_batches: self.epochs_later_batches.unwrap_or(base.epochs_later_batches),
            lr_first: self.lr_first.unwrap_or(base.lr_first),
            lr_later: self.lr_later.unwrap_or(base.lr_later),
            minibatch_size: self.minibatch_size.unwrap_or(base.minibatch_size),
            shuffle_seed: base.shuffle_seed,
        }
    }
}

/// A strategy entry as written in the config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub id: Option<StrategyKind>,
    pub name: Option<String>,
    pub lambda: Option<f64>,
    pub max_f: Option<f64>,
    pub xi: Option<f64>,
    /// Batch weights `[w_first, w_later]`.
    pub w: Option<[f64; 2]>,
    pub map: Option<LinearMap>,
    pub fisher: Option<FisherGranularity>,
    pub avg_scope: Option<AvgScope>,
    pub freeze_shared_after_first: Option<bool>,
    pub head: Option<HeadMode>,
    pub output_init: Option<OutputInit>,
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub dataset: DatasetConfig,
    pub scenario: ScenarioConfig,
    pub strategy: Option<StrategyConfig>,
    pub strategies: Option<Vec<StrategyConfig>>,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

fn default_runs() -> usize {
    3
}

/// One strategy ready to run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedStrategy {
    pub name: String,
    pub spec: StrategySpec,
    pub plan: TrainPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    pub scenario: ScenarioConfig,
    pub strategies: Vec<ResolvedStrategy>,
    pub network: NetworkSpec,
    pub runs: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

fn reject_unused(kind: StrategyKind, present: &[(&str, bool)]) -> Result<()> {
    match present.iter().find(|(_, set)| *set) {
        Some((field, _)) => Err(Error::config(format!("field `{field}` does not apply to strategy {kind}"))),
        None => Ok(()),
    }
}

fn require(kind: StrategyKind, field: &str, v: Option<f64>) -> Result<f64> {
    v.ok_or_else(|| Error::config(format!("strategy {kind} requires field `{field}`")))
}

impl StrategyConfig {
    pub fn resolve(&self, base_plan: &TrainPlan, protocol: Protocol) -> Result<ResolvedStrategy> {
        let kind = self.id.ok_or_else(|| Error::config("strategy entry requires field `id`"))?;
        let unused = |names: &[&str]| -> Result<()> {
            let all = [
                ("lambda", self.lambda.is_some()),
                ("max_f", self.max_f.is_some()),
                ("xi", self.xi.is_some()),
                ("w", self.w.is_some()),
                ("map", self.map.is_some()),
                ("fisher", self.fisher.is_some()),
                ("avg_scope", self.avg_scope.is_some()),
                ("freeze_shared_after_first", self.freeze_shared_after_first.is_some()),
            ];
            let extra: Vec<(&str, bool)> = all.into_iter().filter(|(n, _)| !names.contains(n)).collect();
            reject_unused(kind, &extra)
        };
        let params = match kind {
            StrategyKind::Naive => {
                unused(&[])?;
                StrategyParams::Naive
            }
            StrategyKind::Cumulative => {
                unused(&[])?;
                StrategyParams::Cumulative
            }
            StrategyKind::Lwf => {
                unused(&["map"])?;
                StrategyParams::Lwf {
                    map: self.map.unwrap_or_default(),
                }
            }
            StrategyKind::Ewc => {
                unused(&["lambda", "max_f", "fisher"])?;
                StrategyParams::Ewc {
                    lambda: require(kind, "lambda", self.lambda)?,
                    max_f: self.max_f.unwrap_or(DEFAULT_MAX_F),
                    fisher: self.fisher.unwrap_or(FisherGranularity::PerMinibatch),
                }
            }
            StrategyKind::Si => {
                unused(&["lambda", "max_f", "xi", "w"])?;
                StrategyParams::Si {
                    lambda: require(kind, "lambda", self.lambda)?,
                    max_f: self.max_f.unwrap_or(DEFAULT_MAX_F),
                    xi: self.xi.unwrap_or(DEFAULT_XI),
                    w: self.w.unwrap_or([0.00001, 0.005]),
                }
            }
            StrategyKind::Cwr => {
                unused(&["w"])?;
                StrategyParams::Cwr {
                    w: self.w.unwrap_or([1.0, 1.0]),
                }
            }
            StrategyKind::CwrPlus => {
                unused(&["avg_scope"])?;
                StrategyParams::CwrPlus {
                    avg_scope: self.avg_scope.unwrap_or_default(),
                }
            }
            StrategyKind::Ar1 => {
                unused(&["lambda", "max_f", "xi", "w", "avg_scope", "freeze_shared_after_first"])?;
                StrategyParams::Ar1 {
                    lambda: require(kind, "lambda", self.lambda)?,
                    max_f: self.max_f.unwrap_or(DEFAULT_MAX_F),
                    xi: self.xi.unwrap_or(DEFAULT_XI),
                    w: self.w.unwrap_or([0.0015, 0.0015]),
                    freeze_shared_after_first: self.freeze_shared_after_first.unwrap_or(false),
                    avg_scope: self.avg_scope.unwrap_or_default(),
                }
            }
        };
        let mut spec = StrategySpec::with_params(params);
        if let Some(h) = self.head {
            spec.head_mode = h;
        }
        if let Some(o) = self.output_init {
            spec.output_init = o;
        }
        let plan = self.train.clone().unwrap_or_default().over(base_plan);
        plan.validate()?;
        spec.validate(&plan, protocol)?;
        Ok(ResolvedStrategy {
            name: self.name.clone().unwrap_or_else(|| kind.to_string()),
            spec,
            plan,
        })
    }
}

impl ExperimentConfig {
    /// Applies defaults and checks every field. Relative dataset paths are
    /// taken from `base_dir`.
    pub fn resolve(mut self, base_dir: &Path) -> Result<ResolvedConfig> {
        self.dataset.resolve_paths(base_dir);
        self.network.validate()?;
        if self.runs == 0 {
            return Err(Error::config("runs must be ≥ 1"));
        }
        let sc = &self.scenario;
        if sc.class_schedule.is_empty() || sc.class_schedule.contains(&0) {
            return Err(Error::config("scenario.class_schedule needs at least one batch and no empty batches"));
        }
        if let DatasetConfig::Synthetic { classes, .. } = self.dataset {
            let total: usize = sc.class_schedule.iter().sum();
            if total > classes {
                return Err(Error::config(format!(
                    "class_schedule covers {total} classes but the dataset has only {classes}"
                )));
            }
        }
        if let DatasetConfig::Csv { test_fraction, .. } = self.dataset {
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(Error::config(format!("dataset.test_fraction must lie in (0,1), got {test_fraction}")));
            }
        }
        let entries = match (self.strategy, self.strategies) {
            (Some(s), None) => vec![s],
            (None, Some(list)) if !list.is_empty() => list,
            (None, Some(_)) => return Err(Error::config("`strategies` must not be empty")),
            (None, None) => return Err(Error::config("missing required field `strategy` (or `strategies`)")),
            (Some(_), Some(_)) => return Err(Error::config("give either `strategy` or `strategies`, not both")),
        };
        let base_plan = self.train.over(&TrainPlan::default());
        let strategies = entries
            .iter()
            .map(|e| e.resolve(&base_plan, sc.protocol))
            .collect::<Result<Vec<_>>>()?;
        let mut names: Vec<&str> = strategies.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config(format!(
                "strategy name {:?} is used twice; set `name` to tell them apart",
                w[0]
            )));
        }
        let name = self.name.unwrap_or_else(|| {
            if strategies.len() == 1 {
                strategies[0].name.clone()
            } else {
                "comparison".to_string()
            }
        });
        Ok(ResolvedConfig {
            name,
            dataset: self.dataset,
            scenario: self.scenario,
            strategies,
            network: self.network,
            runs: self.runs,
            seed: self.seed,
            out_dir: self.out_dir.map(|p| if p.is_relative() { base_dir.join(p) } else { p }),
        })
    }
}

/// Parses and validates a JSON config.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ResolvedConfig> {
    let raw: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    raw.resolve(base_dir)
}

/// Reads a config file, or standard input for `-`.
pub fn load_config(path: &Path) -> Result<ResolvedConfig> {
    if path == Path::new("-") {
        let mut text = String::new();
        std::io::Read::read_to_string(&mut std::io::stdin(), &mut text).map_err(|e| Error::io("<stdin>", e))?;
        return parse_config(&text, Path::new("."));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    parse_config(&text, base)
}
