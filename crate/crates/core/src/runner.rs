//! Runs a resolved experiment: every strategy for every seed, then the
//! reports.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::{DatasetConfig, ResolvedConfig, ResolvedStrategy};
use crate::data::{gen_synthetic, load_csv, load_idx, LabeledDataset, SyntheticSpec};
use crate::diagnostics::{emit_comparison, emit_reports, ComparisonRow, ReportMeta, Summary};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::scenario::{run_mt, run_sit, split_nc, NcSplit, Protocol, RunResults, ScenarioSpec};
use crate::seed::{derive_seed, stream};
use crate::train::TrainPlan;

/// Process exit status for each way an experiment can end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    /// Bad config or unreadable input data.
    Input = 1,
    /// A run failed during training (divergence, numeric trouble).
    Training = 2,
    /// Reports could not be written.
    Output = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug)]
pub struct RunnerError {
    pub status: ExitStatus,
    pub error: Error,
}

impl std::fmt::Display for RunnerError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunnerError {}

fn input(error: Error) -> RunnerError {
    RunnerError {
        status: ExitStatus::Input,
        error,
    }
}

fn output(error: Error) -> RunnerError {
    RunnerError {
        status: ExitStatus::Output,
        error,
    }
}

pub fn load_dataset(cfg: &DatasetConfig) -> Result<LabeledDataset> {
    match cfg {
        &DatasetConfig::Synthetic {
            classes,
            dim,
            train_per_class,
            test_per_class,
            spread,
            seed,
        } => gen_synthetic(&SyntheticSpec {
            classes,
            dim,
            train_per_class,
            test_per_class,
            spread,
            seed,
        }),
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            if train.dim != test.dim {
                return Err(Error::config(format!(
                    "train images have {} pixels but test images have {}",
                    train.dim, test.dim
                )));
            }
            LabeledDataset::new(train.dim, train.classes.max(test.classes), train.patterns, test.patterns)
        }
        DatasetConfig::Csv {
            path,
            label_column,
            test_fraction,
            split_seed,
        } => LabeledDataset::split(load_csv(path, label_column)?, *test_fraction, *split_seed),
    }
}

/// Settings that only affect how the experiment is executed.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the config's base seed.
    pub seed_override: Option<u64>,
    /// Replaces the config's output directory.
    pub out_dir: Option<PathBuf>,
    /// Worker threads; `None` reads `SITFORGE_THREADS`, then the core count.
    pub threads: Option<usize>,
}

#[derive(Debug)]
pub struct StrategyOutcome {
    pub name: String,
    pub runs: Vec<RunResults>,
    pub summary: Summary,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub strategies: Vec<StrategyOutcome>,
    /// One message per failed run.
    pub failures: Vec<String>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentOutcome {
    pub fn status(&self) -> ExitStatus {
        if self.failures.is_empty() {
            ExitStatus::Ok
        } else {
            ExitStatus::Training
        }
    }
}

fn thread_count(requested: Option<usize>, jobs: usize) -> usize {
    let env = || std::env::var("SITFORGE_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok());
    let available = || std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    requested.or_else(env).unwrap_or_else(available).clamp(1, jobs.max(1))
}

/// Everything one run needs before training starts.
pub struct PreparedRun {
    pub scenario: ScenarioSpec,
    pub split: NcSplit,
    pub network: Network,
    pub plan: TrainPlan,
}

/// Builds the split, the initial network and the train plan for one run.
/// Seed `seed` drives the class order, the network initialization, the
/// shuffles and (through the learner) the head initializations.
pub fn prepare_run(cfg: &ResolvedConfig, data: &LabeledDataset, strategy: &ResolvedStrategy, seed: u64) -> Result<PreparedRun> {
    let scenario = ScenarioSpec {
        protocol: cfg.scenario.protocol,
        class_schedule: cfg.scenario.class_schedule.clone(),
        class_ordering_seed: seed,
        test_policy: cfg.scenario.test_policy,
    };
    let split = split_nc(data, &scenario)?;
    let network = cfg.network.build(
        data.dim,
        split.class_universe,
        strategy.spec.head_mode,
        strategy.spec.output_init,
        derive_seed(seed, stream::NETWORK_INIT),
    )?;
    let mut plan = strategy.plan.clone();
    plan.shuffle_seed = seed;
    Ok(PreparedRun {
        scenario,
        split,
        network,
        plan,
    })
}

/// One run of one strategy. A failed run comes back as `Err` holding the
/// partial results.
pub fn run_single(
    cfg: &ResolvedConfig,
    data: &LabeledDataset,
    strategy: &ResolvedStrategy,
    seed: u64,
) -> std::result::Result<RunResults, RunResults> {
    let run = match prepare_run(cfg, data, strategy, seed) {
        Ok(r) => r,
        Err(e) => {
            let mut r = empty_results(strategy, cfg.scenario.protocol, seed);
            r.error = Some(e.to_string());
            return Err(r);
        }
    };
    let PreparedRun {
        scenario,
        split,
        network,
        plan,
    } = run;
    let outcome = match scenario.protocol {
        Protocol::Sit => run_sit(&strategy.spec, network, &split, scenario.test_policy, &plan, seed, None),
        Protocol::Mt => run_mt(&strategy.spec, network, &split, &plan, seed, None),
    };
    outcome.map_err(|f| *f.partial)
}

fn empty_results(strategy: &ResolvedStrategy, protocol: Protocol, seed: u64) -> RunResults {
    RunResults {
        strategy: strategy.spec.kind().to_string(),
        protocol,
        seed,
        batch_classes: Vec::new(),
        matrix: Default::default(),
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

fn meta(cfg: &ResolvedConfig, strategy: &ResolvedStrategy) -> ReportMeta {
    ReportMeta {
        name: if cfg.strategies.len() == 1 {
            cfg.name.clone()
        } else {
            format!("{}/{}", cfg.name, strategy.name)
        },
        strategy: strategy.spec.kind().to_string(),
        protocol: cfg.scenario.protocol,
        hyperparameters: serde_json::json!({
            "strategy": strategy.spec,
            "train": strategy.plan,
            "network": cfg.network,
            "class_schedule": cfg.scenario.class_schedule,
            "test_policy": cfg.scenario.test_policy,
        }),
    }
}

/// Loads the data, runs every (strategy, seed) job and writes the reports
/// when an output directory is set. Failed runs are reported with their
/// partial results; the returned outcome lists them.
pub fn run_experiment(cfg: &ResolvedConfig, opts: &RunOptions) -> std::result::Result<ExperimentOutcome, RunnerError> {
    let data = load_dataset(&cfg.dataset).map_err(input)?;
    let base_seed = opts.seed_override.unwrap_or(cfg.seed);
    let scenario = ScenarioSpec {
        protocol: cfg.scenario.protocol,
        class_schedule: cfg.scenario.class_schedule.clone(),
        class_ordering_seed: base_seed,
        test_policy: cfg.scenario.test_policy,
    };
    scenario.validate(data.classes).map_err(input)?;

    let jobs: Vec<(usize, u64)> = (0..cfg.strategies.len())
        .flat_map(|s| (0..cfg.runs as u64).map(move |k| (s, base_seed.wrapping_add(k))))
        .collect();
    let slots: Vec<Mutex<Option<std::result::Result<RunResults, RunResults>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let threads = thread_count(opts.threads, jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(s, seed)) = jobs.get(j) else { break };
                let strategy = &cfg.strategies[s];
                log::info!("{} seed {seed}: start", strategy.name);
                let r = run_single(cfg, &data, strategy, seed);
                match &r {
                    Ok(run) => log::info!(
                        "{} seed {seed}: final accuracy {:.4}",
                        strategy.name,
                        run.final_accuracy.unwrap_or(f64::NAN)
                    ),
                    Err(run) => log::error!(
                        "{} seed {seed}: {}",
                        strategy.name,
                        run.error.as_deref().unwrap_or("failed")
                    ),
                }
                *slots[j].lock().unwrap() = Some(r);
            });
        }
    });

    let mut results = slots.into_iter().map(|m| m.into_inner().unwrap().expect("every job ran"));
    let out_dir = opts.out_dir.clone().or_else(|| cfg.out_dir.clone());
    let mut failures = Vec::new();
    let mut strategies = Vec::new();
    for strategy in &cfg.strategies {
        let mut runs = Vec::with_capacity(cfg.runs);
        for _ in 0..cfg.runs {
            match results.next().unwrap() {
                Ok(r) => runs.push(r),
                Err(r) => {
                    failures.push(format!(
                        "{} (seed {}): {}",
                        strategy.name,
                        r.seed,
                        r.error.as_deref().unwrap_or("failed")
                    ));
                    runs.push(r);
                }
            }
        }
        for r in &runs {
            for w in &r.warnings {
                log::warn!("{} seed {}: {w}", strategy.name, r.seed);
            }
        }
        let meta = meta(cfg, strategy);
        let summary = match &out_dir {
            Some(dir) => {
                let dir = if cfg.strategies.len() == 1 {
                    dir.clone()
                } else {
                    dir.join(&strategy.name)
                };
                emit_reports(&runs, &meta, &dir).map_err(output)?
            }
            None => Summary::of(&runs, &meta),
        };
        strategies.push(StrategyOutcome {
            name: strategy.name.clone(),
            runs,
            summary,
        });
    }
    if let (Some(dir), true) = (&out_dir, cfg.strategies.len() > 1) {
        let rows: Vec<ComparisonRow> = strategies
            .iter()
            .map(|s| ComparisonRow {
                name: s.name.clone(),
                final_accuracy: s.summary.final_accuracy,
                final_accuracy_std: s.summary.final_accuracy_std,
                bwt: s.summary.bwt,
                accuracy_curve: s.summary.accuracy_curve.clone(),
            })
            .collect();
        emit_comparison(&rows, dir).map_err(output)?;
    }
    Ok(ExperimentOutcome {
        strategies,
        failures,
        out_dir,
    })
}

/// Regenerates the reports of a finished experiment from its persisted
/// results. A comparison directory (one subdirectory per strategy) gets
/// every strategy redone plus the comparison files.
pub fn regenerate_reports(from: &Path, out: &Path) -> std::result::Result<Vec<Summary>, RunnerError> {
    if let Ok((meta, runs)) = crate::diagnostics::load_results(from) {
        return Ok(vec![emit_reports(&runs, &meta, out).map_err(output)?]);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(from)
        .map_err(|e| input(Error::io(from, e)))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    // Keep the row order of the original comparison when there is one.
    let order: Vec<String> = std::fs::read_to_string(from.join("comparison.csv"))
        .map(|s| s.lines().skip(1).filter_map(|l| l.split(',').next()).map(str::to_string).collect())
        .unwrap_or_default();
    let rank = |p: &PathBuf| {
        let name = p.file_name().unwrap().to_string_lossy();
        order.iter().position(|n| *n == name).unwrap_or(usize::MAX)
    };
    subdirs.sort_by(|a, b| rank(a).cmp(&rank(b)).then_with(|| a.cmp(b)));
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for dir in subdirs {
        let Ok((meta, runs)) = crate::diagnostics::load_results(&dir) else { continue };
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let summary = emit_reports(&runs, &meta, &out.join(&name)).map_err(output)?;
        rows.push(ComparisonRow {
            name,
            final_accuracy: summary.final_accuracy,
            final_accuracy_std: summary.final_accuracy_std,
            bwt: summary.bwt,
            accuracy_curve: summary.accuracy_curve.clone(),
        });
        summaries.push(summary);
    }
    if summaries.is_empty() {
        return Err(input(Error::config(format!("{}: no persisted results found", from.display()))));
    }
    emit_comparison(&rows, out).map_err(output)?;
    Ok(summaries)
}
