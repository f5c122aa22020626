//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sitforge::config::{load_config, ResolvedConfig, ResolvedStrategy};
use sitforge::data::{gen_synthetic, Pattern, SyntheticSpec};
use sitforge::math::{cross_entropy_soft, softmax, SoftTarget};
use sitforge::network::{HeadMode, InitPolicy, Network};
use sitforge::params::ParamSet;
use sitforge::runner::{load_dataset, prepare_run, run_experiment, ExperimentOutcome, RunOptions};
use sitforge::scenario::{backward_transfer, run_sit, split_nc, AccuracyMatrix, Protocol, RunResults, ScenarioSpec, TestPolicy};
use sitforge::strategies::{
    cwrplus_consolidate, ewc_fisher_diagonal, lwf_fuse, lwf_lambda, si_batch_importance, si_observe_step, AvgScope,
    FisherGranularity, HeadState, Learner, LinearMap, SiTrajectory, StrategyKind, StrategySpec,
};
use sitforge::train::{train_batch, TrainHooks, TrainPlan};

type Outcome = Result<String, String>;

fn preset_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic-comparison.json")
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let t = started.elapsed();
    if t > limit {
        Err(format!("took {t:?}, limit {limit:?}"))
    } else {
        Ok(())
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

fn c1_fused_gradient() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let width = rng.random_range(2..12);
        let y = softmax(&gaussian_vec(&mut rng, width, 3.0)).map_err(|e| e.to_string())?;
        let y_lwf = softmax(&gaussian_vec(&mut rng, width, 3.0)).map_err(|e| e.to_string())?;
        let mut one_hot = vec![0.0; width];
        one_hot[rng.random_range(0..width)] = 1.0;
        let lambda: f64 = rng.random();
        let t = lwf_fuse(&one_hot, &y_lwf, lambda).map_err(|e| e.to_string())?;
        let (_, grad) = cross_entropy_soft(&y, &t).map_err(|e| e.to_string())?;
        for k in 0..width {
            let expected = (1.0 - lambda) * (y[k] - one_hot[k]) + lambda * (y[k] - y_lwf[k]);
            worst = worst.max((grad[k] - expected).abs());
        }
    }
    check(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    within(Duration::from_secs(1), t0)?;
    Ok(format!("max deviation {worst:.1e} over 1000 triples"))
}

fn c2_lambda_schedule() -> Outcome {
    let counts = [10, 5, 5, 5, 5, 5, 5, 5, 5];
    let mut got = Vec::new();
    for i in 1..=counts.len() {
        let (l, warn) = lwf_lambda(i, &counts, &LinearMap::IDENTITY).map_err(|e| e.to_string())?;
        check(warn.is_none(), || format!("unexpected clamp at batch {i}"))?;
        got.push(l);
    }
    let expected: Vec<f64> = std::iter::once(0.0).chain((2..=9).map(|k| k as f64 / (k + 1) as f64)).collect();
    for (i, (g, e)) in got.iter().zip(&expected).enumerate() {
        check((g - e).abs() <= 1e-15, || format!("λ_{} = {g}, expected {e}", i + 1))?;
    }
    Ok("0, 2/3, 3/4, …, 9/10".to_string())
}

/// Dense ReLU net evaluated with plain nested loops; independent of the
/// library's backprop.
struct OracleNet {
    layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
}

impl OracleNet {
    /// Gradient of the one-hot cross-entropy, flattened as
    /// `[W_0 rows, b_0, W_1 rows, b_1, …]`.
    fn gradient(&self, x: &[f64], label: usize) -> Vec<f64> {
        let mut acts = vec![x.to_vec()];
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let prev = acts.last().unwrap();
            let mut z: Vec<f64> = w.iter().zip(b).map(|(row, bi)| row.iter().zip(prev).map(|(a, c)| a * c).sum::<f64>() + bi).collect();
            if l + 1 < self.layers.len() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        let logits = acts.last().unwrap();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let mut delta: Vec<f64> = e.iter().enumerate().map(|(k, v)| v / s - if k == label { 1.0 } else { 0.0 }).collect();
        let mut per_layer = Vec::new();
        for l in (0..self.layers.len()).rev() {
            let (w, _) = &self.layers[l];
            let input = &acts[l];
            let gw: Vec<f64> = delta.iter().flat_map(|d| input.iter().map(move |a| d * a)).collect();
            per_layer.push((gw, delta.clone()));
            if l > 0 {
                let mut back = vec![0.0; input.len()];
                for (row, d) in w.iter().zip(&delta) {
                    for (bk, wk) in back.iter_mut().zip(row) {
                        *bk += wk * d;
                    }
                }
                for (bk, a) in back.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *bk = 0.0;
                    }
                }
                delta = back;
            }
        }
        per_layer.reverse();
        per_layer.into_iter().flat_map(|(gw, gb)| gw.into_iter().chain(gb)).collect()
    }
}

fn random_layers(rng: &mut ChaCha8Rng, sizes: &[usize], std: f64) -> Vec<(Vec<Vec<f64>>, Vec<f64>)> {
    sizes
        .windows(2)
        .map(|w| {
            let rows = (0..w[1]).map(|_| gaussian_vec(rng, w[0], std)).collect();
            (rows, gaussian_vec(rng, w[1], std))
        })
        .collect()
}

fn c3_fisher_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sizes = [3, 4, 3, 2];
    let layers = random_layers(&mut rng, &sizes, 0.8);
    let oracle = OracleNet { layers: layers.clone() };
    let net = Network::from_weights(3, layers).map_err(|e| e.to_string())?;
    let params = net.params().values().count();
    check(params <= 50, || format!("{params} parameters"))?;
    let patterns: Vec<Pattern> = (0..8)
        .map(|i| Pattern {
            input: gaussian_vec(&mut rng, 3, 1.0),
            label: i % 2,
        })
        .collect();
    let fisher = ewc_fisher_diagonal(&net, &patterns, FisherGranularity::PerPattern, 1, net.params().tensors.len())
        .map_err(|e| e.to_string())?;
    let grads: Vec<Vec<f64>> = patterns.iter().map(|p| oracle.gradient(&p.input, p.label)).collect();
    let n = grads.len() as f64;
    let mut worst = 0.0f64;
    for (k, f) in fisher.values().enumerate() {
        let mean = grads.iter().map(|g| g[k]).sum::<f64>() / n;
        let var = grads.iter().map(|g| (g[k] - mean).powi(2)).sum::<f64>() / n;
        worst = worst.max((f - var).abs());
    }
    check(worst <= 1e-10, || format!("max deviation {worst:e}"))?;
    within(Duration::from_secs(1), t0)?;
    Ok(format!("{params} parameters, max deviation {worst:.1e}"))
}

struct LoggingSi {
    traj: SiTrajectory,
    log: Vec<(ParamSet, ParamSet)>,
}

impl TrainHooks for LoggingSi {
    fn observe_step(&mut self, delta: &ParamSet, gradient: &ParamSet) -> sitforge::Result<()> {
        self.log.push((delta.clone(), gradient.clone()));
        si_observe_step(&mut self.traj, delta, gradient)
    }
}

fn small_dataset(classes: usize, seed: u64) -> sitforge::data::LabeledDataset {
    gen_synthetic(&SyntheticSpec {
        classes,
        dim: 8,
        train_per_class: 20,
        test_per_class: 5,
        spread: 0.5,
        seed,
    })
    .unwrap()
}

fn c4_si_replay() -> Outcome {
    let t0 = Instant::now();
    let data = small_dataset(3, 4);
    let mut net = Network::init(&[8, 12, 6, 3], &InitPolicy { hidden_std: 0.3, ..Default::default() }, 4).map_err(|e| e.to_string())?;
    let theta_start = net.params().clone();
    let mut hooks = LoggingSi {
        traj: SiTrajectory::start(theta_start.clone(), 1e-7).map_err(|e| e.to_string())?,
        log: Vec::new(),
    };
    let plan = TrainPlan {
        epochs_first_batch: 3,
        lr_first: 0.05,
        minibatch_size: 8,
        ..Default::default()
    };
    train_batch(&mut net, &data.train, 1, &plan, &mut hooks, false).map_err(|e| e.to_string())?;
    let importance = si_batch_importance(&hooks.traj, net.params()).map_err(|e| e.to_string())?;

    let start: Vec<f64> = theta_start.values().collect();
    let end: Vec<f64> = net.params().values().collect();
    let mut sum = vec![0.0; start.len()];
    for (delta, grad) in &hooks.log {
        for ((s, d), g) in sum.iter_mut().zip(delta.values()).zip(grad.values()) {
            *s += -d * g;
        }
    }
    let replay: Vec<f64> = sum
        .iter()
        .zip(start.iter().zip(&end))
        .map(|(s, (a, b))| s / ((b - a) * (b - a) + 1e-7))
        .collect();
    let mismatches = importance.values().zip(&replay).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    check(mismatches == 0, || format!("{mismatches} entries differ"))?;
    within(Duration::from_secs(1), t0)?;
    Ok(format!("{} steps, {} entries bit-identical", hooks.log.len(), replay.len()))
}

fn c5_clipping() -> Outcome {
    let data = gen_synthetic(&SyntheticSpec {
        classes: 50,
        dim: 16,
        train_per_class: 20,
        test_per_class: 4,
        spread: 0.5,
        seed: 5,
    })
    .map_err(|e| e.to_string())?;
    let scenario = ScenarioSpec {
        class_schedule: std::iter::once(10).chain(std::iter::repeat_n(5, 8)).collect(),
        ..ScenarioSpec::sit(vec![])
    };
    let split = split_nc(&data, &scenario).map_err(|e| e.to_string())?;
    let plan = TrainPlan {
        epochs_first_batch: 2,
        epochs_later_batches: 2,
        lr_first: 0.05,
        lr_later: 0.01,
        minibatch_size: 16,
        shuffle_seed: 5,
    };
    let mut notes = Vec::new();
    for spec in [StrategySpec::ewc(100.0), StrategySpec::si(100.0)] {
        let net = Network::init_with_head(&[16, 40, 20], 50, HeadMode::Maximal, &InitPolicy { hidden_std: 0.1, ..Default::default() }, 5)
            .map_err(|e| e.to_string())?;
        let mut maxima = Vec::new();
        let mut observer = |_: usize, _: &Network, learner: &Learner| {
            maxima.push(learner.strategy().importance_state().map(|s| s.max_normalized()));
        };
        run_sit(&spec, net, &split, TestPolicy::Fixed, &plan, 5, Some(&mut observer)).map_err(|e| e.to_string())?;
        let kind = spec.kind();
        check(maxima.len() == 9, || format!("{kind}: {} consolidations", maxima.len()))?;
        let peak = maxima.iter().map(|m| m.unwrap_or(f64::NAN)).fold(0.0f64, f64::max);
        check(maxima.iter().all(|m| matches!(m, Some(v) if *v <= 1e-3)), || format!("{kind}: maxima {maxima:?}"))?;
        notes.push(format!("{kind} peak {peak:.2e}"));
    }
    Ok(notes.join(", "))
}

fn param_mut(net: &mut Network, mut k: usize) -> &mut f64 {
    for t in net.params_mut().tensors.iter_mut() {
        if k < t.values.len() {
            return &mut t.values[k];
        }
        k -= t.values.len();
    }
    panic!("parameter index out of range")
}

fn ce_loss(net: &Network, x: &[f64], label: usize) -> f64 {
    let p = softmax(&net.logits(x).unwrap()).unwrap();
    -p[label].ln()
}

fn c6_finite_differences() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..20 {
        let sizes = [rng.random_range(2..6), rng.random_range(3..8), rng.random_range(3..8), rng.random_range(2..5)];
        let mut net = Network::from_weights(sizes[0], random_layers(&mut rng, &sizes, 0.7)).map_err(|e| e.to_string())?;
        let x = gaussian_vec(&mut rng, sizes[0], 1.0);
        let label = rng.random_range(0..sizes[3]);
        let (logits, cache) = net.forward(&x).map_err(|e| e.to_string())?;
        let (_, dl) = cross_entropy_soft(&softmax(&logits).unwrap(), &SoftTarget::one_hot(sizes[3], label).unwrap()).unwrap();
        let grad: Vec<f64> = net.backward(&cache, &dl).map_err(|e| e.to_string())?.values().collect();
        for (k, &g) in grad.iter().enumerate() {
            let orig = net.params().values().nth(k).unwrap();
            let set = |net: &mut Network, v: f64| *param_mut(net, k) = v;
            set(&mut net, orig + h);
            let up = ce_loss(&net, &x, label);
            set(&mut net, orig - h);
            let down = ce_loss(&net, &x, label);
            set(&mut net, orig);
            let fd = (up - down) / (2.0 * h);
            let scale = g.abs().max(fd.abs());
            // Entries below 1e-6 are compared absolutely: their relative
            // error is dominated by rounding in the difference quotient.
            let err = if scale < 1e-6 { (g - fd).abs() / 1e-6 } else { (g - fd).abs() / scale };
            worst = worst.max(err);
            checked += 1;
        }
    }
    check(worst <= 1e-5, || format!("worst relative error {worst:e}"))?;
    within(Duration::from_secs(10), t0)?;
    Ok(format!("{checked} entries, worst relative error {worst:.1e}"))
}

fn c7_zero_init() -> Outcome {
    let mut net = Network::init_with_head(&[4, 6, 5], 3, HeadMode::Maximal, &InitPolicy::zero_output(0.5), 7).map_err(|e| e.to_string())?;
    check(net.head_weights().values.iter().all(|&w| w == 0.0), || "output layer not zero-initialized".into())?;
    let x = vec![0.9, -0.3, 0.4, 0.7];
    let pattern = Pattern { input: x.clone(), label: 1 };
    let hidden = net.penultimate(&x).map_err(|e| e.to_string())?;
    check(hidden.iter().any(|&a| a != 0.0), || "all hidden activations are zero".into())?;
    let plan = TrainPlan {
        epochs_first_batch: 1,
        minibatch_size: 1,
        lr_first: 0.1,
        ..Default::default()
    };
    train_batch(&mut net, std::slice::from_ref(&pattern), 1, &plan, &mut sitforge::train::PlainHooks, false).map_err(|e| e.to_string())?;
    let nonzero = net.head_weights().values.iter().filter(|&&w| w != 0.0).count();
    check(nonzero > 0, || "output weights still all zero after one step".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let out_rows: Vec<Vec<f64>> = (0..3).map(|_| gaussian_vec(&mut rng, 5, 1.0)).collect();
    let zero_net = Network::from_weights(
        4,
        vec![
            (vec![vec![0.0; 4]; 6], vec![0.0; 6]),
            (vec![vec![0.0; 6]; 5], vec![0.0; 5]),
            (out_rows, vec![0.0; 3]),
        ],
    )
    .map_err(|e| e.to_string())?;
    let (logits, cache) = zero_net.forward(&x).map_err(|e| e.to_string())?;
    check(logits.iter().all(|&o| o == 0.0), || format!("logits {logits:?}"))?;
    let (_, dl) = cross_entropy_soft(&softmax(&logits).unwrap(), &SoftTarget::one_hot(3, 1).unwrap()).unwrap();
    let grad = zero_net.backward(&cache, &dl).map_err(|e| e.to_string())?;
    let hidden_grad_zero = grad.tensors[..zero_net.shared_tensor_count()].iter().all(|t| t.values.iter().all(|&v| v == 0.0));
    check(hidden_grad_zero, || "hidden layers received a nonzero gradient".into())?;
    Ok(format!("{nonzero} output weights moved; zero hidden layers stay inert"))
}

fn c8_mean_shift_invariance() -> Outcome {
    let data = small_dataset(6, 8);
    let spec = ScenarioSpec::sit(vec![2, 2, 2]);
    let split = split_nc(&data, &spec).map_err(|e| e.to_string())?;
    let mut net = Network::init_with_head(&[8, 12, 6], 6, HeadMode::Maximal, &InitPolicy::zero_output(0.3), 8).map_err(|e| e.to_string())?;
    let plan = TrainPlan {
        lr_first: 0.05,
        lr_later: 0.05,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut head = HeadState::new(6, 6);
    let mut checked = 0;
    for batch in &split.batches {
        // Fresh zero head for the batch, as CWR+ does, with earlier rows
        // kept in `head`.
        for v in net.head_mut().0.values.iter_mut() {
            *v = 0.0;
        }
        train_batch(&mut net, &batch.patterns, batch.index, &plan, &mut sitforge::train::PlainHooks, batch.index > 1)
            .map_err(|e| e.to_string())?;
        let avg = cwrplus_consolidate(&mut head, &net, &batch.classes, AvgScope::FullHead).map_err(|e| e.to_string())?;
        check(avg != 0.0, || format!("batch {}: zero shift", batch.index))?;
        let mut unshifted = head.clone();
        for &c in &batch.classes {
            unshifted.row_mut(c).iter_mut().for_each(|w| *w += avg);
            unshifted.bias[c] += avg;
        }
        let (mut a, mut b) = (net.clone(), net.clone());
        head.apply_to(&mut a).map_err(|e| e.to_string())?;
        unshifted.apply_to(&mut b).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let x = gaussian_vec(&mut rng, 8, 1.5);
            let pick = |n: &Network| {
                let o = n.logits(&x).unwrap();
                batch.classes.iter().copied().max_by(|&p, &q| o[p].total_cmp(&o[q])).unwrap()
            };
            check(pick(&a) == pick(&b), || format!("batch {}: prediction changed", batch.index))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} predictions unchanged across 3 batches"))
}

struct Benchmark {
    cfg: ResolvedConfig,
    outcome: ExperimentOutcome,
    runs: BTreeMap<StrategyKind, Vec<RunResults>>,
    elapsed: Duration,
}

fn run_benchmark(out: &Path) -> Result<Benchmark, String> {
    let cfg = load_config(&preset_path()).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let outcome = run_experiment(
        &cfg,
        &RunOptions {
            out_dir: Some(out.to_path_buf()),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    if !outcome.failures.is_empty() {
        return Err(format!("runs failed: {:?}", outcome.failures));
    }
    let runs = outcome.strategies.iter().map(|s| (s.runs[0].strategy.parse().unwrap(), s.runs.clone())).collect();
    Ok(Benchmark {
        cfg,
        outcome,
        runs,
        elapsed,
    })
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn final_acc(b: &Benchmark, k: StrategyKind) -> f64 {
    mean(b.runs[&k].iter().map(|r| r.final_accuracy.unwrap()))
}

fn c9_forgetting(b: &Benchmark) -> Outcome {
    let naive = &b.runs[&StrategyKind::Naive];
    check(naive.len() == 3, || format!("{} runs", naive.len()))?;
    let first = mean(naive.iter().map(|r| r.matrix.r.last().unwrap()[0]));
    let last = mean(naive.iter().map(|r| *r.matrix.r.last().unwrap().last().unwrap()));
    let share = mean(naive.iter().map(|r| {
        let sums = r.confusions.last().unwrap().column_sums();
        let total: u64 = sums.iter().sum();
        let in_last: u64 = r.batch_classes.last().unwrap().iter().map(|&c| sums[c]).sum();
        in_last as f64 / total as f64
    }));
    let naive_time = b.elapsed / b.outcome.strategies.len() as u32;
    let summary = format!("batch-1 {:.1}%, last batch {:.1}%, last-batch prediction share {:.1}%", 100.0 * first, 100.0 * last, 100.0 * share);
    check(first <= 0.15 && last >= 0.80 && share >= 0.70, || summary.clone())?;
    check(naive_time < Duration::from_secs(120), || format!("naive runs took {naive_time:?}"))?;
    Ok(summary)
}

fn c10_ordering(b: &Benchmark) -> Outcome {
    let [cum, ar1, cwrp, naive] =
        [StrategyKind::Cumulative, StrategyKind::Ar1, StrategyKind::CwrPlus, StrategyKind::Naive].map(|k| final_acc(b, k));
    let band = 0.03;
    let summary = format!(
        "cumulative {:.1}, ar1 {:.1}, cwr+ {:.1}, naive {:.1}",
        100.0 * cum,
        100.0 * ar1,
        100.0 * cwrp,
        100.0 * naive
    );
    check(cum >= ar1 - band && ar1 >= cwrp - band && cwrp >= naive - band && ar1 - naive >= 0.20, || summary.clone())?;
    check(b.elapsed < Duration::from_secs(600), || format!("took {:?}", b.elapsed))?;
    Ok(summary)
}

fn c11_mt_gap(b: &Benchmark) -> Outcome {
    let mut cfg = b.cfg.clone();
    cfg.scenario.protocol = Protocol::Mt;
    cfg.strategies = vec![ResolvedStrategy {
        name: "naive".into(),
        ..b.cfg.strategies.iter().find(|s| s.spec.kind() == StrategyKind::Naive).unwrap().clone()
    }];
    let mt = run_experiment(&cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
    let mt_acc = mean(mt.strategies[0].runs.iter().map(|r| r.final_accuracy.unwrap()));
    let sit_acc = final_acc(b, StrategyKind::Naive);
    let summary = format!("MT {:.1}% vs SIT {:.1}%", 100.0 * mt_acc, 100.0 * sit_acc);
    check(mt_acc - sit_acc >= 0.10, || summary.clone())?;
    Ok(summary)
}

fn c12_cwr_isolation(b: &Benchmark) -> Outcome {
    let cfg = &b.cfg;
    let data = load_dataset(&cfg.dataset).map_err(|e| e.to_string())?;
    let strategy = cfg.strategies.iter().find(|s| s.spec.kind() == StrategyKind::Cwr).ok_or("no cwr in preset")?;
    let run = prepare_run(cfg, &data, strategy, cfg.seed).map_err(|e| e.to_string())?;
    let mut heads: Vec<HeadState> = Vec::new();
    let mut observer = |_: usize, _: &Network, learner: &Learner| heads.push(learner.strategy().head_state().unwrap().clone());
    let results = run_sit(&strategy.spec, run.network, &run.split, run.scenario.test_policy, &run.plan, cfg.seed, Some(&mut observer))
        .map_err(|e| e.to_string())?;
    let mut compared = 0;
    for (i, batch) in run.split.batches.iter().enumerate() {
        for later in &heads[i + 1..] {
            for &c in &batch.classes {
                let same = heads[i].row(c).iter().zip(later.row(c)).all(|(x, y)| x.to_bits() == y.to_bits())
                    && heads[i].bias[c].to_bits() == later.bias[c].to_bits();
                check(same, || format!("cw row of class {c} changed after batch {}", i + 1))?;
                compared += 1;
            }
        }
    }
    let shared = results.weight_change[0].len() - 1;
    for (i, change) in results.weight_change.iter().enumerate().skip(1) {
        check(change[..shared].iter().all(|&v| v == 0.0), || format!("batch {}: shared change {:?}", i + 1, change))?;
    }
    Ok(format!("{compared} row comparisons bit-equal; shared layers report 0 after B1"))
}

fn c13_backward_transfer(b: &Benchmark) -> Outcome {
    let m = AccuracyMatrix {
        r: vec![vec![0.6, 0.0, 0.0], vec![0.5, 0.5, 0.0], vec![0.4, 0.5, 0.7]],
        overall: vec![],
    };
    let hand = backward_transfer(&m).map_err(|e| e.to_string())?;
    check((hand + 0.1).abs() <= 1e-15, || format!("hand example gives {hand}"))?;
    let bwt = |k| mean(b.runs[&k].iter().map(|r: &RunResults| r.bwt.unwrap()));
    let (naive, ar1) = (bwt(StrategyKind::Naive), bwt(StrategyKind::Ar1));
    let summary = format!("naive {naive:.3}, ar1 {ar1:.3}, hand example {hand:.3}");
    check(naive <= -0.3 && ar1 > naive, || summary.clone())?;
    Ok(summary)
}

fn report_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")) {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c14_determinism(first: &Path, second: &Path) -> Outcome {
    run_benchmark(second)?;
    let (a, b) = (report_files(first), report_files(second));
    check(!a.is_empty(), || "no reports written".into())?;
    check(a.keys().eq(b.keys()), || "different report file sets".into())?;
    let aggregate = a.keys().filter(|p| p.components().any(|c| c.as_os_str() == "aggregate")).count();
    if let Some((p, _)) = a.iter().find(|(p, bytes)| b[*p] != **bytes) {
        return Err(format!("{} differs", p.display()));
    }
    Ok(format!("{} files byte-identical ({aggregate} aggregate)", a.len()))
}

fn main() {
    // Keep the standard test-harness flags from failing the target.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let dirs = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let bench = run_benchmark(dirs.0.path());
    let with_bench = |f: fn(&Benchmark) -> Outcome| match &bench {
        Ok(b) => f(b),
        Err(e) => Err(format!("benchmark failed: {e}")),
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("1 fused-target gradient", c1_fused_gradient()),
        ("2 lambda schedule", c2_lambda_schedule()),
        ("3 Fisher oracle", c3_fisher_oracle()),
        ("4 SI replay oracle", c4_si_replay()),
        ("5 importance clipping", c5_clipping()),
        ("6 finite-difference gradients", c6_finite_differences()),
        ("7 zero-init updates", c7_zero_init()),
        ("8 mean-shift invariance", c8_mean_shift_invariance()),
        ("9 catastrophic forgetting", with_bench(c9_forgetting)),
        ("10 strategy ordering", with_bench(c10_ordering)),
        ("11 MT vs SIT gap", with_bench(c11_mt_gap)),
        ("12 CWR isolation and freeze", with_bench(c12_cwr_isolation)),
        ("13 backward transfer", with_bench(c13_backward_transfer)),
        (
            "14 determinism",
            match &bench {
                Ok(_) => c14_determinism(dirs.0.path(), dirs.1.path()),
                Err(e) => Err(format!("benchmark failed: {e}")),
            },
        ),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
