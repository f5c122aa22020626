use proptest::prelude::*;

use sitforge::data::{gen_synthetic, LabeledDataset, SyntheticSpec};
use sitforge::network::{InitPolicy, Network};
use sitforge::scenario::{run_mt, run_sit, split_nc, Protocol, RunResults, ScenarioSpec, TestPolicy};
use sitforge::strategies::StrategySpec;
use sitforge::train::TrainPlan;

fn dataset(classes: usize, seed: u64) -> LabeledDataset {
    gen_synthetic(&SyntheticSpec {
        classes,
        dim: 6,
        train_per_class: 12,
        test_per_class: 5,
        spread: 0.5,
        seed,
    })
    .unwrap()
}

fn schedule() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..4, 2..6)
}

fn plan() -> TrainPlan {
    TrainPlan {
        epochs_first_batch: 1,
        epochs_later_batches: 1,
        lr_first: 0.05,
        lr_later: 0.05,
        minibatch_size: 8,
        shuffle_seed: 1,
    }
}

fn run(spec: &StrategySpec, sched: &[usize], seed: u64, policy: TestPolicy) -> RunResults {
    let classes: usize = sched.iter().sum();
    let data = dataset(classes, seed);
    let scenario = ScenarioSpec {
        class_ordering_seed: seed,
        test_policy: policy,
        ..ScenarioSpec::sit(sched.to_vec())
    };
    let split = split_nc(&data, &scenario).unwrap();
    let net = Network::init_with_head(
        &[6, 10, 8],
        classes,
        spec.head_mode,
        &InitPolicy {
            hidden_std: 0.2,
            output: spec.output_init,
        },
        seed,
    )
    .unwrap();
    run_sit(spec, net, &split, policy, &plan(), seed, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nc_batches_are_disjoint_and_cover_everything(sched in schedule(), seed in 0u64..500) {
        let classes: usize = sched.iter().sum();
        let split = split_nc(&dataset(classes, seed), &ScenarioSpec { class_ordering_seed: seed, ..ScenarioSpec::sit(sched.clone()) }).unwrap();
        let mut seen = vec![false; classes];
        for (b, &s) in split.batches.iter().zip(&sched) {
            prop_assert_eq!(b.classes.len(), s);
            prop_assert!(!b.patterns.is_empty());
            for &c in &b.classes {
                prop_assert!(!seen[c]);
                seen[c] = true;
            }
            prop_assert!(b.patterns.iter().all(|p| b.classes.contains(&p.label)));
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn split_is_reproducible(sched in schedule(), seed in 0u64..500) {
        let classes: usize = sched.iter().sum();
        let spec = ScenarioSpec { class_ordering_seed: seed, ..ScenarioSpec::sit(sched) };
        prop_assert_eq!(split_nc(&dataset(classes, seed), &spec).unwrap(), split_nc(&dataset(classes, seed), &spec).unwrap());
    }

    #[test]
    fn confusion_agrees_with_reported_accuracy(sched in schedule(), seed in 0u64..500) {
        let classes: usize = sched.iter().sum();
        let r = run(&StrategySpec::naive(), &sched, seed, TestPolicy::Fixed);
        let test_size = (classes * 5) as u64;
        for (cm, &acc) in r.confusions.iter().zip(&r.matrix.overall) {
            prop_assert_eq!(cm.total(), test_size);
            prop_assert_eq!(cm.trace() as f64 / cm.total() as f64, acc);
            prop_assert!(cm.row_sums().iter().all(|&n| n == 5));
        }
        prop_assert!(r.matrix.r.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(r.weight_change.iter().all(|w| w.len() == 3 && w.iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn fixed_and_expanding_agree_after_last_batch(sched in schedule(), seed in 0u64..500) {
        let fixed = run(&StrategySpec::naive(), &sched, seed, TestPolicy::Fixed);
        let expanding = run(&StrategySpec::naive(), &sched, seed, TestPolicy::Expanding);
        prop_assert_eq!(fixed.final_accuracy, expanding.final_accuracy);
        prop_assert_eq!(fixed.confusions.last(), expanding.confusions.last());
    }
}

#[test]
fn expanding_policy_scores_seen_classes_only() {
    let r = run(&StrategySpec::naive(), &[2, 2, 2], 3, TestPolicy::Expanding);
    assert_eq!(r.confusions[0].total(), 10);
    assert_eq!(r.confusions[1].total(), 20);
    assert_eq!(r.confusions[2].total(), 30);
}

#[test]
fn mt_scores_each_task_with_its_own_head() {
    let data = dataset(6, 2);
    let split = split_nc(
        &data,
        &ScenarioSpec {
            protocol: Protocol::Mt,
            ..ScenarioSpec::sit(vec![2, 2, 2])
        },
    )
    .unwrap();
    let spec = StrategySpec::naive();
    let policy = InitPolicy {
        hidden_std: 0.2,
        output: spec.output_init,
    };
    let net = Network::init_with_head(&[6, 10, 8], 6, spec.head_mode, &policy, 2).unwrap();
    let plan = TrainPlan {
        epochs_first_batch: 5,
        epochs_later_batches: 5,
        ..plan()
    };
    let r = run_mt(&spec, net, &split, &plan, 2, None).unwrap();
    assert_eq!(r.protocol, Protocol::Mt);
    for (i, row) in r.matrix.r.iter().enumerate() {
        assert!(row[i + 1..].iter().all(|&v| v == 0.0));
        let expected = row[..=i].iter().sum::<f64>() / (i + 1) as f64;
        assert_eq!(r.matrix.overall[i], expected);
    }
    // Two-way choices on well-separated clusters.
    assert!(r.final_accuracy.unwrap() > 0.5);
}

#[test]
fn mt_rejects_strategies_it_cannot_host() {
    let plan = plan();
    assert!(StrategySpec::cumulative().validate(&plan, Protocol::Mt).is_err());
    assert!(StrategySpec::lwf(Default::default()).validate(&plan, Protocol::Mt).is_err());
    assert!(StrategySpec::ar1(1.0).validate(&plan, Protocol::Mt).is_ok());
}

#[test]
fn oversized_schedule_is_a_config_error() {
    let data = dataset(4, 1);
    assert!(split_nc(&data, &ScenarioSpec::sit(vec![2, 3])).is_err());
}
