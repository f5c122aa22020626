use std::collections::BTreeMap;
use std::path::Path;

use sitforge::config::parse_config;
use sitforge::diagnostics::load_results;
use sitforge::runner::{regenerate_reports, run_experiment, RunOptions};

const CONFIG: &str = r#"{
  "dataset": { "kind": "synthetic", "classes": 6, "dim": 6, "train_per_class": 20, "test_per_class": 6, "spread": 0.6, "seed": 1 },
  "scenario": { "class_schedule": [2, 2, 2] },
  "network": { "hidden": [12, 8], "hidden_init_std": 0.2 },
  "train": { "epochs_first_batch": 2, "epochs_later_batches": 2, "lr_first": 0.05, "lr_later": 0.05, "minibatch_size": 8 },
  "strategies": [ { "id": "si", "lambda": 10.0 }, { "id": "naive" }, { "id": "cwr+" } ],
  "runs": 2,
  "seed": 4
}"#;

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn run_into(dir: &Path, threads: usize) {
    let cfg = parse_config(CONFIG, Path::new(".")).unwrap();
    let opts = RunOptions {
        out_dir: Some(dir.to_path_buf()),
        threads: Some(threads),
        ..Default::default()
    };
    let outcome = run_experiment(&cfg, &opts).unwrap();
    assert!(outcome.failures.is_empty());
}

#[test]
fn reports_have_expected_layout_and_format() {
    let tmp = tempfile::tempdir().unwrap();
    run_into(tmp.path(), 2);
    let files = snapshot(tmp.path());
    for strategy in ["si", "naive", "cwr+"] {
        for sub in ["run_1", "run_2", "aggregate"] {
            for f in [
                "accuracy_curve.csv",
                "accuracy_matrix.csv",
                "confusion_B1.csv",
                "confusion_B3.csv",
                "weight_change.csv",
                "summary.json",
                "accuracy_curve.svg",
                "weight_change.svg",
            ] {
                assert!(files.contains_key(&format!("{strategy}/{sub}/{f}")), "{strategy}/{sub}/{f}");
            }
        }
        assert!(files.contains_key(&format!("{strategy}/run_1/results.json")));
    }
    let comparison = String::from_utf8(files["comparison.csv"].clone()).unwrap();
    let names: Vec<&str> = comparison.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["si", "naive", "cwr+"]);
    for (name, bytes) in &files {
        if name.ends_with(".csv") {
            let text = std::str::from_utf8(bytes).unwrap();
            assert!(!text.contains('\r'), "{name}");
            assert!(text.ends_with('\n'));
            let width = text.lines().next().unwrap().split(',').count();
            assert!(text.lines().all(|l| l.split(',').count() == width), "{name}");
        }
    }
    // Pooled confusion over both runs counts every test pattern twice.
    let confusion = String::from_utf8(files["naive/aggregate/confusion_B3.csv"].clone()).unwrap();
    let total: u64 = confusion.lines().skip(1).flat_map(|l| l.split(',').skip(1)).map(|v| v.parse::<u64>().unwrap()).sum();
    assert_eq!(total, 2 * 36);
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_into(a.path(), 1);
    run_into(b.path(), 4);
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
}

#[test]
fn persisted_results_round_trip_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config(CONFIG, Path::new(".")).unwrap();
    let opts = RunOptions {
        out_dir: Some(tmp.path().to_path_buf()),
        ..Default::default()
    };
    let outcome = run_experiment(&cfg, &opts).unwrap();
    for s in &outcome.strategies {
        let (meta, runs) = load_results(&tmp.path().join(&s.name)).unwrap();
        assert_eq!(meta.strategy, s.summary.strategy);
        // Snapshots are in-memory only.
        let expected: Vec<_> = s
            .runs
            .iter()
            .cloned()
            .map(|mut r| {
                r.snapshots.clear();
                r
            })
            .collect();
        assert_eq!(runs, expected);
    }
}

#[test]
fn regenerated_reports_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_into(a.path(), 2);
    let summaries = regenerate_reports(a.path(), b.path()).unwrap();
    assert_eq!(summaries.len(), 3);
    assert_eq!(summaries[0].strategy, "si");
    let (original, regenerated) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(original.keys().collect::<Vec<_>>(), regenerated.keys().collect::<Vec<_>>());
    for (name, bytes) in &original {
        assert!(bytes == &regenerated[name], "{name} differs");
    }
}
