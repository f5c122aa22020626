//! Report files for one or more runs of the same experiment.
//!
//! ```text
//! <out>/run_<k>/   per-run reports plus results.json
//! <out>/aggregate/ the same reports averaged (confusions summed) over runs
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::svg::{line_plot, Series};
use crate::error::{Error, Result};
use crate::scenario::{Protocol, RunResults};

pub const RESULTS_FILE: &str = "results.json";

/// What produced the runs; copied into every summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub name: String,
    pub strategy: String,
    pub protocol: Protocol,
    pub hyperparameters: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub strategy: String,
    pub protocol: Protocol,
    pub hyperparameters: serde_json::Value,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub final_accuracy: Option<f64>,
    pub final_accuracy_std: Option<f64>,
    pub final_accuracy_per_run: Vec<Option<f64>>,
    pub bwt: Option<f64>,
    pub bwt_std: Option<f64>,
    pub bwt_per_run: Vec<Option<f64>>,
    pub accuracy_curve: Vec<f64>,
    pub accuracy_curve_std: Vec<f64>,
    pub errors: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct StoredRun {
    meta: ReportMeta,
    run: RunResults,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

/// Element-wise mean/std over runs of a per-batch series; runs that stopped
/// early contribute only the batches they finished.
fn curve(runs: &[RunResults], get: impl Fn(&RunResults) -> &[f64]) -> Vec<(f64, f64)> {
    let len = runs.iter().map(|r| get(r).len()).max().unwrap_or(0);
    (0..len)
        .filter_map(|i| {
            let vals: Vec<f64> = runs.iter().filter_map(|r| get(r).get(i).copied()).collect();
            mean_std(&vals)
        })
        .collect()
}

impl Summary {
    pub fn of(runs: &[RunResults], meta: &ReportMeta) -> Self {
        let finals: Vec<f64> = runs.iter().filter_map(|r| r.final_accuracy).collect();
        let bwts: Vec<f64> = runs.iter().filter_map(|r| r.bwt).collect();
        let fin = mean_std(&finals);
        let bwt = mean_std(&bwts);
        let acc = curve(runs, |r| &r.matrix.overall);
        Self {
            name: meta.name.clone(),
            strategy: meta.strategy.clone(),
            protocol: meta.protocol,
            hyperparameters: meta.hyperparameters.clone(),
            runs: runs.len(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            final_accuracy: fin.map(|v| v.0),
            final_accuracy_std: fin.map(|v| v.1),
            final_accuracy_per_run: runs.iter().map(|r| r.final_accuracy).collect(),
            bwt: bwt.map(|v| v.0),
            bwt_std: bwt.map(|v| v.1),
            bwt_per_run: runs.iter().map(|r| r.bwt).collect(),
            accuracy_curve: acc.iter().map(|v| v.0).collect(),
            accuracy_curve_std: acc.iter().map(|v| v.1).collect(),
            errors: runs.iter().filter_map(|r| r.error.clone()).collect(),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_reports(runs: &[RunResults], meta: &ReportMeta, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let acc = curve(runs, |r| &r.matrix.overall);
    let mut s = String::from("batch,accuracy,std\n");
    for (i, (m, sd)) in acc.iter().enumerate() {
        let _ = writeln!(s, "{},{m},{sd}", i + 1);
    }
    write_file(&dir.join("accuracy_curve.csv"), &s)?;

    let batches = runs.iter().map(|r| r.matrix.r.len()).max().unwrap_or(0);
    let width = runs.iter().flat_map(|r| r.matrix.r.iter().map(Vec::len)).max().unwrap_or(0);
    let mut s = String::from("after_batch");
    for j in 0..width {
        let _ = write!(s, ",B{}", j + 1);
    }
    s.push('\n');
    for i in 0..batches {
        let _ = write!(s, "{}", i + 1);
        for j in 0..width {
            let vals: Vec<f64> = runs.iter().filter_map(|r| r.matrix.r.get(i).and_then(|row| row.get(j)).copied()).collect();
            let _ = write!(s, ",{}", mean_std(&vals).map_or(f64::NAN, |v| v.0));
        }
        s.push('\n');
    }
    write_file(&dir.join("accuracy_matrix.csv"), &s)?;

    for i in 0..batches {
        let mut pooled: Option<super::ConfusionMatrix> = None;
        for c in runs.iter().filter_map(|r| r.confusions.get(i)) {
            match pooled.as_mut() {
                Some(p) => p.add(c)?,
                None => pooled = Some(c.clone()),
            }
        }
        let Some(m) = pooled else { continue };
        let mut s = String::from("true");
        for c in 0..m.classes() {
            let _ = write!(s, ",pred_{c}");
        }
        s.push('\n');
        for (c, row) in m.counts.iter().enumerate() {
            let _ = write!(s, "{c}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        write_file(&dir.join(format!("confusion_B{}.csv", i + 1)), &s)?;
    }

    let layers = runs.iter().flat_map(|r| r.weight_change.iter().map(Vec::len)).max().unwrap_or(0);
    let wc: Vec<Vec<f64>> = (0..layers)
        .map(|l| {
            (0..batches)
                .map(|i| {
                    let vals: Vec<f64> =
                        runs.iter().filter_map(|r| r.weight_change.get(i).and_then(|row| row.get(l)).copied()).collect();
                    mean_std(&vals).map_or(f64::NAN, |v| v.0)
                })
                .collect()
        })
        .collect();
    let mut s = String::from("batch");
    for l in 0..layers {
        let _ = write!(s, ",layer_{}", l + 1);
    }
    s.push('\n');
    for i in 0..batches {
        let _ = write!(s, "{}", i + 1);
        for layer in &wc {
            let _ = write!(s, ",{}", layer[i]);
        }
        s.push('\n');
    }
    write_file(&dir.join("weight_change.csv"), &s)?;

    let summary = Summary::of(runs, meta);
    write_file(&dir.join("summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;

    let acc_series = vec![Series {
        name: meta.name.clone(),
        points: acc.iter().enumerate().map(|(i, v)| ((i + 1) as f64, v.0 * 100.0)).collect(),
    }];
    write_file(
        &dir.join("accuracy_curve.svg"),
        &line_plot(
            &format!("{} accuracy", meta.name),
            "batch",
            "accuracy (%)",
            &acc_series,
            Some((0.0, 100.0)),
        ),
    )?;
    let wc_series: Vec<Series> = wc
        .iter()
        .enumerate()
        .map(|(l, vals)| Series {
            name: format!("layer {}", l + 1),
            points: vals.iter().enumerate().map(|(i, &v)| ((i + 1) as f64, v)).collect(),
        })
        .collect();
    write_file(
        &dir.join("weight_change.svg"),
        &line_plot(
            &format!("{} weight change", meta.name),
            "batch",
            "mean |Δθ|",
            &wc_series,
            None,
        ),
    )
}

/// Writes `run_<k>/` for every run and `aggregate/` over all of them.
pub fn emit_reports(runs: &[RunResults], meta: &ReportMeta, out_dir: &Path) -> Result<Summary> {
    for (k, run) in runs.iter().enumerate() {
        let dir = out_dir.join(format!("run_{}", k + 1));
        write_reports(std::slice::from_ref(run), meta, &dir)?;
        let stored = StoredRun {
            meta: meta.clone(),
            run: run.clone(),
        };
        write_file(&dir.join(RESULTS_FILE), &(serde_json::to_string(&stored)? + "\n"))?;
    }
    write_reports(runs, meta, &out_dir.join("aggregate"))?;
    Ok(Summary::of(runs, meta))
}

/// One line of a multi-strategy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub final_accuracy: Option<f64>,
    pub final_accuracy_std: Option<f64>,
    pub bwt: Option<f64>,
    pub accuracy_curve: Vec<f64>,
}

impl From<&Summary> for ComparisonRow {
    fn from(s: &Summary) -> Self {
        Self {
            name: s.name.clone(),
            final_accuracy: s.final_accuracy,
            final_accuracy_std: s.final_accuracy_std,
            bwt: s.bwt,
            accuracy_curve: s.accuracy_curve.clone(),
        }
    }
}

/// `comparison.csv` and `comparison.svg` across strategies.
pub fn emit_comparison(rows: &[ComparisonRow], out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut s = String::from("strategy,final_accuracy,std,bwt\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.name,
            opt(r.final_accuracy),
            opt(r.final_accuracy_std),
            opt(r.bwt)
        );
    }
    write_file(&out_dir.join("comparison.csv"), &s)?;
    let series: Vec<Series> = rows
        .iter()
        .map(|r| Series {
            name: r.name.clone(),
            points: r.accuracy_curve.iter().enumerate().map(|(i, v)| ((i + 1) as f64, v * 100.0)).collect(),
        })
        .collect();
    write_file(
        &out_dir.join("comparison.svg"),
        &line_plot("accuracy by strategy", "batch", "accuracy (%)", &series, Some((0.0, 100.0))),
    )
}

fn read_stored(path: &Path) -> Result<StoredRun> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads persisted runs from a run directory or from an experiment
/// directory holding `run_<k>/` subdirectories.
pub fn load_results(dir: &Path) -> Result<(ReportMeta, Vec<RunResults>)> {
    let single = dir.join(RESULTS_FILE);
    if single.is_file() {
        let s = read_stored(&single)?;
        return Ok((s.meta, vec![s.run]));
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(k) = name.strip_prefix("run_").and_then(|k| k.parse::<usize>().ok()) {
            let p = entry.path().join(RESULTS_FILE);
            if p.is_file() {
                found.push((k, p));
            }
        }
    }
    found.sort();
    let mut meta = None;
    let mut runs = Vec::new();
    for (_, p) in found {
        let s = read_stored(&p)?;
        meta.get_or_insert(s.meta);
        runs.push(s.run);
    }
    let meta = meta.ok_or_else(|| Error::config(format!("{}: no persisted results found", dir.display())))?;
    Ok((meta, runs))
}
