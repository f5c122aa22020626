//! Datasets: labeled patterns, a per-class train/test partition and the
//! loaders that produce them.

mod csv;
mod idx;
mod synthetic;

pub use self::csv::load_csv;
pub use self::idx::load_idx;
pub use self::synthetic::{gen_synthetic, SyntheticSpec};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub input: Vec<f64>,
    pub label: usize,
}

/// Flat list of patterns as read from disk, before partitioning.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub dim: usize,
    pub classes: usize,
    pub patterns: Vec<Pattern>,
}

/// Patterns with dense class ids `0..classes` and a per-class train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub dim: usize,
    pub classes: usize,
    pub train: Vec<Pattern>,
    pub test: Vec<Pattern>,
}

impl LabeledDataset {
    pub fn new(dim: usize, classes: usize, train: Vec<Pattern>, test: Vec<Pattern>) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::config("dataset needs at least one class and one feature"));
        }
        let mut train_count = vec![0usize; classes];
        let mut test_count = vec![0usize; classes];
        for (set, counts) in [(&train, &mut train_count), (&test, &mut test_count)] {
            for p in set {
                if p.input.len() != dim {
                    return Err(Error::config(format!(
                        "pattern of class {} has dimension {}, expected {dim}",
                        p.label,
                        p.input.len()
                    )));
                }
                if p.label >= classes {
                    return Err(Error::config(format!("label {} outside 0..{classes}", p.label)));
                }
                counts[p.label] += 1;
            }
        }
        if let Some(c) = (0..classes).find(|&c| train_count[c] == 0 || test_count[c] == 0) {
            return Err(Error::config(format!(
                "class {c} needs at least one train and one test pattern (has {} train, {} test)",
                train_count[c], test_count[c]
            )));
        }
        Ok(Self { dim, classes, train, test })
    }

    /// Splits each class of `set` into train and test parts. The test share
    /// of a class is `round(n·test_fraction)`, kept within `1..n`.
    pub fn split(set: LabeledSet, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::config(format!("test_fraction must lie in (0,1), got {test_fraction}")));
        }
        let mut by_class: Vec<Vec<Pattern>> = vec![Vec::new(); set.classes];
        for p in set.patterns {
            if p.label >= set.classes {
                return Err(Error::config(format!("label {} outside 0..{}", p.label, set.classes)));
            }
            by_class[p.label].push(p);
        }
        let mut rng = rng_from(seed);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (c, mut group) in by_class.into_iter().enumerate() {
            if group.len() < 2 {
                return Err(Error::config(format!(
                    "class {c} has {} pattern(s); at least 2 are needed for a train/test split",
                    group.len()
                )));
            }
            group.shuffle(&mut rng);
            let n = group.len();
            let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
            test.extend(group.drain(..n_test));
            train.extend(group);
        }
        Self::new(set.dim, set.classes, train, test)
    }
}
