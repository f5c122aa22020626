use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SATURATION_THRESHOLD: f64 = 0.5;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let n = self.classes();
        if truth >= n || predicted >= n {
            return Err(Error::contract(format!(
                "confusion entry ({truth}, {predicted}) outside {n} classes"
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Trace over total; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    pub fn column_sums(&self) -> Vec<u64> {
        let mut sums = vec![0; self.classes()];
        for row in &self.counts {
            for (s, &v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Element-wise sum; used to pool matrices across runs.
    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::contract("confusion matrices have different sizes"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

/// Predicted classes that receive more than `threshold` of all predictions.
/// Matrices with two classes or fewer are never flagged.
pub fn saturation_alarm(confusion: &ConfusionMatrix, threshold: f64) -> Vec<usize> {
    let total = confusion.total();
    if confusion.classes() <= 2 || total == 0 {
        return Vec::new();
    }
    confusion
        .column_sums()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s as f64 / total as f64 > threshold)
        .map(|(c, _)| c)
        .collect()
}
