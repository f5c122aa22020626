use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Pattern};
use crate::error::{Error, Result};
use crate::seed::rng_from;

/// Isotropic Gaussian class clusters around seeded random means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of each cluster around its mean.
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Class means are drawn from N(0, I); patterns are `mean + spread·N(0, I)`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    if spec.classes < 2 || spec.dim < 2 {
        return Err(Error::config("synthetic data needs at least 2 classes and 2 dimensions"));
    }
    if !(spec.spread > 0.0 && spec.spread.is_finite()) {
        return Err(Error::config(format!("synthetic spread must be > 0, got {}", spec.spread)));
    }
    if spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(Error::config("synthetic data needs at least one train and one test pattern per class"));
    }
    let mut rng = rng_from(spec.seed);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let mut sample = |label: usize| -> Pattern {
        let input = means[label]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + spec.spread * z
            })
            .collect();
        Pattern { input, label }
    };
    let mut train = Vec::with_capacity(spec.classes * spec.train_per_class);
    let mut test = Vec::with_capacity(spec.classes * spec.test_per_class);
    for c in 0..spec.classes {
        for _ in 0..spec.train_per_class {
            train.push(sample(c));
        }
        for _ in 0..spec.test_per_class {
            test.push(sample(c));
        }
    }
    LabeledDataset::new(spec.dim, spec.classes, train, test)
}
