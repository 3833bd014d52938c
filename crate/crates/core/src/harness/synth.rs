use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example};
use crate::error::{Error, Result};

/// Gaussian-blob classification task. Each class owns `blobs_per_class`
/// centers drawn from `N(0, separation²·I)`; points are a center plus
/// `N(0, noise²·I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub blobs_per_class: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub separation: f64,
    pub noise: f64,
    pub train_size: usize,
    pub test_size: usize,
    /// Size of the small generic split used to pre-train the frozen proxy.
    pub pretrain_size: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            blobs_per_class: 4,
            dim: 16,
            num_classes: 4,
            separation: 1.0,
            noise: 0.8,
            train_size: 2000,
            test_size: 1000,
            pretrain_size: 40,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let v = self.num_classes;
        if v < 2 || self.dim == 0 || self.blobs_per_class == 0 {
            return Err(Error::InvalidSpec(format!(
                "need V ≥ 2, d ≥ 1 and at least one blob per class (V={v}, d={}, blobs={})",
                self.dim, self.blobs_per_class
            )));
        }
        if self.train_size < v || self.test_size < v {
            return Err(Error::InvalidSpec(format!(
                "split sizes ({}, {}) must be at least V = {v}",
                self.train_size, self.test_size
            )));
        }
        if !(self.separation.is_finite() && self.separation > 0.0 && self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::InvalidSpec(
                "separation must be positive and noise non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// The three splits drawn from one set of blob centers.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SyntheticSplits {
    pub train: Dataset,
    pub test: Dataset,
    pub pretrain: Option<Dataset>,
}

/// Seeded `(train, test)` pair.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    let splits = generate_splits(spec, seed)?;
    Ok((splits.train, splits.test))
}

pub(crate) fn generate_splits(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticSplits> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers_dist = Normal::new(0.0, spec.separation).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let centers: Vec<Vec<Vec<f64>>> = (0..spec.num_classes)
        .map(|_| {
            (0..spec.blobs_per_class)
                .map(|_| (0..spec.dim).map(|_| centers_dist.sample(&mut rng)).collect())
                .collect()
        })
        .collect();

    let draw = |prefix: &str, n: usize, stream: u64| -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let examples = (0..n)
            .map(|i| {
                let label = i % spec.num_classes;
                let blobs = &centers[label];
                let center = &blobs[rng.random_range(0..blobs.len())];
                let features = center
                    .iter()
                    .map(|c| c + spec.noise * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                Example::new(format!("{prefix}-{i:06}"), features, label)
            })
            .collect();
        Dataset::new(examples, spec.num_classes, spec.dim)
    };

    Ok(SyntheticSplits {
        train: draw("train", spec.train_size, 1)?,
        test: draw("test", spec.test_size, 2)?,
        pretrain: if spec.pretrain_size > 0 {
            Some(draw("pre", spec.pretrain_size, 3)?)
        } else {
            None
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let spec = SyntheticSpec {
            train_size: 50,
            test_size: 20,
            ..SyntheticSpec::default()
        };
        assert_eq!(
            generate_synthetic(&spec, 1).unwrap(),
            generate_synthetic(&spec, 1).unwrap()
        );
        assert_ne!(
            generate_synthetic(&spec, 1).unwrap().0,
            generate_synthetic(&spec, 2).unwrap().0
        );
    }

    #[test]
    fn sizes_below_class_count_rejected() {
        let spec = SyntheticSpec {
            train_size: 3,
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate_synthetic(&spec, 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn balanced_binary_prior() {
        let spec = SyntheticSpec {
            num_classes: 2,
            blobs_per_class: 1,
            train_size: 1000,
            test_size: 10,
            ..SyntheticSpec::default()
        };
        let (train, _) = generate_synthetic(&spec, 5).unwrap();
        let ones = train.iter().filter(|e| e.label == 1).count();
        assert_eq!(ones, 500);
    }
}
