//! Synthetic classification data partitioned across nodes.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NetDpError, Result};

/// One node's shard: feature rows with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    features: DMatrix<f64>,
    labels: Vec<usize>,
    owner: usize,
}

impl LocalDataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, owner: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(NetDpError::Dimension(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(LocalDataset {
            features,
            labels,
            owner,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    /// Number of distinct label values present (at least 1 + max label).
    pub fn label_ceiling(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }
}

/// Node shards plus a held-out test set drawn from the same distribution.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub shards: Vec<LocalDataset>,
    pub test: LocalDataset,
}

const TEST_RECORDS: usize = 500;

/// Gaussian class-conditional blobs, IID across nodes, deterministic in the
/// seed. Class means are unit-variance blobs separated by 4 standard
/// deviations along seeded random directions.
pub fn synth_classification(
    seed: u64,
    nodes: usize,
    records_per_node: usize,
    dims: usize,
    classes: usize,
) -> Result<SynthData> {
    if nodes == 0 || records_per_node == 0 || dims == 0 || classes == 0 {
        return Err(NetDpError::Parameter(
            "nodes, records, dims and classes must all be >= 1".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let mut dir: Vec<f64> = (0..dims).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            dir.iter_mut().for_each(|v| *v *= 4.0 / norm);
            dir
        })
        .collect();
    let draw = |rng: &mut ChaCha12Rng, count: usize, owner: usize| -> LocalDataset {
        let mut features = DMatrix::<f64>::zeros(count, dims);
        let mut labels = Vec::with_capacity(count);
        for r in 0..count {
            let label = rng.random_range(0..classes);
            labels.push(label);
            for d in 0..dims {
                let z: f64 = StandardNormal.sample(rng);
                features[(r, d)] = means[label][d] + z;
            }
        }
        LocalDataset {
            features,
            labels,
            owner,
        }
    };
    let shards: Vec<LocalDataset> = (0..nodes)
        .map(|node| draw(&mut rng, records_per_node, node))
        .collect();
    let test = draw(&mut rng, TEST_RECORDS, usize::MAX);
    Ok(SynthData { shards, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_has_constant_labels() {
        let data = synth_classification(3, 2, 10, 4, 1).unwrap();
        for shard in &data.shards {
            assert!(shard.labels().iter().all(|&l| l == 0));
        }
        assert!(data.test.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn single_node_holds_all_records() {
        let data = synth_classification(5, 1, 37, 3, 2).unwrap();
        assert_eq!(data.shards.len(), 1);
        assert_eq!(data.shards[0].len(), 37);
    }

    #[test]
    fn deterministic_in_seed() {
        let a = synth_classification(9, 3, 5, 2, 3).unwrap();
        let b = synth_classification(9, 3, 5, 2, 3).unwrap();
        assert_eq!(a.shards, b.shards);
        assert_eq!(a.test, b.test);
        let c = synth_classification(10, 3, 5, 2, 3).unwrap();
        assert_ne!(a.shards, c.shards);
    }

    #[test]
    fn labels_below_class_count() {
        let data = synth_classification(1, 4, 20, 3, 5).unwrap();
        for shard in &data.shards {
            assert!(shard.label_ceiling() <= 5);
        }
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(synth_classification(0, 0, 1, 1, 1).is_err());
        assert!(synth_classification(0, 1, 0, 1, 1).is_err());
    }
}
