//! Labeled Gaussian-mixture data for tests and experiments.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_io::FeatureSet;
use crate::error::{JpshError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub n: usize,
    pub dim: usize,
    pub components: usize,
    /// Standard deviation of the component means around the origin.
    pub spread: f64,
    /// Standard deviation of samples around their component mean.
    pub noise: f64,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec {
            n: 400,
            dim: 10,
            components: 4,
            spread: 1.5,
            noise: 1.0,
            seed: 0,
        }
    }
}

/// Sample `i` belongs to component `i mod components` and carries it as
/// its label.
pub fn gaussian_mixture(spec: &MixtureSpec) -> Result<FeatureSet> {
    if spec.n == 0 || spec.dim == 0 || spec.components == 0 {
        return Err(JpshError::Param("mixture needs n, dim, components >= 1".into()));
    }
    if !(spec.spread >= 0.0 && spec.noise >= 0.0) {
        return Err(JpshError::Param("mixture spread and noise must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = DMatrix::from_fn(spec.dim, spec.components, |_, _| {
        spec.spread * rng.sample::<f64, _>(StandardNormal)
    });
    let data = DMatrix::from_fn(spec.dim, spec.n, |r, i| {
        means[(r, i % spec.components)] + spec.noise * rng.sample::<f64, _>(StandardNormal)
    });
    let ids = (0..spec.n).map(|i| i.to_string()).collect();
    let labels = (0..spec.n).map(|i| vec![(i % spec.components) as u32]).collect();
    FeatureSet::from_columns(data, ids, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_labels() {
        let fs = gaussian_mixture(&MixtureSpec::default()).unwrap();
        assert_eq!((fs.dim(), fs.n()), (10, 400));
        let labels = fs.labels().unwrap();
        assert_eq!(labels[5], vec![1]);
        assert_eq!(labels.iter().filter(|l| l[0] == 3).count(), 100);
        assert_eq!(fs, gaussian_mixture(&MixtureSpec::default()).unwrap());
    }
}
