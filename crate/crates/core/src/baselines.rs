//! Random-hyperplane LSH, the data-independent reference point.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data_io::FeatureSet;
use crate::encoder::{dot, pack_signs, CodeSet};
use crate::error::{JpshError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LshModel {
    /// `d × l`, i.i.d. standard normal.
    pub projection: DMatrix<f64>,
    pub seed: u64,
    /// Subtracted from inputs before projecting, when present.
    pub center_mean: Option<Vec<f64>>,
}

impl LshModel {
    pub fn dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn bits(&self) -> usize {
        self.projection.ncols()
    }

    /// Centers inputs on `mean` before hashing.
    pub fn with_center(mut self, mean: Vec<f64>) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(JpshError::Shape(format!(
                "center has {} entries, model has d={}",
                mean.len(),
                self.dim()
            )));
        }
        self.center_mean = Some(mean);
        Ok(self)
    }
}

pub fn lsh_train(d: usize, l: usize, seed: u64) -> Result<LshModel> {
    if d == 0 || l == 0 {
        return Err(JpshError::Param(format!("LSH needs d, l >= 1 (got d={d}, l={l})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection = DMatrix::from_fn(d, l, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(LshModel {
        projection,
        seed,
        center_mean: None,
    })
}

pub fn lsh_encode(model: &LshModel, x: &[f64]) -> Result<Vec<u64>> {
    if x.len() != model.dim() {
        return Err(JpshError::Shape(format!(
            "input has {} features, LSH model expects {}",
            x.len(),
            model.dim()
        )));
    }
    let shifted: Vec<f64> = match &model.center_mean {
        Some(mean) => x.iter().zip(mean).map(|(v, m)| v - m).collect(),
        None => x.to_vec(),
    };
    let d = model.dim();
    let proj = model.projection.as_slice();
    let scores = (0..model.bits()).map(|t| dot(&proj[t * d..(t + 1) * d], &shifted));
    Ok(pack_signs(scores, model.bits()))
}

pub fn lsh_encode_batch(model: &LshModel, fs: &FeatureSet) -> Result<CodeSet> {
    let mut cs = CodeSet::new(model.bits());
    for i in 0..fs.n() {
        cs.push(&lsh_encode(model, fs.sample(i))?, fs.ids()[i].clone())?;
    }
    Ok(cs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::hamming;

    #[test]
    fn deterministic_from_seed() {
        assert_eq!(lsh_train(5, 8, 3).unwrap(), lsh_train(5, 8, 3).unwrap());
        assert_ne!(lsh_train(5, 8, 3).unwrap(), lsh_train(5, 8, 4).unwrap());
        assert!(lsh_train(0, 8, 3).is_err());
    }

    #[test]
    fn zero_input_gives_all_ones() {
        let m = lsh_train(6, 70, 1).unwrap();
        assert_eq!(lsh_encode(&m, &[0.0; 6]).unwrap(), vec![u64::MAX, 0x3f]);
        assert!(matches!(lsh_encode(&m, &[0.0; 5]), Err(JpshError::Shape(_))));
    }

    #[test]
    fn negation_complements() {
        let m = lsh_train(4, 16, 9).unwrap();
        let x = [0.3, -1.2, 2.0, 0.7];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let a = lsh_encode(&m, &x).unwrap();
        let b = lsh_encode(&m, &neg).unwrap();
        assert_eq!(a[0] ^ b[0], 0xffff);
    }

    #[test]
    fn columns_nearly_uncorrelated() {
        let m = lsh_train(512, 16, 11).unwrap();
        let cols: Vec<Vec<f64>> = m.projection.column_iter().map(|c| c.iter().copied().collect()).collect();
        let corr = |a: &[f64], b: &[f64]| {
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
            cov / (va * vb).sqrt()
        };
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..16 {
            for j in (i + 1)..16 {
                total += corr(&cols[i], &cols[j]).abs();
                count += 1;
            }
        }
        assert!(total / count as f64 <= 0.1);
    }

    /// Pair of unit vectors in `R^d` at angle `phi`.
    fn pair_at_angle(rng: &mut ChaCha8Rng, d: usize, phi: f64) -> (Vec<f64>, Vec<f64>) {
        let mut u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= nu);
        let mut w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let proj: f64 = w.iter().zip(&u).map(|(a, b)| a * b).sum();
        w.iter_mut().zip(&u).for_each(|(a, b)| *a -= proj * b);
        let nw = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let v = u.iter().zip(&w).map(|(a, b)| phi.cos() * a + phi.sin() * b / nw).collect();
        (u, v)
    }

    #[test]
    fn collision_rate_tracks_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 20;
        let mut mean_dist = Vec::new();
        for &phi in &[0.2f64, 0.6, 1.0, 1.5, 2.2, 2.9] {
            let mut collisions = 0u64;
            let mut dist_total = 0u64;
            let trials = 10_000;
            for s in 0..trials {
                let model = lsh_train(d, 1, s as u64 + 1000).unwrap();
                let (u, v) = pair_at_angle(&mut rng, d, phi);
                let a = lsh_encode(&model, &u).unwrap();
                let b = lsh_encode(&model, &v).unwrap();
                let h = hamming(&a, &b).unwrap();
                collisions += (h == 0) as u64;
                dist_total += h as u64;
            }
            let rate = collisions as f64 / trials as f64;
            assert!((rate - (1.0 - phi / std::f64::consts::PI)).abs() <= 0.05, "phi {phi}: {rate}");
            mean_dist.push(dist_total as f64 / trials as f64);
        }
        assert!(mean_dist.windows(2).all(|w| w[0] < w[1]));
    }
}
