//! Anchor points: seeded k-means (k-means++ initialization, Lloyd
//! iterations) and the random-sample variant.

use nalgebra::DMatrix;
use rand::distr::{Distribution, Uniform};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_io::FeatureSet;
use crate::error::{JpshError, Result};
use crate::linalg::{self, col};

pub const DEFAULT_KMEANS_ITERS: usize = 100;

/// `m` anchor centers (`d × m`, one per column) and the nearest-anchor
/// assignment of the samples they were fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    centers: DMatrix<f64>,
    assignment: Vec<usize>,
}

impl AnchorSet {
    /// Wraps explicit centers; `assignment` must index into them.
    pub fn new(centers: DMatrix<f64>, assignment: Vec<usize>) -> Result<Self> {
        let m = centers.ncols();
        if m == 0 || centers.nrows() == 0 {
            return Err(JpshError::Shape("anchor set needs m >= 1 and d >= 1".into()));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(JpshError::Param("anchor centers must be finite".into()));
        }
        if let Some(bad) = assignment.iter().find(|&&a| a >= m) {
            return Err(JpshError::Param(format!("assignment {bad} out of range for m={m}")));
        }
        Ok(AnchorSet {
            centers,
            assignment,
        })
    }

    /// Centers only; assignments are computed against `fs`.
    pub fn from_centers(centers: DMatrix<f64>, fs: &FeatureSet) -> Result<Self> {
        if centers.nrows() != fs.dim() {
            return Err(JpshError::Shape(format!(
                "centers have d={}, features have d={}",
                centers.nrows(),
                fs.dim()
            )));
        }
        let assignment = assign(fs, &centers).into_iter().map(|(j, _)| j).collect();
        AnchorSet::new(centers, assignment)
    }

    pub fn m(&self) -> usize {
        self.centers.ncols()
    }

    pub fn dim(&self) -> usize {
        self.centers.nrows()
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    pub fn center(&self, j: usize) -> &[f64] {
        col(&self.centers, j)
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Nearest anchor of `x` (ties → lowest index) and its squared distance.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for j in 0..self.m() {
            let dist = linalg::sq_dist(x, self.center(j));
            if dist < best.1 {
                best = (j, dist);
            }
        }
        best
    }

    /// Within-cluster sum of squares of `fs` under the stored assignment.
    pub fn wcss(&self, fs: &FeatureSet) -> f64 {
        self.assignment
            .iter()
            .enumerate()
            .map(|(i, &j)| linalg::sq_dist(fs.sample(i), self.center(j)))
            .sum()
    }
}

fn assign(fs: &FeatureSet, centers: &DMatrix<f64>) -> Vec<(usize, f64)> {
    linalg::nearest(fs.columns(), centers)
}

/// Seeded k-means. See [`kmeans_with_trace`].
pub fn kmeans(fs: &FeatureSet, m: usize, seed: u64, max_iters: usize) -> Result<AnchorSet> {
    kmeans_with_trace(fs, m, seed, max_iters).map(|(a, _)| a)
}

/// Seeded k-means returning the within-cluster sum of squares after the
/// initial assignment and after every Lloyd step.
///
/// Stops when an assignment repeats or after `max_iters` steps. A cluster that
/// empties is reseeded at the sample farthest from its current center.
pub fn kmeans_with_trace(
    fs: &FeatureSet,
    m: usize,
    seed: u64,
    max_iters: usize,
) -> Result<(AnchorSet, Vec<f64>)> {
    check_count(fs, m)?;
    if max_iters == 0 {
        return Err(JpshError::Param("max_iters must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp_init(fs, m, &mut rng);
    let mut assigned = assign(fs, &centers);
    let mut trace = vec![assigned.iter().map(|a| a.1).sum::<f64>()];

    for _ in 0..max_iters {
        centers = recompute_centers(fs, &assigned, m);
        let next = assign(fs, &centers);
        trace.push(next.iter().map(|a| a.1).sum());
        let unchanged = next.iter().zip(&assigned).all(|(a, b)| a.0 == b.0);
        assigned = next;
        if unchanged {
            break;
        }
    }
    let anchors = AnchorSet::new(centers, assigned.into_iter().map(|a| a.0).collect())?;
    Ok((anchors, trace))
}

fn check_count(fs: &FeatureSet, m: usize) -> Result<()> {
    if m == 0 || m > fs.n() {
        return Err(JpshError::Param(format!(
            "anchor count m={m} must satisfy 1 <= m <= n={}",
            fs.n()
        )));
    }
    Ok(())
}

fn kmeans_pp_init(fs: &FeatureSet, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = fs.n();
    let d = fs.dim();
    let mut chosen = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut dist: Vec<f64> = (0..n)
        .map(|i| linalg::sq_dist(fs.sample(i), fs.sample(first)))
        .collect();
    while chosen.len() < m {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in dist.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < w {
                    break;
                }
                target -= w;
            }
            pick.expect("positive total weight")
        } else {
            // every remaining sample duplicates a chosen one
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[Uniform::new(0, free.len()).expect("non-empty").sample(rng)]
        };
        chosen.push(next);
        taken[next] = true;
        for (i, w) in dist.iter_mut().enumerate() {
            *w = w.min(linalg::sq_dist(fs.sample(i), fs.sample(next)));
        }
    }
    let mut flat = Vec::with_capacity(m * d);
    for &i in &chosen {
        flat.extend_from_slice(fs.sample(i));
    }
    DMatrix::from_vec(d, m, flat)
}

fn recompute_centers(fs: &FeatureSet, assigned: &[(usize, f64)], m: usize) -> DMatrix<f64> {
    let d = fs.dim();
    let mut sums = DMatrix::<f64>::zeros(d, m);
    let mut counts = vec![0usize; m];
    for (i, &(j, _)) in assigned.iter().enumerate() {
        counts[j] += 1;
        let mut c = sums.column_mut(j);
        for (s, v) in c.iter_mut().zip(fs.sample(i)) {
            *s += v;
        }
    }
    let mut used = vec![false; fs.n()];
    let mut by_distance: Vec<usize> = (0..fs.n()).collect();
    by_distance.sort_by(|&a, &b| assigned[b].1.total_cmp(&assigned[a].1).then(a.cmp(&b)));
    let mut far = by_distance.into_iter();
    for j in 0..m {
        if counts[j] > 0 {
            let inv = 1.0 / counts[j] as f64;
            sums.column_mut(j).iter_mut().for_each(|v| *v *= inv);
        } else {
            let i = far
                .by_ref()
                .find(|&i| !used[i])
                .expect("m <= n leaves a sample to reseed from");
            used[i] = true;
            log::info!("k-means: cluster {j} emptied, reseeded at sample {i}");
            sums.column_mut(j).copy_from_slice(fs.sample(i));
        }
    }
    sums
}

/// `m` distinct samples drawn uniformly as anchors; samples are assigned to
/// their nearest drawn anchor.
pub fn random_anchor_set(fs: &FeatureSet, m: usize, seed: u64) -> Result<AnchorSet> {
    check_count(fs, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, fs.n(), m);
    let d = fs.dim();
    let mut flat = Vec::with_capacity(m * d);
    for i in picks.iter() {
        flat.extend_from_slice(fs.sample(i));
    }
    AnchorSet::from_centers(DMatrix::from_vec(d, m, flat), fs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> FeatureSet {
        let rows: Vec<Vec<f64>> = points.iter().map(|&p| vec![p]).collect();
        FeatureSet::from_rows(&rows).unwrap()
    }

    fn blobs(seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..120)
            .map(|i| {
                let c = (i % 3) as f64 * 10.0;
                vec![c + rng.random::<f64>(), -c + rng.random::<f64>()]
            })
            .collect();
        FeatureSet::from_rows(&rows).unwrap()
    }

    #[test]
    fn two_separated_points() {
        let a = kmeans(&line(&[0.0, 10.0]), 2, 1, 100).unwrap();
        let mut c: Vec<f64> = (0..2).map(|j| a.center(j)[0]).collect();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.0, 10.0]);
    }

    #[test]
    fn n_equals_m_is_exact() {
        let fs = blobs(3);
        let sub = fs.select(&(0..12).collect::<Vec<_>>());
        let a = kmeans(&sub, 12, 9, 100).unwrap();
        assert_eq!(a.wcss(&sub), 0.0);
    }

    #[test]
    fn too_many_anchors() {
        assert!(matches!(kmeans(&line(&[0.0, 1.0]), 3, 0, 10), Err(JpshError::Param(_))));
        assert!(matches!(
            random_anchor_set(&line(&[0.0, 1.0]), 3, 0),
            Err(JpshError::Param(_))
        ));
    }

    #[test]
    fn wcss_never_increases() {
        for seed in 0..5 {
            let (_, trace) = kmeans_with_trace(&blobs(seed), 5, seed, 100).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{trace:?}");
            }
        }
    }

    #[test]
    fn converged_assignment_is_a_fixpoint() {
        let fs = blobs(11);
        let a = kmeans(&fs, 4, 2, 100).unwrap();
        for i in 0..fs.n() {
            assert_eq!(a.nearest(fs.sample(i)).0, a.assignment()[i]);
        }
        let again = recompute_centers(
            &fs,
            &a.assignment().iter().map(|&j| (j, 0.0)).collect::<Vec<_>>(),
            a.m(),
        );
        let re = AnchorSet::from_centers(again, &fs).unwrap();
        assert_eq!(re.assignment(), a.assignment());
    }

    #[test]
    fn kmeans_is_deterministic() {
        let fs = blobs(5);
        assert_eq!(kmeans(&fs, 6, 77, 100).unwrap(), kmeans(&fs, 6, 77, 100).unwrap());
    }

    #[test]
    fn duplicate_points_still_give_m_centers() {
        let fs = line(&[1.0, 1.0, 1.0, 1.0, 2.0]);
        let a = kmeans(&fs, 3, 0, 20).unwrap();
        assert_eq!(a.m(), 3);
        assert!(a.assignment().iter().all(|&j| j < 3));
    }

    #[test]
    fn random_anchors_exhaustive_and_deterministic() {
        let fs = line(&[3.0, 1.0, 4.0, 1.5, 9.0]);
        let a = random_anchor_set(&fs, 5, 4).unwrap();
        let mut got: Vec<f64> = (0..5).map(|j| a.center(j)[0]).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![1.0, 1.5, 3.0, 4.0, 9.0]);
        assert_eq!(a, random_anchor_set(&fs, 5, 4).unwrap());
        for i in 0..fs.n() {
            assert_eq!(a.nearest(fs.sample(i)).1, 0.0);
        }
    }
}
