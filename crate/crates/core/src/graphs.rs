//! Truncated sample-to-anchor affinity and anchor-to-anchor similarity.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::data_io::FeatureSet;
use crate::error::{JpshError, Result};
use crate::linalg::{self, col};

/// Kernel bandwidth: a fixed positive value or derived from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

impl Bandwidth {
    fn check(self, name: &str) -> Result<()> {
        match self {
            Bandwidth::Fixed(v) if !(v > 0.0 && v.is_finite()) => Err(JpshError::Param(format!(
                "{name} must be positive and finite, got {v}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Row-stochastic `n × m` affinity with `min(k, m)` nonzeros per row, placed at
/// each sample's nearest anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorAffinity {
    rows: Vec<Vec<(usize, f64)>>,
    m: usize,
    k: usize,
    theta: f64,
}

impl AnchorAffinity {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Nonzeros of row `i` as `(anchor, weight)`, ascending by distance.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|e| e.0 == j)
            .map_or(0.0, |e| e.1)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n(), self.m);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                a[(i, j)] = v;
            }
        }
        a
    }

    /// `Z·A` for a `p × n` matrix `Z`.
    pub fn right_apply(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(z.ncols(), self.n(), "right_apply: Z must have n columns");
        let p = z.nrows();
        let mut out = DMatrix::zeros(p, self.m);
        for (i, row) in self.rows.iter().enumerate() {
            let zi = col(z, i);
            for &(j, w) in row {
                let o = &mut out.as_mut_slice()[j * p..(j + 1) * p];
                for (o, v) in o.iter_mut().zip(zi) {
                    *o += w * v;
                }
            }
        }
        out
    }

    pub fn total_weight(&self) -> f64 {
        self.rows.iter().flatten().map(|e| e.1).sum()
    }

    pub fn write_coo_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "row,col,value")?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut sorted = row.clone();
            sorted.sort_by_key(|e| e.0);
            for (j, v) in sorted {
                writeln!(w, "{i},{j},{v}")?;
            }
        }
        Ok(())
    }
}

/// Builds the truncated affinity between samples and anchors.
///
/// Each row holds kernel weights `exp(-‖x_i − c_j‖²/θ)` over the `k` nearest
/// anchors, normalized to sum to one. The kernel is evaluated relative to the
/// nearest anchor's distance, which leaves the normalized values unchanged and
/// keeps small `θ` from underflowing. `Bandwidth::Auto` sets `θ` to the mean
/// squared distance from a sample to its k-th nearest anchor.
pub fn build_affinity(
    fs: &FeatureSet,
    anchors: &AnchorSet,
    k: usize,
    theta: Bandwidth,
) -> Result<AnchorAffinity> {
    let m = anchors.m();
    if k == 0 || k > m {
        return Err(JpshError::Param(format!("k={k} must satisfy 1 <= k <= m={m}")));
    }
    if fs.dim() != anchors.dim() {
        return Err(JpshError::Shape(format!(
            "features have d={}, anchors have d={}",
            fs.dim(),
            anchors.dim()
        )));
    }
    theta.check("theta")?;
    let neighbors = linalg::nearest_k(fs.columns(), anchors.centers(), k);
    let theta = match theta {
        Bandwidth::Fixed(t) => t,
        Bandwidth::Auto => {
            let mean = neighbors.iter().map(|nb| nb[k - 1].1).sum::<f64>() / fs.n() as f64;
            if mean > 0.0 {
                mean
            } else {
                log::info!("affinity: all samples sit on their anchors, using theta = 1");
                1.0
            }
        }
    };
    let rows = neighbors
        .into_iter()
        .enumerate()
        .map(|(i, nb)| {
            let base = nb[0].1;
            let mut row: Vec<(usize, f64)> = nb
                .iter()
                .map(|&(j, dist)| (j, (-(dist - base) / theta).exp()))
                .collect();
            let total: f64 = row.iter().map(|e| e.1).sum();
            if total > 0.0 && total.is_finite() {
                row.iter_mut().for_each(|e| e.1 /= total);
            } else {
                log::warn!("affinity: kernel row {i} degenerate, using uniform weights");
                let u = 1.0 / row.len() as f64;
                row.iter_mut().for_each(|e| e.1 = u);
            }
            row
        })
        .collect();
    Ok(AnchorAffinity { rows, m, k, theta })
}

/// Symmetric anchor similarity: nonzero between anchors where either is among
/// the other's `ψ` nearest anchors (an anchor is never its own neighbor).
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSimilarity {
    values: DMatrix<f64>,
    psi: usize,
    delta: f64,
}

impl AnchorSimilarity {
    /// All-zero similarity, used when there is a single anchor.
    pub fn empty(m: usize) -> Self {
        AnchorSimilarity {
            values: DMatrix::zeros(m, m),
            psi: 0,
            delta: 1.0,
        }
    }

    pub fn from_dense(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(JpshError::Shape("similarity must be square".into()));
        }
        Ok(AnchorSimilarity {
            values,
            psi: 0,
            delta: 1.0,
        })
    }

    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    pub fn psi(&self) -> usize {
        self.psi
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn write_coo_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "row,col,value")?;
        for i in 0..self.m() {
            for j in 0..self.m() {
                let v = self.values[(i, j)];
                if v != 0.0 {
                    writeln!(w, "{i},{j},{v}")?;
                }
            }
        }
        Ok(())
    }
}

/// `Bandwidth::Auto` sets `δ` to the mean distance between an anchor and its
/// `ψ` neighbors.
pub fn build_anchor_similarity(
    anchors: &AnchorSet,
    psi: usize,
    delta: Bandwidth,
) -> Result<AnchorSimilarity> {
    let m = anchors.m();
    if psi == 0 || psi >= m {
        return Err(JpshError::Param(format!("psi={psi} must satisfy 1 <= psi <= m-1 = {}", m as isize - 1)));
    }
    delta.check("delta")?;
    let c = anchors.centers();
    let mut dist = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let v = linalg::sq_dist(col(c, i), col(c, j));
            dist[(i, j)] = v;
            dist[(j, i)] = v;
        }
    }
    let neighbors: Vec<Vec<usize>> = (0..m)
        .map(|i| {
            let mut others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| dist[(i, a)].total_cmp(&dist[(i, b)]).then(a.cmp(&b)));
            others.truncate(psi);
            others
        })
        .collect();
    let delta = match delta {
        Bandwidth::Fixed(v) => v,
        Bandwidth::Auto => {
            let (sum, cnt) = neighbors.iter().enumerate().fold((0.0, 0usize), |acc, (i, nb)| {
                (acc.0 + nb.iter().map(|&j| dist[(i, j)].sqrt()).sum::<f64>(), acc.1 + nb.len())
            });
            let mean = sum / cnt as f64;
            if mean > 0.0 {
                mean
            } else {
                1.0
            }
        }
    };
    let mut values = DMatrix::zeros(m, m);
    for (i, nb) in neighbors.iter().enumerate() {
        for &j in nb {
            let v = (-dist[(i, j)] / (delta * delta)).exp();
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    Ok(AnchorSimilarity { values, psi, delta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_anchors(points: &[f64]) -> AnchorSet {
        let c = DMatrix::from_column_slice(1, points.len(), points);
        AnchorSet::new(c, vec![]).unwrap()
    }

    fn line_fs(points: &[f64]) -> FeatureSet {
        let rows: Vec<Vec<f64>> = points.iter().map(|&p| vec![p]).collect();
        FeatureSet::from_rows(&rows).unwrap()
    }

    #[test]
    fn single_anchor_gives_ones() {
        let a = build_affinity(&line_fs(&[1.0, 5.0, -3.0]), &line_anchors(&[0.0]), 1, Bandwidth::Auto)
            .unwrap();
        let dense = a.to_dense();
        assert_eq!(dense, DMatrix::from_element(3, 1, 1.0));
    }

    #[test]
    fn full_softmax_when_k_equals_m() {
        let fs = line_fs(&[0.3, 2.0, 7.5]);
        let anchors = line_anchors(&[0.0, 1.0, 5.0]);
        let a = build_affinity(&fs, &anchors, 3, Bandwidth::Fixed(2.0)).unwrap();
        for i in 0..3 {
            assert_eq!(a.row(i).len(), 3);
            let x = fs.sample(i)[0];
            let raw: Vec<f64> = [0.0, 1.0, 5.0]
                .iter()
                .map(|c: &f64| (-(x - c).powi(2) / 2.0).exp())
                .collect();
            let s: f64 = raw.iter().sum();
            for j in 0..3 {
                assert!((a.get(i, j) - raw[j] / s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equidistant_pair_splits_evenly() {
        let a = build_affinity(&line_fs(&[0.0]), &line_anchors(&[-1.0, 1.0, 9.0]), 2, Bandwidth::Fixed(0.7))
            .unwrap();
        assert_eq!(a.get(0, 0), 0.5);
        assert_eq!(a.get(0, 1), 0.5);
        assert_eq!(a.get(0, 2), 0.0);
    }

    #[test]
    fn k_larger_than_m_rejected() {
        let err = build_affinity(&line_fs(&[0.0]), &line_anchors(&[1.0]), 2, Bandwidth::Auto);
        assert!(matches!(err, Err(JpshError::Param(_))));
        let err = build_affinity(&line_fs(&[0.0]), &line_anchors(&[1.0]), 1, Bandwidth::Fixed(-1.0));
        assert!(matches!(err, Err(JpshError::Param(_))));
    }

    #[test]
    fn tiny_theta_goes_one_hot() {
        let fs = line_fs(&[0.1, 0.9, 4.2]);
        let anchors = line_anchors(&[0.0, 1.0, 4.0, 5.0]);
        let auto = build_affinity(&fs, &anchors, 3, Bandwidth::Auto).unwrap();
        let a = build_affinity(&fs, &anchors, 3, Bandwidth::Fixed(auto.theta() * 1e-6)).unwrap();
        for i in 0..3 {
            let nearest = anchors.nearest(fs.sample(i)).0;
            assert!((a.get(i, nearest) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn collinear_or_rule() {
        let s = build_anchor_similarity(&line_anchors(&[0.0, 1.0, 10.0]), 1, Bandwidth::Fixed(3.0)).unwrap();
        // N(0) = {1}, N(1) = {0}, N(2) = {1}
        assert!(s.get(0, 1) > 0.0 && s.get(0, 1) == s.get(1, 0));
        assert_eq!(s.get(0, 2), 0.0);
        assert_eq!(s.get(2, 0), 0.0);
        assert!(s.get(1, 2) > 0.0 && s.get(1, 2) == s.get(2, 1));
        assert!((s.get(0, 1) - (-1.0f64 / 9.0).exp()).abs() < 1e-15);
        assert!((s.get(1, 2) - (-81.0f64 / 9.0).exp()).abs() < 1e-15);
        for i in 0..3 {
            assert_eq!(s.get(i, i), 0.0);
        }
    }

    #[test]
    fn identical_anchors_are_fully_similar() {
        let s = build_anchor_similarity(&line_anchors(&[2.0, 2.0, 7.0]), 1, Bandwidth::Auto).unwrap();
        assert_eq!(s.get(0, 1), 1.0);
    }

    #[test]
    fn psi_bounds() {
        let anchors = line_anchors(&[0.0, 1.0, 2.0]);
        assert!(matches!(build_anchor_similarity(&anchors, 3, Bandwidth::Auto), Err(JpshError::Param(_))));
        assert!(matches!(build_anchor_similarity(&anchors, 0, Bandwidth::Auto), Err(JpshError::Param(_))));
    }

    #[test]
    fn right_apply_matches_dense() {
        let fs = line_fs(&[0.0, 0.5, 3.0, 4.4]);
        let anchors = line_anchors(&[0.0, 1.0, 4.0]);
        let a = build_affinity(&fs, &anchors, 2, Bandwidth::Auto).unwrap();
        let z = DMatrix::from_fn(2, 4, |i, j| (i + 2 * j) as f64 - 1.5);
        let got = a.right_apply(&z);
        let want = &z * a.to_dense();
        assert!((got - want).abs().max() < 1e-14);
    }

    #[test]
    fn coo_dump_has_header_and_entries() {
        let s = build_anchor_similarity(&line_anchors(&[0.0, 1.0, 10.0]), 1, Bandwidth::Auto).unwrap();
        let mut out = Vec::new();
        s.write_coo_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("row,col,value\n"));
        assert_eq!(text.lines().count(), 1 + 4);
    }
}
