//! Small dense kernels shared by the clustering, graph and encoding code.

use nalgebra::DMatrix;

/// Squared Euclidean distance. Four partial sums keep the loop vectorizable.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            let t = a[4 * c + k] - b[4 * c + k];
            acc[k] += t * t;
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        let t = a[i] - b[i];
        tail += t * t;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Column `j` of a column-major matrix as a slice.
#[inline]
pub fn col(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let r = m.nrows();
    &m.as_slice()[j * r..(j + 1) * r]
}

/// For every column of `points` (`d × n`), the `k` nearest columns of
/// `centers` (`d × m`) as `(index, squared distance)` pairs, ascending by
/// distance with ties broken by lower index.
///
/// Candidate distances come from one matrix product; every candidate within
/// a rounding margin of the k-th best is then re-measured exactly, so the
/// result matches a brute-force scan.
pub fn nearest_k(points: &DMatrix<f64>, centers: &DMatrix<f64>, k: usize) -> Vec<Vec<(usize, f64)>> {
    let (d, n) = points.shape();
    let m = centers.ncols();
    assert_eq!(d, centers.nrows(), "dimension mismatch");
    let k = k.min(m);
    if n == 0 || k == 0 {
        return vec![Vec::new(); n];
    }
    let pnorm: Vec<f64> = points.column_iter().map(|c| c.norm_squared()).collect();
    let cnorm: Vec<f64> = centers.column_iter().map(|c| c.norm_squared()).collect();
    let cmax = cnorm.iter().cloned().fold(0.0, f64::max);

    const BLOCK: usize = 2048;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let len = BLOCK.min(n - start);
        let block = points.columns(start, len).transpose();
        let cross = &block * centers; // len × m
        let mut approx = vec![0.0; m];
        for r in 0..len {
            let i = start + r;
            for j in 0..m {
                approx[j] = pnorm[i] + cnorm[j] - 2.0 * cross[(r, j)];
            }
            let mut sorted = approx.clone();
            let kth = if k < m {
                sorted.select_nth_unstable_by(k - 1, f64::total_cmp);
                sorted[k - 1]
            } else {
                sorted.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            };
            let margin = 1e-9 * (pnorm[i] + cmax) + 1e-300;
            let x = col(points, i);
            let mut cand: Vec<(usize, f64)> = (0..m)
                .filter(|&j| approx[j] <= kth + margin)
                .map(|j| (j, sq_dist(x, col(centers, j))))
                .collect();
            cand.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            cand.truncate(k);
            out.push(cand);
        }
        start += len;
    }
    out
}

/// Nearest column of `centers` for every column of `points`.
pub fn nearest(points: &DMatrix<f64>, centers: &DMatrix<f64>) -> Vec<(usize, f64)> {
    nearest_k(points, centers, 1)
        .into_iter()
        .map(|v| v[0])
        .collect()
}

/// `max |MᵀM − I|`.
pub fn orthogonality_residual(m: &DMatrix<f64>) -> f64 {
    let g = m.transpose() * m;
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(points: &DMatrix<f64>, centers: &DMatrix<f64>, k: usize) -> Vec<Vec<(usize, f64)>> {
        (0..points.ncols())
            .map(|i| {
                let mut all: Vec<(usize, f64)> = (0..centers.ncols())
                    .map(|j| (j, sq_dist(col(points, i), col(centers, j))))
                    .collect();
                all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                all.truncate(k);
                all
            })
            .collect()
    }

    #[test]
    fn sq_dist_matches_naive() {
        let a: Vec<f64> = (0..13).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..13).map(|i| (i * i) as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!((sq_dist(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn nearest_k_matches_brute_force() {
        let points = DMatrix::from_fn(7, 300, |i, j| ((i * 31 + j * 17) % 23) as f64 - 11.0);
        let centers = DMatrix::from_fn(7, 40, |i, j| ((i * 7 + j * 5) % 13) as f64 - 6.0);
        for k in [1, 3, 40] {
            assert_eq!(nearest_k(&points, &centers, k), brute(&points, &centers, k));
        }
    }

    #[test]
    fn ties_go_to_lower_index() {
        let points = DMatrix::from_column_slice(1, 1, &[0.0]);
        let centers = DMatrix::from_column_slice(1, 3, &[5.0, 1.0, -1.0]);
        let nn = nearest_k(&points, &centers, 2);
        assert_eq!(nn[0], vec![(1, 1.0), (2, 1.0)]);
    }
}
