//! Linear solves for the personalized-weight and pairwise-weight updates.
//!
//! The personalized system is
//! `(λ₁K + λ₂(G ⊗ I_d) + YYᵀ + ρI) P = Y Bᵀ R`, with `K` diagonal, `G` an
//! `m × m` Laplacian-like matrix and `Y = diag(c₁, …, c_m)`. Small systems are
//! materialized and factored; larger ones run preconditioned conjugate
//! gradients with an exact inverse of every diagonal block
//! (`diag + c_j c_jᵀ`, by Sherman–Morrison) as the preconditioner.

use nalgebra::DMatrix;

use crate::error::{JpshError, Result};
use crate::linalg::col;

/// Systems up to this order are solved densely.
pub const DENSE_LIMIT: usize = 4096;
pub const CG_TOL: f64 = 1e-10;
/// Relative residual above which a solve is reported as failed.
pub const RESIDUAL_LIMIT: f64 = 1e-8;
const PIVOT_FLOOR: f64 = 1e-12;

/// Operator `λ₁K + λ₂(G ⊗ I_d) + YYᵀ + ρI` for the personalized weights.
pub struct PersonalizedSystem<'a> {
    pub centers: &'a DMatrix<f64>,
    /// `λ₁K + ρ`, length `m·d`.
    pub diag: Vec<f64>,
    /// `λ₂G`.
    pub coupling: DMatrix<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl<'a> PersonalizedSystem<'a> {
    pub fn new(centers: &'a DMatrix<f64>, diag: Vec<f64>, coupling: DMatrix<f64>) -> Self {
        let m = centers.ncols();
        let neighbors = (0..m)
            .map(|j| {
                (0..m)
                    .filter(|&i| i != j && coupling[(j, i)] != 0.0)
                    .map(|i| (i, coupling[(j, i)]))
                    .collect()
            })
            .collect();
        PersonalizedSystem {
            centers,
            diag,
            coupling,
            neighbors,
        }
    }

    fn d(&self) -> usize {
        self.centers.nrows()
    }

    fn m(&self) -> usize {
        self.centers.ncols()
    }

    pub fn order(&self) -> usize {
        self.d() * self.m()
    }

    /// `out = M·x` for an `md × l` right-hand side.
    pub fn apply(&self, x: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let (d, m, l) = (self.d(), self.m(), x.ncols());
        let md = d * m;
        for t in 0..l {
            let xs = &x.as_slice()[t * md..(t + 1) * md];
            let os = &mut out.as_mut_slice()[t * md..(t + 1) * md];
            for j in 0..m {
                let c = col(self.centers, j);
                let xb = &xs[j * d..(j + 1) * d];
                let proj: f64 = c.iter().zip(xb).map(|(a, b)| a * b).sum();
                let gjj = self.coupling[(j, j)];
                let ob = &mut os[j * d..(j + 1) * d];
                let db = &self.diag[j * d..(j + 1) * d];
                for r in 0..d {
                    ob[r] = (db[r] + gjj) * xb[r] + c[r] * proj;
                }
                for &(i, g) in &self.neighbors[j] {
                    let xi = &xs[i * d..(i + 1) * d];
                    for r in 0..d {
                        ob[r] += g * xi[r];
                    }
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (d, m) = (self.d(), self.m());
        let mut a = DMatrix::zeros(d * m, d * m);
        for j in 0..m {
            let c = col(self.centers, j);
            for r in 0..d {
                for s in 0..d {
                    a[(j * d + r, j * d + s)] = c[r] * c[s];
                }
                a[(j * d + r, j * d + r)] += self.diag[j * d + r];
            }
            for i in 0..m {
                let g = self.coupling[(j, i)];
                if g != 0.0 {
                    for r in 0..d {
                        a[(j * d + r, i * d + r)] += g;
                    }
                }
            }
        }
        a
    }

    /// Applies the block preconditioner: exact inverse of
    /// `diag_j + G_jj I + c_j c_jᵀ` for every anchor block.
    fn precondition(&self, z: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let (d, m, l) = (self.d(), self.m(), z.ncols());
        let md = d * m;
        let mut inv = vec![0.0; d];
        for j in 0..m {
            let c = col(self.centers, j);
            let gjj = self.coupling[(j, j)];
            for r in 0..d {
                inv[r] = 1.0 / (self.diag[j * d + r] + gjj);
            }
            let denom = 1.0 + c.iter().zip(&inv).map(|(c, e)| c * c * e).sum::<f64>();
            for t in 0..l {
                let zb = &z.as_slice()[t * md + j * d..t * md + (j + 1) * d];
                let num: f64 = (0..d).map(|r| c[r] * inv[r] * zb[r]).sum();
                let scale = num / denom;
                let ob = &mut out.as_mut_slice()[t * md + j * d..t * md + (j + 1) * d];
                for r in 0..d {
                    ob[r] = inv[r] * zb[r] - inv[r] * c[r] * scale;
                }
            }
        }
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if self.order() <= DENSE_LIMIT {
            solve_spd_dense(self.to_dense(), rhs, "personalized-weight")
        } else {
            self.solve_pcg(rhs)
        }
    }

    /// Preconditioned conjugate gradients, one independent recurrence per
    /// right-hand-side column.
    pub fn solve_pcg(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (n, l) = rhs.shape();
        let mut x = DMatrix::zeros(n, l);
        let mut r = rhs.clone();
        let mut z = DMatrix::zeros(n, l);
        self.precondition(&r, &mut z);
        let mut p = z.clone();
        let mut ap = DMatrix::zeros(n, l);
        let bnorm: Vec<f64> = rhs.column_iter().map(|c| c.norm()).collect();
        let mut rz: Vec<f64> = (0..l).map(|t| r.column(t).dot(&z.column(t))).collect();
        let mut done: Vec<bool> = bnorm.iter().map(|&b| b == 0.0).collect();
        let max_iter = 20 * n.max(100);
        for _ in 0..max_iter {
            if done.iter().all(|&d| d) {
                break;
            }
            self.apply(&p, &mut ap);
            for t in 0..l {
                if done[t] {
                    continue;
                }
                let pap = p.column(t).dot(&ap.column(t));
                if pap <= 0.0 || !pap.is_finite() {
                    return Err(JpshError::Solver(
                        "personalized-weight system is not positive definite; set ridge > 0".into(),
                    ));
                }
                let alpha = rz[t] / pap;
                x.column_mut(t).axpy(alpha, &p.column(t), 1.0);
                r.column_mut(t).axpy(-alpha, &ap.column(t), 1.0);
                if r.column(t).norm() <= CG_TOL * bnorm[t] {
                    done[t] = true;
                }
            }
            self.precondition(&r, &mut z);
            for t in 0..l {
                if done[t] {
                    continue;
                }
                let rz_new = r.column(t).dot(&z.column(t));
                let beta = rz_new / rz[t];
                rz[t] = rz_new;
                let zt = z.column(t).clone_owned();
                let mut pt = p.column_mut(t);
                pt *= beta;
                pt += zt;
            }
        }
        // final check against the true residual
        self.apply(&x, &mut ap);
        for t in 0..l {
            if bnorm[t] == 0.0 {
                continue;
            }
            let res = (rhs.column(t) - ap.column(t)).norm() / bnorm[t];
            if !(res <= RESIDUAL_LIMIT) {
                return Err(JpshError::Solver(format!(
                    "conjugate gradients stalled at relative residual {res:.3e}; increase ridge"
                )));
            }
        }
        Ok(x)
    }
}

/// Solves `A X = B` for symmetric positive definite `A` by Cholesky on the
/// unit-diagonal rescaling of `A`. Near-zero scaled pivots are reported as a
/// singular system.
pub fn solve_spd_dense(mut a: DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let singular = || {
        JpshError::Solver(format!(
            "{what} system is singular or indefinite; set ridge > 0 to regularize it"
        ))
    };
    let mut scale = vec![0.0; n];
    for i in 0..n {
        let v = a[(i, i)];
        if !(v > 0.0) || !v.is_finite() {
            return Err(singular());
        }
        scale[i] = 1.0 / v.sqrt();
    }
    for j in 0..n {
        for i in 0..n {
            a[(i, j)] *= scale[i] * scale[j];
        }
    }
    let chol = a.clone().cholesky().ok_or_else(singular)?;
    let l = chol.l_dirty();
    if (0..n).any(|i| l[(i, i)] * l[(i, i)] < PIVOT_FLOOR) {
        return Err(singular());
    }
    let mut scaled_rhs = rhs.clone();
    for (i, mut row) in scaled_rhs.row_iter_mut().enumerate() {
        row *= scale[i];
    }
    let mut x = chol.solve(&scaled_rhs);
    let res = (&a * &x - &scaled_rhs).norm();
    let bnorm = scaled_rhs.norm();
    if bnorm > 0.0 && !(res <= RESIDUAL_LIMIT * bnorm) {
        return Err(JpshError::Solver(format!(
            "{what} solve residual {:.3e} exceeds tolerance",
            res / bnorm
        )));
    }
    for (i, mut row) in x.row_iter_mut().enumerate() {
        row *= scale[i];
    }
    Ok(x)
}
