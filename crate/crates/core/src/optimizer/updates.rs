//! The closed-form, SVD and sign updates of the alternating minimization,
//! together with the reweighting matrices that turn the non-smooth penalties
//! into quadratic surrogates.

use nalgebra::DMatrix;

use super::solve::{solve_spd_dense, PersonalizedSystem};
use super::{Hyperparams, Mode, WorkState};
use crate::error::{JpshError, Result};
use crate::graphs::AnchorSimilarity;
use crate::linalg::col;

/// Diagonal of `K` (length `m·d`): for row `r` of block `j`,
/// `‖P_j‖₂,₁ / (‖row r of P_j‖₂ + eps)`.
pub fn compute_k(p: &DMatrix<f64>, d: usize, eps: f64) -> Vec<f64> {
    let (md, l) = p.shape();
    assert_eq!(md % d, 0, "P must stack d-row blocks");
    let m = md / d;
    let norms = row_norms(p);
    let mut k = vec![0.0; md];
    for j in 0..m {
        let block = &norms[j * d..(j + 1) * d];
        let l21: f64 = block.iter().sum();
        for r in 0..d {
            k[j * d + r] = l21 / (block[r] + eps);
        }
    }
    debug_assert_eq!(l, p.ncols());
    k
}

/// `G` with `G_ij = −S_ij/(‖P_i − P_j‖_F + eps)` off the diagonal and the
/// diagonal making every row sum to zero.
pub fn compute_g(p: &DMatrix<f64>, d: usize, s: &AnchorSimilarity, eps: f64) -> DMatrix<f64> {
    let m = s.m();
    assert_eq!(p.nrows(), m * d, "P must have m blocks of d rows");
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        let mut diag = 0.0;
        for k in 0..m {
            let sik = s.get(i, k);
            if sik == 0.0 || k == i {
                continue;
            }
            let w = sik / (block_distance(p, d, i, k) + eps);
            g[(i, k)] = -w;
            diag += w;
        }
        g[(i, i)] = diag;
    }
    g
}

/// `‖P_i − P_j‖_F`.
pub fn block_distance(p: &DMatrix<f64>, d: usize, i: usize, j: usize) -> f64 {
    let mut acc = 0.0;
    for t in 0..p.ncols() {
        let c = col(p, t);
        for r in 0..d {
            let diff = c[i * d + r] - c[j * d + r];
            acc += diff * diff;
        }
    }
    acc.sqrt()
}

/// Diagonal of `Q`: `1 / (2(‖row i of W‖₂ + eps))`.
pub fn compute_q(w: &DMatrix<f64>, eps: f64) -> Vec<f64> {
    row_norms(w).into_iter().map(|n| 0.5 / (n + eps)).collect()
}

pub(crate) fn row_norms(a: &DMatrix<f64>) -> Vec<f64> {
    let mut sq = vec![0.0; a.nrows()];
    for c in a.column_iter() {
        for (s, v) in sq.iter_mut().zip(c.iter()) {
            *s += v * v;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// `Y Bᵀ R`: block `j` is `c_j (Rᵀ b_j)ᵀ`.
pub fn anchor_targets(centers: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, m) = centers.shape();
    let rb = r.transpose() * b; // l × m, column j = Rᵀ b_j
    let l = rb.nrows();
    DMatrix::from_fn(m * d, l, |row, t| centers[(row % d, row / d)] * rb[(t, row / d)])
}

/// The ridge actually added to the personalized-weight system.
pub fn personalized_ridge(ws: &WorkState, hyper: &Hyperparams) -> f64 {
    match hyper.ridge {
        Some(r) => r,
        None => {
            let (d, m) = ws.centers.shape();
            let trace = ws.centers.norm_squared();
            if trace > 0.0 {
                1e-8 * trace / (m * d) as f64
            } else {
                1e-8
            }
        }
    }
}

/// Builds the personalized-weight system for the current `K` and `G`.
pub fn personalized_system<'a>(ws: &'a WorkState, hyper: &Hyperparams) -> PersonalizedSystem<'a> {
    let ridge = personalized_ridge(ws, hyper);
    let diag = ws.k_diag.iter().map(|k| hyper.lambda1 * k + ridge).collect();
    let coupling = &ws.g * hyper.lambda2;
    PersonalizedSystem::new(&ws.centers, diag, coupling)
}

/// `P = (λ₁K + λ₂(G ⊗ I_d) + YYᵀ + ρI)⁻¹ Y Bᵀ R` with `K`, `G` taken from
/// the work state.
pub fn update_p(ws: &WorkState, b: &DMatrix<f64>, r: &DMatrix<f64>, hyper: &Hyperparams) -> Result<DMatrix<f64>> {
    let rhs = anchor_targets(&ws.centers, b, r);
    personalized_system(ws, hyper).solve(&rhs)
}

/// The ridge added to the pairwise-weight system: only an explicit one.
pub fn pairwise_ridge(hyper: &Hyperparams) -> f64 {
    hyper.ridge.unwrap_or(0.0)
}

/// `W = (λ₃Q + XXᵀ)⁻¹ X A Bᵀ V` with `Q` taken from the work state.
pub fn update_w(ws: &WorkState, b: &DMatrix<f64>, v: &DMatrix<f64>, hyper: &Hyperparams) -> Result<DMatrix<f64>> {
    let mut system = ws.xxt.clone();
    let ridge = pairwise_ridge(hyper);
    for (i, q) in ws.q_diag.iter().enumerate() {
        system[(i, i)] += hyper.lambda3 * q + ridge;
    }
    let rhs = &ws.xa * (b.transpose() * v);
    solve_spd_dense(system, &rhs, "pairwise-weight").map_err(|e| match e {
        JpshError::Solver(msg) => JpshError::Solver(format!(
            "{msg} (λ₃Q + XXᵀ is singular when λ₃ = 0 and n < d)"
        )),
        other => other,
    })
}

/// Orthogonal `Ω` maximizing `tr(Ω M)`: with `M = U D V̂ᵀ`, `Ω = V̂ Uᵀ`.
pub fn procrustes(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    v_t.transpose() * u.transpose()
}

/// `PᵀYBᵀ = Σ_j P_jᵀ c_j b_jᵀ`.
pub fn personalized_cross(p: &DMatrix<f64>, centers: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    personalized_codes(p, centers) * b.transpose()
}

/// `PᵀY`: column `j` is `P_jᵀ c_j`.
pub fn personalized_codes(p: &DMatrix<f64>, centers: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, m) = centers.shape();
    let l = p.ncols();
    DMatrix::from_fn(l, m, |t, j| {
        let pc = &col(p, t)[j * d..(j + 1) * d];
        pc.iter().zip(col(centers, j)).map(|(a, b)| a * b).sum()
    })
}

pub fn update_r(p: &DMatrix<f64>, ws: &WorkState, b: &DMatrix<f64>) -> DMatrix<f64> {
    procrustes(&personalized_cross(p, &ws.centers, b))
}

pub fn update_v(w: &DMatrix<f64>, ws: &WorkState, b: &DMatrix<f64>) -> DMatrix<f64> {
    procrustes(&(w.transpose() * &ws.xa * b.transpose()))
}

/// Entrywise sign with `sgn(0) = +1`.
pub fn sign_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| if v >= 0.0 { 1.0 } else { -1.0 })
}

/// The matrix whose sign gives the code update for the given mode:
/// `RPᵀY + VWᵀXA`, or one of its two terms for the ablation modes.
pub fn code_scores(
    p: &DMatrix<f64>,
    w: &DMatrix<f64>,
    r: &DMatrix<f64>,
    v: &DMatrix<f64>,
    ws: &WorkState,
    mode: Mode,
) -> DMatrix<f64> {
    let l = r.nrows();
    let m = ws.centers.ncols();
    let mut scores = DMatrix::zeros(l, m);
    if mode != Mode::JshOnly {
        scores += r * personalized_codes(p, &ws.centers);
    }
    if mode != Mode::PshOnly {
        scores += v * (w.transpose() * &ws.xa);
    }
    scores
}

pub fn update_b(
    p: &DMatrix<f64>,
    w: &DMatrix<f64>,
    r: &DMatrix<f64>,
    v: &DMatrix<f64>,
    ws: &WorkState,
    mode: Mode,
) -> DMatrix<f64> {
    sign_matrix(&code_scores(p, w, r, v, ws, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthogonality_residual;

    #[test]
    fn k_uniform_rows() {
        // 3 rows each of norm 5
        let p = DMatrix::from_row_slice(3, 2, &[3.0, 4.0, 0.0, 5.0, -4.0, 3.0]);
        let eps = 1e-3;
        let k = compute_k(&p, 3, eps);
        for v in k {
            assert!((v - 3.0 * 5.0 / (5.0 + eps)).abs() < 1e-12);
        }
    }

    #[test]
    fn k_zero_block() {
        let p = DMatrix::zeros(6, 2);
        assert!(compute_k(&p, 3, 1e-8).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn q_formula() {
        let w = DMatrix::from_row_slice(2, 2, &[0.3, 0.4, 0.0, 0.0]);
        let q = compute_q(&w, 1e-8);
        assert!((q[0] - 1.0).abs() < 1e-7);
        assert_eq!(q[1], 0.5 / 1e-8);
    }

    #[test]
    fn g_zero_similarity() {
        let p = DMatrix::from_fn(6, 2, |i, j| (i + j) as f64);
        let s = AnchorSimilarity::empty(3);
        assert_eq!(compute_g(&p, 2, &s, 1e-8), DMatrix::zeros(3, 3));
    }

    #[test]
    fn g_identical_blocks() {
        let p = DMatrix::from_fn(6, 2, |i, j| (i % 2 + j) as f64);
        let s = AnchorSimilarity::from_dense(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 0.5, 0.2, 0.5, 0.0, 0.0, 0.2, 0.0, 0.0],
        ))
        .unwrap();
        let eps = 1e-4;
        let g = compute_g(&p, 2, &s, eps);
        let rowsum: Vec<f64> = (0..3).map(|i| s.values().row(i).sum()).collect();
        for i in 0..3 {
            for j in 0..3 {
                let laplacian = if i == j { rowsum[i] } else { -s.get(i, j) };
                assert!((g[(i, j)] - laplacian / eps).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn procrustes_identity_and_spd() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert!((procrustes(&id) - &id).abs().max() < 1e-12);
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 3.0, 0.2, 0.1, 0.2, 1.5]);
        assert!((procrustes(&a) - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 0.5]));
        assert!((procrustes(&diag) - DMatrix::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn procrustes_is_orthogonal() {
        let m = DMatrix::from_fn(5, 5, |i, j| ((i * 13 + j * 7) % 11) as f64 - 5.0);
        assert!(orthogonality_residual(&procrustes(&m)) < 1e-12);
    }

    #[test]
    fn sign_convention() {
        let m = DMatrix::from_row_slice(1, 3, &[0.3, -0.3, 0.0]);
        assert_eq!(sign_matrix(&m), DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 1.0]));
    }
}
