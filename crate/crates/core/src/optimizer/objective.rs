use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::updates::{block_distance, row_norms};
use super::{JpshModel, Mode, WorkState};
use crate::data_io::FeatureSet;
use crate::error::{JpshError, Result};
use crate::linalg::col;

/// Objective value and its five weighted terms, in order: anchor-code fit,
/// affinity-weighted pairwise fit, `λ₁Σ‖P_j‖²₂,₁`,
/// `λ₂ΣS_ij‖P_i − P_j‖_F` and `λ₃‖W‖₂,₁`. Terms switched off by the mode
/// are reported as zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub total: f64,
    pub terms: [f64; 5],
}

pub fn objective(model: &JpshModel, ws: &WorkState, fs: &FeatureSet) -> Result<Objective> {
    let (d, m) = ws.centers.shape();
    let l = model.b.nrows();
    let checks = [
        (model.p.shape(), (m * d, l), "P"),
        (model.w.shape(), (d, l), "W"),
        (model.r.shape(), (l, l), "R"),
        (model.v.shape(), (l, l), "V"),
        (model.b.shape(), (l, m), "B"),
        ((fs.dim(), fs.n()), (d, ws.affinity.n()), "X"),
    ];
    for (got, want, name) in checks {
        if got != want {
            return Err(JpshError::Shape(format!("{name} is {got:?}, expected {want:?}")));
        }
    }
    let hyper = &model.hyper;
    let mut terms = [0.0; 5];
    if hyper.mode != Mode::JshOnly {
        terms[0] = anchor_fit(model, ws);
        terms[2] = hyper.lambda1 * personalized_sparsity(&model.p, d);
        terms[3] = hyper.lambda2 * network_penalty(&model.p, d, ws);
    }
    if hyper.mode != Mode::PshOnly {
        terms[1] = pairwise_fit(model, ws, fs);
        terms[4] = hyper.lambda3 * row_norms(&model.w).iter().sum::<f64>();
    }
    Ok(Objective {
        total: terms.iter().sum(),
        terms,
    })
}

/// `Σ_j ‖b_j − R P_jᵀ c_j‖²`.
fn anchor_fit(model: &JpshModel, ws: &WorkState) -> f64 {
    let codes = &model.r * super::updates::personalized_codes(&model.p, &ws.centers);
    (&model.b - codes).norm_squared()
}

/// `Σ_{i,j} A_ij ‖b_j − V Wᵀ x_i‖²`.
fn pairwise_fit(model: &JpshModel, ws: &WorkState, fs: &FeatureSet) -> f64 {
    let proj = &model.v * (model.w.transpose() * fs.columns()); // l × n
    let mut total = 0.0;
    for i in 0..fs.n() {
        let z = col(&proj, i);
        for &(j, a) in ws.affinity.row(i) {
            let b = col(&model.b, j);
            let dist: f64 = b.iter().zip(z).map(|(b, z)| (b - z) * (b - z)).sum();
            total += a * dist;
        }
    }
    total
}

/// `Σ_j ‖P_j‖²₂,₁`.
pub fn personalized_sparsity(p: &DMatrix<f64>, d: usize) -> f64 {
    row_norms(p)
        .chunks(d)
        .map(|block| block.iter().sum::<f64>().powi(2))
        .sum()
}

/// `Σ_{i,j} S_ij ‖P_i − P_j‖_F` over ordered pairs.
fn network_penalty(p: &DMatrix<f64>, d: usize, ws: &WorkState) -> f64 {
    let s = &ws.similarity;
    let m = s.m();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let sij = s.get(i, j);
            if sij != 0.0 {
                total += sij * block_distance(p, d, i, j);
            }
        }
    }
    total
}
