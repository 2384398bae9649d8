//! Alternating minimization of the jointly personalized sparse hashing
//! objective over the personalized weights `P`, the pairwise weight `W`, the
//! rotations `R`, `V` and the anchor codes `B`.
//!
//! Each iteration runs the updates in the fixed order P → W → Q → R → V → B.
//! `K` and `G` are refreshed from the previous `P` right before the `P`
//! solve, and `Q` from the new `W` right after the `W` solve, so each solve
//! minimizes a quadratic majorizer of its non-smooth subproblem.

pub mod objective;
pub mod solve;
pub mod updates;

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::anchors::{self, AnchorSet};
use crate::data_io::{self, FeatureSet};
use crate::error::{JpshError, Result};
use crate::graphs::{self, AnchorAffinity, AnchorSimilarity, Bandwidth};
use crate::linalg;

pub use objective::{objective, Objective};
pub use updates::{
    compute_g, compute_k, compute_q, procrustes, sign_matrix, update_b, update_p, update_r,
    update_v, update_w,
};

/// Which parts of the objective are optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Personalized and pairwise branches together.
    Jpsh,
    /// Pairwise branch only (`W`, `Q`, `V`, `B`).
    JshOnly,
    /// Personalized branch only (`P`, `K`, `G`, `R`, `B`).
    PshOnly,
}

impl std::str::FromStr for Mode {
    type Err = JpshError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "jpsh" => Ok(Mode::Jpsh),
            "jsh" | "jsh-only" => Ok(Mode::JshOnly),
            "psh" | "psh-only" => Ok(Mode::PshOnly),
            other => Err(JpshError::Param(format!("unknown mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Jpsh => "jpsh",
            Mode::JshOnly => "jsh-only",
            Mode::PshOnly => "psh-only",
        })
    }
}

/// How anchors are chosen: k-means centroids, or random training samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorInit {
    Kmeans,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Code length `l`.
    pub bits: usize,
    /// Anchor count `m`.
    pub anchors: usize,
    /// Anchors per sample in the truncated affinity.
    pub k: usize,
    /// Neighbors per anchor in the anchor similarity.
    pub psi: usize,
    /// Iteration cap `T`.
    pub max_iters: usize,
    pub eps: f64,
    /// Relative objective change that counts as converged.
    pub tol: f64,
    pub mode: Mode,
    pub anchor_init: AnchorInit,
    pub seed: u64,
    /// `None` picks `1e-8·tr(YYᵀ)/(md)` for the personalized system and no
    /// ridge for the pairwise one; `Some(ρ)` adds `ρI` to both.
    pub ridge: Option<f64>,
    pub kmeans_iters: usize,
    /// Affinity bandwidth; `None` derives it from the data.
    pub theta: Option<f64>,
    /// Anchor-similarity bandwidth; `None` derives it from the data.
    pub delta: Option<f64>,
    /// Mean-center features before training (the mean is stored in the model).
    pub center: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 10.0,
            bits: 16,
            anchors: 800,
            k: 7,
            psi: 7,
            max_iters: 10,
            eps: 1e-8,
            tol: 1e-5,
            mode: Mode::Jpsh,
            anchor_init: AnchorInit::Kmeans,
            seed: 0,
            ridge: None,
            kmeans_iters: anchors::DEFAULT_KMEANS_ITERS,
            theta: None,
            delta: None,
            center: true,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(JpshError::Param(msg));
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.bits == 0 {
            return bad("bits must be >= 1".into());
        }
        if self.max_iters == 0 || self.kmeans_iters == 0 {
            return bad("iteration caps must be >= 1".into());
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be > 0, got {}", self.eps));
        }
        if !(self.tol >= 0.0) {
            return bad(format!("tol must be >= 0, got {}", self.tol));
        }
        if self.anchors == 0 {
            return bad("anchor count must be >= 1".into());
        }
        if self.k == 0 || self.k > self.anchors {
            return bad(format!("k={} must satisfy 1 <= k <= m={}", self.k, self.anchors));
        }
        if self.anchors > 1 && (self.psi == 0 || self.psi >= self.anchors) {
            return bad(format!(
                "psi={} must satisfy 1 <= psi <= m-1={}",
                self.psi,
                self.anchors - 1
            ));
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return bad(format!("ridge must be finite and >= 0, got {r}"));
            }
        }
        for (name, v) in [("theta", self.theta), ("delta", self.delta)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        Ok(())
    }

    /// The hyperparameters a mode actually uses: the pairwise-only mode drops
    /// `λ₁`, `λ₂`; the personalized-only mode drops `λ₃`.
    pub fn effective(&self) -> Hyperparams {
        let mut h = self.clone();
        match h.mode {
            Mode::Jpsh => {}
            Mode::JshOnly => {
                h.lambda1 = 0.0;
                h.lambda2 = 0.0;
            }
            Mode::PshOnly => h.lambda3 = 0.0,
        }
        h
    }

    fn same_preparation(&self, other: &Hyperparams) -> bool {
        self.anchors == other.anchors
            && self.k == other.k
            && (self.psi == other.psi || self.anchors == 1)
            && self.seed == other.seed
            && self.anchor_init == other.anchor_init
            && self.kmeans_iters == other.kmeans_iters
            && self.theta == other.theta
            && self.delta == other.delta
            && self.center == other.center
    }
}

/// A trained model. `P` is stored stacked (`m·d × l`, block `j` in rows
/// `j·d..(j+1)·d`); `B` holds ±1 anchor codes column-wise (`l × m`).
#[derive(Debug, Clone, PartialEq)]
pub struct JpshModel {
    pub p: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub anchors: AnchorSet,
    pub center_mean: Vec<f64>,
    pub hyper: Hyperparams,
}

impl JpshModel {
    pub fn bits(&self) -> usize {
        self.b.nrows()
    }

    pub fn dim(&self) -> usize {
        self.anchors.dim()
    }

    pub fn m(&self) -> usize {
        self.anchors.m()
    }

    pub fn p_block(&self, j: usize) -> DMatrix<f64> {
        let d = self.dim();
        self.p.rows(j * d, d).into_owned()
    }

    /// ℓ₂ norm of every row of every personalized block, block-major.
    pub fn p_row_norms(&self) -> Vec<f64> {
        updates::row_norms(&self.p)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let (d, m, l) = (self.dim(), self.m(), self.bits());
        let shapes = [
            (self.p.shape(), (m * d, l), "P"),
            (self.w.shape(), (d, l), "W"),
            (self.r.shape(), (l, l), "R"),
            (self.v.shape(), (l, l), "V"),
        ];
        for (got, want, name) in shapes {
            if got != want {
                return Err(JpshError::Shape(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        if self.center_mean.len() != d {
            return Err(JpshError::Shape("center mean length differs from d".into()));
        }
        if self.b.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(JpshError::Param("B has entries outside {-1, +1}".into()));
        }
        if self.p.iter().chain(self.w.iter()).any(|v| !v.is_finite()) {
            return Err(JpshError::Param("P or W has non-finite entries".into()));
        }
        for (name, rot) in [("R", &self.r), ("V", &self.v)] {
            let res = linalg::orthogonality_residual(rot);
            if res > 1e-8 {
                return Err(JpshError::Param(format!("{name} is not orthogonal (residual {res:.2e})")));
            }
        }
        Ok(())
    }
}

/// Graphs, reweighting matrices and cached products for one training set.
#[derive(Debug, Clone)]
pub struct WorkState {
    /// Anchor centers, `d × m`; `Y` is their block-diagonal arrangement.
    pub centers: DMatrix<f64>,
    pub affinity: AnchorAffinity,
    pub similarity: AnchorSimilarity,
    /// Diagonal of `K`, length `m·d`.
    pub k_diag: Vec<f64>,
    pub g: DMatrix<f64>,
    /// Diagonal of `Q`, length `d`.
    pub q_diag: Vec<f64>,
    /// `XXᵀ`, `d × d`.
    pub xxt: DMatrix<f64>,
    /// `XA`, `d × m`.
    pub xa: DMatrix<f64>,
}

impl WorkState {
    pub fn new(
        fs: &FeatureSet,
        anchors: &AnchorSet,
        affinity: AnchorAffinity,
        similarity: AnchorSimilarity,
    ) -> Result<Self> {
        if affinity.n() != fs.n() || affinity.m() != anchors.m() || similarity.m() != anchors.m() {
            return Err(JpshError::Shape("graphs do not match features and anchors".into()));
        }
        if fs.dim() != anchors.dim() {
            return Err(JpshError::Shape("anchors and features differ in d".into()));
        }
        let x = fs.columns();
        let xt = x.transpose();
        let mut xxt = x * xt;
        symmetrize(&mut xxt);
        let xa = affinity.right_apply(x);
        let mut ws = WorkState {
            centers: anchors.centers().clone(),
            affinity,
            similarity,
            k_diag: Vec::new(),
            g: DMatrix::zeros(0, 0),
            q_diag: Vec::new(),
            xxt,
            xa,
        };
        ws.reset_reweighting();
        Ok(ws)
    }

    /// Starting point of the reweighting: `K = I`, `Q = I` and `G` the
    /// Laplacian of `S` (all block gaps treated as one).
    pub fn reset_reweighting(&mut self) {
        let (d, m) = self.centers.shape();
        self.k_diag = vec![1.0; m * d];
        self.q_diag = vec![1.0; d];
        let s = self.similarity.values();
        let mut g = -s.clone();
        for i in 0..m {
            g[(i, i)] = s.row(i).iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum();
        }
        self.g = g;
    }

    pub fn dim(&self) -> usize {
        self.centers.nrows()
    }

    pub fn m(&self) -> usize {
        self.centers.ncols()
    }
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub terms: [f64; 5],
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<IterationRecord>,
    /// Iteration at which the relative change first fell below `tol`.
    pub converged_at: Option<usize>,
}

impl TrainTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Per-iteration objective and terms. Timings are left out so that
    /// reruns produce identical files.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "iter,objective,term1,term2,term3,term4,term5")?;
        for r in &self.records {
            write!(w, "{},{}", r.iter, r.objective)?;
            for t in r.terms {
                write!(w, ",{t}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Everything about a training set that does not depend on the mode or the
/// balance weights: preprocessing, anchors, graphs and cached products.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Training features after (optional) centering.
    pub train: FeatureSet,
    pub center_mean: Vec<f64>,
    pub anchors: AnchorSet,
    pub work: WorkState,
    hyper: Hyperparams,
}

/// Algorithm steps before the loop: centering, anchors, the two graphs.
pub fn prepare(fs: &FeatureSet, hyper: &Hyperparams) -> Result<Prepared> {
    hyper.validate()?;
    if fs.n() < hyper.anchors {
        return Err(JpshError::Param(format!(
            "need at least m={} training samples, got {}",
            hyper.anchors,
            fs.n()
        )));
    }
    let (train, center_mean) = if hyper.center {
        data_io::center(fs)
    } else {
        (fs.clone(), vec![0.0; fs.dim()])
    };
    let anchors = match hyper.anchor_init {
        AnchorInit::Kmeans => anchors::kmeans(&train, hyper.anchors, hyper.seed, hyper.kmeans_iters)?,
        AnchorInit::Random => anchors::random_anchor_set(&train, hyper.anchors, hyper.seed)?,
    };
    let theta = hyper.theta.map_or(Bandwidth::Auto, Bandwidth::Fixed);
    let delta = hyper.delta.map_or(Bandwidth::Auto, Bandwidth::Fixed);
    let affinity = graphs::build_affinity(&train, &anchors, hyper.k, theta)?;
    let similarity = if anchors.m() > 1 {
        graphs::build_anchor_similarity(&anchors, hyper.psi, delta)?
    } else {
        AnchorSimilarity::empty(1)
    };
    let work = WorkState::new(&train, &anchors, affinity, similarity)?;
    Ok(Prepared {
        train,
        center_mean,
        anchors,
        work,
        hyper: hyper.clone(),
    })
}

pub fn train(fs: &FeatureSet, hyper: &Hyperparams) -> Result<(JpshModel, TrainTrace)> {
    let prepared = prepare(fs, hyper)?;
    train_prepared(&prepared, hyper)
}

/// Trains one of the two single-branch ablations.
pub fn train_ablation(fs: &FeatureSet, hyper: &Hyperparams) -> Result<(JpshModel, TrainTrace)> {
    if hyper.mode == Mode::Jpsh {
        return Err(JpshError::Param("ablation training needs mode jsh-only or psh-only".into()));
    }
    train(fs, hyper)
}

fn random_orthogonal(l: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(l, l, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// Runs the alternating loop on prepared data. `hyper` may change the mode,
/// balance weights, bits and iteration settings, but must agree with the
/// preparation on anchors, graphs and centering.
pub fn train_prepared(prepared: &Prepared, hyper: &Hyperparams) -> Result<(JpshModel, TrainTrace)> {
    hyper.validate()?;
    if !hyper.same_preparation(&prepared.hyper) {
        return Err(JpshError::Param(
            "hyperparameters disagree with the prepared anchors and graphs".into(),
        ));
    }
    let hyper = hyper.effective();
    let mode = hyper.mode;
    let fs = &prepared.train;
    let mut ws = prepared.work.clone();
    ws.reset_reweighting();
    let (d, m, l) = (ws.dim(), ws.m(), hyper.bits);

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(1);
    let mut model = JpshModel {
        p: DMatrix::zeros(m * d, l),
        w: DMatrix::zeros(d, l),
        r: random_orthogonal(l, &mut rng),
        v: random_orthogonal(l, &mut rng),
        b: DMatrix::from_fn(l, m, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 }),
        anchors: prepared.anchors.clone(),
        center_mean: prepared.center_mean.clone(),
        hyper: hyper.clone(),
    };
    let use_personal = mode != Mode::JshOnly;
    let use_pairwise = mode != Mode::PshOnly;

    let mut trace = TrainTrace::default();
    for iter in 1..=hyper.max_iters {
        let started = Instant::now();
        if use_personal {
            if iter > 1 {
                ws.k_diag = compute_k(&model.p, d, hyper.eps);
                ws.g = compute_g(&model.p, d, &ws.similarity, hyper.eps);
            }
            model.p = update_p(&ws, &model.b, &model.r, &hyper)?;
        }
        if use_pairwise {
            model.w = update_w(&ws, &model.b, &model.v, &hyper)?;
            ws.q_diag = compute_q(&model.w, hyper.eps);
        }
        if use_personal {
            model.r = update_r(&model.p, &ws, &model.b);
        }
        if use_pairwise {
            model.v = update_v(&model.w, &ws, &model.b);
        }
        model.b = update_b(&model.p, &model.w, &model.r, &model.v, &ws, mode);

        let obj = objective(&model, &ws, fs)?;
        if !obj.total.is_finite() {
            return Err(JpshError::Divergence { iteration: iter });
        }
        let prev = trace.last().map(|r| r.objective);
        trace.records.push(IterationRecord {
            iter,
            objective: obj.total,
            terms: obj.terms,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!("iteration {iter}: objective {:.6e} {:?}", obj.total, obj.terms);
        if let Some(prev) = prev {
            let change = (prev - obj.total).abs() / prev.abs().max(f64::MIN_POSITIVE);
            if change < hyper.tol {
                trace.converged_at = Some(iter);
                break;
            }
        }
    }
    if !use_personal {
        model.r = DMatrix::identity(l, l);
    }
    if !use_pairwise {
        model.v = DMatrix::identity(l, l);
    }
    model.check_invariants()?;
    Ok((model, trace))
}
