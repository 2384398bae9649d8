//! Train-encode-evaluate runs for every method on one train/test split.
//!
//! The training set doubles as the retrieval database; test samples are the
//! queries. Methods that share anchors and graphs share one preparation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::baselines::{lsh_encode_batch, lsh_train};
use crate::data_io::{self, FeatureSet};
use crate::encoder::{CodeSet, Encoder};
use crate::error::{JpshError, Result};
use crate::metrics::{evaluate, EvalOptions, EvalReport};
use crate::model_io::Model;
use crate::optimizer::{prepare, train_prepared, AnchorInit, Hyperparams, Mode, Prepared, TrainTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Jpsh,
    JshOnly,
    PshOnly,
    /// JPSH on randomly sampled anchors.
    Jpsh0,
    Lsh,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Jpsh, Method::JshOnly, Method::PshOnly, Method::Jpsh0, Method::Lsh];

    /// Hyperparameters for this method derived from a base setting.
    pub fn hyper(self, base: &Hyperparams) -> Hyperparams {
        let mut h = base.clone();
        match self {
            Method::Jpsh | Method::Lsh => {
                h.mode = Mode::Jpsh;
                h.anchor_init = AnchorInit::Kmeans;
            }
            Method::JshOnly => {
                h.mode = Mode::JshOnly;
                h.anchor_init = AnchorInit::Kmeans;
            }
            Method::PshOnly => {
                h.mode = Mode::PshOnly;
                h.anchor_init = AnchorInit::Kmeans;
            }
            Method::Jpsh0 => {
                h.mode = Mode::Jpsh;
                h.anchor_init = AnchorInit::Random;
            }
        }
        h
    }
}

impl std::str::FromStr for Method {
    type Err = JpshError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "jpsh" => Ok(Method::Jpsh),
            "jsh" | "jsh-only" => Ok(Method::JshOnly),
            "psh" | "psh-only" => Ok(Method::PshOnly),
            "jpsh0" => Ok(Method::Jpsh0),
            "lsh" => Ok(Method::Lsh),
            other => Err(JpshError::Param(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Jpsh => "jpsh",
            Method::JshOnly => "jsh-only",
            Method::PshOnly => "psh-only",
            Method::Jpsh0 => "jpsh0",
            Method::Lsh => "lsh",
        })
    }
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub model: Model,
    pub trace: Option<TrainTrace>,
    pub report: EvalReport,
}

/// Database and query codes for a trained model.
pub fn encode_split(model: &Model, train: &FeatureSet, test: &FeatureSet) -> Result<(CodeSet, CodeSet)> {
    match model {
        Model::Jpsh(m) => {
            let enc = Encoder::new(m);
            Ok((enc.encode_batch(train)?, enc.encode_batch(test)?))
        }
        Model::Lsh(m) => Ok((lsh_encode_batch(m, train)?, lsh_encode_batch(m, test)?)),
    }
}

pub fn evaluate_model(
    model: &Model,
    train: &FeatureSet,
    test: &FeatureSet,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let (db, queries) = encode_split(model, train, test)?;
    let missing = || JpshError::Label("evaluation needs labels on train and test samples".into());
    let db_labels = train.labels().ok_or_else(missing)?;
    let query_labels = test.labels().ok_or_else(missing)?;
    evaluate(&queries, query_labels, &db, db_labels, opts)
}

/// Trains the model for one method (no evaluation).
pub fn train_method(
    train: &FeatureSet,
    base: &Hyperparams,
    method: Method,
    cache: &mut HashMap<AnchorInit, Prepared>,
) -> Result<(Model, Option<TrainTrace>)> {
    let hyper = method.hyper(base);
    if method == Method::Lsh {
        let mut lsh = lsh_train(train.dim(), hyper.bits, hyper.seed)?;
        if hyper.center {
            lsh = lsh.with_center(data_io::column_mean(train))?;
        }
        return Ok((Model::Lsh(lsh), None));
    }
    let prepared = match cache.entry(hyper.anchor_init) {
        std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
        std::collections::hash_map::Entry::Vacant(e) => e.insert(prepare(train, &hyper)?),
    };
    let (model, trace) = train_prepared(prepared, &hyper)?;
    Ok((Model::Jpsh(model), Some(trace)))
}

/// Trains and evaluates every requested method with one base setting.
pub fn run_methods(
    train: &FeatureSet,
    test: &FeatureSet,
    base: &Hyperparams,
    methods: &[Method],
    opts: &EvalOptions,
) -> Result<Vec<MethodRun>> {
    let mut cache = HashMap::new();
    let mut opts = opts.clone();
    if opts.seeds.is_empty() {
        opts.seeds = vec![base.seed];
    }
    methods
        .iter()
        .map(|&method| {
            let (model, trace) = train_method(train, base, method, &mut cache)?;
            let report = evaluate_model(&model, train, test, &opts)?;
            log::info!("{method}: mAP {:.4}", report.map);
            Ok(MethodRun {
                method,
                model,
                trace,
                report,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub bits: usize,
    pub seeds: Vec<u64>,
    pub map_mean: f64,
    pub map_std: f64,
    pub map_at_100_mean: Option<f64>,
    pub runs: Vec<EvalReport>,
}

/// Mean and population standard deviation of mAP over seeded runs.
pub fn summarize(method: Method, bits: usize, runs: Vec<EvalReport>) -> CellSummary {
    let n = runs.len().max(1) as f64;
    let maps: Vec<f64> = runs.iter().map(|r| r.map).collect();
    let mean = maps.iter().sum::<f64>() / n;
    let var = maps.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    let at100: Vec<f64> = runs.iter().filter_map(|r| r.map_at.get(&100).copied()).collect();
    CellSummary {
        method,
        bits,
        seeds: runs.iter().flat_map(|r| r.meta.seeds.iter().copied()).collect(),
        map_mean: mean,
        map_std: var.sqrt(),
        map_at_100_mean: (at100.len() == runs.len() && !runs.is_empty())
            .then(|| at100.iter().sum::<f64>() / n),
        runs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("pca".parse::<Method>().is_err());
        assert_eq!(Method::Jpsh0.hyper(&Hyperparams::default()).anchor_init, AnchorInit::Random);
    }
}
