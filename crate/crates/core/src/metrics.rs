//! Retrieval scores over Hamming rankings.
//!
//! Every query ranks the whole database by Hamming distance (ties by
//! database position). A database item is relevant when its label set
//! intersects the query's.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::encoder::CodeSet;
use crate::error::{JpshError, Result};
use crate::index::{hamming, rank_by_distance};

/// Radius used for the fixed-radius lookup score.
pub const LOOKUP_RADIUS: u32 = 2;

pub const DEFAULT_TOP_NS: &[usize] = &[1, 10, 50, 100, 200, 500, 1000];

/// True iff the two sorted label sets share a label.
pub fn relevance(query: &[u32], item: &[u32]) -> Result<bool> {
    if query.is_empty() || item.is_empty() {
        return Err(JpshError::Label("relevance needs labels on both sides".into()));
    }
    let (mut a, mut b) = (0, 0);
    while a < query.len() && b < item.len() {
        match query[a].cmp(&item[b]) {
            std::cmp::Ordering::Less => a += 1,
            std::cmp::Ordering::Greater => b += 1,
            std::cmp::Ordering::Equal => return Ok(true),
        }
    }
    Ok(false)
}

/// `(1/R) Σ_{p relevant} hits(≤p)/p` over the full ranking. Zero when
/// nothing is relevant.
pub fn average_precision(flags: &[bool]) -> f64 {
    truncated_ap(flags, flags.len())
}

/// Average precision over the first `n` ranks, normalized by the relevant
/// hits found there.
pub fn truncated_ap(flags: &[bool], n: usize) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (p, &rel) in flags.iter().take(n).enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (p + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub radius: u32,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seeds: Vec<u64>,
    pub queries: usize,
    pub database: usize,
    pub bits: usize,
    /// Queries with no relevant item in the database; their AP counts as 0.
    pub queries_without_relevant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    /// Mean AP over the top `N` ranks, keyed by `N`. `map_at[100]` is the
    /// "Pre@100" score.
    pub map_at: BTreeMap<usize, f64>,
    pub pre_at: BTreeMap<usize, f64>,
    pub rec_at: BTreeMap<usize, f64>,
    /// Macro-averaged precision/recall of radius lookups, radius `0..=l`.
    pub pr_curve: Vec<PrPoint>,
    pub radius2_precision: f64,
    pub meta: RunMeta,
}

impl EvalReport {
    /// The `N,precision,recall` table.
    pub fn write_curves_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "N,precision,recall")?;
        for (n, p) in &self.pre_at {
            writeln!(w, "{n},{p},{}", self.rec_at[n])?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub top_ns: Vec<usize>,
    pub map_at: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            top_ns: DEFAULT_TOP_NS.to_vec(),
            map_at: vec![100],
            seeds: Vec::new(),
        }
    }
}

fn check_labels(labels: &[Vec<u32>], codes: &CodeSet, side: &str) -> Result<()> {
    if labels.len() != codes.len() {
        return Err(JpshError::Label(format!(
            "{side}: {} label rows for {} codes",
            labels.len(),
            codes.len()
        )));
    }
    if let Some(i) = labels.iter().position(|l| l.is_empty()) {
        return Err(JpshError::Label(format!("{side} item {i} has no labels")));
    }
    Ok(())
}

pub fn evaluate(
    queries: &CodeSet,
    query_labels: &[Vec<u32>],
    db: &CodeSet,
    db_labels: &[Vec<u32>],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if queries.bits() != db.bits() {
        return Err(JpshError::Shape(format!(
            "query codes have {} bits, database codes {}",
            queries.bits(),
            db.bits()
        )));
    }
    if queries.is_empty() {
        return Err(JpshError::Data {
            row: 0,
            col: 0,
            msg: "no queries to evaluate".into(),
        });
    }
    if db.is_empty() {
        return Err(JpshError::EmptyIndex);
    }
    if opts.top_ns.iter().chain(&opts.map_at).any(|&n| n == 0) {
        return Err(JpshError::Param("cutoffs N must be at least 1".into()));
    }
    check_labels(query_labels, queries, "queries")?;
    check_labels(db_labels, db, "database")?;
    let bits = db.bits();
    let nq = queries.len() as f64;

    let mut map = 0.0;
    let mut map_at: BTreeMap<usize, f64> = opts.map_at.iter().map(|&n| (n, 0.0)).collect();
    let mut pre_at: BTreeMap<usize, f64> = opts.top_ns.iter().map(|&n| (n, 0.0)).collect();
    let mut rec_at = pre_at.clone();
    let mut pr_precision = vec![0.0; bits + 1];
    let mut pr_recall = vec![0.0; bits + 1];
    let mut radius2 = 0.0;
    let mut without_relevant = 0;

    let mut dist = vec![0u32; db.len()];
    let mut flags = vec![false; db.len()];
    for q in 0..queries.len() {
        for (i, d) in dist.iter_mut().enumerate() {
            *d = hamming(queries.code(q), db.code(i))?;
        }
        let ranked = rank_by_distance(&dist, bits);
        let mut total_rel = 0usize;
        for (slot, &(i, _)) in flags.iter_mut().zip(&ranked) {
            *slot = relevance(&query_labels[q], &db_labels[i])?;
            total_rel += *slot as usize;
        }
        if total_rel == 0 {
            without_relevant += 1;
        }
        map += average_precision(&flags);
        for (&n, v) in map_at.iter_mut() {
            *v += truncated_ap(&flags, n);
        }
        // prefix hit counts
        let mut cum = Vec::with_capacity(flags.len() + 1);
        cum.push(0usize);
        for &f in &flags {
            cum.push(cum.last().unwrap() + f as usize);
        }
        for (&n, v) in pre_at.iter_mut() {
            let depth = n.min(flags.len());
            *v += cum[depth] as f64 / depth as f64;
        }
        for (&n, v) in rec_at.iter_mut() {
            let depth = n.min(flags.len());
            if total_rel > 0 {
                *v += cum[depth] as f64 / total_rel as f64;
            }
        }
        // radius sweep: ranked is sorted by distance
        let mut depth = 0;
        for r in 0..=bits {
            while depth < ranked.len() && ranked[depth].1 as usize <= r {
                depth += 1;
            }
            if depth > 0 {
                pr_precision[r] += cum[depth] as f64 / depth as f64;
            }
            if total_rel > 0 {
                pr_recall[r] += cum[depth] as f64 / total_rel as f64;
            }
            if r == LOOKUP_RADIUS as usize && depth > 0 {
                radius2 += cum[depth] as f64 / depth as f64;
            }
        }
    }
    if without_relevant > 0 {
        log::warn!("{without_relevant} queries have no relevant database item; their AP is 0");
    }
    let scale = |m: &mut BTreeMap<usize, f64>| m.values_mut().for_each(|v| *v /= nq);
    scale(&mut map_at);
    scale(&mut pre_at);
    scale(&mut rec_at);
    let pr_curve = (0..=bits)
        .map(|r| PrPoint {
            radius: r as u32,
            recall: pr_recall[r] / nq,
            precision: pr_precision[r] / nq,
        })
        .collect();
    Ok(EvalReport {
        map: map / nq,
        map_at,
        pre_at,
        rec_at,
        pr_curve,
        radius2_precision: if bits >= LOOKUP_RADIUS as usize { radius2 / nq } else { 0.0 },
        meta: RunMeta {
            seeds: opts.seeds.clone(),
            queries: queries.len(),
            database: db.len(),
            bits,
            queries_without_relevant: without_relevant,
        },
    })
}
