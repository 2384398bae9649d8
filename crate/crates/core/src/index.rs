//! Hamming-space retrieval over bit-packed codes.
//!
//! Ranked results are ordered by distance, then by database position.

use std::collections::HashMap;

use serde::Serialize;

use crate::encoder::CodeSet;
use crate::error::{JpshError, Result};

/// Number of differing bits between two packed codes of the same length.
pub fn hamming(a: &[u64], b: &[u64]) -> Result<u32> {
    if a.len() != b.len() {
        return Err(JpshError::Shape(format!(
            "codes have {} and {} words",
            a.len(),
            b.len()
        )));
    }
    Ok(hamming_unchecked(a, b))
}

#[inline]
fn hamming_unchecked(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Hit {
    pub position: usize,
    pub id: String,
    pub distance: u32,
}

#[derive(Debug, Clone)]
struct PrefixTable {
    bits: usize,
    buckets: HashMap<u64, Vec<usize>>,
}

impl PrefixTable {
    fn key(&self, code: &[u64]) -> u64 {
        let mask = if self.bits == 64 { u64::MAX } else { (1u64 << self.bits) - 1 };
        code[0] & mask
    }
}

/// Searchable database of codes. An optional table keyed by the low code
/// bits speeds up small-radius queries; results match the linear scan.
#[derive(Debug, Clone)]
pub struct HammingIndex {
    codes: CodeSet,
    table: Option<PrefixTable>,
}

/// Radius searches probe the prefix table only up to this radius.
const MAX_PROBE_RADIUS: u32 = 3;

impl HammingIndex {
    pub fn new(codes: CodeSet) -> Self {
        HammingIndex { codes, table: None }
    }

    /// Builds the index plus a bucket table on the first `prefix_bits` bits.
    pub fn with_prefix_table(codes: CodeSet, prefix_bits: usize) -> Result<Self> {
        if prefix_bits == 0 || prefix_bits > codes.bits().min(64) {
            return Err(JpshError::Param(format!(
                "prefix of {prefix_bits} bits for {}-bit codes",
                codes.bits()
            )));
        }
        let mut table = PrefixTable {
            bits: prefix_bits,
            buckets: HashMap::new(),
        };
        for i in 0..codes.len() {
            let key = table.key(codes.code(i));
            table.buckets.entry(key).or_default().push(i);
        }
        Ok(HammingIndex {
            codes,
            table: Some(table),
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &CodeSet {
        &self.codes
    }

    fn check_query(&self, query: &[u64]) -> Result<()> {
        if self.codes.is_empty() {
            return Err(JpshError::EmptyIndex);
        }
        if query.len() != self.codes.words_per_code() {
            return Err(JpshError::Shape(format!(
                "query has {} words, index codes have {}",
                query.len(),
                self.codes.words_per_code()
            )));
        }
        Ok(())
    }

    /// Distance from `query` to every database code, in database order.
    pub fn distances(&self, query: &[u64]) -> Result<Vec<u32>> {
        self.check_query(query)?;
        Ok((0..self.len())
            .map(|i| hamming_unchecked(query, self.codes.code(i)))
            .collect())
    }

    /// Database positions sorted by (distance, position).
    pub fn rank(&self, query: &[u64]) -> Result<Vec<(usize, u32)>> {
        let dist = self.distances(query)?;
        Ok(rank_by_distance(&dist, self.codes.bits()))
    }

    /// The `top_n` nearest codes (all of them if the index is smaller).
    pub fn search_ranked(&self, query: &[u64], top_n: usize) -> Result<Vec<Hit>> {
        let mut ranked = self.rank(query)?;
        ranked.truncate(top_n);
        Ok(self.hits(ranked))
    }

    /// Every code within Hamming distance `radius`, ranked.
    pub fn search_radius(&self, query: &[u64], radius: u32) -> Result<Vec<Hit>> {
        self.check_query(query)?;
        let found = match &self.table {
            Some(table) if radius <= MAX_PROBE_RADIUS => {
                let mut found = Vec::new();
                let key = table.key(query);
                let r = (radius as usize).min(table.bits);
                for_each_within(key, table.bits, r, &mut |probe| {
                    if let Some(bucket) = table.buckets.get(&probe) {
                        for &i in bucket {
                            let dist = hamming_unchecked(query, self.codes.code(i));
                            if dist <= radius {
                                found.push((i, dist));
                            }
                        }
                    }
                });
                found.sort_unstable_by_key(|&(i, dist)| (dist, i));
                found
            }
            _ => {
                let mut ranked = self.rank(query)?;
                ranked.retain(|&(_, dist)| dist <= radius);
                ranked
            }
        };
        Ok(self.hits(found))
    }

    fn hits(&self, ranked: Vec<(usize, u32)>) -> Vec<Hit> {
        ranked
            .into_iter()
            .map(|(position, distance)| Hit {
                position,
                id: self.codes.ids()[position].clone(),
                distance,
            })
            .collect()
    }
}

/// Stable counting sort of positions by distance.
pub(crate) fn rank_by_distance(dist: &[u32], bits: usize) -> Vec<(usize, u32)> {
    let mut counts = vec![0usize; bits + 2];
    for &d in dist {
        counts[d as usize + 1] += 1;
    }
    for b in 1..counts.len() {
        counts[b] += counts[b - 1];
    }
    let mut out = vec![(0usize, 0u32); dist.len()];
    for (i, &d) in dist.iter().enumerate() {
        let slot = &mut counts[d as usize];
        out[*slot] = (i, d);
        *slot += 1;
    }
    out
}

/// Calls `f` on every `bits`-bit key within Hamming distance `r` of `key`.
fn for_each_within(key: u64, bits: usize, r: usize, f: &mut impl FnMut(u64)) {
    fn rec(key: u64, start: usize, bits: usize, left: usize, f: &mut impl FnMut(u64)) {
        f(key);
        if left == 0 {
            return;
        }
        for b in start..bits {
            rec(key ^ (1u64 << b), b + 1, bits, left - 1, f);
        }
    }
    rec(key, 0, bits, r, f);
}
