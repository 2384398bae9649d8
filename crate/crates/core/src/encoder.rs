//! Out-of-sample encoding and bit-packed code storage.
//!
//! A query `x` is shifted by the stored training mean, matched to its nearest
//! anchor `c_j`, and coded as `sgn(R P_jᵀ c_j + V Wᵀ x)` with `sgn(0) = +1`.
//! Bit `t` of a code is bit `t mod 64` of word `t / 64`; `+1` packs to 1.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;

use crate::data_io::{default_ids, FeatureSet};
use crate::error::{JpshError, Result};
use crate::linalg::{self, col};
use crate::optimizer::updates::personalized_codes;
use crate::optimizer::JpshModel;

pub const CODES_MAGIC: &[u8; 6] = b"JPSHC1";

pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// Packs `values[t] >= 0` into bit `t`.
pub fn pack_signs(values: impl IntoIterator<Item = f64>, bits: usize) -> Vec<u64> {
    let mut words = vec![0u64; words_for(bits)];
    for (t, v) in values.into_iter().enumerate().take(bits) {
        if v >= 0.0 {
            words[t / 64] |= 1u64 << (t % 64);
        }
    }
    words
}

/// Code bits as ±1.
pub fn unpack_signs(code: &[u64], bits: usize) -> Vec<f64> {
    (0..bits)
        .map(|t| if code[t / 64] >> (t % 64) & 1 == 1 { 1.0 } else { -1.0 })
        .collect()
}

/// Bit-packed `l`-bit codes with aligned sample ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSet {
    words: Vec<u64>,
    ids: Vec<String>,
    bits: usize,
}

impl CodeSet {
    pub fn new(bits: usize) -> Self {
        CodeSet {
            words: Vec::new(),
            ids: Vec::new(),
            bits,
        }
    }

    pub fn from_codes(bits: usize, codes: Vec<Vec<u64>>, ids: Vec<String>) -> Result<Self> {
        if codes.len() != ids.len() {
            return Err(JpshError::Shape(format!("{} codes but {} ids", codes.len(), ids.len())));
        }
        let mut cs = CodeSet::new(bits);
        for (code, id) in codes.into_iter().zip(ids) {
            cs.push(&code, id)?;
        }
        Ok(cs)
    }

    pub fn push(&mut self, code: &[u64], id: String) -> Result<()> {
        let wpc = self.words_per_code();
        if code.len() != wpc {
            return Err(JpshError::Shape(format!(
                "code has {} words, {}-bit codes need {wpc}",
                code.len(),
                self.bits
            )));
        }
        if let Some(&last) = code.last() {
            let used = self.bits - (wpc - 1) * 64;
            if used < 64 && last >> used != 0 {
                return Err(JpshError::Shape(format!("bits beyond {} are set", self.bits)));
            }
        }
        self.words.extend_from_slice(code);
        self.ids.push(id);
        Ok(())
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words_per_code(&self) -> usize {
        words_for(self.bits)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn code(&self, i: usize) -> &[u64] {
        let w = self.words_per_code();
        &self.words[i * w..(i + 1) * w]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(CODES_MAGIC)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        w.write_u32::<LittleEndian>(self.bits as u32)?;
        for &word in &self.words {
            w.write_u64::<LittleEndian>(word)?;
        }
        Ok(())
    }

    /// Reads the binary body; ids default to positions.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)
            .map_err(|_| JpshError::Format("truncated code file".into()))?;
        if &magic != CODES_MAGIC {
            return Err(JpshError::Format(format!("bad code-file magic {magic:?}")));
        }
        let count = r
            .read_u64::<LittleEndian>()
            .map_err(|_| JpshError::Format("truncated code-file header".into()))? as usize;
        let bits = r
            .read_u32::<LittleEndian>()
            .map_err(|_| JpshError::Format("truncated code-file header".into()))? as usize;
        if bits == 0 {
            return Err(JpshError::Format("code length 0".into()));
        }
        let mut words = vec![0u64; count * words_for(bits)];
        r.read_u64_into::<LittleEndian>(&mut words)
            .map_err(|_| JpshError::Format(format!("code file holds fewer than {count} codes")))?;
        let mut cs = CodeSet::new(bits);
        let w = words_for(bits);
        for (i, chunk) in words.chunks(w).enumerate() {
            cs.push(chunk, i.to_string())?;
        }
        debug_assert_eq!(cs.len(), count);
        Ok(cs)
    }
}

/// The sidecar id file that accompanies a code file.
pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

/// Writes the binary code file and its `.ids` sidecar (one id per line).
pub fn save_codes(path: impl AsRef<Path>, cs: &CodeSet) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| JpshError::io(path, e))?);
    cs.write_to(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| JpshError::io(path, e))?;
    let sidecar = ids_path(path);
    let mut w = BufWriter::new(File::create(&sidecar).map_err(|e| JpshError::io(&sidecar, e))?);
    for id in &cs.ids {
        writeln!(w, "{id}").map_err(|e| JpshError::io(&sidecar, e))?;
    }
    w.flush().map_err(|e| JpshError::io(&sidecar, e))
}

/// Reads a code file; ids come from the `.ids` sidecar when present.
pub fn load_codes(path: impl AsRef<Path>) -> Result<CodeSet> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| JpshError::io(path, e))?);
    let mut cs = CodeSet::read_from(&mut r)?;
    let sidecar = ids_path(path);
    if sidecar.exists() {
        let file = File::open(&sidecar).map_err(|e| JpshError::io(&sidecar, e))?;
        let ids: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| JpshError::io(&sidecar, e))?;
        if ids.len() != cs.len() {
            return Err(JpshError::Format(format!(
                "{} ids in sidecar for {} codes",
                ids.len(),
                cs.len()
            )));
        }
        cs.ids = ids;
    } else {
        cs.ids = default_ids(cs.len());
    }
    Ok(cs)
}

/// Precomputed pieces of the encoding rule for one model.
#[derive(Debug, Clone)]
pub struct Encoder<'a> {
    model: &'a JpshModel,
    /// `R P_jᵀ c_j` per anchor, `l × m`.
    anchor_terms: DMatrix<f64>,
    /// `V Wᵀ` stored row-major, `l` rows of length `d`.
    projection: Vec<f64>,
}

impl<'a> Encoder<'a> {
    pub fn new(model: &'a JpshModel) -> Self {
        let anchor_terms = &model.r * personalized_codes(&model.p, model.anchors.centers());
        let vw = &model.v * model.w.transpose(); // l × d
        let projection = vw.transpose().as_slice().to_vec();
        Encoder {
            model,
            anchor_terms,
            projection,
        }
    }

    pub fn bits(&self) -> usize {
        self.model.bits()
    }

    /// Pre-sign scores `R P_jᵀ c_j + V Wᵀ x̂` and the anchor `j`, for a
    /// query already shifted by the training mean.
    fn scores_centered(&self, x: &[f64], j: usize) -> Vec<f64> {
        let d = x.len();
        let base = col(&self.anchor_terms, j);
        (0..self.bits())
            .map(|t| base[t] + dot(&self.projection[t * d..(t + 1) * d], x))
            .collect()
    }

    fn shifted(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.model.dim() {
            return Err(JpshError::Shape(format!(
                "query has {} features, model expects {}",
                x.len(),
                self.model.dim()
            )));
        }
        Ok(x.iter().zip(&self.model.center_mean).map(|(v, m)| v - m).collect())
    }

    /// Real-valued scores before the sign, plus the chosen anchor.
    pub fn scores(&self, x: &[f64]) -> Result<(Vec<f64>, usize)> {
        let x = self.shifted(x)?;
        let j = self.model.anchors.nearest(&x).0;
        Ok((self.scores_centered(&x, j), j))
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<u64>> {
        let (scores, _) = self.scores(x)?;
        Ok(pack_signs(scores, self.bits()))
    }

    pub fn encode_batch(&self, fs: &FeatureSet) -> Result<CodeSet> {
        if fs.dim() != self.model.dim() {
            return Err(JpshError::Shape(format!(
                "features have d={}, model expects {}",
                fs.dim(),
                self.model.dim()
            )));
        }
        let shifted = crate::data_io::apply_center(fs, &self.model.center_mean)?;
        let nearest = linalg::nearest(shifted.columns(), self.model.anchors.centers());
        let mut cs = CodeSet::new(self.bits());
        for (i, &(j, _)) in nearest.iter().enumerate() {
            let code = pack_signs(self.scores_centered(shifted.sample(i), j), self.bits());
            cs.push(&code, fs.ids()[i].clone())?;
        }
        Ok(cs)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * c + k] * b[4 * c + k];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn encode(model: &JpshModel, x: &[f64]) -> Result<Vec<u64>> {
    Encoder::new(model).encode(x)
}

pub fn encode_batch(model: &JpshModel, fs: &FeatureSet) -> Result<CodeSet> {
    Encoder::new(model).encode_batch(fs)
}
