//! Feature corpora: loading, saving, validation, splitting and centering.
//!
//! Features are kept one sample per column (`d × n`), so every sample is a
//! contiguous `&[f64]`. The on-disk formats are:
//!
//! * `fvec`: magic `JPSHF1`, `u64` n, `u64` d (little-endian), then `n·d`
//!   little-endian `f32` values, row-major.
//! * `csv`: one sample per line, comma-separated, no header.
//! * `idx`: IDX3 unsigned-byte images (optionally gzip-compressed), flattened
//!   row-major and scaled to `[0, 1]`.
//!
//! Label files carry one line per sample with comma-separated label indices.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use flate2::read::GzDecoder;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{JpshError, Result};

pub const FVEC_MAGIC: &[u8; 6] = b"JPSHF1";
const IDX3_UBYTE_MAGIC: u32 = 0x0000_0803;

/// An `n × d` feature matrix with sample ids and optional multi-label
/// annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    data: DMatrix<f64>,
    ids: Vec<String>,
    labels: Option<Vec<Vec<u32>>>,
}

impl FeatureSet {
    /// Builds a feature set from a `d × n` matrix (one sample per column).
    pub fn from_columns(
        data: DMatrix<f64>,
        ids: Vec<String>,
        labels: Option<Vec<Vec<u32>>>,
    ) -> Result<Self> {
        let (d, n) = data.shape();
        if n == 0 || d == 0 {
            return Err(JpshError::Shape(format!(
                "feature set needs n >= 1 and d >= 1, got n={n}, d={d}"
            )));
        }
        if ids.len() != n {
            return Err(JpshError::Shape(format!(
                "{} ids for {n} samples",
                ids.len()
            )));
        }
        for (i, col) in data.column_iter().enumerate() {
            if let Some(j) = col.iter().position(|v| !v.is_finite()) {
                return Err(JpshError::Data {
                    row: i,
                    col: j,
                    msg: format!("non-finite value {}", col[j]),
                });
            }
        }
        let mut fs = FeatureSet {
            data,
            ids,
            labels: None,
        };
        if let Some(labels) = labels {
            fs = fs.with_labels(labels)?;
        }
        Ok(fs)
    }

    /// Builds a feature set from sample rows; ids default to the row index.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(JpshError::Data {
                    row: i,
                    col: row.len().min(d),
                    msg: format!("row has {} values, expected {d}", row.len()),
                });
            }
            flat.extend_from_slice(row);
        }
        FeatureSet::from_columns(DMatrix::from_vec(d, n, flat), default_ids(n), None)
    }

    pub fn with_labels(mut self, mut labels: Vec<Vec<u32>>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(JpshError::Shape(format!(
                "{} label rows for {} samples",
                labels.len(),
                self.n()
            )));
        }
        for row in &mut labels {
            row.sort_unstable();
            row.dedup();
        }
        let empty = labels.iter().filter(|l| l.is_empty()).count();
        if empty > 0 {
            log::warn!("{empty} samples carry no labels");
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(JpshError::Shape(format!(
                "{} ids for {} samples",
                ids.len(),
                self.n()
            )));
        }
        self.ids = ids;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// The `d × n` matrix, one sample per column.
    pub fn columns(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data.as_slice()[i * d..(i + 1) * d]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> Option<&[Vec<u32>]> {
        self.labels.as_deref()
    }

    /// Indices of samples whose label set is empty.
    pub fn unlabeled_rows(&self) -> Vec<usize> {
        self.labels
            .as_ref()
            .map(|ls| {
                ls.iter()
                    .enumerate()
                    .filter(|(_, l)| l.is_empty())
                    .map(|(i, _)| i)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// A new feature set holding the given samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> FeatureSet {
        let d = self.dim();
        let mut flat = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            flat.extend_from_slice(self.sample(i));
        }
        FeatureSet {
            data: DMatrix::from_vec(d, indices.len(), flat),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|ls| indices.iter().map(|&i| ls[i].clone()).collect()),
        }
    }

    /// Row-major copy of the features.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.sample(i).to_vec()).collect()
    }
}

pub(crate) fn default_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFormat {
    Fvec,
    Csv,
    Idx,
}

impl FeatureFormat {
    /// Guesses the format from the file name, ignoring a trailing `.gz`.
    pub fn from_path(path: &Path) -> Option<FeatureFormat> {
        let name = path.file_name()?.to_str()?.to_ascii_lowercase();
        let name = name.strip_suffix(".gz").unwrap_or(&name);
        if name.ends_with(".csv") {
            Some(FeatureFormat::Csv)
        } else if name.ends_with(".fvec") || name.ends_with(".jpshf") {
            Some(FeatureFormat::Fvec)
        } else if name.contains("idx3") || name.ends_with(".idx") {
            Some(FeatureFormat::Idx)
        } else {
            None
        }
    }
}

impl FromStr for FeatureFormat {
    type Err = JpshError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fvec" | "fvec-binary" | "jpshf" => Ok(FeatureFormat::Fvec),
            "csv" => Ok(FeatureFormat::Csv),
            "idx" | "idx-image" => Ok(FeatureFormat::Idx),
            other => Err(JpshError::Param(format!("unknown feature format '{other}'"))),
        }
    }
}

impl fmt::Display for FeatureFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureFormat::Fvec => "fvec",
            FeatureFormat::Csv => "csv",
            FeatureFormat::Idx => "idx",
        })
    }
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path).map_err(|e| JpshError::io(path, e))?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

pub fn load_features(path: impl AsRef<Path>, format: FeatureFormat) -> Result<FeatureSet> {
    let path = path.as_ref();
    let reader = open_maybe_gz(path)?;
    match format {
        FeatureFormat::Fvec => read_fvec(reader),
        FeatureFormat::Csv => read_csv(BufReader::new(reader)),
        FeatureFormat::Idx => read_idx_images(reader),
    }
}

pub fn save_features(path: impl AsRef<Path>, fs: &FeatureSet, format: FeatureFormat) -> Result<()> {
    let path = path.as_ref();
    if format == FeatureFormat::Idx {
        return Err(JpshError::Param("saving IDX images is not supported".into()));
    }
    let file = File::create(path).map_err(|e| JpshError::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        FeatureFormat::Fvec | FeatureFormat::Idx => write_fvec(&mut w, fs),
        FeatureFormat::Csv => write_csv(&mut w, fs),
    }
    .map_err(|e| JpshError::io(path, e))?;
    w.flush().map_err(|e| JpshError::io(path, e))
}

/// Features are narrowed to `f32`; values exactly representable in `f32`
/// round-trip bit-identically.
pub fn write_fvec<W: Write>(w: &mut W, fs: &FeatureSet) -> std::io::Result<()> {
    w.write_all(FVEC_MAGIC)?;
    w.write_u64::<LittleEndian>(fs.n() as u64)?;
    w.write_u64::<LittleEndian>(fs.dim() as u64)?;
    for &v in fs.data.as_slice() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

pub fn read_fvec<R: Read>(mut r: R) -> Result<FeatureSet> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| JpshError::Format("truncated fvec header".into()))?;
    if &magic != FVEC_MAGIC {
        return Err(JpshError::Format(format!("bad fvec magic {magic:?}")));
    }
    let header = |r: &mut R| {
        r.read_u64::<LittleEndian>()
            .map_err(|_| JpshError::Format("truncated fvec header".into()))
    };
    let n = header(&mut r)? as usize;
    let d = header(&mut r)? as usize;
    let total = n
        .checked_mul(d)
        .ok_or_else(|| JpshError::Format(format!("fvec header overflows: n={n}, d={d}")))?;
    let mut raw = vec![0f32; total];
    r.read_f32_into::<LittleEndian>(&mut raw)
        .map_err(|_| JpshError::Format(format!("fvec body shorter than {n}x{d}")))?;
    let data = DMatrix::from_iterator(d, n, raw.into_iter().map(f64::from));
    FeatureSet::from_columns(data, default_ids(n), None)
}

pub fn write_csv<W: Write>(w: &mut W, fs: &FeatureSet) -> std::io::Result<()> {
    for i in 0..fs.n() {
        let mut first = true;
        for v in fs.sample(i) {
            if !first {
                w.write_all(b",")?;
            }
            first = false;
            write!(w, "{v}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> Result<FeatureSet> {
    let mut flat = Vec::new();
    let mut d = None;
    let mut n = 0;
    for (row, line) in r.lines().enumerate() {
        let line = line.map_err(|e| JpshError::Format(format!("csv read failed: {e}")))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| JpshError::Data {
                row,
                col,
                msg: format!("cannot parse '{}'", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(JpshError::Data {
                    row,
                    col,
                    msg: format!("non-finite value {v}"),
                });
            }
            flat.push(v);
            count += 1;
        }
        match d {
            None => d = Some(count),
            Some(d) if d != count => {
                return Err(JpshError::Data {
                    row,
                    col: count.min(d),
                    msg: format!("row has {count} values, expected {d}"),
                })
            }
            _ => {}
        }
        n += 1;
    }
    let d = d.ok_or_else(|| JpshError::Format("empty csv".into()))?;
    FeatureSet::from_columns(DMatrix::from_vec(d, n, flat), default_ids(n), None)
}

pub fn read_idx_images<R: Read>(mut r: R) -> Result<FeatureSet> {
    let mut header = [0u32; 4];
    r.read_u32_into::<BigEndian>(&mut header)
        .map_err(|_| JpshError::Format("truncated IDX header".into()))?;
    if header[0] != IDX3_UBYTE_MAGIC {
        return Err(JpshError::Format(format!(
            "IDX magic {:#010x} is not an unsigned-byte image file",
            header[0]
        )));
    }
    let (n, rows, cols) = (header[1] as usize, header[2] as usize, header[3] as usize);
    let d = rows * cols;
    let mut raw = vec![0u8; n * d];
    r.read_exact(&mut raw)
        .map_err(|_| JpshError::Format(format!("IDX body shorter than {n}x{rows}x{cols}")))?;
    let data = DMatrix::from_iterator(d, n, raw.into_iter().map(|b| f64::from(b) / 255.0));
    FeatureSet::from_columns(data, default_ids(n), None)
}

/// Reads one comma-separated list of label indices per line.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<Vec<u32>>> {
    let path = path.as_ref();
    let reader = BufReader::new(open_maybe_gz(path)?);
    let mut out = Vec::new();
    for (row, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| JpshError::io(path, e))?;
        let line = line.trim();
        let mut labels = Vec::new();
        if !line.is_empty() {
            for (col, field) in line.split(',').enumerate() {
                labels.push(field.trim().parse::<u32>().map_err(|_| JpshError::Data {
                    row,
                    col,
                    msg: format!("bad label '{}'", field.trim()),
                })?);
            }
        }
        out.push(labels);
    }
    Ok(out)
}

pub fn save_labels(path: impl AsRef<Path>, labels: &[Vec<u32>]) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| JpshError::io(path, e))?);
    for row in labels {
        let line = row.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        writeln!(w, "{line}").map_err(|e| JpshError::io(path, e))?;
    }
    w.flush().map_err(|e| JpshError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitStrategy {
    /// `test_per_class` samples of every class go to the test set.
    PerClassStratified,
    /// `test_per_class` samples in total, drawn uniformly.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_per_class: usize,
    pub seed: u64,
    pub strategy: SplitStrategy,
}

/// Partitions `fs` into `(train, test)`. Both halves keep the input order.
pub fn split(fs: &FeatureSet, spec: &SplitSpec) -> Result<(FeatureSet, FeatureSet)> {
    if spec.test_per_class == 0 {
        return Err(JpshError::Param("test_per_class must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut is_test = vec![false; fs.n()];
    match spec.strategy {
        SplitStrategy::PerClassStratified => {
            let labels = fs
                .labels()
                .ok_or_else(|| JpshError::Label("stratified split needs labels".into()))?;
            let mut classes: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for (i, l) in labels.iter().enumerate() {
                match l.as_slice() {
                    [c] => classes.entry(*c).or_default().push(i),
                    _ => {
                        return Err(JpshError::Label(format!(
                            "stratified split needs exactly one label per sample; sample {i} has {}",
                            l.len()
                        )))
                    }
                }
            }
            for (class, mut members) in classes {
                if members.len() < spec.test_per_class {
                    return Err(JpshError::Split {
                        class,
                        available: members.len(),
                        requested: spec.test_per_class,
                    });
                }
                members.shuffle(&mut rng);
                for &i in &members[..spec.test_per_class] {
                    is_test[i] = true;
                }
            }
        }
        SplitStrategy::Uniform => {
            if fs.n() < spec.test_per_class {
                return Err(JpshError::Param(format!(
                    "cannot draw {} test samples from {}",
                    spec.test_per_class,
                    fs.n()
                )));
            }
            let mut all: Vec<usize> = (0..fs.n()).collect();
            all.shuffle(&mut rng);
            for &i in &all[..spec.test_per_class] {
                is_test[i] = true;
            }
        }
    }
    let train: Vec<usize> = (0..fs.n()).filter(|&i| !is_test[i]).collect();
    let test: Vec<usize> = (0..fs.n()).filter(|&i| is_test[i]).collect();
    if train.is_empty() {
        return Err(JpshError::Param("split leaves no training samples".into()));
    }
    Ok((fs.select(&train), fs.select(&test)))
}

/// Draws `count` samples uniformly without replacement; the subset keeps
/// input order.
pub fn subsample(fs: &FeatureSet, count: usize, seed: u64) -> Result<FeatureSet> {
    if count == 0 || count > fs.n() {
        return Err(JpshError::Param(format!(
            "cannot subsample {count} of {} samples",
            fs.n()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..fs.n()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(count);
    idx.sort_unstable();
    Ok(fs.select(&idx))
}

pub fn column_mean(fs: &FeatureSet) -> Vec<f64> {
    let n = fs.n() as f64;
    let mut mean = vec![0.0; fs.dim()];
    for i in 0..fs.n() {
        for (m, v) in mean.iter_mut().zip(fs.sample(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Mean-centers the features; the returned mean is what queries must be
/// shifted by (see [`apply_center`]).
pub fn center(fs: &FeatureSet) -> (FeatureSet, Vec<f64>) {
    let mean = column_mean(fs);
    let centered = apply_center(fs, &mean).expect("mean has the feature dimension");
    (centered, mean)
}

pub fn apply_center(fs: &FeatureSet, mean: &[f64]) -> Result<FeatureSet> {
    if mean.len() != fs.dim() {
        return Err(JpshError::Shape(format!(
            "mean has {} entries, features have d={}",
            mean.len(),
            fs.dim()
        )));
    }
    let mut out = fs.clone();
    let d = fs.dim();
    for (k, v) in out.data.as_mut_slice().iter_mut().enumerate() {
        *v -= mean[k % d];
    }
    Ok(out)
}
