//! Binary model container.
//!
//! Layout (little-endian): magic `JPSHM1`, `u32` version, `u8` kind, then
//! the kind's body. Matrices are `u64 rows, u64 cols` followed by `f64`
//! values in column-major order. The same model always serializes to the
//! same bytes.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;

use crate::anchors::AnchorSet;
use crate::baselines::LshModel;
use crate::error::{JpshError, Result};
use crate::optimizer::{Hyperparams, JpshModel};

pub const MODEL_MAGIC: &[u8; 6] = b"JPSHM1";
pub const MODEL_VERSION: u32 = 1;
const KIND_JPSH: u8 = 1;
const KIND_LSH: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Jpsh(JpshModel),
    Lsh(LshModel),
}

impl Model {
    pub fn bits(&self) -> usize {
        match self {
            Model::Jpsh(m) => m.bits(),
            Model::Lsh(m) => m.bits(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Jpsh(m) => m.dim(),
            Model::Lsh(m) => m.dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Jpsh(_) => "jpsh",
            Model::Lsh(_) => "lsh",
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_u32::<LittleEndian>(MODEL_VERSION)?;
        match self {
            Model::Jpsh(m) => {
                w.write_u8(KIND_JPSH)?;
                let hyper = serde_json::to_vec(&m.hyper).expect("hyperparameters serialize");
                write_bytes(w, &hyper)?;
                write_vec(w, &m.center_mean)?;
                write_matrix(w, m.anchors.centers())?;
                w.write_u64::<LittleEndian>(m.anchors.assignment().len() as u64)?;
                for &a in m.anchors.assignment() {
                    w.write_u64::<LittleEndian>(a as u64)?;
                }
                for mat in [&m.p, &m.w, &m.r, &m.v, &m.b] {
                    write_matrix(w, mat)?;
                }
            }
            Model::Lsh(m) => {
                w.write_u8(KIND_LSH)?;
                w.write_u64::<LittleEndian>(m.seed)?;
                write_matrix(w, &m.projection)?;
                match &m.center_mean {
                    Some(mean) => {
                        w.write_u8(1)?;
                        write_vec(w, mean)?;
                    }
                    None => w.write_u8(0)?,
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Model> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MODEL_MAGIC {
            return Err(JpshError::Format("not a model file (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != MODEL_VERSION {
            return Err(JpshError::Format(format!("unsupported model version {version}")));
        }
        let model = match r.read_u8().map_err(truncated)? {
            KIND_JPSH => {
                let hyper: Hyperparams = serde_json::from_slice(&read_bytes(r)?)
                    .map_err(|e| JpshError::Format(format!("model hyperparameters: {e}")))?;
                let center_mean = read_vec(r)?;
                let centers = read_matrix(r)?;
                let count = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
                let mut assignment = Vec::with_capacity(count.min(1 << 24));
                for _ in 0..count {
                    assignment.push(r.read_u64::<LittleEndian>().map_err(truncated)? as usize);
                }
                let anchors = AnchorSet::new(centers, assignment)?;
                let mut mats = Vec::with_capacity(5);
                for _ in 0..5 {
                    mats.push(read_matrix(r)?);
                }
                let [p, w, rot_r, v, b]: [DMatrix<f64>; 5] = mats.try_into().expect("five matrices");
                let m = JpshModel {
                    p,
                    w,
                    r: rot_r,
                    v,
                    b,
                    anchors,
                    center_mean,
                    hyper,
                };
                m.check_invariants()
                    .map_err(|e| JpshError::Format(format!("inconsistent model file: {e}")))?;
                Model::Jpsh(m)
            }
            KIND_LSH => {
                let seed = r.read_u64::<LittleEndian>().map_err(truncated)?;
                let projection = read_matrix(r)?;
                let center_mean = match r.read_u8().map_err(truncated)? {
                    0 => None,
                    1 => Some(read_vec(r)?),
                    t => return Err(JpshError::Format(format!("bad center flag {t}"))),
                };
                if center_mean.as_ref().is_some_and(|m| m.len() != projection.nrows()) {
                    return Err(JpshError::Format("LSH center length differs from d".into()));
                }
                Model::Lsh(LshModel {
                    projection,
                    seed,
                    center_mean,
                })
            }
            k => return Err(JpshError::Format(format!("unknown model kind {k}"))),
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(truncated)? != 0 {
            return Err(JpshError::Format("trailing bytes after model".into()));
        }
        Ok(model)
    }
}

fn truncated(_: std::io::Error) -> JpshError {
    JpshError::Format("truncated model file".into())
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(bytes.len() as u64)?;
    w.write_all(bytes)
}

fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let len = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf).map_err(truncated)?;
    if buf.len() != len {
        return Err(truncated(std::io::ErrorKind::UnexpectedEof.into()));
    }
    Ok(buf)
}

fn write_vec<W: Write>(w: &mut W, v: &[f64]) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(v.len() as u64)?;
    v.iter().try_for_each(|&x| w.write_f64::<LittleEndian>(x))
}

fn read_vec<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let len = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    read_f64s(r, len)
}

fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let bytes = {
        let mut buf = Vec::new();
        r.take(len as u64 * 8).read_to_end(&mut buf).map_err(truncated)?;
        buf
    };
    if bytes.len() != len * 8 {
        return Err(truncated(std::io::ErrorKind::UnexpectedEof.into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(m.nrows() as u64)?;
    w.write_u64::<LittleEndian>(m.ncols() as u64)?;
    m.as_slice().iter().try_for_each(|&x| w.write_f64::<LittleEndian>(x))
}

fn read_matrix<R: Read>(r: &mut R) -> Result<DMatrix<f64>> {
    let rows = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    let cols = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| JpshError::Format("matrix size overflows".into()))?;
    Ok(DMatrix::from_vec(rows, cols, read_f64s(r, len)?))
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    let mut f = File::create(path).map_err(|e| JpshError::io(path, e))?;
    f.write_all(&model.to_bytes()).map_err(|e| JpshError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| JpshError::io(path, e))?;
    Model::read_from(&mut BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::lsh_train;

    #[test]
    fn lsh_roundtrip() {
        let m = Model::Lsh(lsh_train(3, 5, 2).unwrap().with_center(vec![1.0, 2.0, 3.0]).unwrap());
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..6], MODEL_MAGIC);
        assert_eq!(Model::read_from(&mut bytes.as_slice()).unwrap(), m);
        assert_eq!(m.to_bytes(), bytes);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(Model::read_from(&mut &b"JPSHM2...."[..]), Err(JpshError::Format(_))));
        let mut bytes = Model::Lsh(lsh_train(2, 2, 0).unwrap()).to_bytes();
        bytes.pop();
        assert!(matches!(Model::read_from(&mut bytes.as_slice()), Err(JpshError::Format(_))));
        let mut bytes = Model::Lsh(lsh_train(2, 2, 0).unwrap()).to_bytes();
        bytes.push(0);
        assert!(Model::read_from(&mut bytes.as_slice()).is_err());
    }
}
