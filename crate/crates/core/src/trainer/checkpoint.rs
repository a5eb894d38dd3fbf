//! Binary checkpoint.
//!
//! Little-endian layout:
//!
//! | field | type |
//! |-------|------|
//! | magic `CTDACKPT` | 8 bytes |
//! | version | u32 |
//! | encoding (0 pooled, 1 descriptor) | u32 |
//! | pooled side (0 for descriptor) | u32 |
//! | block count (7) | u32 |
//! | per block: rows, cols | u64, u64 |
//! | per block: values, row-major | f64 × rows·cols |
//!
//! Blocks in order: `W1`, `b1`, `W2`, `b2`, head weight, head bias,
//! normalizer knots. Bias blocks have one row.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::features::{InputEncoding, QuantileNormalizer};
use super::model::{FeatureMap, LinearHead};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CTDACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
const BLOCKS: u32 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoding: InputEncoding,
    pub feature_map: FeatureMap,
    pub head: LinearHead,
    pub normalizer: QuantileNormalizer,
}

fn push_block(out: &mut Vec<u8>, rows: usize, cols: usize, values: impl Iterator<Item = f64>) {
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn block(&mut self) -> std::result::Result<Array2<f64>, String> {
        let rows = usize::try_from(self.u64()?).map_err(|_| "block too large")?;
        let cols = usize::try_from(self.u64()?).map_err(|_| "block too large")?;
        let n = rows.checked_mul(cols).ok_or("block too large")?;
        let raw = self.take(n.checked_mul(8).ok_or("block too large")?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), values).expect("shape matches length"))
    }
}

fn row_vector(block: Array2<f64>, name: &str) -> std::result::Result<Array1<f64>, String> {
    if block.nrows() != 1 {
        return Err(format!("{name} must have one row, found {}", block.nrows()));
    }
    Ok(block.row(0).to_owned())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let (code, side) = match self.encoding {
            InputEncoding::Pooled { side } => (0u32, side as u32),
            InputEncoding::Descriptor => (1, 0),
        };
        out.extend_from_slice(&code.to_le_bytes());
        out.extend_from_slice(&side.to_le_bytes());
        out.extend_from_slice(&BLOCKS.to_le_bytes());
        let phi = &self.feature_map;
        push_block(&mut out, phi.w1.nrows(), phi.w1.ncols(), phi.w1.iter().copied());
        push_block(&mut out, 1, phi.b1.len(), phi.b1.iter().copied());
        push_block(&mut out, phi.w2.nrows(), phi.w2.ncols(), phi.w2.iter().copied());
        push_block(&mut out, 1, phi.b2.len(), phi.b2.iter().copied());
        let h = &self.head;
        push_block(&mut out, h.weight.nrows(), h.weight.ncols(), h.weight.iter().copied());
        push_block(&mut out, 1, h.bias.len(), h.bias.iter().copied());
        let k = self.normalizer.knots();
        push_block(&mut out, k.nrows(), k.ncols(), k.iter().copied());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("version {version} (expected {CHECKPOINT_VERSION})"));
        }
        let encoding = match (r.u32()?, r.u32()?) {
            (0, side) if side > 0 => InputEncoding::Pooled { side: side as usize },
            (1, 0) => InputEncoding::Descriptor,
            other => return Err(format!("unknown encoding {other:?}")),
        };
        let blocks = r.u32()?;
        if blocks != BLOCKS {
            return Err(format!("{blocks} blocks (expected {BLOCKS})"));
        }
        let w1 = r.block()?;
        let b1 = row_vector(r.block()?, "b1")?;
        let w2 = r.block()?;
        let b2 = row_vector(r.block()?, "b2")?;
        let head_w = r.block()?;
        let head_b = row_vector(r.block()?, "head bias")?;
        let knots = r.block()?;
        if r.at != bytes.len() {
            return Err("trailing bytes".into());
        }
        let d = encoding.dim();
        if w1.nrows() != d
            || b1.len() != w1.ncols()
            || w2.nrows() != w1.ncols()
            || b2.len() != w2.ncols()
            || head_w.nrows() != w2.ncols()
            || head_b.len() != head_w.ncols()
            || knots.nrows() != d
        {
            return Err("inconsistent block shapes".into());
        }
        Ok(Self {
            encoding,
            feature_map: FeatureMap { w1, b1, w2, b2 },
            head: LinearHead {
                weight: head_w,
                bias: head_b,
            },
            normalizer: QuantileNormalizer::from_knots(knots).map_err(|e| e.to_string())?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|detail| Error::Schema {
            path: path.to_path_buf(),
            detail,
        })
    }
}
