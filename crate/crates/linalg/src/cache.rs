//! On-disk SVD cache (`*.svd`).
//!
//! The decomposition of a base model is a one-time computation; this
//! cache stores the factors of every decomposed layer so other tools can
//! reuse them. Layout, all integers and floats little-endian:
//!
//! ```text
//! "SVDC" | u32 version=1 | u32 layer_count
//! per layer (sorted by name):
//!   u16 name_len | name UTF-8 | u32 M | u32 N | u32 r
//!   M*r f32 U row-major | r f32 sigma | N*r f32 V row-major
//! ```
//!
//! Payloads are 32-bit on disk; in-memory factors stay 64-bit.

use std::collections::BTreeMap;
use std::path::Path;

use crate::byteio::{put_f32s, put_name, put_u32, Reader};
use crate::error::{Error, Result};
use crate::svd::{svd_decompose, SvdFactors};
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"SVDC";
const VERSION: u32 = 1;

/// Cached factors for a set of named layers.
#[derive(Debug, Clone, Default)]
pub struct SvdCache {
    factors: BTreeMap<String, SvdFactors>,
}

impl SvdCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, factors: SvdFactors) {
        self.factors.insert(name.to_string(), factors);
    }

    pub fn get(&self, name: &str) -> Option<&SvdFactors> {
        self.factors.get(name)
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &SvdFactors)> {
        self.factors.iter()
    }

    /// Decompose every matrix in `layers`, keyed by name.
    pub fn build<'a>(layers: impl Iterator<Item = (&'a str, Matrix)>) -> Result<Self> {
        let mut cache = Self::new();
        for (name, m) in layers {
            cache.insert(name, svd_decompose(&m)?);
        }
        Ok(cache)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, VERSION);
        put_u32(&mut buf, self.factors.len() as u32);
        for (name, f) in &self.factors {
            put_name(&mut buf, name)?;
            put_u32(&mut buf, f.rows() as u32);
            put_u32(&mut buf, f.cols() as u32);
            put_u32(&mut buf, f.rank_capacity() as u32);
            put_f32s(&mut buf, f.u().data());
            put_f32s(&mut buf, f.sigma());
            put_f32s(&mut buf, f.v().data());
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC, "svd cache")?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("svd cache version {version}, expected {VERSION}")));
        }
        let count = r.u32()? as usize;
        let mut cache = Self::new();
        for _ in 0..count {
            let name = r.name()?;
            let m = r.u32()? as usize;
            let n = r.u32()? as usize;
            let rank = r.u32()? as usize;
            if rank != m.min(n) || m == 0 || n == 0 {
                return Err(Error::Format(format!(
                    "layer {name}: rank {rank} inconsistent with {m}x{n}"
                )));
            }
            let u = Matrix::new(m, rank, r.f32s(m * rank)?)?;
            let sigma = r.f32s(rank)?;
            let v = Matrix::new(n, rank, r.f32s(n * rank)?)?;
            cache.insert(&name, SvdFactors::from_parts(u, sigma, v)?);
        }
        r.expect_end("svd cache")?;
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
