//! The trainable delta objects: per-layer spectral shifts, dense 1-D
//! deltas, and the rank-1 baseline factors.

use std::collections::BTreeMap;

use svdiff_linalg::error::{Error, Result};
use svdiff_linalg::DenseTensor;

/// Additive perturbation of one layer's singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralShift {
    layer_name: String,
    delta: Vec<f64>,
    rank_mask: Option<usize>,
}

impl SpectralShift {
    pub fn new(layer_name: &str, delta: Vec<f64>) -> Self {
        Self {
            layer_name: layer_name.to_string(),
            delta,
            rank_mask: None,
        }
    }

    pub fn zeros(layer_name: &str, rank: usize) -> Self {
        Self::new(layer_name, vec![0.0; rank])
    }

    /// Restores a shift with an explicit mask; entries at or past the mask
    /// must already be zero.
    pub fn with_mask(layer_name: &str, delta: Vec<f64>, rank_mask: Option<usize>) -> Result<Self> {
        if let Some(k) = rank_mask {
            if delta.iter().skip(k).any(|&d| d != 0.0) {
                return Err(Error::Domain(format!(
                    "layer {layer_name}: non-zero shift past rank mask {k}"
                )));
            }
        }
        Ok(Self {
            layer_name: layer_name.to_string(),
            delta,
            rank_mask,
        })
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn rank(&self) -> usize {
        self.delta.len()
    }

    pub fn rank_mask(&self) -> Option<usize> {
        self.rank_mask
    }

    pub fn is_zero(&self) -> bool {
        self.delta.iter().all(|&d| d == 0.0)
    }

    /// Whether direction `i` is trainable under the mask.
    pub fn is_active(&self, i: usize) -> bool {
        self.rank_mask.map_or(true, |k| i < k)
    }

    /// Adds `update` into the shift, zeroing masked directions.
    pub fn apply_update(&mut self, update: &[f64]) -> Result<()> {
        if update.len() != self.delta.len() {
            return Err(Error::Shape(format!(
                "layer {}: update length {} vs rank {}",
                self.layer_name,
                update.len(),
                self.delta.len()
            )));
        }
        for i in 0..self.delta.len() {
            if self.is_active(i) {
                self.delta[i] += update[i];
            }
        }
        Ok(())
    }

    /// Zeroes all directions at index `>= k` and records the mask; a mask
    /// that would not constrain anything is not recorded.
    pub fn limit_rank(&self, k: usize) -> SpectralShift {
        let r = self.delta.len();
        let effective = self.rank_mask.unwrap_or(r).min(k).min(r);
        if effective >= r {
            return self.clone();
        }
        let mut delta = self.delta.clone();
        for d in delta.iter_mut().skip(effective) {
            *d = 0.0;
        }
        SpectralShift {
            layer_name: self.layer_name.clone(),
            delta,
            rank_mask: Some(effective),
        }
    }
}

/// Serialized-friendly bundle: spectral shifts for decomposed layers plus
/// dense deltas for the 1-D weights, tied to one base model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeltaCheckpoint {
    pub fingerprint: u64,
    /// Free-form training-config summary. Carried in the run manifest,
    /// not in the `.svdd` payload.
    pub summary: String,
    shifts: BTreeMap<String, SpectralShift>,
    dense: BTreeMap<String, DenseTensor>,
}

impl DeltaCheckpoint {
    pub fn new(fingerprint: u64) -> Self {
        Self {
            fingerprint,
            summary: String::new(),
            shifts: BTreeMap::new(),
            dense: BTreeMap::new(),
        }
    }

    pub fn insert_shift(&mut self, shift: SpectralShift) {
        self.shifts.insert(shift.layer_name().to_string(), shift);
    }

    pub fn insert_dense(&mut self, name: &str, delta: DenseTensor) -> Result<()> {
        if delta.dims().len() != 1 {
            return Err(Error::Shape(format!(
                "dense deltas cover only 1-D layers; {name} has rank {}",
                delta.dims().len()
            )));
        }
        self.dense.insert(name.to_string(), delta);
        Ok(())
    }

    pub fn shift(&self, name: &str) -> Option<&SpectralShift> {
        self.shifts.get(name)
    }

    pub fn dense_delta(&self, name: &str) -> Option<&DenseTensor> {
        self.dense.get(name)
    }

    pub fn shifts(&self) -> impl Iterator<Item = (&String, &SpectralShift)> {
        self.shifts.iter()
    }

    pub fn dense_deltas(&self) -> impl Iterator<Item = (&String, &DenseTensor)> {
        self.dense.iter()
    }

    pub fn shift_count(&self) -> usize {
        self.shifts.len()
    }

    pub fn dense_count(&self) -> usize {
        self.dense.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty() && self.dense.is_empty()
    }

    /// Equality of persisted content: fingerprint, shifts and dense
    /// deltas. The config summary travels in the manifest and is ignored.
    pub fn content_eq(&self, other: &DeltaCheckpoint) -> bool {
        self.fingerprint == other.fingerprint
            && self.shifts == other.shifts
            && self.dense == other.dense
    }

    /// Number of serialized f32 parameters (spectral entries plus dense).
    pub fn parameter_count(&self) -> usize {
        let s: usize = self.shifts.values().map(|s| s.rank()).sum();
        let d: usize = self.dense.values().map(|t| t.numel()).sum();
        s + d
    }

    fn layer_sets_match(&self, other: &DeltaCheckpoint) -> Result<()> {
        let same_shift = self.shifts.keys().eq(other.shifts.keys());
        let same_dense = self.dense.keys().eq(other.dense.keys());
        if !(same_shift && same_dense) {
            return Err(Error::Shape("checkpoints cover different layer sets".into()));
        }
        for (name, a) in &self.shifts {
            if a.rank() != other.shifts[name].rank() {
                return Err(Error::Shape(format!("layer {name}: rank mismatch")));
            }
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &DeltaCheckpoint) -> Result<()> {
        if self.fingerprint != other.fingerprint {
            return Err(Error::BaseModelMismatch {
                base: self.fingerprint,
                artifact: other.fingerprint,
            });
        }
        self.layer_sets_match(other)
    }
}

/// Rank-1 additive update `b a^T` per decomposed layer; 1-D layers carry
/// dense deltas exactly like the spectral checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLayer {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
}

impl LoraLayer {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            b: vec![0.0; m],
            a: vec![0.0; n],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.b.len() + self.a.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoraDelta {
    pub fingerprint: u64,
    pairs: BTreeMap<String, LoraLayer>,
    dense: BTreeMap<String, DenseTensor>,
}

impl LoraDelta {
    pub fn new(fingerprint: u64) -> Self {
        Self {
            fingerprint,
            pairs: BTreeMap::new(),
            dense: BTreeMap::new(),
        }
    }

    pub fn insert_pair(&mut self, name: &str, layer: LoraLayer) {
        self.pairs.insert(name.to_string(), layer);
    }

    pub fn insert_dense(&mut self, name: &str, delta: DenseTensor) -> Result<()> {
        if delta.dims().len() != 1 {
            return Err(Error::Shape(format!(
                "dense deltas cover only 1-D layers; {name} has rank {}",
                delta.dims().len()
            )));
        }
        self.dense.insert(name.to_string(), delta);
        Ok(())
    }

    pub fn pair(&self, name: &str) -> Option<&LoraLayer> {
        self.pairs.get(name)
    }

    pub fn pair_mut(&mut self, name: &str) -> Option<&mut LoraLayer> {
        self.pairs.get_mut(name)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&String, &LoraLayer)> {
        self.pairs.iter()
    }

    pub fn dense_deltas(&self) -> impl Iterator<Item = (&String, &DenseTensor)> {
        self.dense.iter()
    }

    pub fn parameter_count(&self) -> usize {
        let p: usize = self.pairs.values().map(|l| l.parameter_count()).sum();
        let d: usize = self.dense.values().map(|t| t.numel()).sum();
        p + d
    }
}
