//! Named-layer registry abstraction.
//!
//! Models expose their weights as a flat set of named layers; checkpoint
//! arithmetic, fingerprinting and file I/O all work against this trait
//! instead of a concrete model type.

use crate::error::Result;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv4d,
    Linear2d,
    Embed2d,
    Bias1d,
    Gain1d,
}

impl LayerKind {
    /// 2-D and 4-D kernels are decomposed; 1-D weights never are.
    pub fn is_decomposed(self) -> bool {
        matches!(self, LayerKind::Conv4d | LayerKind::Linear2d | LayerKind::Embed2d)
    }

    pub fn code(self) -> u8 {
        match self {
            LayerKind::Conv4d => 0,
            LayerKind::Linear2d => 1,
            LayerKind::Embed2d => 2,
            LayerKind::Bias1d => 3,
            LayerKind::Gain1d => 4,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => LayerKind::Conv4d,
            1 => LayerKind::Linear2d,
            2 => LayerKind::Embed2d,
            3 => LayerKind::Bias1d,
            4 => LayerKind::Gain1d,
            _ => return None,
        })
    }
}

/// Read/write access to a model's named weight layers.
pub trait WeightStore {
    /// Layer names in a stable, sorted order.
    fn layer_names(&self) -> Vec<String>;
    fn layer_kind(&self, name: &str) -> Option<LayerKind>;
    fn layer(&self, name: &str) -> Option<&DenseTensor>;
    fn set_layer(&mut self, name: &str, tensor: DenseTensor) -> Result<()>;
}
