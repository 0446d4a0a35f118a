//! Dense tensor storage, kernel reshaping and a deterministic SVD.
//!
//! All linear algebra runs in 64-bit floats; on-disk payloads are 32-bit.

pub mod byteio;
pub mod cache;
pub mod error;
pub mod registry;
pub mod svd;
pub mod tensor;

pub use cache::SvdCache;
pub use error::{Error, Result};
pub use registry::{LayerKind, WeightStore};
pub use svd::{svd_decompose, SvdFactors};
pub use tensor::{reshape_kernel, unreshape_kernel, DenseTensor, Matrix};
