//! Spectral-shift parameter space.
//!
//! Reassembly of weights from shifted singular values, projection of
//! weight gradients onto the shift space, checkpoint arithmetic
//! (add/interpolate/scale/rank-limit), cosine correlation analysis, the
//! rank-1 adapter baseline, and the `.svdd` delta file format.

pub mod file;
pub mod fingerprint;
pub mod lora;
pub mod ops;
pub mod types;

pub use fingerprint::fingerprint;
pub use lora::{lora_apply, lora_gradient};
pub use ops::{
    add_shifts, apply_checkpoint, build_cache, gradient_wrt_shift, interp_shifts, limit_rank,
    reassemble_weight, scale_shifts, shift_correlation, zero_checkpoint,
};
pub use types::{DeltaCheckpoint, LoraDelta, LoraLayer, SpectralShift};
