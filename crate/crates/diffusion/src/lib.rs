//! Diffusion engine: schedules, losses, DDIM sampling and inversion,
//! slerp noise injection and classifier-free guidance.
//!
//! Everything is a pure function over immutable inputs; randomness comes
//! from counter-based streams keyed by `(seed, step, purpose)` so batch
//! order never changes results.

pub mod ddim;
pub mod grid;
pub mod guidance;
pub mod loss;
pub mod rng;
pub mod schedule;

pub use ddim::{ddim_invert, ddim_sample, ddim_step, slerp_noise};
pub use grid::SampleGrid;
pub use guidance::{guided_score, guided_score_negative, GuidanceSpec};
pub use loss::{
    combined_loss, denoise_loss, draw_t_eps, mse_and_grad, CombinedLoss, DenoiseDraw,
    NoisePredictor, TokenId,
};
pub use rng::{Purpose, RngKey, Stream};
pub use schedule::{forward_diffuse, NoiseSchedule, DEFAULT_STEPS};
