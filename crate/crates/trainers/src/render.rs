//! Checkpoint combination and rendering.

use svdiff_denoiser::vocab::PromptTokens;
use svdiff_denoiser::{ToyDenoiser, IMG_CHANNELS, IMG_SIZE};
use svdiff_diffusion::{ddim_sample, GuidanceSpec, Purpose, RngKey, SampleGrid};
use svdiff_linalg::error::{Error, Result};
use svdiff_linalg::SvdCache;
use svdiff_spectral::{add_shifts, apply_checkpoint, interp_shifts, scale_shifts, DeltaCheckpoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CombineMethod {
    /// Sum all checkpoints' shifts.
    Add,
    /// `alpha * first + (1 - alpha) * second`; exactly two checkpoints.
    Interp(f64),
    /// `s * first`; exactly one checkpoint.
    Scale(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOpts {
    pub steps: usize,
    pub eta: f64,
    pub guidance: GuidanceSpec,
    pub seed: u64,
}

impl Default for RenderOpts {
    fn default() -> Self {
        Self {
            steps: 25,
            eta: 0.0,
            guidance: GuidanceSpec::conditional(),
            seed: 0,
        }
    }
}

/// Folds the checkpoints with `method` into one delta.
pub fn combine_checkpoints(
    checkpoints: &[DeltaCheckpoint],
    method: CombineMethod,
) -> Result<DeltaCheckpoint> {
    match method {
        CombineMethod::Add => {
            let (first, rest) = checkpoints
                .split_first()
                .ok_or_else(|| Error::Config("add needs at least one checkpoint".into()))?;
            let mut acc = first.clone();
            for c in rest {
                acc = add_shifts(&acc, c)?;
            }
            Ok(acc)
        }
        CombineMethod::Interp(alpha) => {
            if checkpoints.len() != 2 {
                return Err(Error::Config(format!(
                    "interpolation needs exactly 2 checkpoints, got {}",
                    checkpoints.len()
                )));
            }
            interp_shifts(&checkpoints[0], &checkpoints[1], alpha)
        }
        CombineMethod::Scale(s) => {
            if checkpoints.len() != 1 {
                return Err(Error::Config(format!(
                    "scaling takes exactly 1 checkpoint, got {}",
                    checkpoints.len()
                )));
            }
            scale_shifts(&checkpoints[0], s)
        }
    }
}

/// Deterministic render from a model: `z_T` comes from the seed's init
/// stream, then eta-controlled DDIM sampling.
pub fn render(
    model: &ToyDenoiser,
    prompt: &PromptTokens,
    opts: &RenderOpts,
    sched: &svdiff_diffusion::NoiseSchedule,
) -> Result<SampleGrid> {
    let rng = RngKey::new(opts.seed);
    let mut init = rng.stream(0, Purpose::InitNoise);
    let z_t = SampleGrid::normal(IMG_CHANNELS, IMG_SIZE, IMG_SIZE, &mut init);
    ddim_sample(
        model,
        &z_t,
        prompt.ids(),
        &opts.guidance,
        opts.steps,
        opts.eta,
        sched,
        &rng,
    )
}

/// Applies the combined checkpoint to a copy of the base model and
/// renders with a fixed seed.
pub fn combine_and_render(
    base: &ToyDenoiser,
    cache: &SvdCache,
    checkpoints: &[DeltaCheckpoint],
    method: CombineMethod,
    prompt: &PromptTokens,
    opts: &RenderOpts,
    sched: &svdiff_diffusion::NoiseSchedule,
) -> Result<SampleGrid> {
    let combined = combine_checkpoints(checkpoints, method)?;
    let mut model = base.clone();
    apply_checkpoint(&mut model, &combined, cache)?;
    render(&model, prompt, opts, sched)
}
