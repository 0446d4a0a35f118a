//! Single-image editing: spectral fine-tune on one image-prompt pair
//! (no prior preservation), then prompt-modified sampling, optionally
//! from a DDIM-inverted latent with slerp noise injection.

use svdiff_denoiser::vocab::PromptTokens;
use svdiff_denoiser::{ToyDenoiser, IMG_CHANNELS, IMG_SIZE};
use svdiff_diffusion::{
    ddim_invert, ddim_sample, slerp_noise, GuidanceSpec, Purpose, RngKey, SampleGrid,
};
use svdiff_linalg::error::Result;
use svdiff_linalg::SvdCache;
use svdiff_spectral::DeltaCheckpoint;

use crate::config::TrainConfig;
use crate::finetune::{finetune_single_image, train_schedule, FinetuneArtifact};

/// Sampling knobs for the editing pipeline. The two preset pairs mirror
/// the recommended settings: (eta 0.5, alpha 0) for non-structural
/// edits, (eta 0.9, alpha 0.9) for structural ones.
#[derive(Debug, Clone, PartialEq)]
pub struct EditOptions {
    /// Start from the DDIM-inverted latent instead of fresh noise.
    pub invert: bool,
    pub eta: f64,
    pub slerp_alpha: f64,
    pub cfg_scale: f64,
    pub sample_steps: usize,
    pub seed: u64,
}

impl Default for EditOptions {
    fn default() -> Self {
        Self::non_structural()
    }
}

impl EditOptions {
    pub fn non_structural() -> Self {
        Self {
            invert: true,
            eta: 0.5,
            slerp_alpha: 0.0,
            cfg_scale: 1.0,
            sample_steps: 50,
            seed: 0,
        }
    }

    pub fn structural() -> Self {
        Self {
            eta: 0.9,
            slerp_alpha: 0.9,
            ..Self::non_structural()
        }
    }
}

#[derive(Debug, Clone)]
pub struct EditRun {
    pub image: SampleGrid,
    pub checkpoint: DeltaCheckpoint,
    pub trained: ToyDenoiser,
    /// Latent the sampler started from.
    pub z_start: SampleGrid,
}

/// Fine-tunes on `(image, caption)` in spectral space with lambda = 0,
/// then samples with `target_prompt`. The inversion runs at guidance
/// scale 1 conditioned on the target prompt.
pub fn single_image_edit(
    base: &ToyDenoiser,
    image: &SampleGrid,
    caption: &PromptTokens,
    target_prompt: &PromptTokens,
    cfg: &TrainConfig,
    opts: &EditOptions,
    cache: Option<&SvdCache>,
) -> Result<EditRun> {
    let sched = train_schedule();
    let run = finetune_single_image(base, image, caption, cfg, cache)?;
    let model = &run.trained;
    let rng = RngKey::new(opts.seed);

    let mut z_start = if opts.invert {
        ddim_invert(model, image, target_prompt.ids(), opts.sample_steps, sched)?
    } else {
        let mut init = rng.stream(0, Purpose::InitNoise);
        SampleGrid::normal(IMG_CHANNELS, IMG_SIZE, IMG_SIZE, &mut init)
    };
    if opts.invert && opts.slerp_alpha > 0.0 {
        let mut s = rng.stream(0, Purpose::SlerpNoise);
        let eps = SampleGrid::normal(IMG_CHANNELS, IMG_SIZE, IMG_SIZE, &mut s);
        z_start = slerp_noise(&z_start, &eps, opts.slerp_alpha)?;
    }

    let guidance = GuidanceSpec::with_scale(opts.cfg_scale);
    let image_out = ddim_sample(
        model,
        &z_start,
        target_prompt.ids(),
        &guidance,
        opts.sample_steps,
        opts.eta,
        sched,
        &rng,
    )?;

    let checkpoint = match run.artifact {
        FinetuneArtifact::Spectral(d) => d,
        _ => unreachable!("single-image fine-tune runs in spectral mode"),
    };
    Ok(EditRun {
        image: image_out,
        checkpoint,
        trained: run.trained,
        z_start,
    })
}
