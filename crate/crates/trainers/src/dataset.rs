//! Personalization datasets and the deterministic loss-evaluation
//! protocol used to track training progress.

use svdiff_denoiser::vocab::{is_class_word, is_placeholder, PromptTokens};
use svdiff_denoiser::ToyDenoiser;
use svdiff_diffusion::{
    combined_loss, forward_diffuse, NoiseSchedule, Purpose, RngKey, SampleGrid, TokenId,
};
use svdiff_linalg::error::{Error, Result};

/// Target images plus prior data for one personalized subject.
#[derive(Debug, Clone)]
pub struct SubjectDataset {
    pub targets: Vec<SampleGrid>,
    pub target_prompt: PromptTokens,
    pub priors: Vec<SampleGrid>,
    pub prior_prompt: PromptTokens,
    /// The subject's placeholder token (first one in the prompt).
    pub placeholder: TokenId,
    /// The subject's class word (first one in the prompt).
    pub class_word: TokenId,
}

impl SubjectDataset {
    pub fn new(
        targets: Vec<SampleGrid>,
        target_prompt: PromptTokens,
        priors: Vec<SampleGrid>,
        prior_prompt: PromptTokens,
    ) -> Result<Self> {
        if !(3..=5).contains(&targets.len()) {
            return Err(Error::Config(format!(
                "subject needs 3-5 target images, got {}",
                targets.len()
            )));
        }
        let placeholder = target_prompt
            .ids()
            .iter()
            .copied()
            .find(|&id| is_placeholder(id))
            .ok_or_else(|| Error::Config("target prompt has no placeholder token".into()))?;
        let class_word = target_prompt
            .ids()
            .iter()
            .copied()
            .find(|&id| is_class_word(id))
            .ok_or_else(|| Error::Config("target prompt has no class word".into()))?;
        if prior_prompt.contains_placeholder() {
            return Err(Error::Config("prior prompt must not contain a placeholder".into()));
        }
        Ok(Self {
            targets,
            target_prompt,
            priors,
            prior_prompt,
            placeholder,
            class_word,
        })
    }
}

/// Deterministic mean denoising loss over `draws` fixed (t, eps) draws
/// per image; used for before/after comparisons.
pub fn eval_denoise_loss(
    model: &ToyDenoiser,
    batch: &[(SampleGrid, Vec<TokenId>)],
    sched: &NoiseSchedule,
    seed: u64,
    draws: usize,
) -> Result<f64> {
    let rng = RngKey::new(seed);
    let mut total = 0.0;
    for d in 0..draws {
        total += combined_loss(model, batch, &[], 0.0, sched, &rng, d as u64)?.target;
    }
    Ok(total / draws as f64)
}

/// Deterministic sample of prior images from the (pre)trained model with
/// the prior prompt; conditional-only, eta = 0.
pub fn generate_priors(
    model: &ToyDenoiser,
    prompt: &PromptTokens,
    count: usize,
    steps: usize,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<SampleGrid>> {
    let rng = RngKey::new(seed);
    let guidance = svdiff_diffusion::GuidanceSpec::conditional();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut init = rng.stream(i as u64, Purpose::InitNoise);
        let z_t = SampleGrid::normal(
            svdiff_denoiser::IMG_CHANNELS,
            svdiff_denoiser::IMG_SIZE,
            svdiff_denoiser::IMG_SIZE,
            &mut init,
        );
        let sample_key = RngKey::new(seed ^ (i as u64).wrapping_mul(0x9E3779B97F4A7C15));
        out.push(svdiff_diffusion::ddim_sample(
            model,
            &z_t,
            prompt.ids(),
            &guidance,
            steps,
            0.0,
            sched,
            &sample_key,
        )?);
    }
    Ok(out)
}

/// Noises an image to a fixed mid-schedule level; used when probing
/// attention maps deterministically.
pub fn noised_probe(
    image: &SampleGrid,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<(SampleGrid, usize)> {
    let t = sched.steps() / 2;
    let rng = RngKey::new(seed);
    let mut s = rng.stream(0, Purpose::Noise);
    let eps = SampleGrid::normal(image.channels(), image.height(), image.width(), &mut s);
    Ok((forward_diffuse(image, t, &eps, sched)?, t))
}
