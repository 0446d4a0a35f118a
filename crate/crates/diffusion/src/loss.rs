//! Denoising objective and the prior-preservation combination.

use svdiff_linalg::error::{Error, Result};

use crate::grid::SampleGrid;
use crate::rng::{Purpose, RngKey, Stream};
use crate::schedule::{forward_diffuse, NoiseSchedule};

pub type TokenId = u16;

/// Anything that predicts the noise added to `z_t`. An empty prompt
/// means unconditional (null) conditioning.
pub trait NoisePredictor {
    fn predict(&self, z_t: &SampleGrid, t: usize, prompt: &[TokenId]) -> Result<SampleGrid>;
}

/// One draw of the denoising objective.
#[derive(Debug, Clone)]
pub struct DenoiseDraw {
    pub t: usize,
    pub eps: SampleGrid,
    pub z_t: SampleGrid,
    pub loss: f64,
    /// d(loss)/d(eps_hat) = 2 (eps_hat - eps) / numel.
    pub grad: SampleGrid,
}

/// Draws `(t, eps)` for one training example from per-purpose streams.
pub fn draw_t_eps(
    z0: &SampleGrid,
    sched: &NoiseSchedule,
    t_stream: &mut Stream,
    eps_stream: &mut Stream,
) -> (usize, SampleGrid) {
    let t = 1 + t_stream.next_below(sched.steps());
    let eps = SampleGrid::normal(z0.channels(), z0.height(), z0.width(), eps_stream);
    (t, eps)
}

/// Mean squared error over all elements plus its gradient.
pub fn mse_and_grad(eps_hat: &SampleGrid, eps: &SampleGrid) -> Result<(f64, SampleGrid)> {
    let numel = eps.numel() as f64;
    let loss = eps_hat.mse(eps)?;
    let grad = eps_hat.zip_map(eps, |h, e| 2.0 * (h - e) / numel)?;
    Ok((loss, grad))
}

/// Samples `t ~ U[1, T]` and `eps ~ N(0, I)`, noises `z0`, queries the
/// model and returns the squared error with its prediction gradient.
pub fn denoise_loss(
    model: &impl NoisePredictor,
    z0: &SampleGrid,
    prompt: &[TokenId],
    sched: &NoiseSchedule,
    rng: &RngKey,
    step: u64,
) -> Result<DenoiseDraw> {
    let mut t_stream = rng.stream(step, Purpose::Timestep);
    let mut eps_stream = rng.stream(step, Purpose::Noise);
    let (t, eps) = draw_t_eps(z0, sched, &mut t_stream, &mut eps_stream);
    let z_t = forward_diffuse(z0, t, &eps, sched)?;
    let eps_hat = model.predict(&z_t, t, prompt)?;
    let (loss, grad) = mse_and_grad(&eps_hat, &eps)?;
    Ok(DenoiseDraw {
        t,
        eps,
        z_t,
        loss,
        grad,
    })
}

/// Combined target + weighted prior loss parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    pub target: f64,
    pub prior: f64,
}

/// `L = L_target + lambda * L_prior`, each term the mean denoising loss
/// over its batch. An empty prior batch is allowed only when lambda = 0.
pub fn combined_loss(
    model: &impl NoisePredictor,
    target_batch: &[(SampleGrid, Vec<TokenId>)],
    prior_batch: &[(SampleGrid, Vec<TokenId>)],
    lambda: f64,
    sched: &NoiseSchedule,
    rng: &RngKey,
    step: u64,
) -> Result<CombinedLoss> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda {lambda} must be finite and >= 0")));
    }
    if lambda > 0.0 && prior_batch.is_empty() {
        return Err(Error::Config(
            "prior batch may be empty only when lambda is 0".into(),
        ));
    }
    if target_batch.is_empty() {
        return Err(Error::Config("target batch is empty".into()));
    }

    let mut t_stream = rng.stream(step, Purpose::Timestep);
    let mut eps_stream = rng.stream(step, Purpose::Noise);
    let mut target = 0.0;
    for (z0, prompt) in target_batch {
        let (t, eps) = draw_t_eps(z0, sched, &mut t_stream, &mut eps_stream);
        let z_t = forward_diffuse(z0, t, &eps, sched)?;
        let eps_hat = model.predict(&z_t, t, prompt)?;
        target += eps_hat.mse(&eps)?;
    }
    target /= target_batch.len() as f64;

    let mut prior = 0.0;
    if lambda > 0.0 {
        let mut t_stream = rng.stream(step, Purpose::PriorTimestep);
        let mut eps_stream = rng.stream(step, Purpose::PriorNoise);
        for (z0, prompt) in prior_batch {
            let (t, eps) = draw_t_eps(z0, sched, &mut t_stream, &mut eps_stream);
            let z_t = forward_diffuse(z0, t, &eps, sched)?;
            let eps_hat = model.predict(&z_t, t, prompt)?;
            prior += eps_hat.mse(&eps)?;
        }
        prior /= prior_batch.len() as f64;
    }

    Ok(CombinedLoss {
        total: target + lambda * prior,
        target,
        prior,
    })
}
