//! DDIM stepping, guided sampling, deterministic inversion and slerp
//! noise injection.

use svdiff_linalg::error::{Error, Result};

use crate::grid::SampleGrid;
use crate::guidance::{guided_score_negative, GuidanceSpec};
use crate::loss::{NoisePredictor, TokenId};
use crate::rng::{Purpose, RngKey, Stream};
use crate::schedule::NoiseSchedule;

/// One reverse step `z_t -> z_{t_prev}`.
///
/// ```text
/// x0_hat   = (z_t - sqrt(1 - ab_t) eps_hat) / sqrt(ab_t)
/// sigma_t  = eta sqrt((1 - ab_prev)/(1 - ab_t)) sqrt(1 - ab_t/ab_prev)
/// z_prev   = sqrt(ab_prev) x0_hat
///          + sqrt(1 - ab_prev - sigma_t^2) eps_hat
///          + sigma_t * fresh noise
/// ```
///
/// With `eta = 0` the step is deterministic and `noise` is never drawn.
pub fn ddim_step(
    z_t: &SampleGrid,
    eps_hat: &SampleGrid,
    t: usize,
    t_prev: usize,
    eta: f64,
    sched: &NoiseSchedule,
    noise: &mut Stream,
) -> Result<SampleGrid> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("eta {eta} outside [0, 1]")));
    }
    if t_prev >= t {
        return Err(Error::Domain(format!("step order requires t > t_prev, got {t} -> {t_prev}")));
    }
    sched.check_step(t)?;

    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    let x0 = z_t.scaled_add(1.0 / ab_t.sqrt(), eps_hat, -(1.0 - ab_t).sqrt() / ab_t.sqrt())?;

    let sigma = if eta == 0.0 {
        0.0
    } else {
        eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).sqrt()
    };
    let dir_coeff = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let mut z_prev = x0.scaled_add(ab_prev.sqrt(), eps_hat, dir_coeff)?;
    if sigma > 0.0 {
        let fresh = SampleGrid::normal(z_t.channels(), z_t.height(), z_t.width(), noise);
        z_prev = z_prev.scaled_add(1.0, &fresh, sigma)?;
    }
    Ok(z_prev)
}

fn guided_prediction(
    model: &impl NoisePredictor,
    z: &SampleGrid,
    t: usize,
    prompt: &[TokenId],
    spec: &GuidanceSpec,
) -> Result<SampleGrid> {
    let eps_cond = model.predict(z, t, prompt)?;
    if !spec.needs_null_score() {
        return Ok(eps_cond);
    }
    let eps_null = model.predict(z, t, &[])?;
    let eps_neg: Vec<SampleGrid> = spec
        .negatives
        .iter()
        .map(|neg| model.predict(z, t, neg))
        .collect::<Result<_>>()?;
    guided_score_negative(&eps_cond, &eps_null, &eps_neg, spec)
}

/// Iterates guided DDIM steps from `z_T` down to `z_0` over a `steps`-point
/// subsampled grid. Deterministic when `eta = 0`.
pub fn ddim_sample(
    model: &impl NoisePredictor,
    z_t: &SampleGrid,
    prompt: &[TokenId],
    guidance: &GuidanceSpec,
    steps: usize,
    eta: f64,
    sched: &NoiseSchedule,
    rng: &RngKey,
) -> Result<SampleGrid> {
    guidance.validate()?;
    let grid = sched.timestep_grid(steps)?;
    let mut z = z_t.clone();
    for k in (0..grid.len()).rev() {
        let t = grid[k];
        let t_prev = if k > 0 { grid[k - 1] } else { 0 };
        let eps_hat = guided_prediction(model, &z, t, prompt, guidance)?;
        let mut noise = rng.stream(t as u64, Purpose::EtaNoise);
        z = ddim_step(&z, &eps_hat, t, t_prev, eta, sched, &mut noise)?;
    }
    Ok(z)
}

/// Runs the deterministic update in reverse (`z_{t_prev} -> z_t`) to
/// recover the latent that reproduces `z0`; guidance scale is fixed at 1
/// (conditional prediction only).
pub fn ddim_invert(
    model: &impl NoisePredictor,
    z0: &SampleGrid,
    prompt: &[TokenId],
    steps: usize,
    sched: &NoiseSchedule,
) -> Result<SampleGrid> {
    let grid = sched.timestep_grid(steps)?;
    let mut z = z0.clone();
    let mut t_prev = 0usize;
    for &t in &grid {
        let eps_hat = model.predict(&z, t, prompt)?;
        let ab_prev = sched.alpha_bar(t_prev);
        let ab_t = sched.alpha_bar(t);
        // invert the eta=0 update: recover x0 at t_prev, remap to t
        let x0 = z.scaled_add(1.0 / ab_prev.sqrt(), &eps_hat, -(1.0 - ab_prev).sqrt() / ab_prev.sqrt())?;
        z = x0.scaled_add(ab_t.sqrt(), &eps_hat, (1.0 - ab_t).sqrt())?;
        t_prev = t;
    }
    Ok(z)
}

/// Spherical linear interpolation between a latent and fresh noise over
/// the flattened vectors; falls back to lerp for nearly parallel inputs.
pub fn slerp_noise(z_t: &SampleGrid, eps: &SampleGrid, alpha: f64) -> Result<SampleGrid> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("slerp alpha {alpha} outside [0, 1]")));
    }
    let nz = z_t.norm();
    let ne = eps.norm();
    if nz == 0.0 || ne == 0.0 {
        return Err(Error::DegenerateInput("slerp needs non-zero inputs".into()));
    }
    let cos_phi = (z_t.dot(eps)? / (nz * ne)).clamp(-1.0, 1.0);
    let phi = cos_phi.acos();
    if phi < 1e-6 {
        return z_t.scaled_add(1.0 - alpha, eps, alpha);
    }
    let sin_phi = phi.sin();
    let w_z = ((1.0 - alpha) * phi).sin() / sin_phi;
    let w_e = (alpha * phi).sin() / sin_phi;
    z_t.scaled_add(w_z, eps, w_e)
}
