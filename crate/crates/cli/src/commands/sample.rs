//! sample / edit.

use svdiff_denoiser::vocab::PromptTokens;
use svdiff_denoiser::{IMG_CHANNELS, IMG_SIZE};
use svdiff_diffusion::{ddim_sample, GuidanceSpec, Purpose, RngKey, SampleGrid};
use svdiff_linalg::error::{Error, Result};
use svdiff_spectral::fingerprint;
use svdiff_trainers::{single_image_edit, train_schedule, EditOptions, TrainConfig, TrainMode};

use crate::args::Parsed;
use crate::manifest::ManifestBuilder;
use crate::ppm::{load_ppm, save_ppm};

use super::{apply_svdd, cache_for, load_model, load_svdd, out_path, parse_prompt};

pub fn sample_cmd(parsed: &Parsed) -> Result<()> {
    let model_path = parsed
        .positionals
        .first()
        .ok_or_else(|| Error::Config("sample needs a model checkpoint".into()))?;
    let out = out_path(parsed)?;
    let seed = parsed.seed()?;
    let prompt = parse_prompt(parsed, "prompt")?;
    let negatives: Vec<Vec<u16>> = parsed
        .get_all("negative")
        .iter()
        .map(|s| PromptTokens::parse(s).map(|p| p.ids().to_vec()))
        .collect::<Result<_>>()?;
    let guidance = GuidanceSpec {
        scale: parsed.f64_or("cfg", 1.0)?,
        beta: parsed.f64_or("beta", 1.0)?,
        negatives,
    };
    guidance.validate()?;
    let eta = parsed.f64_or("eta", 0.0)?;
    let steps = parsed.usize_or("steps", 50)?;

    let mut model = load_model(model_path)?;
    if let Some(delta_path) = parsed.get("delta") {
        let cache = cache_for(parsed, &model)?;
        apply_svdd(&mut model, load_svdd(delta_path)?, &cache)?;
    }

    let sched = train_schedule();
    let rng = RngKey::new(seed);
    let mut init = rng.stream(0, Purpose::InitNoise);
    let z_t = SampleGrid::normal(IMG_CHANNELS, IMG_SIZE, IMG_SIZE, &mut init);
    let image = ddim_sample(&model, &z_t, prompt.ids(), &guidance, steps, eta, sched, &rng)?;
    save_ppm(&image, &out)?;
    ManifestBuilder::new("sample", parsed, seed)
        .fingerprint(fingerprint(&model))
        .output(0, &out)
        .write_for(&out)?;
    println!("sampled {:?} -> {}", prompt.render(), out.display());
    Ok(())
}

pub fn edit_cmd(parsed: &Parsed) -> Result<()> {
    let base_path = parsed
        .positionals
        .first()
        .ok_or_else(|| Error::Config("edit needs the base checkpoint".into()))?;
    let image_path = parsed
        .positionals
        .get(1)
        .ok_or_else(|| Error::Config("edit needs the input image".into()))?;
    let out = out_path(parsed)?;
    let seed = parsed.seed()?;

    let base = load_model(base_path)?;
    let image = load_ppm(std::path::Path::new(image_path))?;
    let caption = parse_prompt(parsed, "caption")?;
    let target = parse_prompt(parsed, "prompt")?;

    // single-image editing trains without prior preservation; learning
    // rates default to the toy-calibrated fast-adaptation values
    let cfg = TrainConfig {
        mode: TrainMode::Svdiff,
        steps: parsed.usize_or("steps", 300)?,
        lr_spectral: parsed.f64_or("lr-spectral", 0.2)?,
        lr_1d: parsed.f64_or("lr-1d", 0.01)?,
        lambda: 0.0,
        seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let opts = EditOptions {
        invert: parsed.has("invert"),
        eta: parsed.f64_or("eta", 0.5)?,
        slerp_alpha: parsed.f64_or("slerp-alpha", 0.0)?,
        cfg_scale: parsed.f64_or("cfg", 1.0)?,
        sample_steps: parsed.usize_or("sample-steps", 50)?,
        seed,
    };

    let cache = cache_for(parsed, &base)?;
    let run = single_image_edit(&base, &image, &caption, &target, &cfg, &opts, Some(&cache))?;
    save_ppm(&run.image, &out)?;
    if let Some(delta_path) = parsed.get("save-delta") {
        svdiff_spectral::file::save_delta(&run.checkpoint, std::path::Path::new(delta_path))?;
    }
    ManifestBuilder::new("edit", parsed, seed)
        .fingerprint(fingerprint(&base))
        .note("config", &cfg.summary())
        .output(0, &out)
        .write_for(&out)?;
    println!("edited {:?} -> {}", target.render(), out.display());
    Ok(())
}
