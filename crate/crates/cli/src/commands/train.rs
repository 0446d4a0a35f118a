//! pretrain / finetune / cutmix-train.

use std::path::Path;

use svdiff_denoiser::vocab::{token_text, PromptTokens, CLASS_TOKENS, PLACEHOLDER_TOKENS};
use svdiff_denoiser::{pretrain_corpus, save_model};
use svdiff_diffusion::SampleGrid;
use svdiff_linalg::error::{Error, Result};
use svdiff_spectral::file::{save_delta, save_lora};
use svdiff_spectral::fingerprint;
use svdiff_trainers::{
    finetune, generate_priors, metrics_to_csv, pretrain, train_multi_subject, FinetuneArtifact,
    MetricsRow, SubjectDataset, TrainConfig, TrainMode,
};

use crate::args::Parsed;
use crate::manifest::ManifestBuilder;
use crate::ppm::load_ppm;

use super::{cache_for, load_model, out_path, parse_prompt};

fn write_metrics(parsed: &Parsed, rows: &[MetricsRow]) -> Result<()> {
    if let Some(path) = parsed.get("metrics") {
        std::fs::write(path, metrics_to_csv(rows))?;
    }
    Ok(())
}

pub fn pretrain_cmd(parsed: &Parsed) -> Result<()> {
    let seed = parsed.seed()?;
    let steps = parsed.usize_or("steps", 6000)?;
    let lr = parsed.f64_or("lr", 0.04)?;
    let corpus_seed = parsed.usize_or("corpus-seed", seed as usize)? as u64;
    let out = out_path(parsed)?;

    let corpus = pretrain_corpus(corpus_seed);
    let (model, metrics) = pretrain(&corpus, steps, lr, seed)?;
    save_model(&model, &out)?;
    write_metrics(parsed, &metrics)?;
    ManifestBuilder::new("pretrain", parsed, seed)
        .fingerprint(fingerprint(&model))
        .output(0, &out)
        .write_for(&out)?;
    println!("pretrained {steps} steps -> {}", out.display());
    Ok(())
}

pub fn svd_cache_cmd(parsed: &Parsed) -> Result<()> {
    let model_path = parsed
        .positionals
        .first()
        .ok_or_else(|| Error::Config("svd-cache needs a model checkpoint".into()))?;
    let out = out_path(parsed)?;
    let model = load_model(model_path)?;
    let cache = svdiff_spectral::build_cache(&model)?;
    cache.save(&out)?;
    ManifestBuilder::new("svd-cache", parsed, parsed.seed()?)
        .fingerprint(fingerprint(&model))
        .output(0, &out)
        .write_for(&out)?;
    println!("cached {} layer decompositions -> {}", cache.len(), out.display());
    Ok(())
}

fn train_config(parsed: &Parsed, mode: TrainMode, default_steps: usize) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        mode,
        steps: parsed.usize_or("steps", default_steps)?,
        lr_spectral: parsed.f64_or("lr-spectral", d.lr_spectral)?,
        lr_1d: parsed.f64_or("lr-1d", d.lr_1d)?,
        lr_full: parsed.f64_or("lr-full", d.lr_full)?,
        lr_lora_2d: parsed.f64_or("lr-lora", d.lr_lora_2d)?,
        lambda: parsed.f64_or("lambda", d.lambda)?,
        cutmix_prob: parsed.f64_or("prob", d.cutmix_prob)?,
        unmix_weight: parsed.f64_or("unmix-weight", d.unmix_weight)?,
        seed: parsed.seed()?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_targets(parsed: &Parsed) -> Result<Vec<SampleGrid>> {
    let paths = parsed.get_all("target");
    if paths.is_empty() {
        return Err(Error::Config("at least one --target image is required".into()));
    }
    paths.iter().map(|p| load_ppm(Path::new(p))).collect()
}

pub fn finetune_cmd(parsed: &Parsed) -> Result<()> {
    let base_path = parsed
        .positionals
        .first()
        .ok_or_else(|| Error::Config("finetune needs the base checkpoint".into()))?;
    let mode = TrainMode::parse(parsed.get("mode").unwrap_or("svdiff"))?;
    let cfg = train_config(parsed, mode, 500)?;
    let out = out_path(parsed)?;

    let base = load_model(base_path)?;
    let targets = load_targets(parsed)?;
    let target_prompt = parse_prompt(parsed, "prompt")?;
    let prior_prompt = match parsed.get("prior-prompt") {
        Some(text) => PromptTokens::parse(text)?,
        None => strip_placeholders(&target_prompt)?,
    };

    let priors: Vec<SampleGrid> = if cfg.lambda > 0.0 {
        let explicit = parsed.get_all("prior");
        if explicit.is_empty() {
            let count = parsed.usize_or("gen-priors", 8)?;
            let sched = svdiff_trainers::train_schedule();
            generate_priors(&base, &prior_prompt, count, 25, sched, cfg.seed ^ 0x7072)?
        } else {
            explicit
                .iter()
                .map(|p| load_ppm(Path::new(p)))
                .collect::<Result<_>>()?
        }
    } else {
        Vec::new()
    };

    let data = SubjectDataset::new(targets, target_prompt, priors, prior_prompt)?;
    let cache = cache_for(parsed, &base)?;
    let run = finetune(&base, &data, &cfg, Some(&cache))?;
    match &run.artifact {
        FinetuneArtifact::Spectral(d) => save_delta(d, &out)?,
        FinetuneArtifact::Lora(l) => save_lora(l, &out)?,
        FinetuneArtifact::Full(m) => save_model(m, &out)?,
    }
    write_metrics(parsed, &run.metrics)?;
    ManifestBuilder::new("finetune", parsed, cfg.seed)
        .fingerprint(fingerprint(&base))
        .note("config", &cfg.summary())
        .output(0, &out)
        .write_for(&out)?;
    println!(
        "finetuned ({}) {} steps -> {}",
        cfg.mode.as_str(),
        cfg.steps,
        out.display()
    );
    Ok(())
}

/// Drops placeholder tokens, turning a target prompt into its prior
/// prompt ("photo of a v1 circle" -> "photo of a circle").
fn strip_placeholders(prompt: &PromptTokens) -> Result<PromptTokens> {
    let ids: Vec<u16> = prompt
        .ids()
        .iter()
        .copied()
        .filter(|id| !PLACEHOLDER_TOKENS.contains(id))
        .collect();
    PromptTokens::new(ids)
}

/// `--subject "v1:circle:a.ppm,b.ppm,c.ppm"`.
fn parse_subject(spec: &str, base: &svdiff_denoiser::ToyDenoiser, parsed: &Parsed, seed: u64, lambda: f64) -> Result<SubjectDataset> {
    let parts: Vec<&str> = spec.splitn(3, ':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "--subject expects placeholder:class:files, got {spec:?}"
        )));
    }
    let placeholder = PLACEHOLDER_TOKENS
        .iter()
        .copied()
        .find(|&t| token_text(t).eq_ignore_ascii_case(parts[0]))
        .ok_or_else(|| Error::Config(format!("unknown placeholder {:?}", parts[0])))?;
    let class_word = CLASS_TOKENS
        .iter()
        .copied()
        .find(|&t| token_text(t).eq_ignore_ascii_case(parts[1]))
        .ok_or_else(|| Error::Config(format!("unknown class word {:?}", parts[1])))?;
    let targets: Vec<SampleGrid> = parts[2]
        .split(',')
        .map(|p| load_ppm(Path::new(p.trim())))
        .collect::<Result<_>>()?;

    let target_prompt = PromptTokens::new(vec![
        svdiff_denoiser::vocab::PHOTO_OF_A,
        placeholder,
        class_word,
    ])?;
    let prior_prompt = PromptTokens::new(vec![svdiff_denoiser::vocab::PHOTO_OF_A, class_word])?;
    let priors = if lambda > 0.0 {
        let count = parsed.usize_or("gen-priors", 6)?;
        let sched = svdiff_trainers::train_schedule();
        generate_priors(
            base,
            &prior_prompt,
            count,
            25,
            sched,
            seed ^ placeholder as u64,
        )?
    } else {
        Vec::new()
    };
    SubjectDataset::new(targets, target_prompt, priors, prior_prompt)
}

pub fn cutmix_train_cmd(parsed: &Parsed) -> Result<()> {
    let base_path = parsed
        .positionals
        .first()
        .ok_or_else(|| Error::Config("cutmix-train needs the base checkpoint".into()))?;
    let cfg = train_config(parsed, TrainMode::Svdiff, 600)?;
    let out = out_path(parsed)?;

    let base = load_model(base_path)?;
    let specs = parsed.get_all("subject");
    if specs.len() < 2 {
        return Err(Error::Config("cutmix-train needs at least two --subject entries".into()));
    }
    let subjects: Vec<SubjectDataset> = specs
        .iter()
        .map(|s| parse_subject(s, &base, parsed, cfg.seed, cfg.lambda))
        .collect::<Result<_>>()?;

    let cache = cache_for(parsed, &base)?;
    let run = train_multi_subject(&base, &subjects, &cfg, Some(&cache))?;
    save_delta(&run.checkpoint, &out)?;
    write_metrics(parsed, &run.metrics)?;
    ManifestBuilder::new("cutmix-train", parsed, cfg.seed)
        .fingerprint(fingerprint(&base))
        .note("config", &cfg.summary())
        .output(0, &out)
        .write_for(&out)?;
    let cutmix_steps = run
        .metrics
        .iter()
        .filter(|m| matches!(m.step_type, svdiff_trainers::StepType::CutMix))
        .count();
    println!(
        "trained {} subjects, {} steps ({cutmix_steps} cutmix) -> {}",
        subjects.len(),
        cfg.steps,
        out.display()
    );
    Ok(())
}
