//! Subcommand implementations.

pub mod arith;
pub mod export;
pub mod sample;
pub mod train;
pub mod verify;

use std::path::{Path, PathBuf};

use svdiff_denoiser::vocab::PromptTokens;
use svdiff_denoiser::ToyDenoiser;
use svdiff_linalg::error::{Error, Result};
use svdiff_linalg::SvdCache;
use svdiff_spectral::file::SvddContents;

use crate::args::Parsed;

pub fn load_model(path: &str) -> Result<ToyDenoiser> {
    svdiff_denoiser::load_model(Path::new(path))
}

/// Loads `--cache` when given, otherwise decomposes the base model's
/// layers in memory (same deterministic result).
pub fn cache_for(parsed: &Parsed, base: &ToyDenoiser) -> Result<SvdCache> {
    match parsed.get("cache") {
        Some(path) => SvdCache::load(Path::new(path)),
        None => svdiff_spectral::build_cache(base),
    }
}

pub fn parse_prompt(parsed: &Parsed, flag: &str) -> Result<PromptTokens> {
    PromptTokens::parse(parsed.require(flag)?)
}

pub fn out_path(parsed: &Parsed) -> Result<PathBuf> {
    Ok(PathBuf::from(parsed.require("out")?))
}

pub fn load_svdd(path: &str) -> Result<SvddContents> {
    svdiff_spectral::file::from_bytes(&std::fs::read(Path::new(path))?)
}

/// Applies a `.svdd` artifact (spectral or rank-1) onto `model`.
pub fn apply_svdd(model: &mut ToyDenoiser, contents: SvddContents, cache: &SvdCache) -> Result<()> {
    if contents.lora.is_empty() {
        let delta = contents.into_delta_checkpoint()?;
        svdiff_spectral::apply_checkpoint(model, &delta, cache)
    } else {
        let lora = contents.into_lora_delta()?;
        svdiff_spectral::lora_apply(model, &lora)
    }
}

pub fn parse_f64_list(text: &str, flag: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("--{flag}: {s:?} is not a number")))
        })
        .collect()
}
