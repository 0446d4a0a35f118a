//! Delta-checkpoint arithmetic: combine / interp / scale / rank / corr.

use std::path::Path;

use svdiff_linalg::error::{Error, Result};
use svdiff_spectral::file::{load_delta, save_delta};
use svdiff_spectral::{add_shifts, interp_shifts, limit_rank, scale_shifts, shift_correlation, DeltaCheckpoint};

use crate::args::Parsed;
use crate::csvio::corr_csv;
use crate::manifest::ManifestBuilder;

use super::out_path;

fn load_all(parsed: &Parsed, at_least: usize, what: &str) -> Result<Vec<DeltaCheckpoint>> {
    if parsed.positionals.len() < at_least {
        return Err(Error::Config(format!(
            "{what} needs at least {at_least} delta checkpoints, got {}",
            parsed.positionals.len()
        )));
    }
    parsed
        .positionals
        .iter()
        .map(|p| load_delta(Path::new(p)))
        .collect()
}

pub fn combine_cmd(parsed: &Parsed) -> Result<()> {
    let ckpts = load_all(parsed, 2, "combine")?;
    let out = out_path(parsed)?;
    let mut acc = ckpts[0].clone();
    for c in &ckpts[1..] {
        acc = add_shifts(&acc, c)?;
    }
    save_delta(&acc, &out)?;
    ManifestBuilder::new("combine", parsed, parsed.seed()?)
        .fingerprint(acc.fingerprint)
        .output(0, &out)
        .write_for(&out)?;
    println!("combined {} checkpoints -> {}", ckpts.len(), out.display());
    Ok(())
}

pub fn interp_cmd(parsed: &Parsed) -> Result<()> {
    let ckpts = load_all(parsed, 2, "interp")?;
    if ckpts.len() != 2 {
        return Err(Error::Config(format!(
            "interp takes exactly 2 checkpoints, got {}",
            ckpts.len()
        )));
    }
    let alpha = parsed.f64_or("alpha", 0.5)?;
    let out = out_path(parsed)?;
    let mixed = interp_shifts(&ckpts[0], &ckpts[1], alpha)?;
    save_delta(&mixed, &out)?;
    ManifestBuilder::new("interp", parsed, parsed.seed()?)
        .fingerprint(mixed.fingerprint)
        .output(0, &out)
        .write_for(&out)?;
    println!("interpolated alpha={alpha} -> {}", out.display());
    Ok(())
}

pub fn scale_cmd(parsed: &Parsed) -> Result<()> {
    let ckpts = load_all(parsed, 1, "scale")?;
    if ckpts.len() != 1 {
        return Err(Error::Config(format!("scale takes exactly 1 checkpoint, got {}", ckpts.len())));
    }
    let s = parsed.f64_or("s", 1.0)?;
    let out = out_path(parsed)?;
    let scaled = scale_shifts(&ckpts[0], s)?;
    save_delta(&scaled, &out)?;
    ManifestBuilder::new("scale", parsed, parsed.seed()?)
        .fingerprint(scaled.fingerprint)
        .output(0, &out)
        .write_for(&out)?;
    println!("scaled s={s} -> {}", out.display());
    Ok(())
}

pub fn rank_cmd(parsed: &Parsed) -> Result<()> {
    let ckpts = load_all(parsed, 1, "rank")?;
    if ckpts.len() != 1 {
        return Err(Error::Config(format!("rank takes exactly 1 checkpoint, got {}", ckpts.len())));
    }
    let k = parsed.usize_or("k", usize::MAX)?;
    let out = out_path(parsed)?;
    let cut = limit_rank(&ckpts[0], k);
    save_delta(&cut, &out)?;
    ManifestBuilder::new("rank", parsed, parsed.seed()?)
        .fingerprint(cut.fingerprint)
        .output(0, &out)
        .write_for(&out)?;
    println!("rank-limited k={k} -> {}", out.display());
    Ok(())
}

pub fn corr_cmd(parsed: &Parsed) -> Result<()> {
    let ckpts = load_all(parsed, 2, "corr")?;
    let out = out_path(parsed)?;
    let m = shift_correlation(&ckpts)?;
    let names: Vec<String> = parsed.positionals.clone();
    std::fs::write(&out, corr_csv(&names, &m))?;
    ManifestBuilder::new("corr", parsed, parsed.seed()?)
        .output(0, &out)
        .write_for(&out)?;
    println!("correlation matrix ({0}x{0}) -> {1}", ckpts.len(), out.display());
    Ok(())
}
