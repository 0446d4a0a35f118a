//! Analysis exports: correlation matrices, scaling/rank sweeps, metrics
//! summaries.

use std::path::{Path, PathBuf};

use svdiff_linalg::error::{Error, Result};
use svdiff_spectral::file::load_delta;
use svdiff_spectral::{limit_rank, scale_shifts};
use svdiff_trainers::{render, train_schedule, RenderOpts};

use crate::args::Parsed;
use crate::csvio::{fmt_f64, sweep_index_csv};
use crate::manifest::ManifestBuilder;
use crate::ppm::save_ppm;

use super::{cache_for, load_model, parse_prompt};

pub fn export_cmd(parsed: &Parsed) -> Result<()> {
    match parsed.require("kind")? {
        "corr-matrix" => super::arith::corr_cmd(parsed),
        "scale-sweep" => sweep(parsed, SweepKind::Scale),
        "rank-sweep" => sweep(parsed, SweepKind::Rank),
        "metrics" => metrics_summary(parsed),
        other => Err(Error::Config(format!("unknown export kind {other:?}"))),
    }
}

enum SweepKind {
    Scale,
    Rank,
}

fn sweep(parsed: &Parsed, kind: SweepKind) -> Result<()> {
    let base_path = parsed
        .positionals
        .first()
        .ok_or_else(|| Error::Config("sweep needs the base checkpoint".into()))?;
    let delta_path = parsed
        .positionals
        .get(1)
        .ok_or_else(|| Error::Config("sweep needs a delta checkpoint".into()))?;
    let dir = PathBuf::from(parsed.require("out-dir")?);
    std::fs::create_dir_all(&dir)?;
    let prompt = parse_prompt(parsed, "prompt")?;
    let seed = parsed.seed()?;

    let base = load_model(base_path)?;
    let cache = cache_for(parsed, &base)?;
    let delta = load_delta(Path::new(delta_path))?;
    let sched = train_schedule();
    let opts = RenderOpts {
        steps: parsed.usize_or("steps", 25)?,
        seed,
        ..RenderOpts::default()
    };

    let mut rows = Vec::new();
    match kind {
        SweepKind::Scale => {
            let values = super::parse_f64_list(parsed.get("values").unwrap_or("0,0.5,1,1.5,2"), "values")?;
            for &s in &values {
                let scaled = scale_shifts(&delta, s)?;
                let mut model = base.clone();
                svdiff_spectral::apply_checkpoint(&mut model, &scaled, &cache)?;
                let img = render(&model, &prompt, &opts, sched)?;
                let file = format!("scale_{}.ppm", fmt_f64(s).replace('.', "_"));
                save_ppm(&img, &dir.join(&file))?;
                rows.push((fmt_f64(s), file));
            }
        }
        SweepKind::Rank => {
            let spec = parsed.get("ks").unwrap_or("0,1,2,4,full");
            for part in spec.split(',') {
                let part = part.trim();
                let (k, label) = if part == "full" {
                    (usize::MAX, "full".to_string())
                } else {
                    let k: usize = part
                        .parse()
                        .map_err(|_| Error::Config(format!("--ks: {part:?} is not an integer")))?;
                    (k, part.to_string())
                };
                let cut = limit_rank(&delta, k);
                let mut model = base.clone();
                svdiff_spectral::apply_checkpoint(&mut model, &cut, &cache)?;
                let img = render(&model, &prompt, &opts, sched)?;
                let file = format!("rank_{label}.ppm");
                save_ppm(&img, &dir.join(&file))?;
                rows.push((label, file));
            }
        }
    }
    let header = match kind {
        SweepKind::Scale => ("scale", "image"),
        SweepKind::Rank => ("rank", "image"),
    };
    let index = dir.join("index.csv");
    std::fs::write(&index, sweep_index_csv(header, &rows))?;
    ManifestBuilder::new("export", parsed, seed)
        .output(0, &index)
        .write_for(&index)?;
    println!("exported {} renders -> {}", rows.len(), dir.display());
    Ok(())
}

/// Aggregates a training metrics CSV by step type.
fn metrics_summary(parsed: &Parsed) -> Result<()> {
    let input = parsed
        .positionals
        .first()
        .ok_or_else(|| Error::Config("metrics export needs a metrics csv".into()))?;
    let out = super::out_path(parsed)?;
    let text = std::fs::read_to_string(input)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != svdiff_trainers::METRICS_HEADER {
        return Err(Error::Format(format!("unexpected metrics header {header:?}")));
    }
    struct Acc {
        n: usize,
        target: f64,
        prior: f64,
        unmix: f64,
    }
    let mut single = Acc { n: 0, target: 0.0, prior: 0.0, unmix: 0.0 };
    let mut cutmix = Acc { n: 0, target: 0.0, prior: 0.0, unmix: 0.0 };
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::Format(format!("malformed metrics row {line:?}")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Format(format!("bad number {s:?} in metrics")))
        };
        let acc = if cols[4] == "cutmix" { &mut cutmix } else { &mut single };
        acc.n += 1;
        acc.target += parse(cols[1])?;
        acc.prior += parse(cols[2])?;
        acc.unmix += parse(cols[3])?;
    }
    let mut csv = String::from("step_type,steps,mean_loss_target,mean_loss_prior,mean_loss_unmix\n");
    for (name, acc) in [("single", &single), ("cutmix", &cutmix)] {
        if acc.n == 0 {
            continue;
        }
        csv.push_str(&format!(
            "{name},{},{},{},{}\n",
            acc.n,
            fmt_f64(acc.target / acc.n as f64),
            fmt_f64(acc.prior / acc.n as f64),
            fmt_f64(acc.unmix / acc.n as f64)
        ));
    }
    std::fs::write(&out, csv)?;
    ManifestBuilder::new("export", parsed, parsed.seed()?)
        .output(0, &out)
        .write_for(&out)?;
    println!("metrics summary -> {}", out.display());
    Ok(())
}
