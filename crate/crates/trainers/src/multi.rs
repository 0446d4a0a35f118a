//! Multi-subject training with Cut-Mix-Unmix augmentation.

use svdiff_denoiser::vocab::PromptTokens;
use svdiff_denoiser::ToyDenoiser;
use svdiff_diffusion::{Purpose, RngKey};
use svdiff_linalg::error::{Error, Result};
use svdiff_linalg::SvdCache;
use svdiff_spectral::DeltaCheckpoint;

use crate::config::{TrainConfig, TrainMode};
use crate::cutmix::{compose_cutmix, CutMixSample, SubjectSlot};
use crate::dataset::SubjectDataset;
use crate::finetune::{FinetuneArtifact, StepSample, Trainer};
use crate::metrics::{MetricsRow, StepType};

/// Output of a joint multi-subject run.
#[derive(Debug, Clone)]
pub struct MultiSubjectRun {
    pub checkpoint: DeltaCheckpoint,
    pub metrics: Vec<MetricsRow>,
    pub trained: ToyDenoiser,
}

/// Joint spectral-shift training over two or more subjects. Each step is
/// a Cut-Mix step with probability `cutmix_prob` (two subjects drawn
/// without replacement, a composed prior pair when lambda > 0, and the
/// unmix attention regularizer), otherwise a plain single-subject step
/// on the round-robin subject.
pub fn train_multi_subject(
    base: &ToyDenoiser,
    subjects: &[SubjectDataset],
    cfg: &TrainConfig,
    cache: Option<&SvdCache>,
) -> Result<MultiSubjectRun> {
    if cfg.mode != TrainMode::Svdiff {
        return Err(Error::Config(
            "multi-subject training produces a delta checkpoint; use mode svdiff".into(),
        ));
    }
    if subjects.is_empty() {
        return Err(Error::Config("no subjects given".into()));
    }
    if subjects.len() < 2 && cfg.cutmix_prob > 0.0 {
        return Err(Error::Config(
            "cut-mix needs at least 2 subjects (or cutmix_prob = 0)".into(),
        ));
    }
    if cfg.lambda > 0.0 {
        if let Some(bad) = subjects.iter().position(|s| s.priors.is_empty()) {
            return Err(Error::Config(format!(
                "lambda > 0 but subject {bad} has no prior images"
            )));
        }
    }

    let mut trainer = Trainer::new(base, cfg, cache)?;
    let rng = RngKey::new(cfg.seed);
    let mut metrics = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let s = step as u64;
        let cutmix = rng.stream(s, Purpose::Gate).next_f64() < cfg.cutmix_prob;
        let losses;
        let step_type;
        if cutmix {
            // two subjects without replacement
            let mut pick = rng.stream(s, Purpose::SubjectPick);
            let i = pick.next_below(subjects.len());
            let mut j = pick.next_below(subjects.len() - 1);
            if j >= i {
                j += 1;
            }
            let (si, sj) = (&subjects[i], &subjects[j]);

            let mut target_pick = rng.stream(s, Purpose::SamplePick);
            let img_i = &si.targets[target_pick.next_below(si.targets.len())];
            let img_j = &sj.targets[target_pick.next_below(sj.targets.len())];
            let slot_i = SubjectSlot {
                image: img_i,
                placeholder: Some(si.placeholder),
                class_word: si.class_word,
            };
            let slot_j = SubjectSlot {
                image: img_j,
                placeholder: Some(sj.placeholder),
                class_word: sj.class_word,
            };
            let mut split = rng.stream(s, Purpose::CutMixSplit);
            let mut order = rng.stream(s, Purpose::CutMixOrder);
            let sample = compose_cutmix(&slot_i, &slot_j, &mut split, &mut order)?;
            let (group_a, group_b) = sample.token_groups(si.placeholder, sj.placeholder);

            // prior pair composed in the same manner, without placeholders
            let prior_sample: Option<CutMixSample> = if cfg.lambda > 0.0 {
                let mut prior_pick = rng.stream(s, Purpose::PriorPick);
                let prior_i = &si.priors[prior_pick.next_below(si.priors.len())];
                let prior_j = &sj.priors[prior_pick.next_below(sj.priors.len())];
                let pslot_i = SubjectSlot {
                    image: prior_i,
                    placeholder: None,
                    class_word: si.class_word,
                };
                let pslot_j = SubjectSlot {
                    image: prior_j,
                    placeholder: None,
                    class_word: sj.class_word,
                };
                let mut psplit = rng.stream(s, Purpose::PriorCutMixSplit);
                let mut porder = rng.stream(s, Purpose::PriorCutMixOrder);
                Some(compose_cutmix(&pslot_i, &pslot_j, &mut psplit, &mut porder)?)
            } else {
                None
            };

            losses = trainer.step(
                s,
                StepSample {
                    image: &sample.image,
                    prompt: sample.prompt.ids(),
                    unmix: Some((&sample.layout, &group_a, &group_b, cfg.unmix_weight)),
                },
                prior_sample
                    .as_ref()
                    .map(|p| (&p.image, p.prompt.ids())),
                &rng,
            )?;
            step_type = StepType::CutMix;
        } else {
            // round-robin single-subject step
            let subject = &subjects[step % subjects.len()];
            let idx = rng.stream(s, Purpose::SamplePick).next_below(subject.targets.len());
            let prior = if cfg.lambda > 0.0 {
                let p = rng.stream(s, Purpose::PriorPick).next_below(subject.priors.len());
                Some((&subject.priors[p], subject.prior_prompt.ids()))
            } else {
                None
            };
            losses = trainer.step(
                s,
                StepSample {
                    image: &subject.targets[idx],
                    prompt: subject.target_prompt.ids(),
                    unmix: None,
                },
                prior,
                &rng,
            )?;
            step_type = StepType::Single;
        }
        metrics.push(MetricsRow {
            step,
            loss_target: losses.target,
            loss_prior: losses.prior,
            loss_unmix: losses.unmix,
            step_type,
        });
    }

    let run = trainer.finish(metrics);
    let checkpoint = match run.artifact {
        FinetuneArtifact::Spectral(d) => d,
        _ => unreachable!("mode is svdiff"),
    };
    Ok(MultiSubjectRun {
        checkpoint,
        metrics: run.metrics,
        trained: run.trained,
    })
}

/// Held-out composed samples for attention measurements: fixed splits,
/// fixed order (subject A left), no randomness.
pub fn evaluation_cutmix_samples(
    a: &SubjectDataset,
    b: &SubjectDataset,
    splits: &[usize],
) -> Result<Vec<(CutMixSample, Vec<usize>, Vec<usize>)>> {
    let mut out = Vec::new();
    for (k, &split) in splits.iter().enumerate() {
        let img_a = &a.targets[k % a.targets.len()];
        let img_b = &b.targets[k % b.targets.len()];
        let (_, height, width) = img_a.shape();
        if split == 0 || split >= width {
            return Err(Error::Domain(format!("split {split} outside (0, {width})")));
        }
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    let src = if x < split { img_a } else { img_b };
                    data.push(src.at(c, y, x));
                }
            }
        }
        let image = svdiff_diffusion::SampleGrid::new(3, height, width, data)?;
        let mut layout = vec![0u8; height * width];
        for y in 0..height {
            for x in split..width {
                layout[y * width + x] = 1;
            }
        }
        let prompt = PromptTokens::new(vec![
            svdiff_denoiser::vocab::PHOTO_OF_A,
            a.placeholder,
            a.class_word,
            svdiff_denoiser::vocab::ON_THE_LEFT,
            svdiff_denoiser::vocab::AND_A,
            b.placeholder,
            b.class_word,
            svdiff_denoiser::vocab::ON_THE_RIGHT,
        ])?;
        let sample = CutMixSample {
            image,
            prompt,
            layout,
        };
        let (ga, gb) = sample.token_groups(a.placeholder, b.placeholder);
        out.push((sample, ga, gb));
    }
    Ok(out)
}
