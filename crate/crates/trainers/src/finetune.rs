//! Fine-tuning in three parameter spaces: spectral shifts, full weights
//! and the rank-1 adapter baseline. Plain SGD throughout; every step is
//! keyed by `(seed, step, purpose)` so runs are bitwise reproducible.

use std::collections::BTreeMap;

use svdiff_denoiser::vocab::PromptTokens;
use svdiff_denoiser::ToyDenoiser;
use svdiff_diffusion::{
    draw_t_eps, forward_diffuse, mse_and_grad, NoiseSchedule, Purpose, RngKey, SampleGrid, TokenId,
};
use svdiff_linalg::error::{Error, Result};
use svdiff_linalg::{
    reshape_kernel, unreshape_kernel, DenseTensor, Matrix, SvdCache, WeightStore,
};
use svdiff_spectral::{
    fingerprint, gradient_wrt_shift, lora_gradient, reassemble_weight, DeltaCheckpoint, LoraDelta,
    LoraLayer, SpectralShift,
};

use crate::config::{TrainConfig, TrainMode};
use crate::cutmix::unmix_loss;
use crate::dataset::SubjectDataset;
use crate::metrics::{MetricsRow, StepType};

/// What a fine-tune run produced.
#[derive(Debug, Clone)]
pub enum FinetuneArtifact {
    Spectral(DeltaCheckpoint),
    Lora(LoraDelta),
    Full(ToyDenoiser),
}

impl FinetuneArtifact {
    pub fn as_spectral(&self) -> Option<&DeltaCheckpoint> {
        match self {
            FinetuneArtifact::Spectral(d) => Some(d),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneRun {
    pub artifact: FinetuneArtifact,
    pub metrics: Vec<MetricsRow>,
    /// The trained working model (base plus artifact already applied).
    pub trained: ToyDenoiser,
}

/// Mode-specific trainable state on top of a working model.
pub(crate) struct Trainer<'a> {
    pub work: ToyDenoiser,
    base: &'a ToyDenoiser,
    base_fingerprint: u64,
    cache: Option<&'a SvdCache>,
    mode: ModeState,
    cfg: TrainConfig,
}

enum ModeState {
    Svdiff { shifts: BTreeMap<String, SpectralShift> },
    Lora { pairs: BTreeMap<String, LoraLayer> },
    Full,
}

/// Gradient target plus losses for one optimizer step.
pub(crate) struct StepSample<'s> {
    pub image: &'s SampleGrid,
    pub prompt: &'s [TokenId],
    /// Unmix regularization: (layout, group_a, group_b, weight).
    pub unmix: Option<(&'s [u8], &'s [usize], &'s [usize], f64)>,
}

pub(crate) struct StepLosses {
    pub target: f64,
    pub prior: f64,
    pub unmix: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(
        base: &'a ToyDenoiser,
        cfg: &TrainConfig,
        cache: Option<&'a SvdCache>,
    ) -> Result<Self> {
        cfg.validate()?;
        let mode = match cfg.mode {
            TrainMode::Svdiff => {
                let cache = cache.ok_or_else(|| {
                    Error::Config("spectral-shift training needs the base SVD cache".into())
                })?;
                let mut shifts = BTreeMap::new();
                for name in base.layer_names() {
                    if !base.layer_kind(&name).unwrap().is_decomposed() {
                        continue;
                    }
                    let f = cache.get(&name).ok_or_else(|| {
                        Error::Config(format!("svd cache has no entry for layer {name}"))
                    })?;
                    shifts.insert(name.clone(), SpectralShift::zeros(&name, f.rank_capacity()));
                }
                ModeState::Svdiff { shifts }
            }
            TrainMode::Lora => {
                let rng = RngKey::new(cfg.seed);
                let mut pairs = BTreeMap::new();
                for (idx, name) in base.layer_names().into_iter().enumerate() {
                    if !base.layer_kind(&name).unwrap().is_decomposed() {
                        continue;
                    }
                    let w = reshape_kernel(base.layer(&name).unwrap())?;
                    let mut stream = rng.stream(idx as u64, Purpose::LoraInit);
                    let std = (1.0 / w.cols() as f64).sqrt();
                    let a: Vec<f64> = (0..w.cols()).map(|_| std * stream.next_normal()).collect();
                    pairs.insert(
                        name,
                        LoraLayer {
                            b: vec![0.0; w.rows()],
                            a,
                        },
                    );
                }
                ModeState::Lora { pairs }
            }
            TrainMode::Full => ModeState::Full,
        };
        Ok(Self {
            work: base.clone(),
            base,
            base_fingerprint: fingerprint(base),
            cache,
            mode,
            cfg: cfg.clone(),
        })
    }

    /// Forward/backward on target (and optional prior), then one SGD
    /// update of the mode's parameters.
    pub fn step(
        &mut self,
        step: u64,
        target: StepSample,
        prior: Option<(&SampleGrid, &[TokenId])>,
        rng: &RngKey,
    ) -> Result<StepLosses> {
        if self.cfg.lambda > 0.0 && prior.is_none() {
            return Err(Error::Config(
                "prior sample missing although lambda > 0".into(),
            ));
        }

        // target pass
        let mut ts = rng.stream(step, Purpose::Timestep);
        let mut es = rng.stream(step, Purpose::Noise);
        let (t, eps) = draw_t_eps(target.image, sched_of(&self.cfg), &mut ts, &mut es);
        let z_t = forward_diffuse(target.image, t, &eps, sched_of(&self.cfg))?;
        let (eps_hat, attn, tape) = self.work.forward(&z_t, t, target.prompt)?;
        let (loss_target, grad_out) = mse_and_grad(&eps_hat, &eps)?;
        let (loss_unmix, attn_grad) = match target.unmix {
            Some((layout, ga, gb, weight)) if weight > 0.0 => {
                let (lu, grad) = unmix_loss(&attn, layout, (ga, gb))?;
                let scaled: Vec<f64> = grad.iter().map(|g| g * weight).collect();
                (lu, Some(scaled))
            }
            _ => (0.0, None),
        };
        let mut grads =
            self.work
                .backward_with_attention(&tape, &grad_out, attn_grad.as_deref())?;

        // prior pass, weighted by lambda
        let mut loss_prior = 0.0;
        if let Some((prior_img, prior_prompt)) = prior {
            if self.cfg.lambda > 0.0 {
                let mut ts = rng.stream(step, Purpose::PriorTimestep);
                let mut es = rng.stream(step, Purpose::PriorNoise);
                let (t, eps) = draw_t_eps(prior_img, sched_of(&self.cfg), &mut ts, &mut es);
                let z_t = forward_diffuse(prior_img, t, &eps, sched_of(&self.cfg))?;
                let (eps_hat, _, tape) = self.work.forward(&z_t, t, prior_prompt)?;
                let (lp, grad_out) = mse_and_grad(&eps_hat, &eps)?;
                loss_prior = lp;
                let prior_grads = self.work.backward(&tape, &grad_out)?;
                for (name, g) in prior_grads {
                    let dst = grads.get_mut(&name).expect("same layer set");
                    for (d, s) in dst.data_mut().iter_mut().zip(g.data()) {
                        *d += self.cfg.lambda * s;
                    }
                }
            }
        }

        self.apply_gradients(&grads)?;
        Ok(StepLosses {
            target: loss_target,
            prior: loss_prior,
            unmix: loss_unmix,
        })
    }

    fn apply_gradients(&mut self, grads: &BTreeMap<String, DenseTensor>) -> Result<()> {
        for name in self.work.layer_names() {
            let grad = &grads[&name];
            let kind = self.work.layer_kind(&name).unwrap();
            if !kind.is_decomposed() {
                let current = self.work.layer(&name).unwrap();
                let dims = current.dims().to_vec();
                let updated: Vec<f64> = current
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(w, g)| w - self.cfg.lr_1d * g)
                    .collect();
                self.work.set_layer(&name, DenseTensor::new(dims, updated)?)?;
                continue;
            }
            let dims = self.work.layer(&name).unwrap().dims().to_vec();
            let g_matrix = Matrix::new(grad.dims()[0], grad.dims()[1], grad.data().to_vec())?;
            let new_matrix: Matrix = match &mut self.mode {
                ModeState::Svdiff { shifts } => {
                    let factors = self.cache.unwrap().get(&name).expect("verified at init");
                    let shift = shifts.get_mut(&name).expect("init covers all layers");
                    let g_delta = gradient_wrt_shift(&g_matrix, factors, shift)?;
                    let update: Vec<f64> =
                        g_delta.iter().map(|g| -self.cfg.lr_spectral * g).collect();
                    shift.apply_update(&update)?;
                    reassemble_weight(factors, shift)?
                }
                ModeState::Lora { pairs } => {
                    let pair = pairs.get_mut(&name).expect("init covers all layers");
                    let (gb, ga) = lora_gradient(&g_matrix, pair)?;
                    for (b, g) in pair.b.iter_mut().zip(&gb) {
                        *b -= self.cfg.lr_lora_2d * g;
                    }
                    for (a, g) in pair.a.iter_mut().zip(&ga) {
                        *a -= self.cfg.lr_lora_2d * g;
                    }
                    let base_w = reshape_kernel(self.base.layer(&name).unwrap())?;
                    let mut w = base_w;
                    for (r, &bv) in pair.b.iter().enumerate() {
                        if bv == 0.0 {
                            continue;
                        }
                        let row = &mut w.data_mut()[r * pair.a.len()..(r + 1) * pair.a.len()];
                        for (dst, &av) in row.iter_mut().zip(&pair.a) {
                            *dst += bv * av;
                        }
                    }
                    w
                }
                ModeState::Full => {
                    let current = reshape_kernel(self.work.layer(&name).unwrap())?;
                    let updated: Vec<f64> = current
                        .data()
                        .iter()
                        .zip(g_matrix.data())
                        .map(|(w, g)| w - self.cfg.lr_full * g)
                        .collect();
                    Matrix::new(current.rows(), current.cols(), updated)?
                }
            };
            let tensor = match dims.len() {
                2 => DenseTensor::new(dims, new_matrix.data().to_vec())?,
                4 => unreshape_kernel(&new_matrix, [dims[0], dims[1], dims[2], dims[3]])?,
                _ => unreachable!("decomposed layers are 2-D or 4-D"),
            };
            self.work.set_layer(&name, tensor)?;
        }
        Ok(())
    }

    /// Packages the trained state.
    pub fn finish(self, metrics: Vec<MetricsRow>) -> FinetuneRun {
        let dense = self.dense_deltas();
        let artifact = match self.mode {
            ModeState::Svdiff { shifts } => {
                let mut d = DeltaCheckpoint::new(self.base_fingerprint);
                d.summary = self.cfg.summary();
                for (_, s) in shifts {
                    d.insert_shift(s);
                }
                for (name, delta) in dense {
                    d.insert_dense(&name, delta).expect("1-D by construction");
                }
                FinetuneArtifact::Spectral(d)
            }
            ModeState::Lora { pairs } => {
                let mut l = LoraDelta::new(self.base_fingerprint);
                for (name, pair) in pairs {
                    l.insert_pair(&name, pair);
                }
                for (name, delta) in dense {
                    l.insert_dense(&name, delta).expect("1-D by construction");
                }
                FinetuneArtifact::Lora(l)
            }
            ModeState::Full => FinetuneArtifact::Full(self.work.clone()),
        };
        FinetuneRun {
            artifact,
            metrics,
            trained: self.work,
        }
    }

    fn dense_deltas(&self) -> Vec<(String, DenseTensor)> {
        let mut out = Vec::new();
        for name in self.base.layer_names() {
            if self.base.layer_kind(&name).unwrap().is_decomposed() {
                continue;
            }
            let base = self.base.layer(&name).unwrap();
            let now = self.work.layer(&name).unwrap();
            let delta: Vec<f64> = now
                .data()
                .iter()
                .zip(base.data())
                .map(|(w, b)| w - b)
                .collect();
            out.push((name, DenseTensor::new(vec![base.numel()], delta).unwrap()));
        }
        out
    }
}

// The schedule is shared by every trainer; a fixed toy default keeps the
// config serializable as plain scalars.
fn sched_of(_cfg: &TrainConfig) -> &'static NoiseSchedule {
    use std::sync::OnceLock;
    static SCHED: OnceLock<NoiseSchedule> = OnceLock::new();
    SCHED.get_or_init(NoiseSchedule::default_toy)
}

/// Returns the schedule every trainer runs on.
pub fn train_schedule() -> &'static NoiseSchedule {
    sched_of(&TrainConfig::default())
}

/// DreamBooth-style personalization on one subject. The base model is
/// borrowed immutably: spectral and rank-1 runs never touch it, full
/// runs return a trained copy.
pub fn finetune(
    base: &ToyDenoiser,
    data: &SubjectDataset,
    cfg: &TrainConfig,
    cache: Option<&SvdCache>,
) -> Result<FinetuneRun> {
    if cfg.lambda > 0.0 && data.priors.is_empty() {
        return Err(Error::Config(
            "lambda > 0 requires prior images (generate them from the base model first)".into(),
        ));
    }
    let mut trainer = Trainer::new(base, cfg, cache)?;
    let rng = RngKey::new(cfg.seed);
    let mut metrics = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let target_idx = rng.stream(step as u64, Purpose::SamplePick).next_below(data.targets.len());
        let prior = if cfg.lambda > 0.0 {
            let idx = rng.stream(step as u64, Purpose::PriorPick).next_below(data.priors.len());
            Some((&data.priors[idx], data.prior_prompt.ids()))
        } else {
            None
        };
        let losses = trainer.step(
            step as u64,
            StepSample {
                image: &data.targets[target_idx],
                prompt: data.target_prompt.ids(),
                unmix: None,
            },
            prior,
            &rng,
        )?;
        metrics.push(MetricsRow {
            step,
            loss_target: losses.target,
            loss_prior: losses.prior,
            loss_unmix: losses.unmix,
            step_type: StepType::Single,
        });
    }
    Ok(trainer.finish(metrics))
}

/// Single image-prompt pair fine-tune with lambda forced to 0; the
/// editing pipeline builds on this.
pub fn finetune_single_image(
    base: &ToyDenoiser,
    image: &SampleGrid,
    caption: &PromptTokens,
    cfg: &TrainConfig,
    cache: Option<&SvdCache>,
) -> Result<FinetuneRun> {
    let mut cfg = cfg.clone();
    cfg.lambda = 0.0;
    let mut trainer = Trainer::new(base, &cfg, cache)?;
    let rng = RngKey::new(cfg.seed);
    let mut metrics = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let losses = trainer.step(
            step as u64,
            StepSample {
                image,
                prompt: caption.ids(),
                unmix: None,
            },
            None,
            &rng,
        )?;
        metrics.push(MetricsRow {
            step,
            loss_target: losses.target,
            loss_prior: 0.0,
            loss_unmix: 0.0,
            step_type: StepType::Single,
        });
    }
    Ok(trainer.finish(metrics))
}

/// Base-model pretraining on the procedural corpus: full-weight SGD on
/// the denoising objective, dropping the caption to the null prompt with
/// probability 0.1 so classifier-free guidance has a meaningful
/// unconditional score.
pub fn pretrain(
    corpus: &[(SampleGrid, PromptTokens)],
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(ToyDenoiser, Vec<MetricsRow>)> {
    if corpus.is_empty() {
        return Err(Error::Config("pretraining corpus is empty".into()));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    let sched = train_schedule();
    let mut model = ToyDenoiser::init(seed);
    let rng = RngKey::new(seed ^ 0x70726574); // distinct from init draws
    let null = PromptTokens::null();
    let mut metrics = Vec::new();
    for step in 0..steps {
        let idx = rng.stream(step as u64, Purpose::SamplePick).next_below(corpus.len());
        let (image, caption) = &corpus[idx];
        let drop_cond = rng.stream(step as u64, Purpose::Gate).next_f64() < 0.1;
        let prompt = if drop_cond { &null } else { caption };

        let mut ts = rng.stream(step as u64, Purpose::Timestep);
        let mut es = rng.stream(step as u64, Purpose::Noise);
        let (t, eps) = draw_t_eps(image, sched, &mut ts, &mut es);
        let z_t = forward_diffuse(image, t, &eps, sched)?;
        let (eps_hat, _, tape) = model.forward(&z_t, t, prompt.ids())?;
        let (loss, grad_out) = mse_and_grad(&eps_hat, &eps)?;
        let grads = model.backward(&tape, &grad_out)?;
        for name in model.layer_names() {
            let grad = &grads[&name];
            let current = model.layer(&name).unwrap();
            let dims = current.dims().to_vec();
            let updated: Vec<f64> = current
                .data()
                .iter()
                .zip(grad.data())
                .map(|(w, g)| w - lr * g)
                .collect();
            model.set_layer(&name, DenseTensor::new(dims, updated)?)?;
        }
        if step % 50 == 0 || step + 1 == steps {
            metrics.push(MetricsRow {
                step,
                loss_target: loss,
                loss_prior: 0.0,
                loss_unmix: 0.0,
                step_type: StepType::Single,
            });
        }
    }
    Ok((model, metrics))
}
