//! Dev-only calibration harness: explores pretraining rates, checks the
//! personalization, inversion and unmix behavior on the reference seed.
//! Run with: cargo run --release -p svdiff-trainers --example calibrate -- <stage>

use svdiff_denoiser::vocab::PromptTokens;
use svdiff_denoiser::{pretrain_corpus, render_shape, ShapeClass, ToyDenoiser};
use svdiff_diffusion::{
    ddim_invert, ddim_sample, GuidanceSpec, Purpose, RngKey, SampleGrid,
};
use svdiff_spectral::build_cache;
use svdiff_trainers::{
    eval_denoise_loss, evaluation_cutmix_samples, finetune, generate_priors, pretrain,
    train_multi_subject, train_schedule, wrong_region_attention, SubjectDataset, TrainConfig,
    TrainMode,
};

fn held_out_striped_circle(cx: usize, cy: usize) -> SampleGrid {
    // textured subject never seen in pretraining: striped fill
    let mut img = render_shape(ShapeClass::Circle, cx, cy, [0.9, 0.9, 0.9]);
    for y in 0..16 {
        for x in 0..16 {
            if img.at(0, y, x) > 0.0 && y % 2 == 0 {
                img.set(0, y, x, -0.7);
                img.set(1, y, x, 0.8);
                img.set(2, y, x, -0.7);
            }
        }
    }
    img
}

fn dotted_square(cx: usize, cy: usize) -> SampleGrid {
    let mut img = render_shape(ShapeClass::Square, cx, cy, [-0.2, -0.2, 0.95]);
    for y in 0..16 {
        for x in 0..16 {
            if img.at(2, y, x) > 0.5 && (x + y) % 2 == 0 {
                img.set(0, y, x, 0.95);
                img.set(1, y, x, 0.6);
                img.set(2, y, x, -0.4);
            }
        }
    }
    img
}

fn eval_batch(corpus: &[(SampleGrid, PromptTokens)], from: usize, n: usize) -> Vec<(SampleGrid, Vec<u16>)> {
    corpus[from..from + n]
        .iter()
        .map(|(img, p)| (img.clone(), p.ids().to_vec()))
        .collect()
}

fn stage_pretrain() {
    let corpus = pretrain_corpus(0);
    let eval = eval_batch(&corpus, 3000, 48);
    for &lr in &[0.005, 0.01, 0.02, 0.04] {
        for &steps in &[2000usize, 6000] {
            let t0 = std::time::Instant::now();
            let (model, _) = pretrain(&corpus, steps, lr, 0).unwrap();
            let loss = eval_denoise_loss(&model, &eval, train_schedule(), 777, 8).unwrap();
            println!(
                "pretrain lr={lr} steps={steps}: eval_loss={loss:.4} ({:.1}s)",
                t0.elapsed().as_secs_f64()
            );
        }
    }
}

fn base_model(steps: usize, lr: f64) -> ToyDenoiser {
    let corpus = pretrain_corpus(0);
    pretrain(&corpus, steps, lr, 0).unwrap().0
}

fn stage_personalize(steps: usize, lr: f64) {
    let sched = train_schedule();
    let base = base_model(steps, lr);
    let cache = build_cache(&base).unwrap();

    let targets: Vec<SampleGrid> = vec![
        held_out_striped_circle(6, 6),
        held_out_striped_circle(9, 7),
        held_out_striped_circle(7, 9),
        held_out_striped_circle(8, 8),
    ];
    let target_prompt = PromptTokens::parse("photo of a v1 circle").unwrap();
    let prior_prompt = PromptTokens::parse("photo of a circle").unwrap();
    let priors = generate_priors(&base, &prior_prompt, 8, 25, sched, 41).unwrap();

    let data = SubjectDataset::new(targets.clone(), target_prompt.clone(), priors.clone(), prior_prompt.clone()).unwrap();

    let target_eval: Vec<(SampleGrid, Vec<u16>)> = targets
        .iter()
        .map(|t| (t.clone(), target_prompt.ids().to_vec()))
        .collect();
    let prior_eval: Vec<(SampleGrid, Vec<u16>)> = priors
        .iter()
        .map(|p| (p.clone(), prior_prompt.ids().to_vec()))
        .collect();

    let before_t = eval_denoise_loss(&base, &target_eval, sched, 99, 16).unwrap();
    let before_p = eval_denoise_loss(&base, &prior_eval, sched, 98, 16).unwrap();
    println!("initial: target {before_t:.4} prior {before_p:.4}");
    for (mode, lr_2d, lr_1d) in [
        (TrainMode::Svdiff, 0.01, 1e-3),
        (TrainMode::Svdiff, 0.05, 1e-3),
        (TrainMode::Svdiff, 0.1, 1e-2),
        (TrainMode::Svdiff, 0.2, 1e-2),
        (TrainMode::Svdiff, 0.5, 1e-2),
        (TrainMode::Full, 5e-4, 1e-2),
        (TrainMode::Full, 2e-4, 1e-2),
        (TrainMode::Lora, 0.01, 1e-2),
        (TrainMode::Lora, 0.05, 1e-2),
    ] {
        let cfg = TrainConfig {
            mode,
            steps: 500,
            seed: 0,
            lr_spectral: if mode == TrainMode::Svdiff { lr_2d } else { 1e-3 },
            lr_full: if mode == TrainMode::Full { lr_2d } else { 5e-6 },
            lr_lora_2d: if mode == TrainMode::Lora { lr_2d } else { 1e-4 },
            lr_1d,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let run = finetune(&base, &data, &cfg, Some(&cache)).unwrap();
        let after_t = eval_denoise_loss(&run.trained, &target_eval, sched, 99, 16).unwrap();
        let after_p = eval_denoise_loss(&run.trained, &prior_eval, sched, 98, 16).unwrap();
        println!(
            "{:?} lr2d={lr_2d} lr1d={lr_1d}: target ratio {:.3}, prior inflation {:+.3} ({:.1}s)",
            mode,
            after_t / before_t,
            after_p / before_p - 1.0,
            t0.elapsed().as_secs_f64()
        );
    }
}

fn stage_inversion(steps: usize, lr: f64) {
    let sched = train_schedule();
    let base = base_model(steps, lr);
    let corpus = pretrain_corpus(0);
    let guidance = GuidanceSpec::conditional();
    for &inv_steps in &[10usize, 25, 50] {
        let mut mse_recon = 0.0;
        let mut mse_base = 0.0;
        for i in 0..10 {
            let (img, prompt) = &corpus[100 + 31 * i];
            let z_t = ddim_invert(&base, img, prompt.ids(), inv_steps, sched).unwrap();
            let recon = ddim_sample(&base, &z_t, prompt.ids(), &guidance, inv_steps, 0.0, sched, &RngKey::new(7)).unwrap();
            mse_recon += recon.mse(img).unwrap();
            let key = RngKey::new(1000 + i as u64);
            let mut init = key.stream(0, Purpose::InitNoise);
            let fresh = SampleGrid::normal(3, 16, 16, &mut init);
            let baseline = ddim_sample(&base, &fresh, prompt.ids(), &guidance, inv_steps, 0.0, sched, &key).unwrap();
            mse_base += baseline.mse(img).unwrap();
        }
        println!(
            "invert steps={inv_steps}: recon_mse={:.5} baseline_mse={:.5} ratio={:.3}",
            mse_recon / 10.0,
            mse_base / 10.0,
            mse_recon / mse_base
        );
    }
}

fn stage_cutmix(steps: usize, lr: f64) {
    let sched = train_schedule();
    let base = base_model(steps, lr);
    let cache = build_cache(&base).unwrap();

    let circle_targets: Vec<SampleGrid> =
        vec![held_out_striped_circle(6, 6), held_out_striped_circle(9, 7), held_out_striped_circle(8, 8)];
    let square_targets: Vec<SampleGrid> = vec![dotted_square(6, 6), dotted_square(9, 7), dotted_square(8, 8)];
    let circle_prompt = PromptTokens::parse("photo of a v1 circle").unwrap();
    let square_prompt = PromptTokens::parse("photo of a v2 square").unwrap();
    let circle_prior_prompt = PromptTokens::parse("photo of a circle").unwrap();
    let square_prior_prompt = PromptTokens::parse("photo of a square").unwrap();
    let circle_priors = generate_priors(&base, &circle_prior_prompt, 6, 25, sched, 51).unwrap();
    let square_priors = generate_priors(&base, &square_prior_prompt, 6, 25, sched, 52).unwrap();

    let subj_a = SubjectDataset::new(circle_targets, circle_prompt, circle_priors, circle_prior_prompt).unwrap();
    let subj_b = SubjectDataset::new(square_targets, square_prompt, square_priors, square_prior_prompt).unwrap();
    let held_out = evaluation_cutmix_samples(&subj_a, &subj_b, &[5, 8, 11]).unwrap();

    let measure = |model: &ToyDenoiser| -> f64 {
        held_out
            .iter()
            .map(|(s, ga, gb)| wrong_region_attention(model, s, (ga, gb), sched, 3).unwrap())
            .sum::<f64>()
            / held_out.len() as f64
    };

    println!("wrong-region attention at init: {:.5}", measure(&base));
    for &(unmix_w, train_steps) in &[(0.0, 600usize), (0.1, 600), (1.0, 600), (5.0, 600)] {
        let cfg = TrainConfig {
            mode: TrainMode::Svdiff,
            steps: train_steps,
            unmix_weight: unmix_w,
            seed: 0,
            lr_spectral: 0.2,
            lr_1d: 0.01,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let run = train_multi_subject(&base, &[subj_a.clone(), subj_b.clone()], &cfg, Some(&cache)).unwrap();
        println!(
            "unmix_weight={unmix_w} steps={train_steps}: wrong-region {:.5} ({:.1}s), cutmix_steps={}",
            measure(&run.trained),
            t0.elapsed().as_secs_f64(),
            run.metrics.iter().filter(|m| matches!(m.step_type, svdiff_trainers::StepType::CutMix)).count()
        );
    }
}

fn high_contrast_subject(cx: usize, cy: usize) -> SampleGrid {
    // strongly textured novel subject: fine checker inside a large square
    let mut img = SampleGrid::filled(3, 16, 16, -0.9);
    for y in 0..16isize {
        for x in 0..16isize {
            let dx = x - cx as isize;
            let dy = y - cy as isize;
            if dx.abs() <= 4 && dy.abs() <= 4 {
                let on = (x + y) % 2 == 0;
                img.set(0, y as usize, x as usize, if on { 1.0 } else { -1.0 });
                img.set(1, y as usize, x as usize, if on { -1.0 } else { 1.0 });
                img.set(2, y as usize, x as usize, if on { 1.0 } else { 0.6 });
            }
        }
    }
    img
}

fn stage_floor(steps: usize, lr: f64) {
    let sched = train_schedule();
    let base = base_model(steps, lr);
    let cache = build_cache(&base).unwrap();
    let target_prompt = PromptTokens::parse("photo of a v1 square").unwrap();
    let prior_prompt = PromptTokens::parse("photo of a square").unwrap();
    let priors = generate_priors(&base, &prior_prompt, 8, 25, sched, 41).unwrap();

    for (name, targets) in [
        ("striped-circle", vec![
            held_out_striped_circle(6, 6),
            held_out_striped_circle(9, 7),
            held_out_striped_circle(7, 9),
            held_out_striped_circle(8, 8),
        ]),
        ("checker-square", vec![
            high_contrast_subject(6, 6),
            high_contrast_subject(9, 7),
            high_contrast_subject(7, 9),
            high_contrast_subject(8, 8),
        ]),
    ] {
        let target_eval: Vec<(SampleGrid, Vec<u16>)> = targets
            .iter()
            .map(|t| (t.clone(), target_prompt.ids().to_vec()))
            .collect();
        let before = eval_denoise_loss(&base, &target_eval, sched, 99, 16).unwrap();
        let data = SubjectDataset::new(targets, target_prompt.clone(), priors.clone(), prior_prompt.clone()).unwrap();
        for (mode, lr2d, n, lambda) in [
            (TrainMode::Svdiff, 0.2, 500usize, 1.0),
            (TrainMode::Svdiff, 0.5, 500, 1.0),
            (TrainMode::Svdiff, 1.0, 500, 1.0),
            (TrainMode::Svdiff, 2.0, 500, 1.0),
        ] {
            let cfg = TrainConfig {
                mode,
                steps: n,
                seed: 0,
                lr_spectral: lr2d,
                lr_full: lr2d,
                lr_1d: 0.01,
                lambda,
                ..TrainConfig::default()
            };
            let run = finetune(&base, &data, &cfg, Some(&cache)).unwrap();
            let after = eval_denoise_loss(&run.trained, &target_eval, sched, 99, 16).unwrap();
            let prior_eval: Vec<(SampleGrid, Vec<u16>)> = priors
                .iter()
                .map(|p| (p.clone(), prior_prompt.ids().to_vec()))
                .collect();
            let prior_before = eval_denoise_loss(&base, &prior_eval, sched, 98, 16).unwrap();
            let prior_after = eval_denoise_loss(&run.trained, &prior_eval, sched, 98, 16).unwrap();
            println!(
                "{name} {:?} lr={lr2d} steps={n} lambda={lambda}: {before:.4} -> {after:.4} (ratio {:.3}) prior {:+.3}",
                mode,
                after / before,
                prior_after / prior_before - 1.0
            );
        }
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let stage = args.get(1).map(|s| s.as_str()).unwrap_or("pretrain");
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6000);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.02);
    match stage {
        "pretrain" => stage_pretrain(),
        "personalize" => stage_personalize(steps, lr),
        "inversion" => stage_inversion(steps, lr),
        "cutmix" => stage_cutmix(steps, lr),
        "floor" => stage_floor(steps, lr),
        other => eprintln!("unknown stage {other}"),
    }
}
