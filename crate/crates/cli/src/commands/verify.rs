//! `verify`: fast self-contained invariant battery, one line per check.

use svdiff_denoiser::ToyDenoiser;
use svdiff_diffusion::{
    ddim_step, forward_diffuse, guided_score, guided_score_negative, slerp_noise, GuidanceSpec,
    NoiseSchedule, Purpose, RngKey, SampleGrid,
};
use svdiff_linalg::error::{Error, Result};
use svdiff_linalg::{reshape_kernel, svd_decompose, unreshape_kernel, DenseTensor, WeightStore};
use svdiff_spectral::file::{delta_to_bytes, from_bytes};
use svdiff_spectral::{apply_checkpoint, build_cache, fingerprint, zero_checkpoint};

use crate::args::Parsed;

use super::load_model;

struct Battery {
    failed: usize,
}

impl Battery {
    fn check(&mut self, name: &str, result: Result<()>) {
        match result {
            Ok(()) => println!("ok   {name}"),
            Err(e) => {
                println!("FAIL {name}: {e}");
                self.failed += 1;
            }
        }
    }
}

fn ensure(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Numeric(msg.into()))
    }
}

pub fn verify_cmd(parsed: &Parsed) -> Result<()> {
    let model = match parsed.get("model") {
        Some(path) => load_model(path)?,
        None => ToyDenoiser::init(0),
    };
    let mut battery = Battery { failed: 0 };
    let rng = RngKey::new(12345);

    battery.check("reshape-round-trip", {
        let mut s = rng.stream(0, Purpose::Noise);
        let t = DenseTensor::new(vec![4, 2, 3, 3], (0..72).map(|_| s.next_normal()).collect())?;
        let m = reshape_kernel(&t)?;
        let back = unreshape_kernel(&m, [4, 2, 3, 3])?;
        ensure(back == t, "round trip not bit-exact")
    });

    battery.check("svd-fidelity-all-layers", (|| {
        for name in model.layer_names() {
            if !model.layer_kind(&name).unwrap().is_decomposed() {
                continue;
            }
            let w = reshape_kernel(model.layer(&name).unwrap())?;
            let f = svd_decompose(&w)?;
            let recon = f.reconstruct();
            let mut num = 0.0;
            for (a, b) in recon.data().iter().zip(w.data()) {
                num += (a - b) * (a - b);
            }
            let rel = num.sqrt() / w.frobenius_norm().max(f64::MIN_POSITIVE);
            ensure(rel <= 1e-9, &format!("{name}: reconstruction {rel}"))?;
            ensure(
                f.sigma().windows(2).all(|p| p[0] >= p[1]),
                &format!("{name}: sigma not descending"),
            )?;
            let utu = f.u().transpose().matmul(f.u())?;
            for r in 0..utu.rows() {
                for c in 0..utu.cols() {
                    let want = if r == c { 1.0 } else { 0.0 };
                    ensure(
                        (utu.get(r, c) - want).abs() <= 1e-9,
                        &format!("{name}: U not orthonormal"),
                    )?;
                }
            }
        }
        Ok(())
    })());

    battery.check("svd-determinism", (|| {
        let w = reshape_kernel(model.layer("conv_in.weight").unwrap())?;
        let a = svd_decompose(&w)?;
        let b = svd_decompose(&w)?;
        ensure(
            a.u().data() == b.u().data() && a.sigma() == b.sigma() && a.v().data() == b.v().data(),
            "factors differ between runs",
        )
    })());

    battery.check("schedule-invariants", (|| {
        let s = NoiseSchedule::default_toy();
        ensure(s.alpha_bar(0) == 1.0, "alpha_bar_0 != 1")?;
        ensure(s.alpha_bar(s.steps()) > 0.0, "alpha_bar_T <= 0")?;
        ensure(
            (1..=s.steps()).all(|t| s.alpha_bar(t) < s.alpha_bar(t - 1)),
            "alpha_bar not strictly decreasing",
        )
    })());

    battery.check("guidance-reductions", (|| {
        let mut s = rng.stream(1, Purpose::Noise);
        let cond = SampleGrid::normal(1, 4, 4, &mut s);
        let null = SampleGrid::normal(1, 4, 4, &mut s);
        let neg = SampleGrid::normal(1, 4, 4, &mut s);
        let one = guided_score(&cond, &null, &GuidanceSpec::conditional())?;
        ensure(one.data() == cond.data(), "s=1 must return the conditional score")?;
        let spec = GuidanceSpec {
            scale: 4.0,
            beta: 1.0,
            negatives: vec![vec![1]],
        };
        let plain = guided_score(&cond, &null, &spec)?;
        let withneg = guided_score_negative(&cond, &null, std::slice::from_ref(&neg), &spec)?;
        ensure(plain.data() == withneg.data(), "beta=1 must reduce to plain guidance")
    })());

    battery.check("slerp-endpoints", (|| {
        let mut s = rng.stream(2, Purpose::Noise);
        let a = SampleGrid::normal(1, 4, 4, &mut s);
        let b = SampleGrid::normal(1, 4, 4, &mut s);
        ensure(slerp_noise(&a, &b, 0.0)?.data() == a.data(), "alpha=0 must return z_T")?;
        ensure(slerp_noise(&a, &b, 1.0)?.data() == b.data(), "alpha=1 must return eps")
    })());

    battery.check("ddim-exact-eps-identity", (|| {
        let sched = NoiseSchedule::default_toy();
        let mut s = rng.stream(3, Purpose::Noise);
        let z0 = SampleGrid::normal(3, 16, 16, &mut s).map(|x| 0.4 * x);
        let eps = SampleGrid::normal(3, 16, 16, &mut s);
        let t = sched.steps();
        let z_t = forward_diffuse(&z0, t, &eps, &sched)?;
        let mut noise = rng.stream(4, Purpose::EtaNoise);
        let back = ddim_step(&z_t, &eps, t, 0, 0.0, &sched, &mut noise)?;
        let ok = back
            .data()
            .iter()
            .zip(z0.data())
            .all(|(a, b)| (a - b).abs() <= 1e-9);
        ensure(ok, "single exact step must recover z0")
    })());

    battery.check("zero-shift-apply-identity", (|| {
        let cache = build_cache(&model)?;
        let mut copy = model.clone();
        let zero = zero_checkpoint(&model);
        apply_checkpoint(&mut copy, &zero, &cache)?;
        for name in model.layer_names() {
            ensure(
                copy.layer(&name).unwrap().data() == model.layer(&name).unwrap().data(),
                &format!("{name} changed under a zero checkpoint"),
            )?;
        }
        Ok(())
    })());

    battery.check("svdd-round-trip-and-crc", (|| {
        let zero = zero_checkpoint(&model);
        let bytes = delta_to_bytes(&zero)?;
        let back = from_bytes(&bytes)?.into_delta_checkpoint()?;
        ensure(back.content_eq(&zero), "round trip lost content")?;
        let mut corrupt = bytes.clone();
        let mid = corrupt.len() / 2;
        corrupt[mid] ^= 1;
        ensure(
            matches!(from_bytes(&corrupt), Err(Error::CorruptFile(_))),
            "flipped byte must fail the crc",
        )
    })());

    battery.check("ckpt-round-trip", (|| {
        let bytes = svdiff_denoiser::model_to_bytes(&model)?;
        let back = svdiff_denoiser::model_from_bytes(&bytes)?;
        ensure(
            fingerprint(&back) == fingerprint(&model),
            "fingerprint changed through the checkpoint file",
        )
    })());

    battery.check("fingerprint-mismatch-rejected", (|| {
        let cache = build_cache(&model)?;
        let mut copy = model.clone();
        let mut zero = zero_checkpoint(&model);
        zero.fingerprint ^= 1;
        ensure(
            matches!(
                apply_checkpoint(&mut copy, &zero, &cache),
                Err(Error::BaseModelMismatch { .. })
            ),
            "wrong fingerprint must be rejected",
        )
    })());

    if battery.failed > 0 {
        return Err(Error::Numeric(format!("{} verification checks failed", battery.failed)));
    }
    println!("all checks passed");
    Ok(())
}
