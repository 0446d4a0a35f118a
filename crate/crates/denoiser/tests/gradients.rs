//! Finite-difference verification of the manual backward pass.
//!
//! For a fixed quadratic loss L = sum(R .* forward(z, t, prompt)) with a
//! fixed random field R, every layer's analytic gradient must match
//! central differences on randomly probed scalars.

use svdiff_diffusion::{Purpose, RngKey, SampleGrid};
use svdiff_denoiser::model::{ToyDenoiser, IMG_CHANNELS, IMG_SIZE};
use svdiff_denoiser::vocab::{CIRCLE, PHOTO_OF_A, V1};
use svdiff_linalg::{DenseTensor, WeightStore};

const PROBES_PER_LAYER: usize = 5;
const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-5;

fn loss_of(model: &ToyDenoiser, z: &SampleGrid, t: usize, prompt: &[u16], r: &SampleGrid) -> f64 {
    let (out, _, _) = model.forward(z, t, prompt).unwrap();
    out.dot(r).unwrap()
}

#[test]
fn every_layer_matches_central_differences() {
    let key = RngKey::new(2024);
    let mut zs = key.stream(0, Purpose::Noise);
    let z = SampleGrid::normal(IMG_CHANNELS, IMG_SIZE, IMG_SIZE, &mut zs);
    let mut rs = key.stream(1, Purpose::Noise);
    let r = SampleGrid::normal(IMG_CHANNELS, IMG_SIZE, IMG_SIZE, &mut rs);
    let prompt = [PHOTO_OF_A, V1, CIRCLE];
    let t = 42;

    let model = ToyDenoiser::init(7);
    let (_, _, tape) = model.forward(&z, t, &prompt).unwrap();
    let grads = model.backward(&tape, &r).unwrap();

    let mut probe_stream = key.stream(2, Purpose::Noise);
    for name in model.layer_names() {
        let tensor = model.layer(&name).unwrap().clone();
        let grad = &grads[&name];
        assert_eq!(grad.numel(), tensor.numel(), "{name}: gradient size");

        for _ in 0..PROBES_PER_LAYER {
            let idx = probe_stream.next_below(tensor.numel());
            // token_embed rows for tokens outside the prompt never get
            // gradient; probing them would only test 0 == 0, so steer
            // probes into the attended rows
            let idx = if name == "token_embed.weight" {
                let row = [PHOTO_OF_A, V1, CIRCLE][idx % 3] as usize;
                row * 32 + idx % 32
            } else {
                idx
            };

            let fd = {
                let mut plus = model.clone();
                let mut data = tensor.data().to_vec();
                data[idx] += FD_STEP;
                plus.set_layer(&name, DenseTensor::new(tensor.dims().to_vec(), data).unwrap())
                    .unwrap();
                let mut minus = model.clone();
                let mut data = tensor.data().to_vec();
                data[idx] -= FD_STEP;
                minus
                    .set_layer(&name, DenseTensor::new(tensor.dims().to_vec(), data).unwrap())
                    .unwrap();
                (loss_of(&plus, &z, t, &prompt, &r) - loss_of(&minus, &z, t, &prompt, &r))
                    / (2.0 * FD_STEP)
            };
            let analytic = grad.data()[idx];
            let denom = fd.abs().max(analytic.abs()).max(1e-6);
            assert!(
                (fd - analytic).abs() / denom <= REL_TOL,
                "{name}[{idx}]: fd {fd} vs analytic {analytic}"
            );
        }
    }
}

#[test]
fn attention_gradient_injection_matches_finite_differences() {
    // loss = sum(S .* attn) for a fixed random field S over the maps
    let key = RngKey::new(55);
    let mut zs = key.stream(0, Purpose::Noise);
    let z = SampleGrid::normal(IMG_CHANNELS, IMG_SIZE, IMG_SIZE, &mut zs);
    let prompt = [PHOTO_OF_A, V1, CIRCLE];
    let t = 13;
    let model = ToyDenoiser::init(9);
    let (_, attn0, tape) = model.forward(&z, t, &prompt).unwrap();

    let n = attn0.weights().len();
    let mut ss = key.stream(1, Purpose::Noise);
    let s_field: Vec<f64> = (0..n).map(|_| ss.next_normal()).collect();

    let attn_loss = |m: &ToyDenoiser| -> f64 {
        let (_, attn, _) = m.forward(&z, t, &prompt).unwrap();
        attn.weights().iter().zip(&s_field).map(|(a, s)| a * s).sum()
    };

    let zero_out = SampleGrid::zeros(IMG_CHANNELS, IMG_SIZE, IMG_SIZE);
    let grads = model
        .backward_with_attention(&tape, &zero_out, Some(&s_field))
        .unwrap();

    // only layers feeding the maps (query/key path and upstream) probed
    let mut probe_stream = key.stream(2, Purpose::Noise);
    for name in [
        "attn.query.weight",
        "attn.key.weight",
        "token_embed.weight",
        "conv_mid.weight",
        "conv_in.weight",
    ] {
        let tensor = model.layer(name).unwrap().clone();
        let grad = &grads[name];
        for _ in 0..PROBES_PER_LAYER {
            let idx = probe_stream.next_below(tensor.numel());
            let idx = if name == "token_embed.weight" {
                let row = [PHOTO_OF_A, V1, CIRCLE][idx % 3] as usize;
                row * 32 + idx % 32
            } else {
                idx
            };
            let fd = {
                let mut plus = model.clone();
                let mut data = tensor.data().to_vec();
                data[idx] += FD_STEP;
                plus.set_layer(name, DenseTensor::new(tensor.dims().to_vec(), data).unwrap())
                    .unwrap();
                let mut minus = model.clone();
                let mut data = tensor.data().to_vec();
                data[idx] -= FD_STEP;
                minus
                    .set_layer(name, DenseTensor::new(tensor.dims().to_vec(), data).unwrap())
                    .unwrap();
                (attn_loss(&plus) - attn_loss(&minus)) / (2.0 * FD_STEP)
            };
            let analytic = grad.data()[idx];
            let denom = fd.abs().max(analytic.abs()).max(1e-6);
            assert!(
                (fd - analytic).abs() / denom <= 1e-4,
                "{name}[{idx}]: fd {fd} vs analytic {analytic}"
            );
        }
    }
}
