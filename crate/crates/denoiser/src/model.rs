//! The toy conditional denoiser.
//!
//! conv(3->32, 3x3) -> per-channel gain/bias plus a sinusoidal time
//! embedding projected through a linear layer -> silu -> conv(32->32)
//! -> silu -> one cross-attention head at full 16x16 resolution over the
//! prompt-token embeddings (residual) -> conv(32->3).
//!
//! The forward pass records a tape of every intermediate value; backward
//! replays it for exact gradients of all named layers. Gradients of 2-D
//! and 4-D kernels come back in their reshaped matrix form.

use std::collections::BTreeMap;

use svdiff_diffusion::{NoisePredictor, Purpose, RngKey, SampleGrid, TokenId};
use svdiff_linalg::error::{Error, Result};
use svdiff_linalg::{DenseTensor, LayerKind, WeightStore};

use crate::vocab::{NULL, PAD, VOCAB_CAPACITY};

pub const IMG_CHANNELS: usize = 3;
pub const IMG_SIZE: usize = 16;
pub const CH: usize = 32;
const KS: usize = 3;
const N_PIX: usize = IMG_SIZE * IMG_SIZE;

#[derive(Debug, Clone)]
pub struct Layer {
    pub kind: LayerKind,
    pub tensor: DenseTensor,
}

/// Architecture schema: (name, kind, dims).
fn schema() -> Vec<(&'static str, LayerKind, Vec<usize>)> {
    vec![
        ("conv_in.weight", LayerKind::Conv4d, vec![CH, IMG_CHANNELS, KS, KS]),
        ("conv_in.bias", LayerKind::Bias1d, vec![CH]),
        ("norm1.gain", LayerKind::Gain1d, vec![CH]),
        ("norm1.bias", LayerKind::Bias1d, vec![CH]),
        ("time_proj.weight", LayerKind::Linear2d, vec![CH, CH]),
        ("time_proj.bias", LayerKind::Bias1d, vec![CH]),
        ("conv_mid.weight", LayerKind::Conv4d, vec![CH, CH, KS, KS]),
        ("conv_mid.bias", LayerKind::Bias1d, vec![CH]),
        ("token_embed.weight", LayerKind::Embed2d, vec![VOCAB_CAPACITY, CH]),
        ("attn.query.weight", LayerKind::Linear2d, vec![CH, CH]),
        ("attn.key.weight", LayerKind::Linear2d, vec![CH, CH]),
        ("attn.value.weight", LayerKind::Linear2d, vec![CH, CH]),
        ("attn.out.weight", LayerKind::Linear2d, vec![CH, CH]),
        ("conv_out.weight", LayerKind::Conv4d, vec![IMG_CHANNELS, CH, KS, KS]),
        ("conv_out.bias", LayerKind::Bias1d, vec![IMG_CHANNELS]),
    ]
}

#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    layers: BTreeMap<String, Layer>,
    version: u64,
}

/// Cross-attention weights of the single head, token-major
/// (`tokens x height x width`), rows normalized per pixel.
#[derive(Debug, Clone)]
pub struct AttentionMaps {
    /// Attended token ids (padding removed; `<null>` substituted when
    /// the prompt was empty).
    pub token_ids: Vec<TokenId>,
    /// Position of each attended token in the original prompt.
    pub positions: Vec<usize>,
    pub height: usize,
    pub width: usize,
    weights: Vec<f64>,
}

impl AttentionMaps {
    /// Builds maps from raw parts; mainly for synthetic fixtures.
    pub fn from_parts(
        token_ids: Vec<TokenId>,
        positions: Vec<usize>,
        height: usize,
        width: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if positions.len() != token_ids.len() || weights.len() != token_ids.len() * height * width {
            return Err(Error::Shape("attention map parts disagree in size".into()));
        }
        Ok(Self {
            token_ids,
            positions,
            height,
            width,
            weights,
        })
    }

    pub fn tokens(&self) -> usize {
        self.token_ids.len()
    }

    /// Weight of token row `j` at pixel (y, x).
    pub fn at(&self, j: usize, y: usize, x: usize) -> f64 {
        self.weights[(j * self.height + y) * self.width + x]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Row for the token at prompt position `pos`, if it was attended.
    pub fn row_for_position(&self, pos: usize) -> Option<usize> {
        self.positions.iter().position(|&p| p == pos)
    }
}

/// Activation record of one forward pass.
pub struct Tape {
    version: u64,
    t: usize,
    z: SampleGrid,
    temb: Vec<f64>,
    attended: Vec<(usize, TokenId)>,
    h0: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    q: Vec<f64>,    // pixel-major, N_PIX x CH
    k: Vec<f64>,    // J x CH
    v: Vec<f64>,    // J x CH
    attn: Vec<f64>, // pixel-major, N_PIX x J
    ctx: Vec<f64>,  // pixel-major, N_PIX x CH
    h3: Vec<f64>,
}

impl Tape {
    pub fn timestep(&self) -> usize {
        self.t
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn dsilu(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal features of the timestep, CH-dimensional.
fn time_embedding(t: usize) -> Vec<f64> {
    let half = CH / 2;
    let mut out = vec![0.0; CH];
    for i in 0..half {
        let freq = (-(i as f64) * (10_000.0f64).ln() / half as f64).exp();
        out[2 * i] = (t as f64 * freq).sin();
        out[2 * i + 1] = (t as f64 * freq).cos();
    }
    out
}

/// 3x3 same-padding convolution over `IMG_SIZE` feature maps.
fn conv2d(input: &[f64], in_ch: usize, w: &[f64], bias: &[f64], out_ch: usize, out: &mut [f64]) {
    debug_assert_eq!(w.len(), out_ch * in_ch * KS * KS);
    for o in 0..out_ch {
        let out_plane = &mut out[o * N_PIX..(o + 1) * N_PIX];
        out_plane.fill(bias[o]);
        for c in 0..in_ch {
            let in_plane = &input[c * N_PIX..(c + 1) * N_PIX];
            let wbase = (o * in_ch + c) * KS * KS;
            for ky in 0..KS {
                for kx in 0..KS {
                    let wv = w[wbase + ky * KS + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (IMG_SIZE as isize - dy).min(IMG_SIZE as isize) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (IMG_SIZE as isize - dx).min(IMG_SIZE as isize) as usize;
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        for x in x0..x1 {
                            let ix = (x as isize + dx) as usize;
                            out_plane[y * IMG_SIZE + x] += wv * in_plane[iy * IMG_SIZE + ix];
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of a 3x3 same-padding convolution: returns grad wrt input
/// and accumulates grad wrt weights/bias.
fn conv2d_backward(
    input: &[f64],
    in_ch: usize,
    w: &[f64],
    out_ch: usize,
    g_out: &[f64],
    g_w: &mut [f64],
    g_b: &mut [f64],
    g_in: &mut [f64],
) {
    for o in 0..out_ch {
        let g_plane = &g_out[o * N_PIX..(o + 1) * N_PIX];
        g_b[o] += g_plane.iter().sum::<f64>();
        for c in 0..in_ch {
            let in_plane = &input[c * N_PIX..(c + 1) * N_PIX];
            let gin_plane = &mut g_in[c * N_PIX..(c + 1) * N_PIX];
            let wbase = (o * in_ch + c) * KS * KS;
            for ky in 0..KS {
                for kx in 0..KS {
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (IMG_SIZE as isize - dy).min(IMG_SIZE as isize) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (IMG_SIZE as isize - dx).min(IMG_SIZE as isize) as usize;
                    let wv = w[wbase + ky * KS + kx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        for x in x0..x1 {
                            let ix = (x as isize + dx) as usize;
                            let g = g_plane[y * IMG_SIZE + x];
                            acc += g * in_plane[iy * IMG_SIZE + ix];
                            gin_plane[iy * IMG_SIZE + ix] += g * wv;
                        }
                    }
                    g_w[wbase + ky * KS + kx] += acc;
                }
            }
        }
    }
}

/// y = W x for a CH x CH row-major matrix.
fn matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * x.len()..(r + 1) * x.len()];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// out += W^T g
fn matvec_transpose_acc(w: &[f64], g: &[f64], cols: usize, out: &mut [f64]) {
    for (r, &gv) in g.iter().enumerate() {
        if gv == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += gv * wv;
        }
    }
}

/// g_w += outer(g, x)
fn outer_acc(g: &[f64], x: &[f64], g_w: &mut [f64]) {
    for (r, &gv) in g.iter().enumerate() {
        if gv == 0.0 {
            continue;
        }
        let row = &mut g_w[r * x.len()..(r + 1) * x.len()];
        for (o, &xv) in row.iter_mut().zip(x) {
            *o += gv * xv;
        }
    }
}

impl ToyDenoiser {
    /// Deterministic random initialization.
    pub fn init(seed: u64) -> Self {
        let rng = RngKey::new(seed);
        let mut layers = BTreeMap::new();
        for (idx, (name, kind, dims)) in schema().into_iter().enumerate() {
            let mut stream = rng.stream(idx as u64, Purpose::WeightInit);
            let numel: usize = dims.iter().product();
            let data: Vec<f64> = match (name, kind) {
                ("norm1.gain", _) => vec![1.0; numel],
                (_, LayerKind::Bias1d) => vec![0.0; numel],
                (_, LayerKind::Conv4d) => {
                    let fan_in = (dims[1] * dims[2] * dims[3]) as f64;
                    let std = (2.0 / fan_in).sqrt();
                    (0..numel).map(|_| std * stream.next_normal()).collect()
                }
                (_, LayerKind::Embed2d) => (0..numel).map(|_| 0.3 * stream.next_normal()).collect(),
                ("attn.out.weight", _) => {
                    // small residual-branch init
                    (0..numel).map(|_| 0.06 * stream.next_normal()).collect()
                }
                (_, LayerKind::Linear2d) => {
                    let std = (1.0 / dims[1] as f64).sqrt();
                    (0..numel).map(|_| std * stream.next_normal()).collect()
                }
                _ => unreachable!(),
            };
            layers.insert(
                name.to_string(),
                Layer {
                    kind,
                    tensor: DenseTensor::new(dims, data).expect("schema dims are consistent"),
                },
            );
        }
        Self { layers, version: 0 }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn layers(&self) -> impl Iterator<Item = (&String, &Layer)> {
        self.layers.iter()
    }

    fn weights(&self, name: &str) -> &[f64] {
        self.layers[name].tensor.data()
    }

    /// (full, spectral, rank-1) serialized parameter counts.
    pub fn parameter_counts(&self) -> (usize, usize, usize) {
        let mut full = 0;
        let mut spectral = 0;
        let mut lora = 0;
        for layer in self.layers.values() {
            let numel = layer.tensor.numel();
            full += numel;
            if layer.kind.is_decomposed() {
                let dims = layer.tensor.dims();
                let (m, n) = if dims.len() == 2 {
                    (dims[0], dims[1])
                } else {
                    (dims[0], dims[1] * dims[2] * dims[3])
                };
                spectral += m.min(n);
                lora += m + n;
            } else {
                spectral += numel;
                lora += numel;
            }
        }
        (full, spectral, lora)
    }

    /// Tokens the attention head actually attends: padding dropped, and
    /// the null token substituted for an effectively empty prompt.
    fn attended_tokens(prompt: &[TokenId]) -> Result<Vec<(usize, TokenId)>> {
        if let Some(&bad) = prompt.iter().find(|&&id| (id as usize) >= VOCAB_CAPACITY) {
            return Err(Error::Shape(format!("token id {bad} outside vocabulary")));
        }
        let toks: Vec<(usize, TokenId)> = prompt
            .iter()
            .enumerate()
            .filter(|(_, &id)| id != PAD)
            .map(|(i, &id)| (i, id))
            .collect();
        if toks.is_empty() {
            return Ok(vec![(0, NULL)]);
        }
        Ok(toks)
    }

    /// Full forward pass with activation tape and attention maps.
    pub fn forward(
        &self,
        z: &SampleGrid,
        t: usize,
        prompt: &[TokenId],
    ) -> Result<(SampleGrid, AttentionMaps, Tape)> {
        if z.shape() != (IMG_CHANNELS, IMG_SIZE, IMG_SIZE) {
            return Err(Error::Shape(format!(
                "input must be {IMG_CHANNELS}x{IMG_SIZE}x{IMG_SIZE}, got {:?}",
                z.shape()
            )));
        }
        let attended = Self::attended_tokens(prompt)?;
        let n_tok = attended.len();

        let w_in = self.weights("conv_in.weight");
        let b_in = self.weights("conv_in.bias");
        let gain = self.weights("norm1.gain");
        let nbias = self.weights("norm1.bias");
        let w_t = self.weights("time_proj.weight");
        let b_t = self.weights("time_proj.bias");
        let w_mid = self.weights("conv_mid.weight");
        let b_mid = self.weights("conv_mid.bias");
        let embed = self.weights("token_embed.weight");
        let w_q = self.weights("attn.query.weight");
        let w_k = self.weights("attn.key.weight");
        let w_v = self.weights("attn.value.weight");
        let w_o = self.weights("attn.out.weight");
        let w_out = self.weights("conv_out.weight");
        let b_out = self.weights("conv_out.bias");

        // conv_in
        let mut h0 = vec![0.0; CH * N_PIX];
        conv2d(z.data(), IMG_CHANNELS, w_in, b_in, CH, &mut h0);

        // time embedding path
        let temb = time_embedding(t);
        let mut tvec = vec![0.0; CH];
        matvec(w_t, &temb, &mut tvec);
        for (tv, bv) in tvec.iter_mut().zip(b_t) {
            *tv += bv;
        }

        // per-channel affine + time, then silu
        let mut a1 = vec![0.0; CH * N_PIX];
        for c in 0..CH {
            let base = c * N_PIX;
            for p in 0..N_PIX {
                a1[base + p] = gain[c] * h0[base + p] + nbias[c] + tvec[c];
            }
        }
        let h1: Vec<f64> = a1.iter().map(|&x| silu(x)).collect();

        // conv_mid + silu
        let mut a2 = vec![0.0; CH * N_PIX];
        conv2d(&h1, CH, w_mid, b_mid, CH, &mut a2);
        let h2: Vec<f64> = a2.iter().map(|&x| silu(x)).collect();

        // cross attention: spatial queries over token keys/values
        let mut k = vec![0.0; n_tok * CH];
        let mut v = vec![0.0; n_tok * CH];
        for (j, &(_, tok)) in attended.iter().enumerate() {
            let emb = &embed[tok as usize * CH..(tok as usize + 1) * CH];
            matvec(w_k, emb, &mut k[j * CH..(j + 1) * CH]);
            matvec(w_v, emb, &mut v[j * CH..(j + 1) * CH]);
        }
        let scale = 1.0 / (CH as f64).sqrt();
        let mut q = vec![0.0; N_PIX * CH];
        let mut attn = vec![0.0; N_PIX * n_tok];
        let mut ctx = vec![0.0; N_PIX * CH];
        let mut h3 = h2.clone();
        let mut feat = vec![0.0; CH];
        let mut o_vec = vec![0.0; CH];
        for p in 0..N_PIX {
            for c in 0..CH {
                feat[c] = h2[c * N_PIX + p];
            }
            let qp = &mut q[p * CH..(p + 1) * CH];
            matvec(w_q, &feat, qp);

            let logits = &mut attn[p * n_tok..(p + 1) * n_tok];
            let mut max_logit = f64::NEG_INFINITY;
            for j in 0..n_tok {
                let kj = &k[j * CH..(j + 1) * CH];
                let dot: f64 = qp.iter().zip(kj).map(|(a, b)| a * b).sum();
                logits[j] = dot * scale;
                max_logit = max_logit.max(logits[j]);
            }
            let mut denom = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max_logit).exp();
                denom += *l;
            }
            for l in logits.iter_mut() {
                *l /= denom;
            }

            let ctx_p = &mut ctx[p * CH..(p + 1) * CH];
            for j in 0..n_tok {
                let a = logits[j];
                let vj = &v[j * CH..(j + 1) * CH];
                for (cv, &vv) in ctx_p.iter_mut().zip(vj) {
                    *cv += a * vv;
                }
            }
            matvec(w_o, ctx_p, &mut o_vec);
            for c in 0..CH {
                h3[c * N_PIX + p] += o_vec[c];
            }
        }

        // conv_out
        let mut out = vec![0.0; IMG_CHANNELS * N_PIX];
        conv2d(&h3, CH, w_out, b_out, IMG_CHANNELS, &mut out);

        // token-major attention maps
        let mut maps = vec![0.0; n_tok * N_PIX];
        for p in 0..N_PIX {
            for j in 0..n_tok {
                maps[j * N_PIX + p] = attn[p * n_tok + j];
            }
        }
        let attention = AttentionMaps {
            token_ids: attended.iter().map(|&(_, id)| id).collect(),
            positions: attended.iter().map(|&(pos, _)| pos).collect(),
            height: IMG_SIZE,
            width: IMG_SIZE,
            weights: maps,
        };

        let eps_hat = SampleGrid::new(IMG_CHANNELS, IMG_SIZE, IMG_SIZE, out)?;
        let tape = Tape {
            version: self.version,
            t,
            z: z.clone(),
            temb,
            attended,
            h0,
            a1,
            h1,
            a2,
            h2,
            q,
            k,
            v,
            attn,
            ctx,
            h3,
        };
        Ok((eps_hat, attention, tape))
    }

    /// Exact gradients of every named layer for the recorded forward
    /// pass. `grad_attn`, when present, injects d(loss)/d(attention)
    /// in token-major layout (as exposed by [`AttentionMaps`]).
    pub fn backward_with_attention(
        &self,
        tape: &Tape,
        grad_out: &SampleGrid,
        grad_attn: Option<&[f64]>,
    ) -> Result<BTreeMap<String, DenseTensor>> {
        if tape.version != self.version {
            return Err(Error::Tape(format!(
                "tape recorded at weight version {}, model is at {}",
                tape.version, self.version
            )));
        }
        if grad_out.shape() != (IMG_CHANNELS, IMG_SIZE, IMG_SIZE) {
            return Err(Error::Shape("output gradient has wrong shape".into()));
        }
        let n_tok = tape.attended.len();
        if let Some(ga) = grad_attn {
            if ga.len() != n_tok * N_PIX {
                return Err(Error::Shape(format!(
                    "attention gradient has {} entries, expected {}",
                    ga.len(),
                    n_tok * N_PIX
                )));
            }
        }

        let gain = self.weights("norm1.gain");
        let w_mid = self.weights("conv_mid.weight");
        let embed = self.weights("token_embed.weight");
        let w_q = self.weights("attn.query.weight");
        let w_k = self.weights("attn.key.weight");
        let w_v = self.weights("attn.value.weight");
        let w_o = self.weights("attn.out.weight");
        let w_out = self.weights("conv_out.weight");
        let w_in = self.weights("conv_in.weight");

        let mut g_w_in = vec![0.0; CH * IMG_CHANNELS * KS * KS];
        let mut g_b_in = vec![0.0; CH];
        let mut g_gain = vec![0.0; CH];
        let mut g_nbias = vec![0.0; CH];
        let mut g_w_t = vec![0.0; CH * CH];
        let mut g_b_t = vec![0.0; CH];
        let mut g_w_mid = vec![0.0; CH * CH * KS * KS];
        let mut g_b_mid = vec![0.0; CH];
        let mut g_embed = vec![0.0; VOCAB_CAPACITY * CH];
        let mut g_w_q = vec![0.0; CH * CH];
        let mut g_w_k = vec![0.0; CH * CH];
        let mut g_w_v = vec![0.0; CH * CH];
        let mut g_w_o = vec![0.0; CH * CH];
        let mut g_w_out = vec![0.0; IMG_CHANNELS * CH * KS * KS];
        let mut g_b_out = vec![0.0; IMG_CHANNELS];

        // conv_out backward
        let mut g_h3 = vec![0.0; CH * N_PIX];
        conv2d_backward(
            &tape.h3,
            CH,
            w_out,
            IMG_CHANNELS,
            grad_out.data(),
            &mut g_w_out,
            &mut g_b_out,
            &mut g_h3,
        );

        // attention block backward; h2 receives the residual gradient
        // plus the query-path gradient
        let mut g_h2 = g_h3.clone();
        let mut g_k = vec![0.0; n_tok * CH];
        let mut g_v = vec![0.0; n_tok * CH];
        let scale = 1.0 / (CH as f64).sqrt();
        let mut g_o = vec![0.0; CH];
        let mut g_ctx = vec![0.0; CH];
        let mut g_attn_row = vec![0.0; n_tok];
        let mut g_logits = vec![0.0; n_tok];
        let mut g_q = vec![0.0; CH];
        let mut feat = vec![0.0; CH];
        for p in 0..N_PIX {
            for c in 0..CH {
                g_o[c] = g_h3[c * N_PIX + p];
            }
            let ctx_p = &tape.ctx[p * CH..(p + 1) * CH];
            outer_acc(&g_o, ctx_p, &mut g_w_o);
            g_ctx.fill(0.0);
            matvec_transpose_acc(w_o, &g_o, CH, &mut g_ctx);

            let attn_p = &tape.attn[p * n_tok..(p + 1) * n_tok];
            for j in 0..n_tok {
                let vj = &tape.v[j * CH..(j + 1) * CH];
                let mut d: f64 = g_ctx.iter().zip(vj).map(|(a, b)| a * b).sum();
                if let Some(ga) = grad_attn {
                    d += ga[j * N_PIX + p];
                }
                g_attn_row[j] = d;
                let a = attn_p[j];
                let gv = &mut g_v[j * CH..(j + 1) * CH];
                for (g, &c) in gv.iter_mut().zip(g_ctx.iter()) {
                    *g += a * c;
                }
            }
            // softmax backward
            let dot: f64 = attn_p.iter().zip(&g_attn_row).map(|(a, g)| a * g).sum();
            for j in 0..n_tok {
                g_logits[j] = attn_p[j] * (g_attn_row[j] - dot);
            }
            // logits = scale * q . k
            g_q.fill(0.0);
            let qp = &tape.q[p * CH..(p + 1) * CH];
            for j in 0..n_tok {
                let gl = g_logits[j] * scale;
                if gl == 0.0 {
                    continue;
                }
                let kj = &tape.k[j * CH..(j + 1) * CH];
                for c in 0..CH {
                    g_q[c] += gl * kj[c];
                    g_k[j * CH + c] += gl * qp[c];
                }
            }
            for c in 0..CH {
                feat[c] = tape.h2[c * N_PIX + p];
            }
            outer_acc(&g_q, &feat, &mut g_w_q);
            // g_h2[:,p] += Wq^T g_q
            for (r, &gq) in g_q.iter().enumerate() {
                if gq == 0.0 {
                    continue;
                }
                let row = &w_q[r * CH..(r + 1) * CH];
                for c in 0..CH {
                    g_h2[c * N_PIX + p] += gq * row[c];
                }
            }
        }
        // token-side projections
        let mut g_emb = vec![0.0; CH];
        for (j, &(_, tok)) in tape.attended.iter().enumerate() {
            let emb = &embed[tok as usize * CH..(tok as usize + 1) * CH];
            let gk = &g_k[j * CH..(j + 1) * CH];
            let gv = &g_v[j * CH..(j + 1) * CH];
            outer_acc(gk, emb, &mut g_w_k);
            outer_acc(gv, emb, &mut g_w_v);
            g_emb.fill(0.0);
            matvec_transpose_acc(w_k, gk, CH, &mut g_emb);
            matvec_transpose_acc(w_v, gv, CH, &mut g_emb);
            let dst = &mut g_embed[tok as usize * CH..(tok as usize + 1) * CH];
            for (d, &g) in dst.iter_mut().zip(&g_emb) {
                *d += g;
            }
        }

        // silu at a2
        let g_a2: Vec<f64> = g_h2
            .iter()
            .zip(&tape.a2)
            .map(|(&g, &a)| g * dsilu(a))
            .collect();

        // conv_mid backward
        let mut g_h1 = vec![0.0; CH * N_PIX];
        conv2d_backward(
            &tape.h1,
            CH,
            w_mid,
            CH,
            &g_a2,
            &mut g_w_mid,
            &mut g_b_mid,
            &mut g_h1,
        );

        // silu at a1
        let g_a1: Vec<f64> = g_h1
            .iter()
            .zip(&tape.a1)
            .map(|(&g, &a)| g * dsilu(a))
            .collect();

        // per-channel affine + time path
        let mut g_tvec = vec![0.0; CH];
        let mut g_h0 = vec![0.0; CH * N_PIX];
        for c in 0..CH {
            let base = c * N_PIX;
            let mut sum = 0.0;
            let mut dot = 0.0;
            for p in 0..N_PIX {
                let g = g_a1[base + p];
                sum += g;
                dot += g * tape.h0[base + p];
                g_h0[base + p] = g * gain[c];
            }
            g_gain[c] = dot;
            g_nbias[c] = sum;
            g_tvec[c] = sum;
        }
        outer_acc(&g_tvec, &tape.temb, &mut g_w_t);
        g_b_t.copy_from_slice(&g_tvec);

        // conv_in backward (input gradient discarded)
        let mut g_z = vec![0.0; IMG_CHANNELS * N_PIX];
        conv2d_backward(
            tape.z.data(),
            IMG_CHANNELS,
            w_in,
            CH,
            &g_h0,
            &mut g_w_in,
            &mut g_b_in,
            &mut g_z,
        );

        let mut grads = BTreeMap::new();
        let mut put = |name: &str, dims: Vec<usize>, data: Vec<f64>| {
            grads.insert(
                name.to_string(),
                DenseTensor::new(dims, data).expect("gradient buffers match their dims"),
            );
        };
        // decomposed layers in matrix form, 1-D layers flat
        put("conv_in.weight", vec![CH, IMG_CHANNELS * KS * KS], g_w_in);
        put("conv_in.bias", vec![CH], g_b_in);
        put("norm1.gain", vec![CH], g_gain);
        put("norm1.bias", vec![CH], g_nbias);
        put("time_proj.weight", vec![CH, CH], g_w_t);
        put("time_proj.bias", vec![CH], g_b_t);
        put("conv_mid.weight", vec![CH, CH * KS * KS], g_w_mid);
        put("conv_mid.bias", vec![CH], g_b_mid);
        put("token_embed.weight", vec![VOCAB_CAPACITY, CH], g_embed);
        put("attn.query.weight", vec![CH, CH], g_w_q);
        put("attn.key.weight", vec![CH, CH], g_w_k);
        put("attn.value.weight", vec![CH, CH], g_w_v);
        put("attn.out.weight", vec![CH, CH], g_w_o);
        put("conv_out.weight", vec![IMG_CHANNELS, CH * KS * KS], g_w_out);
        put("conv_out.bias", vec![IMG_CHANNELS], g_b_out);
        Ok(grads)
    }

    pub fn backward(
        &self,
        tape: &Tape,
        grad_out: &SampleGrid,
    ) -> Result<BTreeMap<String, DenseTensor>> {
        self.backward_with_attention(tape, grad_out, None)
    }
}

impl WeightStore for ToyDenoiser {
    fn layer_names(&self) -> Vec<String> {
        self.layers.keys().cloned().collect()
    }

    fn layer_kind(&self, name: &str) -> Option<LayerKind> {
        self.layers.get(name).map(|l| l.kind)
    }

    fn layer(&self, name: &str) -> Option<&DenseTensor> {
        self.layers.get(name).map(|l| &l.tensor)
    }

    fn set_layer(&mut self, name: &str, tensor: DenseTensor) -> Result<()> {
        let layer = self
            .layers
            .get_mut(name)
            .ok_or_else(|| Error::Shape(format!("model has no layer {name}")))?;
        if layer.tensor.dims() != tensor.dims() {
            return Err(Error::Shape(format!(
                "layer {name}: dims {:?} cannot replace {:?}",
                tensor.dims(),
                layer.tensor.dims()
            )));
        }
        layer.tensor = tensor;
        self.version += 1;
        Ok(())
    }
}

impl NoisePredictor for ToyDenoiser {
    fn predict(&self, z_t: &SampleGrid, t: usize, prompt: &[TokenId]) -> Result<SampleGrid> {
        let (eps_hat, _, _) = self.forward(z_t, t, prompt)?;
        Ok(eps_hat)
    }
}

/// Restores a model from a named-layer set, validating the architecture.
pub fn from_layers(layers: BTreeMap<String, Layer>) -> Result<ToyDenoiser> {
    let expect = schema();
    if layers.len() != expect.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} layers, architecture needs {}",
            layers.len(),
            expect.len()
        )));
    }
    for (name, kind, dims) in expect {
        let layer = layers
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing layer {name}")))?;
        if layer.kind != kind || layer.tensor.dims() != &dims[..] {
            return Err(Error::Format(format!("layer {name} does not match the architecture")));
        }
    }
    Ok(ToyDenoiser { layers, version: 0 })
}
