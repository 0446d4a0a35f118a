//! Cut-Mix-Unmix: composed two-subject samples and the attention
//! regularizer that keeps each subject token on its own side.

use svdiff_denoiser::model::AttentionMaps;
use svdiff_denoiser::vocab::{PromptTokens, AND_A, ON_THE_LEFT, ON_THE_RIGHT, PHOTO_OF_A};
use svdiff_denoiser::ToyDenoiser;
use svdiff_diffusion::{SampleGrid, Stream, TokenId};
use svdiff_linalg::error::{Error, Result};

use crate::dataset::noised_probe;

/// One subject's contribution to a composed sample. `placeholder` is
/// absent for prior-pair composition.
#[derive(Debug, Clone)]
pub struct SubjectSlot<'a> {
    pub image: &'a SampleGrid,
    pub placeholder: Option<TokenId>,
    pub class_word: TokenId,
}

/// A composed two-subject training sample.
#[derive(Debug, Clone)]
pub struct CutMixSample {
    pub image: SampleGrid,
    pub prompt: PromptTokens,
    /// Per-pixel subject index: 0 where pixels come from subject A (the
    /// first argument of [`compose_cutmix`]), 1 where they come from B.
    pub layout: Vec<u8>,
}

impl CutMixSample {
    /// Prompt positions of each subject's placeholder token, (A, B).
    pub fn token_groups(
        &self,
        placeholder_a: TokenId,
        placeholder_b: TokenId,
    ) -> (Vec<usize>, Vec<usize>) {
        (
            self.prompt.positions_of(placeholder_a),
            self.prompt.positions_of(placeholder_b),
        )
    }
}

/// Composes two subject images by a vertical split drawn uniformly from
/// [w/4, 3w/4], randomizing which subject lands on the left. The prompt
/// reads "photo of a [Va] <classA> on the left and a [Vb] <classB> on
/// the right" in the drawn order; the layout mask stays in A/B terms.
pub fn compose_cutmix(
    a: &SubjectSlot,
    b: &SubjectSlot,
    split_stream: &mut Stream,
    order_stream: &mut Stream,
) -> Result<CutMixSample> {
    if !a.image.same_shape(b.image) {
        return Err(Error::Shape(format!(
            "subject images {:?} vs {:?}",
            a.image.shape(),
            b.image.shape()
        )));
    }
    let (channels, height, width) = a.image.shape();
    let lo = width / 4;
    let hi = 3 * width / 4;
    let split = lo + split_stream.next_below(hi - lo + 1);
    let swap = order_stream.next_below(2) == 1;
    let (left, right) = if swap { (b, a) } else { (a, b) };

    let mut data = Vec::with_capacity(channels * height * width);
    for c in 0..channels {
        for y in 0..height {
            for x in 0..width {
                let src = if x < split { left.image } else { right.image };
                data.push(src.at(c, y, x));
            }
        }
    }
    let image = SampleGrid::new(channels, height, width, data)?;

    let mut layout = vec![0u8; height * width];
    for y in 0..height {
        for x in 0..width {
            let from_left = x < split;
            let from_a = from_left != swap;
            layout[y * width + x] = if from_a { 0 } else { 1 };
        }
    }

    let mut ids = vec![PHOTO_OF_A];
    if let Some(v) = left.placeholder {
        ids.push(v);
    }
    ids.push(left.class_word);
    ids.push(ON_THE_LEFT);
    ids.push(AND_A);
    if let Some(v) = right.placeholder {
        ids.push(v);
    }
    ids.push(right.class_word);
    ids.push(ON_THE_RIGHT);
    let prompt = PromptTokens::new(ids)?;

    Ok(CutMixSample {
        image,
        prompt,
        layout,
    })
}

/// Squared attention mass each group places on the other subject's
/// region: `mean over (token in group g, pixel outside region g)` of
/// `attn^2`. Returns the loss and its gradient in the token-major layout
/// of [`AttentionMaps`].
pub fn unmix_loss(
    attn: &AttentionMaps,
    layout: &[u8],
    token_groups: (&[usize], &[usize]),
) -> Result<(f64, Vec<f64>)> {
    let n_pix = attn.height * attn.width;
    if layout.len() != n_pix {
        return Err(Error::Shape(format!(
            "layout has {} cells, attention maps cover {n_pix}",
            layout.len()
        )));
    }
    if token_groups.0.is_empty() || token_groups.1.is_empty() {
        return Err(Error::Config("unmix needs a non-empty token group per subject".into()));
    }

    let mut grad = vec![0.0; attn.tokens() * n_pix];
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut entries: Vec<usize> = Vec::new();
    for (region, group) in [(0u8, token_groups.0), (1u8, token_groups.1)] {
        for &pos in group {
            let row = attn.row_for_position(pos).ok_or_else(|| {
                Error::Config(format!("prompt position {pos} is not attended"))
            })?;
            for p in 0..n_pix {
                if layout[p] != region {
                    let idx = row * n_pix + p;
                    let a = attn.weights()[idx];
                    sum += a * a;
                    entries.push(idx);
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::Config("layout leaves no non-corresponding region".into()));
    }
    let loss = sum / count as f64;
    for idx in entries {
        grad[idx] += 2.0 * attn.weights()[idx] / count as f64;
    }
    Ok((loss, grad))
}

/// Mean attention mass the placeholder tokens put on the wrong region of
/// a held-out composed sample, probed at a fixed mid-schedule noise
/// level. Lower is better unmixing.
pub fn wrong_region_attention(
    model: &ToyDenoiser,
    sample: &CutMixSample,
    groups: (&[usize], &[usize]),
    sched: &svdiff_diffusion::NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    let (z_t, t) = noised_probe(&sample.image, sched, seed)?;
    let (_, attn, _) = model.forward(&z_t, t, sample.prompt.ids())?;
    let n_pix = attn.height * attn.width;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (region, group) in [(0u8, groups.0), (1u8, groups.1)] {
        for &pos in group {
            let row = attn
                .row_for_position(pos)
                .ok_or_else(|| Error::Config(format!("prompt position {pos} is not attended")))?;
            for p in 0..n_pix {
                if sample.layout[p] != region {
                    sum += attn.weights()[row * n_pix + p];
                    count += 1;
                }
            }
        }
    }
    Ok(sum / count as f64)
}
