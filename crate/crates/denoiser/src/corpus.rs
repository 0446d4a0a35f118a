//! Procedural pretraining corpus: colored shapes on 16x16 canvases with
//! class captions. Deterministic for a given seed.

use svdiff_diffusion::{Purpose, RngKey, SampleGrid};

use crate::model::{IMG_CHANNELS, IMG_SIZE};
use crate::vocab::{PromptTokens, CIRCLE, CROSS, PHOTO_OF_A, SQUARE};

pub const CORPUS_SIZE: usize = 3072;
const BACKGROUND: f64 = -0.9;

/// Palette of (r, g, b) shape colors inside [-1, 1].
const PALETTE: [[f64; 3]; 6] = [
    [0.9, -0.6, -0.6],
    [-0.6, 0.9, -0.6],
    [-0.6, -0.6, 0.9],
    [0.9, 0.9, -0.6],
    [0.9, -0.6, 0.9],
    [-0.6, 0.9, 0.9],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Circle,
    Square,
    Cross,
}

impl ShapeClass {
    pub fn token(self) -> u16 {
        match self {
            ShapeClass::Circle => CIRCLE,
            ShapeClass::Square => SQUARE,
            ShapeClass::Cross => CROSS,
        }
    }

    fn from_index(i: usize) -> Self {
        match i % 3 {
            0 => ShapeClass::Circle,
            1 => ShapeClass::Square,
            _ => ShapeClass::Cross,
        }
    }
}

/// Renders one shape at (cx, cy) with the given palette color.
pub fn render_shape(class: ShapeClass, cx: usize, cy: usize, color: [f64; 3]) -> SampleGrid {
    let mut img = SampleGrid::filled(IMG_CHANNELS, IMG_SIZE, IMG_SIZE, BACKGROUND);
    let inside = |x: usize, y: usize| -> bool {
        let dx = x as isize - cx as isize;
        let dy = y as isize - cy as isize;
        match class {
            ShapeClass::Circle => dx * dx + dy * dy <= 9,
            ShapeClass::Square => dx.abs() <= 2 && dy.abs() <= 2,
            ShapeClass::Cross => (dx.abs() <= 3 && dy == 0) || (dy.abs() <= 3 && dx == 0),
        }
    };
    for y in 0..IMG_SIZE {
        for x in 0..IMG_SIZE {
            if inside(x, y) {
                for (c, &v) in color.iter().enumerate() {
                    img.set(c, y, x, v);
                }
            }
        }
    }
    img
}

/// The caption every corpus image carries: "photo of a <class>".
pub fn class_caption(class: ShapeClass) -> PromptTokens {
    PromptTokens::new(vec![PHOTO_OF_A, class.token()]).expect("two tokens always fit")
}

/// Deterministic (image, caption) corpus, exactly class-balanced.
pub fn pretrain_corpus(seed: u64) -> Vec<(SampleGrid, PromptTokens)> {
    let rng = RngKey::new(seed);
    let mut out = Vec::with_capacity(CORPUS_SIZE);
    for i in 0..CORPUS_SIZE {
        let mut stream = rng.stream(i as u64, Purpose::Corpus);
        let class = ShapeClass::from_index(i);
        let cx = 4 + stream.next_below(8);
        let cy = 4 + stream.next_below(8);
        let color = PALETTE[stream.next_below(PALETTE.len())];
        out.push((render_shape(class, cx, cy, color), class_caption(class)));
    }
    out
}
