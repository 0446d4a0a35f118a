//! A small conditional denoiser with named layers of all three kernel
//! arities (4-D conv, 2-D projections/embeddings, 1-D gains/biases),
//! exposed cross-attention maps and exact manual backpropagation.

pub mod ckpt;
pub mod corpus;
pub mod model;
pub mod vocab;

pub use ckpt::{load_model, model_from_bytes, model_to_bytes, save_model};
pub use corpus::{class_caption, pretrain_corpus, render_shape, ShapeClass, CORPUS_SIZE};
pub use model::{AttentionMaps, Layer, Tape, ToyDenoiser, CH, IMG_CHANNELS, IMG_SIZE};
pub use vocab::{PromptTokens, MAX_PROMPT_LEN, VOCAB_CAPACITY};
