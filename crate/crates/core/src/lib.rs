//! Soft-attention image captioning with optional attention supervision, and
//! the attention-correctness metrics used to evaluate it.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine drives
//! an LSTM caption decoder, trained on a deterministic synthetic world whose
//! captions come with exact region alignments.

// `!(x >= 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bleu;
pub mod captioner;
pub mod grid;
pub mod gt_attention;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod synth;

pub use bleu::{bleu, bleu_1_to_4, CorpusEntry};
pub use captioner::{
    AttentionMap, Checkpoint, Dims, FeatureGrid, ModelParams, SupervisionMode, TrainConfig, TrainLog, Vocab,
};
pub use grid::{PixelBox, Region};
pub use gt_attention::{EmbeddingTable, GroundTruthMap, GtState, WeakSupervision};
pub use metrics::{AcRecord, Aggregator, Lexicon};
pub use pipeline::{CaptionMode, EvalSettings, ImageEval};
pub use synth::{Dataset, Sample, Split, WorldConfig};
