//! Attention correctness, alternative distances, phrase chunking and matching,
//! and the analysis splits built on top of per-phrase records.

mod ac;
mod agreement;
mod chunker;
mod matching;
mod pgm;
mod splits;

use serde::{Deserialize, Serialize};

use crate::grid::RegionError;

pub use ac::{phrase_ac, uniform_baseline, word_ac, Aggregator};
pub use agreement::{alt_metrics, average_ranks, spearman, AltMetrics, KlDirection};
pub use chunker::{extract_noun_phrases, Chunking, Lexicon, Tag};
pub use matching::match_generated;
pub use pgm::{attention_pgm, grid_pgm};
pub use splits::{
    correctness_split, filter_evaluable, improvement_histogram, size_split, tercile_sizes, CorrectnessGroup,
    HistogramBin, SizeGroup, FULL_IMAGE_FRACTION,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("rank correlation undefined for a constant sequence")]
    Constant,
    #[error("attention map has {got} cells, expected {expected}")]
    CellCount { got: usize, expected: usize },
    #[error("non-finite value")]
    NonFinite,
}

/// Where an evaluated phrase came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhraseSource {
    GtCaption,
    GeneratedMatch,
}

impl PhraseSource {
    pub fn as_str(self) -> &'static str {
        match self {
            PhraseSource::GtCaption => "gt_caption",
            PhraseSource::GeneratedMatch => "generated_match",
        }
    }
}

/// Token span `[start, end)` in a caption with its text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start < end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn tokens<'a>(&self, caption: &'a [String]) -> &'a [String] {
        &caption[self.start..self.end]
    }
}

/// Attention correctness of one phrase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcRecord {
    pub image_id: String,
    pub phrase: String,
    /// Timesteps of the phrase in the evaluated caption.
    pub span: Span,
    pub word_scores: Vec<f64>,
    pub ac: f64,
    pub baseline: f64,
    /// Fraction of the image covered by the phrase's region.
    pub area_fraction: f64,
    pub source: PhraseSource,
}
