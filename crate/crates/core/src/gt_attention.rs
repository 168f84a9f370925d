//! Ground-truth attention targets built from region annotations.
//!
//! Strong targets come from a phrase's aligned regions. Weak targets come
//! from class-labeled regions whose class name is similar enough to the
//! caption word in an embedding space; scene words get a uniform target.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::grid::{rasterize_union, resize_normalize, PixelGrid, Region, RegionError};

/// Similarity a class must exceed to contribute to a weak target.
pub const DEFAULT_WEAK_THRESHOLD: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GtState {
    Present(Vec<f64>),
    Uniform,
    Absent,
}

/// Supervision target for one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMap {
    pub state: GtState,
    pub grid_side: usize,
}

impl GroundTruthMap {
    pub fn absent(grid_side: usize) -> Self {
        Self {
            state: GtState::Absent,
            grid_side,
        }
    }

    pub fn uniform(grid_side: usize) -> Self {
        Self {
            state: GtState::Uniform,
            grid_side,
        }
    }

    pub fn present(weights: Vec<f64>, grid_side: usize) -> Self {
        debug_assert_eq!(weights.len(), grid_side * grid_side);
        Self {
            state: GtState::Present(weights),
            grid_side,
        }
    }

    pub fn is_absent(&self) -> bool {
        matches!(self.state, GtState::Absent)
    }

    /// Cell weights, with `Uniform` expanded to `1/L` per cell.
    pub fn weights(&self) -> Option<Vec<f64>> {
        let l = self.grid_side * self.grid_side;
        match &self.state {
            GtState::Present(w) => Some(w.clone()),
            GtState::Uniform => Some(vec![1.0 / l as f64; l]),
            GtState::Absent => None,
        }
    }

    /// JSON form used by the supervision dump: `"A"`, `"U"` or the weights.
    pub fn to_dump_value(&self) -> serde_json::Value {
        match &self.state {
            GtState::Absent => serde_json::Value::from("A"),
            GtState::Uniform => serde_json::Value::from("U"),
            GtState::Present(w) => serde_json::Value::from(w.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("embedding for {token:?} has norm {norm}, expected 1")]
    NotUnit { token: String, norm: f64 },
    #[error("embedding for {token:?} has width {got}, expected {expected}")]
    Width {
        token: String,
        got: usize,
        expected: usize,
    },
    #[error("embedding table is empty")]
    Empty,
    #[error("embedding json: {0}")]
    Json(String),
}

/// Token to unit-norm vector. Cosine similarity is the dot product.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(vectors: BTreeMap<String, Vec<f64>>) -> Result<Self, EmbeddingError> {
        let dim = vectors.values().next().ok_or(EmbeddingError::Empty)?.len();
        for (token, v) in &vectors {
            if v.len() != dim {
                return Err(EmbeddingError::Width {
                    token: token.clone(),
                    got: v.len(),
                    expected: dim,
                });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= 1e-9) {
                return Err(EmbeddingError::NotUnit {
                    token: token.clone(),
                    norm,
                });
            }
        }
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    pub fn similarity(&self, a: &str, b: &str) -> Option<f64> {
        let (va, vb) = (self.vectors.get(a)?, self.vectors.get(b)?);
        Some(va.iter().zip(vb).map(|(x, y)| x * y).sum())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.vectors).expect("string keys and finite floats serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, EmbeddingError> {
        let vectors: BTreeMap<String, Vec<f64>> =
            serde_json::from_str(text).map_err(|e| EmbeddingError::Json(e.to_string()))?;
        Self::new(vectors)
    }
}

/// A region annotated with an object class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassLabeledRegion {
    pub region: Region,
    pub class_name: String,
}

/// Strong target for every word of a phrase: the normalized, resampled union
/// of the phrase's aligned regions. A phrase with no region gets `Absent`.
pub fn strong_beta(regions: &[Region], res: usize, g: usize) -> Result<GroundTruthMap, RegionError> {
    if regions.is_empty() {
        return Ok(GroundTruthMap::absent(g));
    }
    let pixels = rasterize_union(regions, res)?;
    Ok(GroundTruthMap::present(resize_normalize(&pixels, g)?, g))
}

/// Counters for weak-target construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WeakStats {
    /// Words not present in the embedding table.
    pub missing_words: usize,
    pub uniform: usize,
    pub absent: usize,
    pub present: usize,
}

/// Settings for weak supervision.
#[derive(Debug, Clone)]
pub struct WeakSupervision {
    pub embeddings: EmbeddingTable,
    pub threshold: f64,
    pub scene_words: BTreeSet<String>,
}

impl WeakSupervision {
    pub fn new(embeddings: EmbeddingTable, scene_words: impl IntoIterator<Item = String>) -> Self {
        Self {
            embeddings,
            threshold: DEFAULT_WEAK_THRESHOLD,
            scene_words: scene_words.into_iter().collect(),
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    /// Weak target for a noun `word` given the image's class-labeled regions.
    ///
    /// Scene words map to `Uniform`. Otherwise each region whose class
    /// similarity exceeds the threshold (and 0) paints its pixels with that
    /// similarity (overlaps keep the max); no passing region means `Absent`.
    pub fn beta(
        &self,
        word: &str,
        regions: &[ClassLabeledRegion],
        res: usize,
        g: usize,
        stats: &mut WeakStats,
    ) -> Result<GroundTruthMap, RegionError> {
        if self.scene_words.contains(word) {
            stats.uniform += 1;
            return Ok(GroundTruthMap::uniform(g));
        }
        if !self.embeddings.contains(word) {
            stats.missing_words += 1;
            stats.absent += 1;
            return Ok(GroundTruthMap::absent(g));
        }
        let mut pixels = PixelGrid::zeros(res);
        let mut any = false;
        for r in regions {
            let Some(sim) = self.embeddings.similarity(word, &r.class_name) else {
                continue;
            };
            if sim > self.threshold && sim > 0.0 {
                r.region.validate(res)?;
                pixels.paint_max(&r.region, sim);
                any = true;
            }
        }
        if !any {
            stats.absent += 1;
            return Ok(GroundTruthMap::absent(g));
        }
        stats.present += 1;
        Ok(GroundTruthMap::present(resize_normalize(&pixels, g)?, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PixelBox;

    fn table() -> EmbeddingTable {
        let s = (1.0f64 - 0.2 * 0.2).sqrt();
        let mut v = BTreeMap::new();
        v.insert("circle".to_string(), vec![1.0, 0.0, 0.0]);
        v.insert("ball".to_string(), vec![0.6, 0.8, 0.0]);
        v.insert("cup".to_string(), vec![0.2, 0.0, s]);
        v.insert("kitchen".to_string(), vec![0.0, 0.0, 1.0]);
        EmbeddingTable::new(v).unwrap()
    }

    fn circle_region() -> ClassLabeledRegion {
        ClassLabeledRegion {
            region: PixelBox::new(0, 0, 4, 4).into(),
            class_name: "circle".into(),
        }
    }

    #[test]
    fn rejects_non_unit_vectors() {
        let mut v = BTreeMap::new();
        v.insert("x".to_string(), vec![1.0, 1.0]);
        assert!(matches!(
            EmbeddingTable::new(v),
            Err(EmbeddingError::NotUnit { .. })
        ));
    }

    #[test]
    fn strong_unaligned_is_absent() {
        assert!(strong_beta(&[], 8, 2).unwrap().is_absent());
    }

    #[test]
    fn strong_full_image_is_uniform_weights() {
        let m = strong_beta(&[PixelBox::full(12).into()], 12, 3).unwrap();
        for w in m.weights().unwrap() {
            assert!((w - 1.0 / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weak_scene_word_is_uniform() {
        let weak = WeakSupervision::new(table(), ["kitchen".to_string()]);
        let mut stats = WeakStats::default();
        let m = weak.beta("kitchen", &[circle_region()], 8, 2, &mut stats).unwrap();
        assert_eq!(m.state, GtState::Uniform);
        assert_eq!(stats.uniform, 1);
    }

    #[test]
    fn weak_below_threshold_is_absent() {
        let weak = WeakSupervision::new(table(), []);
        let mut stats = WeakStats::default();
        // sim(cup, circle) = 0.2
        let m = weak.beta("cup", &[circle_region()], 8, 2, &mut stats).unwrap();
        assert!(m.is_absent());
    }

    #[test]
    fn weak_exact_class_equals_strong() {
        let weak = WeakSupervision::new(table(), []);
        let mut stats = WeakStats::default();
        let m = weak.beta("circle", &[circle_region()], 8, 2, &mut stats).unwrap();
        let strong = strong_beta(&[circle_region().region], 8, 2).unwrap();
        assert_eq!(m, strong);
        let syn = weak.beta("ball", &[circle_region()], 8, 2, &mut stats).unwrap();
        assert_eq!(syn.weights(), strong.weights());
    }

    #[test]
    fn weak_missing_word_counts_warning() {
        let weak = WeakSupervision::new(table(), []);
        let mut stats = WeakStats::default();
        let m = weak.beta("zebra", &[circle_region()], 8, 2, &mut stats).unwrap();
        assert!(m.is_absent());
        assert_eq!(stats.missing_words, 1);
    }

    #[test]
    fn weak_overlap_takes_max_similarity() {
        let weak = WeakSupervision::new(table(), []);
        let mut stats = WeakStats::default();
        let regions = vec![
            ClassLabeledRegion {
                region: PixelBox::new(0, 0, 8, 4).into(),
                class_name: "ball".into(),
            },
            circle_region(),
        ];
        // circle cell: max(0.6, 1.0) = 1.0; neighbouring top cell: 0.6
        let m = weak.beta("circle", &regions, 8, 2, &mut stats).unwrap();
        let w = m.weights().unwrap();
        assert!((w[0] - 1.0 / 1.6).abs() < 1e-12);
        assert!((w[1] - 0.6 / 1.6).abs() < 1e-12);
        assert_eq!(&w[2..], &[0.0, 0.0]);
    }

    #[test]
    fn dump_values() {
        assert_eq!(GroundTruthMap::absent(2).to_dump_value(), serde_json::json!("A"));
        assert_eq!(GroundTruthMap::uniform(2).to_dump_value(), serde_json::json!("U"));
        assert_eq!(
            GroundTruthMap::present(vec![1.0, 0.0, 0.0, 0.0], 2).to_dump_value(),
            serde_json::json!([1.0, 0.0, 0.0, 0.0])
        );
    }
}
