//! Deterministic synthetic captioning world.
//!
//! Each image is a `g x g` grid of feature cells holding 1 to 3
//! non-overlapping rectangular objects. Captions follow a fixed grammar,
//! mention objects in reading order and optionally name the scene. Entity
//! spans carry exact pixel boxes (`16` pixels per cell).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::grid::{PixelBox, Region};
use crate::gt_attention::{EmbeddingError, EmbeddingTable};
use crate::metrics::{Lexicon, Tag};
use crate::seed::sub_seed;

pub const PIXELS_PER_CELL: usize = 16;
const MAX_PLACEMENT_TRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("inventory of {available} distinct objects cannot fill {requested} per image")]
    InventoryTooSmall { available: usize, requested: usize },
    #[error("could not place {0} non-overlapping objects")]
    Placement(usize),
    #[error("dataset line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Caption word standing in for an object class, with its embedding
/// similarity to the class name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synonym {
    pub word: String,
    pub class: String,
    pub similarity: f64,
}

/// Two class names that are similar in embedding space without being the
/// same object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatedPair {
    pub a: String,
    pub b: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub grid_side: usize,
    pub classes: Vec<String>,
    pub colors: Vec<String>,
    pub scenes: Vec<String>,
    /// Class -> caption word replacements.
    pub synonyms: Vec<Synonym>,
    pub related: Vec<RelatedPair>,
    /// Similarity between otherwise unrelated embedding entries.
    pub unrelated_similarity: f64,
    /// Probability of 1, 2 and 3 objects per image.
    pub object_count_probs: Vec<f64>,
    /// Largest object side, in cells.
    pub max_object_cells: usize,
    /// Fraction of captions ending with "in the {scene}".
    pub scene_fraction: f64,
    /// Value of an unblurred channel marking every object cell; 0 leaves
    /// the channel out.
    pub objectness: f64,
    /// Two channels holding each cell's normalized row and column.
    pub position_channels: bool,
    /// Scene one-hot on every cell when a scene is mentioned.
    pub scene_channels: bool,
    /// Extra all-noise channels.
    pub padding_channels: usize,
    /// Object channels leak into surrounding cells with weight
    /// `blur^d`, `d` the cell's Chebyshev distance to the object.
    pub feature_blur: f64,
    pub noise: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        Self {
            grid_side: 6,
            classes: s(&["circle", "square", "triangle", "diamond"]),
            colors: s(&["red", "green", "blue"]),
            scenes: s(&["kitchen", "beach", "street", "park"]),
            synonyms: vec![Synonym {
                word: "box".into(),
                class: "square".into(),
                similarity: 0.6,
            }],
            related: vec![RelatedPair {
                a: "triangle".into(),
                b: "diamond".into(),
                similarity: 0.45,
            }],
            unrelated_similarity: 0.1,
            object_count_probs: vec![0.2, 0.5, 0.3],
            max_object_cells: 3,
            scene_fraction: 0.5,
            objectness: 0.6,
            position_channels: true,
            scene_channels: true,
            padding_channels: 0,
            feature_blur: 0.95,
            noise: 0.1,
            train: 500,
            val: 50,
            test: 300,
            seed: 1,
        }
    }
}

impl WorldConfig {
    pub fn image_res(&self) -> usize {
        self.grid_side * PIXELS_PER_CELL
    }

    /// Feature width implied by the inventory and channel options.
    pub fn channels(&self) -> usize {
        self.classes.len()
            + self.colors.len()
            + (self.objectness > 0.0) as usize
            + if self.position_channels { 2 } else { 0 }
            + if self.scene_channels { self.scenes.len() } else { 0 }
            + self.padding_channels
    }

    pub fn caption_word(&self, class: &str) -> String {
        self.synonyms
            .iter()
            .find(|s| s.class == class)
            .map_or_else(|| class.to_string(), |s| s.word.clone())
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.grid_side == 0 {
            return bad("grid_side must be positive".into());
        }
        if self.classes.is_empty() || self.colors.is_empty() {
            return bad("object inventory is empty".into());
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        if !(0.0..1.0).contains(&self.feature_blur) {
            return bad(format!("feature_blur must be in [0, 1), got {}", self.feature_blur));
        }
        if !(self.objectness >= 0.0 && self.objectness.is_finite()) {
            return bad(format!("objectness must be a finite value >= 0, got {}", self.objectness));
        }
        if !(0.0..=1.0).contains(&self.scene_fraction) {
            return bad("scene_fraction must be in [0, 1]".into());
        }
        if self.scene_fraction > 0.0 && self.scenes.is_empty() {
            return bad("scene_fraction > 0 needs at least one scene".into());
        }
        let p = &self.object_count_probs;
        if p.is_empty() || p.len() > 3 || p.iter().any(|v| !(*v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("object_count_probs needs 1 to 3 nonnegative entries summing to 1".into());
        }
        if self.max_object_cells == 0 || self.max_object_cells > self.grid_side {
            return bad("max_object_cells must be in 1..=grid_side".into());
        }
        let max_objects = p.len();
        if self.classes.len() * self.colors.len() < max_objects {
            return Err(SynthError::InventoryTooSmall {
                available: self.classes.len() * self.colors.len(),
                requested: max_objects,
            });
        }
        if max_objects > self.grid_side * self.grid_side {
            return bad("grid too small for the object count".into());
        }
        let mut words = BTreeSet::new();
        for w in self
            .classes
            .iter()
            .chain(&self.colors)
            .chain(&self.scenes)
            .chain(self.synonyms.iter().map(|s| &s.word))
        {
            if !words.insert(w.as_str()) || FUNCTION_WORDS.contains(&w.as_str()) {
                return bad(format!("word {w:?} is duplicated or reserved"));
            }
        }
        let u = self.unrelated_similarity;
        if !(0.0..1.0 / 3.0).contains(&u) {
            return bad(format!("unrelated_similarity must be in [0, 1/3), got {u}"));
        }
        for s in &self.synonyms {
            if !self.classes.contains(&s.class) || !(s.similarity > 1.0 / 3.0 && s.similarity < 1.0) {
                return bad(format!("bad synonym {s:?}"));
            }
        }
        for r in &self.related {
            if !self.classes.contains(&r.a) || !self.classes.contains(&r.b) || r.a == r.b || !(r.similarity > u && r.similarity < 1.0) {
                return bad(format!("bad related pair {r:?}"));
            }
        }
        for c in &self.classes {
            let shared: f64 = self
                .related
                .iter()
                .filter(|r| &r.a == c || &r.b == c)
                .map(|r| r.similarity - u)
                .sum();
            if u + shared >= 1.0 {
                return bad(format!("similarities for {c:?} leave no room for a unit vector"));
            }
        }
        Ok(())
    }
}

const FUNCTION_WORDS: [&str; 8] = ["a", "the", "above", "left", "right", "of", "and", "in"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// An entity mention: a noun phrase aligned to an object box, or a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    /// Token range `[start, end)`.
    pub span: [usize; 2],
    #[serde(rename = "box")]
    pub bbox: Option<[usize; 4]>,
    pub class: String,
    pub is_scene: bool,
}

impl Entity {
    pub fn region(&self) -> Option<Region> {
        self.bbox.map(|[x0, y0, x1, y1]| PixelBox::new(x0, y0, x1, y1).into())
    }
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub split: Split,
    pub grid_side: usize,
    pub image_res: usize,
    /// Row-major `L x D`.
    pub features: Vec<f64>,
    pub caption: Vec<String>,
    pub entities: Vec<Entity>,
}

impl Sample {
    pub fn cells(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn channels(&self) -> usize {
        self.features.len() / self.cells().max(1)
    }

    pub fn validate(&self) -> Result<(), String> {
        let l = self.cells();
        if l == 0 || self.features.is_empty() || !self.features.len().is_multiple_of(l) {
            return Err(format!("{}: {} features do not fill {l} cells", self.id, self.features.len()));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(format!("{}: non-finite feature", self.id));
        }
        if self.caption.is_empty() {
            return Err(format!("{}: empty caption", self.id));
        }
        for e in &self.entities {
            let [s, t] = e.span;
            if s >= t || t > self.caption.len() {
                return Err(format!("{}: span {:?} outside caption", self.id, e.span));
            }
            match (e.is_scene, e.region()) {
                (true, Some(_)) => return Err(format!("{}: scene entity with a box", self.id)),
                (false, None) => return Err(format!("{}: object entity without a box", self.id)),
                (false, Some(r)) => r.validate(self.image_res).map_err(|err| format!("{}: {err}", self.id))?,
                (true, None) => {}
            }
        }
        Ok(())
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write>(mut w: W, samples: &[Sample]) -> Result<(), SynthError> {
    for s in samples {
        let line = serde_json::to_string(s).map_err(|e| SynthError::Io(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| SynthError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| SynthError::Io(e.to_string()))
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Sample>, SynthError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| SynthError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| SynthError::Parse { line: i + 1, message };
        let s: Sample = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        s.validate().map_err(parse)?;
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Exact per-category counts for `n` draws (largest remainder), so the
/// realized mix tracks the configured one to within one sample.
fn stratified_counts(probs: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let short = n - counts.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        counts[k] += 1;
    }
    counts
}

fn shuffled_labels(probs: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = stratified_counts(probs, n)
        .into_iter()
        .enumerate()
        .flat_map(|(k, c)| std::iter::repeat_n(k, c))
        .collect();
    labels.shuffle(rng);
    labels
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Placed {
    class: usize,
    color: usize,
    /// Cell rectangle, half-open.
    r0: usize,
    c0: usize,
    r1: usize,
    c1: usize,
}

impl Placed {
    fn overlaps(&self, o: &Placed) -> bool {
        self.r0 < o.r1 && o.r0 < self.r1 && self.c0 < o.c1 && o.c0 < self.c1
    }
}

fn place_objects(cfg: &WorldConfig, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Placed>, SynthError> {
    let g = cfg.grid_side;
    let mut kinds: Vec<(usize, usize)> = (0..cfg.classes.len())
        .flat_map(|k| (0..cfg.colors.len()).map(move |c| (k, c)))
        .collect();
    kinds.shuffle(rng);
    'attempt: for _ in 0..MAX_PLACEMENT_TRIES {
        let mut placed: Vec<Placed> = Vec::with_capacity(count);
        for &(class, color) in kinds.iter().take(count) {
            let h = rng.random_range(1..=cfg.max_object_cells);
            let w = rng.random_range(1..=cfg.max_object_cells);
            let r0 = rng.random_range(0..=g - h);
            let c0 = rng.random_range(0..=g - w);
            let p = Placed {
                class,
                color,
                r0,
                c0,
                r1: r0 + h,
                c1: c0 + w,
            };
            if placed.iter().any(|q| q.overlaps(&p)) {
                continue 'attempt;
            }
            placed.push(p);
        }
        // Reading order: top row first, then leftmost column.
        placed.sort_by_key(|p| (p.r0, p.c0));
        return Ok(placed);
    }
    Err(SynthError::Placement(count))
}

fn relation(first: &Placed, second: &Placed) -> &'static [&'static str] {
    if first.r1 <= second.r0 {
        &["above"]
    } else if first.c1 <= second.c0 {
        &["left", "of"]
    } else {
        &["right", "of"]
    }
}

fn make_sample(cfg: &WorldConfig, id: String, split: Split, count: usize, scene: Option<usize>, seed: u64) -> Result<Sample, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects = place_objects(cfg, count, &mut rng)?;
    let g = cfg.grid_side;
    let d = cfg.channels();
    let (nk, nc) = (cfg.classes.len(), cfg.colors.len());

    let mut features = vec![0.0; g * g * d];
    for o in &objects {
        for r in 0..g {
            for c in 0..g {
                let dist = o.r0.saturating_sub(r).max(r.saturating_sub(o.r1 - 1))
                    .max(o.c0.saturating_sub(c).max(c.saturating_sub(o.c1 - 1)));
                let w = if dist == 0 { 1.0 } else { cfg.feature_blur.powi(dist as i32) };
                if w == 0.0 {
                    continue;
                }
                let base = (r * g + c) * d;
                features[base + o.class] += w;
                features[base + nk + o.color] += w;
            }
        }
    }
    let mut off = nk + nc;
    if cfg.objectness > 0.0 {
        for o in &objects {
            for r in o.r0..o.r1 {
                for c in o.c0..o.c1 {
                    features[(r * g + c) * d + off] = cfg.objectness;
                }
            }
        }
        off += 1;
    }
    if cfg.position_channels {
        for r in 0..g {
            for c in 0..g {
                let base = (r * g + c) * d + off;
                features[base] = (r as f64 + 0.5) / g as f64 * 2.0 - 1.0;
                features[base + 1] = (c as f64 + 0.5) / g as f64 * 2.0 - 1.0;
            }
        }
        off += 2;
    }
    if cfg.scene_channels {
        if let Some(s) = scene {
            for cell in 0..g * g {
                features[cell * d + off + s] = 1.0;
            }
        }
    }
    if cfg.noise > 0.0 {
        let normal = Normal::new(0.0, cfg.noise).expect("validated noise");
        for v in &mut features {
            *v += normal.sample(&mut rng);
        }
    }

    let mut caption: Vec<String> = Vec::new();
    let mut entities = Vec::new();
    let ppc = PIXELS_PER_CELL;
    for (i, o) in objects.iter().enumerate() {
        match i {
            0 => {}
            1 => caption.extend(relation(&objects[0], o).iter().map(|w| w.to_string())),
            _ => caption.push("and".into()),
        }
        let start = caption.len();
        caption.push("a".into());
        caption.push(cfg.colors[o.color].clone());
        caption.push(cfg.caption_word(&cfg.classes[o.class]));
        entities.push(Entity {
            span: [start, caption.len()],
            bbox: Some([o.c0 * ppc, o.r0 * ppc, o.c1 * ppc, o.r1 * ppc]),
            class: cfg.classes[o.class].clone(),
            is_scene: false,
        });
    }
    if let Some(s) = scene {
        caption.push("in".into());
        let start = caption.len();
        caption.push("the".into());
        caption.push(cfg.scenes[s].clone());
        entities.push(Entity {
            span: [start, caption.len()],
            bbox: None,
            class: cfg.scenes[s].clone(),
            is_scene: true,
        });
    }
    Ok(Sample {
        id,
        split,
        grid_side: g,
        image_res: cfg.image_res(),
        features,
        caption,
        entities,
    })
}

/// Generates all three splits. Every sample draws from its own sub-seed.
pub fn generate(cfg: &WorldConfig) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let mut out = Dataset {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let mut next_id = 0usize;
    for split in Split::ALL {
        let n = match split {
            Split::Train => cfg.train,
            Split::Val => cfg.val,
            Split::Test => cfg.test,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, &format!("layout/{}", split.as_str())));
        let counts = shuffled_labels(&cfg.object_count_probs, n, &mut rng);
        let mentions = shuffled_labels(&[1.0 - cfg.scene_fraction, cfg.scene_fraction], n, &mut rng);
        let samples = match split {
            Split::Train => &mut out.train,
            Split::Val => &mut out.val,
            Split::Test => &mut out.test,
        };
        for i in 0..n {
            let id = format!("{}-{:05}", split.as_str(), next_id);
            let seed = sub_seed(cfg.seed, &format!("sample/{id}"));
            let scene = (mentions[i] == 1).then(|| (seed % cfg.scenes.len() as u64) as usize);
            samples.push(make_sample(cfg, id, split, counts[i] + 1, scene, seed)?);
            next_id += 1;
        }
    }
    Ok(out)
}

/// Unit embeddings with the configured similarity structure.
///
/// Every class and scene word shares one common component, giving the
/// unrelated similarity. Related classes additionally share a private
/// component. A synonym is its class vector scaled by the synonym
/// similarity plus an orthogonal remainder.
pub fn embedding_table(cfg: &WorldConfig) -> Result<EmbeddingTable, SynthError> {
    cfg.validate()?;
    let base: Vec<&String> = cfg.classes.iter().chain(&cfg.scenes).collect();
    let dim = 1 + base.len() + cfg.related.len() + cfg.synonyms.len();
    let u = cfg.unrelated_similarity;
    let mut vectors: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, word) in base.iter().enumerate() {
        let mut v = vec![0.0; dim];
        v[0] = u.sqrt();
        let mut rest = 1.0 - u;
        for (j, r) in cfg.related.iter().enumerate() {
            if &&r.a == word || &&r.b == word {
                v[1 + base.len() + j] = (r.similarity - u).sqrt();
                rest -= r.similarity - u;
            }
        }
        v[1 + i] = rest.sqrt();
        vectors.insert((*word).clone(), v);
    }
    for (j, s) in cfg.synonyms.iter().enumerate() {
        let class = &vectors[&s.class];
        let mut v: Vec<f64> = class.iter().map(|x| x * s.similarity).collect();
        v[1 + base.len() + cfg.related.len() + j] = (1.0 - s.similarity * s.similarity).sqrt();
        vectors.insert(s.word.clone(), v);
    }
    Ok(EmbeddingTable::new(vectors)?)
}

/// Tags for every word the grammar can produce.
pub fn lexicon(cfg: &WorldConfig) -> Lexicon {
    let mut lex = Lexicon::default();
    for w in ["a", "the"] {
        lex.insert(w, Tag::Det);
    }
    for w in ["above", "left", "right", "of", "and", "in"] {
        lex.insert(w, Tag::Other);
    }
    for c in &cfg.colors {
        lex.insert(c.clone(), Tag::Adj);
    }
    for c in &cfg.classes {
        lex.insert(cfg.caption_word(c), Tag::Noun);
    }
    for s in &cfg.scenes {
        lex.insert(s.clone(), Tag::Noun);
    }
    lex
}
