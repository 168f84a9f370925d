//! Dataset-level glue: supervision targets, training items, and the two
//! attention evaluation protocols.

use std::collections::BTreeSet;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::bleu::CorpusEntry;
use crate::captioner::{
    decode_forced, decode_greedy, AttentionMap, FeatureGrid, ModelError, ModelParams, SupervisionMode, TrainItem, Vocab,
};
use crate::grid::{rasterize_region, upsample, Region, RegionError};
use crate::gt_attention::{strong_beta, ClassLabeledRegion, GroundTruthMap, WeakStats, WeakSupervision};
use crate::metrics::{
    alt_metrics, extract_noun_phrases, filter_evaluable, match_generated, phrase_ac, uniform_baseline, word_ac, AcRecord,
    Aggregator, KlDirection, Lexicon, MetricError, PhraseSource, Span, Tag,
};
use crate::synth::Sample;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("sample {id}: word {word:?} is not in the vocabulary")]
    UnknownWord { id: String, word: String },
    #[error("sample {id}: {message}")]
    Sample { id: String, message: String },
    #[error("weak supervision needs an embedding table")]
    MissingEmbeddings,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Vocabulary over all training captions.
pub fn build_vocab(train: &[Sample]) -> Vocab {
    Vocab::from_captions(train.iter().map(|s| s.caption.iter()))
}

pub fn encode_caption(sample: &Sample, vocab: &Vocab) -> Result<Vec<usize>, PipelineError> {
    sample
        .caption
        .iter()
        .map(|w| {
            vocab.id(w).ok_or_else(|| PipelineError::UnknownWord {
                id: sample.id.clone(),
                word: w.clone(),
            })
        })
        .collect()
}

pub fn feature_grid(sample: &Sample) -> Result<FeatureGrid, PipelineError> {
    Ok(FeatureGrid::new(sample.grid_side, sample.channels(), sample.features.clone())?)
}

/// Scene words as they appear in the given samples.
pub fn scene_words(samples: &[Sample]) -> BTreeSet<String> {
    samples
        .iter()
        .flat_map(|s| s.entities.iter().filter(|e| e.is_scene).map(|e| e.class.clone()))
        .collect()
}

/// Per-token strong targets: every word of an object phrase gets the map of
/// its region; everything else is absent.
pub fn strong_targets(sample: &Sample) -> Result<Vec<GroundTruthMap>, PipelineError> {
    let g = sample.grid_side;
    let mut out = vec![GroundTruthMap::absent(g); sample.caption.len()];
    for e in &sample.entities {
        let Some(region) = e.region() else { continue };
        let beta = strong_beta(&[region], sample.image_res, g)?;
        for slot in &mut out[e.span[0]..e.span[1]] {
            *slot = beta.clone();
        }
    }
    Ok(out)
}

/// Per-token weak targets built for nouns only.
pub fn weak_targets(
    sample: &Sample,
    weak: &WeakSupervision,
    lexicon: &Lexicon,
    stats: &mut WeakStats,
) -> Result<Vec<GroundTruthMap>, PipelineError> {
    let g = sample.grid_side;
    let regions: Vec<ClassLabeledRegion> = sample
        .entities
        .iter()
        .filter_map(|e| {
            e.region().map(|region| ClassLabeledRegion {
                region,
                class_name: e.class.clone(),
            })
        })
        .collect();
    sample
        .caption
        .iter()
        .map(|w| {
            if lexicon.tag(w) == Some(Tag::Noun) {
                Ok(weak.beta(w, &regions, sample.image_res, g, stats)?)
            } else {
                Ok(GroundTruthMap::absent(g))
            }
        })
        .collect()
}

/// What the training items need beyond the samples themselves.
#[derive(Debug, Clone, Default)]
pub struct SupervisionInputs {
    pub weak: Option<WeakSupervision>,
    pub lexicon: Lexicon,
}

#[derive(Debug, Clone)]
pub struct PreparedItems {
    pub items: Vec<TrainItem>,
    pub weak_stats: WeakStats,
}

pub fn prepare_training(
    samples: &[Sample],
    vocab: &Vocab,
    mode: SupervisionMode,
    inputs: &SupervisionInputs,
) -> Result<PreparedItems, PipelineError> {
    let mut weak_stats = WeakStats::default();
    let mut items = Vec::with_capacity(samples.len());
    for s in samples {
        let targets = match mode {
            SupervisionMode::None => None,
            SupervisionMode::Strong => Some(strong_targets(s)?),
            SupervisionMode::Weak => {
                let weak = inputs.weak.as_ref().ok_or(PipelineError::MissingEmbeddings)?;
                Some(weak_targets(s, weak, &inputs.lexicon, &mut weak_stats)?)
            }
        };
        items.push(TrainItem {
            features: feature_grid(s)?,
            caption: encode_caption(s, vocab)?,
            targets,
        });
    }
    Ok(PreparedItems { items, weak_stats })
}

/// One JSON line per sample: `{"id": .., "targets": ["A" | "U" | [w..], ..]}`.
pub fn supervision_dump_line(sample: &Sample, targets: &[GroundTruthMap]) -> String {
    serde_json::json!({
        "id": sample.id,
        "caption": sample.caption,
        "targets": targets.iter().map(GroundTruthMap::to_dump_value).collect::<Vec<_>>(),
    })
    .to_string()
}

/// Runs `f` over `items` on all available cores, keeping input order.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionMode {
    Gt,
    Generated,
}

impl CaptionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CaptionMode::Gt => "gt",
            CaptionMode::Generated => "generated",
        }
    }
}

impl std::str::FromStr for CaptionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gt" => Ok(CaptionMode::Gt),
            "generated" => Ok(CaptionMode::Generated),
            other => Err(format!("unknown caption mode {other:?} (gt|generated)")),
        }
    }
}

/// Per-word scores of one evaluated phrase word.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordMetric {
    pub image_id: String,
    pub timestep: usize,
    pub word: String,
    pub ac: f64,
    pub neg_l1: f64,
    pub neg_l2: f64,
    pub neg_kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub image_id: String,
    /// Caption whose attention was scored (gold or generated).
    pub caption: Vec<String>,
    pub alphas: Vec<AttentionMap>,
    pub records: Vec<AcRecord>,
    pub words: Vec<WordMetric>,
}

#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub mode: CaptionMode,
    pub aggregator: Aggregator,
    pub max_len: usize,
    pub kl_direction: KlDirection,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            mode: CaptionMode::Gt,
            aggregator: Aggregator::Max,
            max_len: 24,
            kl_direction: KlDirection::BetaAlpha,
        }
    }
}

fn region_pixels(region: &Region, res: usize) -> Result<Vec<f64>, RegionError> {
    let px = rasterize_region(region, res)?;
    let total = px.sum();
    Ok(px.values().iter().map(|v| v / total).collect())
}

/// Scores one phrase given the maps of the caption that contains it.
#[allow(clippy::too_many_arguments)]
fn score_phrase(
    image_id: &str,
    caption: &[String],
    span: &Span,
    region: &Region,
    res: usize,
    alphas: &[AttentionMap],
    source: PhraseSource,
    settings: &EvalSettings,
) -> Result<(AcRecord, Vec<WordMetric>), PipelineError> {
    let beta_px = region_pixels(region, res)?;
    let mut scores = Vec::with_capacity(span.len());
    let mut words = Vec::with_capacity(span.len());
    for t in span.start..span.end {
        let ac = word_ac(&alphas[t], region, res)?;
        let alpha_px = upsample(&alphas[t].weights, alphas[t].grid_side, res)?;
        let alt = alt_metrics(alpha_px.values(), &beta_px, settings.kl_direction)?;
        scores.push(ac);
        words.push(WordMetric {
            image_id: image_id.to_string(),
            timestep: t,
            word: caption[t].clone(),
            ac,
            neg_l1: alt.neg_l1,
            neg_l2: alt.neg_l2,
            neg_kl: alt.neg_kl,
        });
    }
    let baseline = uniform_baseline(region, res)?;
    let record = AcRecord {
        image_id: image_id.to_string(),
        phrase: span.tokens(caption).join(" "),
        span: span.clone(),
        ac: phrase_ac(&scores, settings.aggregator)?,
        word_scores: scores,
        baseline,
        area_fraction: baseline,
        source,
    };
    Ok((record, words))
}

fn object_phrases(sample: &Sample) -> Vec<(Span, Region)> {
    sample
        .entities
        .iter()
        .filter_map(|e| e.region().map(|r| (Span::new(e.span[0], e.span[1]), r)))
        .collect()
}

/// Evaluates one image under the chosen caption protocol. Only evaluable
/// phrases (region not covering the whole image) are kept.
pub fn evaluate_image(
    params: &ModelParams,
    vocab: &Vocab,
    lexicon: &Lexicon,
    sample: &Sample,
    settings: &EvalSettings,
) -> Result<ImageEval, PipelineError> {
    let features = feature_grid(sample)?;
    let res = sample.image_res;
    let mut records = Vec::new();
    let mut words = Vec::new();
    let (caption, alphas) = match settings.mode {
        CaptionMode::Gt => {
            let ids = encode_caption(sample, vocab)?;
            let forced = decode_forced(params, &features, &ids)?;
            for (span, region) in object_phrases(sample) {
                let (r, w) = score_phrase(
                    &sample.id,
                    &sample.caption,
                    &span,
                    &region,
                    res,
                    &forced.alphas,
                    PhraseSource::GtCaption,
                    settings,
                )?;
                records.push(r);
                words.extend(w);
            }
            (sample.caption.clone(), forced.alphas)
        }
        CaptionMode::Generated => {
            let greedy = decode_greedy(params, &features, settings.max_len)?;
            let caption = vocab.decode(&greedy.tokens);
            let gen_nps = extract_noun_phrases(&caption, lexicon).phrases;
            let gt = object_phrases(sample);
            let gen_tokens: Vec<&[String]> = gen_nps.iter().map(|s| s.tokens(&caption)).collect();
            let gt_tokens: Vec<&[String]> = gt.iter().map(|(s, _)| s.tokens(&sample.caption)).collect();
            for (gi, ti) in match_generated(&gen_tokens, &gt_tokens) {
                let (r, w) = score_phrase(
                    &sample.id,
                    &caption,
                    &gen_nps[gi],
                    &gt[ti].1,
                    res,
                    &greedy.alphas,
                    PhraseSource::GeneratedMatch,
                    settings,
                )?;
                records.push(r);
                words.extend(w);
            }
            (caption, greedy.alphas)
        }
    };
    let kept = filter_evaluable(records);
    let spans: Vec<&Span> = kept.iter().map(|r| &r.span).collect();
    words.retain(|w| spans.iter().any(|s| (s.start..s.end).contains(&w.timestep)));
    Ok(ImageEval {
        image_id: sample.id.clone(),
        caption,
        alphas,
        records: kept,
        words,
    })
}

/// Evaluates every sample in parallel; results follow sample order.
pub fn evaluate_attention(
    params: &ModelParams,
    vocab: &Vocab,
    lexicon: &Lexicon,
    samples: &[Sample],
    settings: &EvalSettings,
) -> Result<Vec<ImageEval>, PipelineError> {
    par_map(samples, |s| evaluate_image(params, vocab, lexicon, s, settings))
        .into_iter()
        .collect()
}

/// Greedy captions paired with their single gold reference.
pub fn generate_captions(
    params: &ModelParams,
    vocab: &Vocab,
    samples: &[Sample],
    max_len: usize,
) -> Result<Vec<CorpusEntry>, PipelineError> {
    par_map(samples, |s| -> Result<CorpusEntry, PipelineError> {
        let greedy = decode_greedy(params, &feature_grid(s)?, max_len)?;
        Ok(CorpusEntry::new(vocab.decode(&greedy.tokens), vec![s.caption.clone()]))
    })
    .into_iter()
    .collect()
}

/// Mean phrase AC per image, skipping images without evaluable phrases.
pub fn per_image_mean_ac(evals: &[ImageEval]) -> Vec<(String, f64)> {
    evals
        .iter()
        .filter(|e| !e.records.is_empty())
        .map(|e| {
            let m = e.records.iter().map(|r| r.ac).sum::<f64>() / e.records.len() as f64;
            (e.image_id.clone(), m)
        })
        .collect()
}
