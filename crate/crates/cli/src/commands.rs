use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use attncorr_core::captioner::{load_checkpoint, save_checkpoint, train, Checkpoint, Dims, TrainLog};
use attncorr_core::gt_attention::WeakStats;
use attncorr_core::metrics::{attention_pgm, improvement_histogram, size_split, SizeGroup};
use attncorr_core::pipeline::{
    build_vocab, evaluate_attention, generate_captions, prepare_training, scene_words, supervision_dump_line,
    EvalSettings, SupervisionInputs,
};
use attncorr_core::synth::generate;
use attncorr_core::{bleu_1_to_4, CaptionMode, ModelParams, Split, SupervisionMode, WeakSupervision, WorldConfig};
use serde::{Deserialize, Serialize};

use crate::config::{EvalSection, RunConfig};
use crate::dataset::{feature_shape, read_embeddings, read_lexicon, read_split, write_dataset};
use crate::records::{write_csv, write_csv_with_header, CaptionRow, RecordRow, WordRow};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SUPERVISION_FILE: &str = "supervision.jsonl";
pub const RUN_CONFIG_FILE: &str = "config.toml";
pub const CAPTIONS_FILE: &str = "captions.csv";
pub const BLEU_FILE: &str = "bleu.csv";

pub fn records_file(mode: CaptionMode) -> String {
    format!("ac_records_{}.csv", mode.as_str())
}

pub fn words_file(mode: CaptionMode) -> String {
    format!("word_metrics_{}.csv", mode.as_str())
}

pub fn summary_file(mode: CaptionMode) -> String {
    format!("summary_{}.csv", mode.as_str())
}

pub fn size_split_file(mode: CaptionMode) -> String {
    format!("size_split_{}.csv", mode.as_str())
}

pub fn histogram_file(mode: CaptionMode) -> String {
    format!("histogram_{}.csv", mode.as_str())
}

const RECORD_HEADER: &[&str] = &[
    "image_id",
    "phrase",
    "source",
    "span_start",
    "span_end",
    "area_fraction",
    "baseline",
    "ac",
    "word_scores",
];
const WORD_HEADER: &[&str] = &["image_id", "timestep", "word", "ac", "neg_l1", "neg_l2", "neg_kl"];

#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub counts: [usize; 3],
    pub channels: usize,
    pub grid_side: usize,
}

pub fn gen_data(world: &WorldConfig, out: &Path) -> Result<GenSummary> {
    let data = generate(world)?;
    write_dataset(out, world, &data)?;
    Ok(GenSummary {
        counts: [data.train.len(), data.val.len(), data.test.len()],
        channels: world.channels(),
        grid_side: world.grid_side,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: TrainLog,
    pub params: ModelParams,
    pub weak_stats: Option<WeakStats>,
}

/// Trains on the dataset's train split and writes the checkpoint, the
/// per-epoch log, the resolved config and (when supervised) the targets.
pub fn train_run(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples = read_split(&cfg.dataset, Split::Train)?;
    let (channels, grid_side) = feature_shape(&samples)?;
    if let Some(d) = cfg.model.features {
        if d != channels {
            bail!("model.features = {d} but the dataset has {channels} feature channels");
        }
    }
    if let Some(g) = cfg.model.grid_side {
        if g != grid_side {
            bail!("model.grid_side = {g} but the dataset grid side is {grid_side}");
        }
    }
    let lexicon = read_lexicon(&cfg.dataset)?;
    let mode = cfg.train.supervision;
    let weak = match mode {
        SupervisionMode::Weak => Some(WeakSupervision::new(
            read_embeddings(&cfg.dataset)?,
            scene_words(&samples),
        )),
        _ => None,
    };
    let vocab = build_vocab(&samples);
    let prepared = prepare_training(&samples, &vocab, mode, &SupervisionInputs { weak, lexicon })?;

    fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    if mode != SupervisionMode::None {
        let mut dump = String::new();
        for (s, item) in samples.iter().zip(&prepared.items) {
            if let Some(t) = &item.targets {
                dump.push_str(&supervision_dump_line(s, t));
                dump.push('\n');
            }
        }
        fs::write(cfg.output.join(SUPERVISION_FILE), dump)?;
    }

    let dims = Dims {
        vocab: vocab.len(),
        embed: cfg.model.embed,
        hidden: cfg.model.hidden,
        feature: channels,
        grid_side,
    };
    let tc = cfg.train_config();
    let (params, log) = train(&prepared.items, dims, &tc)?;

    let metadata: BTreeMap<String, String> = [
        ("supervision", mode.to_string()),
        ("lambda", tc.lambda.to_string()),
        ("epochs", tc.epochs.to_string()),
        ("lr", tc.lr.to_string()),
        ("dropout", tc.dropout.to_string()),
        ("init_scale", tc.init_scale.to_string()),
        ("seed", tc.seed.to_string()),
        ("train_samples", samples.len().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let checkpoint = cfg.output.join(CHECKPOINT_FILE);
    save_checkpoint(
        &checkpoint,
        &Checkpoint {
            params: params.clone(),
            vocab,
            metadata,
        },
    )?;
    fs::write(cfg.output.join(TRAIN_LOG_FILE), log.to_csv())?;
    fs::write(cfg.output.join(RUN_CONFIG_FILE), cfg.to_toml()?)?;
    Ok(TrainOutcome {
        checkpoint,
        log,
        params,
        weak_stats: (mode == SupervisionMode::Weak).then_some(prepared.weak_stats),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub caption_mode: String,
    pub aggregator: String,
    pub images: usize,
    pub records: usize,
    pub mean_ac: f64,
    pub mean_baseline: f64,
    pub mean_improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub size: String,
    pub records: usize,
    pub mean_area: f64,
    pub mean_baseline: f64,
    pub mean_ac: f64,
}

pub const SIZE_NAMES: [&str; 3] = ["small", "medium", "large"];

pub fn size_rows(groups: &[SizeGroup; 3]) -> Vec<SizeRow> {
    groups
        .iter()
        .zip(SIZE_NAMES)
        .map(|(g, name)| SizeRow {
            size: name.to_string(),
            records: g.members.len(),
            mean_area: g.mean_area,
            mean_baseline: g.mean_baseline,
            mean_ac: g.mean_ac,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

pub fn histogram_rows(improvements: &[f64], bins: usize) -> Vec<HistogramRow> {
    improvement_histogram(improvements, bins, -1.0, 1.0)
        .into_iter()
        .map(|b| HistogramRow {
            bin_lo: b.lo,
            bin_hi: b.hi,
            count: b.count,
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn summarize(rows: &[RecordRow], images: usize, mode: CaptionMode, aggregator: &str) -> AttentionSummary {
    let mean_ac = mean(rows.iter().map(|r| r.ac));
    let mean_baseline = mean(rows.iter().map(|r| r.baseline));
    AttentionSummary {
        caption_mode: mode.as_str().to_string(),
        aggregator: aggregator.to_string(),
        images,
        records: rows.len(),
        mean_ac,
        mean_baseline,
        mean_improvement: mean_ac - mean_baseline,
    }
}

fn load_model(checkpoint: &Path) -> Result<Checkpoint> {
    load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))
}

fn safe_file_part(word: &str) -> String {
    word.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

/// Scores attention on one split and writes per-record, per-word, summary,
/// size-split and histogram CSVs plus PGM maps for the first few images.
pub fn eval_attention(checkpoint: &Path, dataset: &Path, out: &Path, opts: &EvalSection) -> Result<AttentionSummary> {
    let ckpt = load_model(checkpoint)?;
    let lexicon = read_lexicon(dataset)?;
    let mut samples = read_split(dataset, opts.split)?;
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    let settings = EvalSettings {
        mode: opts.caption_mode,
        aggregator: opts.aggregator,
        max_len: opts.max_len,
        kl_direction: opts.kl_direction,
    };
    let evals = evaluate_attention(&ckpt.params, &ckpt.vocab, &lexicon, &samples, &settings)?;

    let mode = opts.caption_mode;
    let mut records: Vec<RecordRow> = Vec::new();
    let mut words: Vec<WordRow> = Vec::new();
    for e in &evals {
        let mut rs: Vec<RecordRow> = e.records.iter().map(RecordRow::from).collect();
        rs.sort_by_key(|r| r.span_start);
        records.extend(rs);
        let mut ws: Vec<WordRow> = e.words.iter().map(WordRow::from).collect();
        ws.sort_by_key(|w| w.timestep);
        words.extend(ws);
    }

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_csv_with_header(&out.join(records_file(mode)), RECORD_HEADER, &records)?;
    write_csv_with_header(&out.join(words_file(mode)), WORD_HEADER, &words)?;
    let summary = summarize(&records, evals.len(), mode, opts.aggregator.as_str());
    write_csv(&out.join(summary_file(mode)), std::slice::from_ref(&summary))?;
    let core_records: Vec<_> = evals.iter().flat_map(|e| e.records.iter().cloned()).collect();
    let sizes = match size_split(&core_records) {
        Ok(groups) => size_rows(&groups),
        Err(_) => Vec::new(),
    };
    write_csv_with_header(
        &out.join(size_split_file(mode)),
        &["size", "records", "mean_area", "mean_baseline", "mean_ac"],
        &sizes,
    )?;
    let improvements: Vec<f64> = records.iter().map(RecordRow::improvement).collect();
    write_csv(
        &out.join(histogram_file(mode)),
        &histogram_rows(&improvements, opts.histogram_bins),
    )?;

    if opts.pgm_images > 0 {
        let maps = out.join(format!("maps_{}", mode.as_str()));
        fs::create_dir_all(&maps)?;
        for (e, s) in evals.iter().zip(&samples).take(opts.pgm_images) {
            for (t, alpha) in e.alphas.iter().enumerate() {
                let word = e.caption.get(t).map_or("eos", String::as_str);
                let name = format!("{}_{t:02}_{}.pgm", e.image_id, safe_file_part(word));
                fs::write(maps.join(name), attention_pgm(alpha, s.image_res)?)?;
            }
        }
    }
    Ok(summary)
}

/// Greedy captions for one split, scored with corpus BLEU-1..4.
pub fn eval_captions(checkpoint: &Path, dataset: &Path, out: &Path, split: Split, max_len: usize) -> Result<[f64; 4]> {
    let ckpt = load_model(checkpoint)?;
    let mut samples = read_split(dataset, split)?;
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    let corpus = generate_captions(&ckpt.params, &ckpt.vocab, &samples, max_len)?;
    let rows: Vec<CaptionRow> = samples
        .iter()
        .zip(&corpus)
        .map(|(s, c)| CaptionRow {
            image_id: s.id.clone(),
            generated: c.candidate.join(" "),
            reference: s.caption.join(" "),
        })
        .collect();
    let scores = bleu_1_to_4(&corpus)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_csv_with_header(&out.join(CAPTIONS_FILE), &["image_id", "generated", "reference"], &rows)?;
    write_csv(&out.join(BLEU_FILE), &[BleuRow::new(rows.len(), scores)])?;
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuRow {
    pub images: usize,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
}

impl BleuRow {
    pub fn new(images: usize, b: [f64; 4]) -> Self {
        Self {
            images,
            bleu1: b[0],
            bleu2: b[1],
            bleu3: b[2],
            bleu4: b[3],
        }
    }
}
