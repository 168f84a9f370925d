//! Joins evaluated run directories into the comparison tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use attncorr_core::bleu::CorpusEntry;
use attncorr_core::metrics::{correctness_split, size_split, spearman, PhraseSource, Span};
use attncorr_core::{bleu_1_to_4, AcRecord, CaptionMode};
use serde::{Deserialize, Serialize};

use crate::commands::{histogram_rows, records_file, size_rows, words_file, CAPTIONS_FILE};
use crate::records::{read_csv, write_csv, CaptionRow, RecordRow, WordRow};

/// `NAME=DIR`, or a bare `DIR` named after its last component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunInput {
    pub name: String,
    pub dir: PathBuf,
}

impl FromStr for RunInput {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((name, dir)) = s.split_once('=') {
            if name.is_empty() || dir.is_empty() {
                return Err(format!("bad run spec {s:?}, expected NAME=DIR"));
            }
            return Ok(Self {
                name: name.to_string(),
                dir: PathBuf::from(dir),
            });
        }
        let dir = PathBuf::from(s);
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| format!("cannot name run {s:?}; use NAME=DIR"))?;
        Ok(Self { name, dir })
    }
}

/// Per-record outputs of one evaluated run.
#[derive(Debug, Clone)]
pub struct RunData {
    pub name: String,
    pub records_gt: Vec<RecordRow>,
    pub records_generated: Option<Vec<RecordRow>>,
    pub words_gt: Vec<WordRow>,
    pub captions: Vec<CaptionRow>,
}

pub fn load_run(input: &RunInput) -> Result<RunData> {
    let dir = &input.dir;
    if !dir.is_dir() {
        bail!("run directory {} does not exist", dir.display());
    }
    let generated = dir.join(records_file(CaptionMode::Generated));
    let run = RunData {
        name: input.name.clone(),
        records_gt: read_csv(&dir.join(records_file(CaptionMode::Gt)))?,
        records_generated: if generated.exists() {
            Some(read_csv(&generated)?)
        } else {
            None
        },
        words_gt: read_csv(&dir.join(words_file(CaptionMode::Gt)))?,
        captions: read_csv(&dir.join(CAPTIONS_FILE))?,
    };
    let ids: BTreeSet<&str> = run.captions.iter().map(|c| c.image_id.as_str()).collect();
    let all_records = run.records_gt.iter().chain(run.records_generated.iter().flatten());
    if let Some(r) = all_records.into_iter().find(|r| !ids.contains(r.image_id.as_str())) {
        bail!(
            "run {}: record for image {} has no caption in {}",
            run.name,
            r.image_id,
            CAPTIONS_FILE
        );
    }
    Ok(run)
}

/// Rebuilds the core record type from a CSV row.
pub fn to_ac_record(row: &RecordRow) -> Result<AcRecord> {
    let source = match row.source.as_str() {
        "gt_caption" => PhraseSource::GtCaption,
        "generated_match" => PhraseSource::GeneratedMatch,
        other => bail!("unknown phrase source {other:?}"),
    };
    let word_scores = row
        .word_scores
        .split(';')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| anyhow!("bad word score {s:?}: {e}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(AcRecord {
        image_id: row.image_id.clone(),
        phrase: row.phrase.clone(),
        span: Span::new(row.span_start, row.span_end),
        word_scores,
        ac: row.ac,
        baseline: row.baseline,
        area_fraction: row.area_fraction,
        source,
    })
}

/// Mean phrase AC per image for images with at least one record.
pub fn image_mean_ac(records: &[RecordRow]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.image_id.clone()).or_default();
        e.0 += r.ac;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Per-image mean AC paired with that image's caption, in image-id order.
pub fn correctness_inputs(records: &[RecordRow], captions: &[CaptionRow]) -> Result<(Vec<f64>, Vec<CorpusEntry>)> {
    let by_id: BTreeMap<&str, &CaptionRow> = captions.iter().map(|c| (c.image_id.as_str(), c)).collect();
    let mut acs = Vec::new();
    let mut corpus = Vec::new();
    for (id, ac) in image_mean_ac(records) {
        let cap = by_id
            .get(id.as_str())
            .ok_or_else(|| anyhow!("image {id} has records but no caption"))?;
        acs.push(ac);
        corpus.push(cap.corpus_entry());
    }
    Ok((acs, corpus))
}

pub const METRIC_NAMES: [&str; 4] = ["ac", "neg_l1", "neg_l2", "neg_kl"];

/// Spearman correlation for every pair of word-level metrics; `NaN` where
/// a column is constant.
pub fn spearman_pairs(words: &[WordRow]) -> Vec<(&'static str, &'static str, f64)> {
    let cols: [Vec<f64>; 4] = [
        words.iter().map(|w| w.ac).collect(),
        words.iter().map(|w| w.neg_l1).collect(),
        words.iter().map(|w| w.neg_l2).collect(),
        words.iter().map(|w| w.neg_kl).collect(),
    ];
    let mut out = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            let rho = spearman(&cols[i], &cols[j]).unwrap_or(f64::NAN);
            out.push((METRIC_NAMES[i], METRIC_NAMES[j], rho));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub model: String,
    pub caption_mode: String,
    pub records: usize,
    pub mean_baseline: f64,
    pub mean_ac: f64,
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub model: String,
    pub size: String,
    pub records: usize,
    pub mean_area: f64,
    pub mean_baseline: f64,
    pub mean_ac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Row {
    pub model: String,
    pub images: usize,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table4Row {
    pub model: String,
    pub group: String,
    pub images: usize,
    pub min_ac: f64,
    pub max_ac: f64,
    pub mean_ac: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanRow {
    pub model: String,
    pub metric_a: String,
    pub metric_b: String,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHistogramRow {
    pub model: String,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub table1: Vec<Table1Row>,
    pub table2: Vec<Table2Row>,
    pub table3: Vec<Table3Row>,
    pub table4: Vec<Table4Row>,
    pub spearman: Vec<SpearmanRow>,
    pub histogram: Vec<ModelHistogramRow>,
}

pub const CORRECTNESS_NAMES: [&str; 3] = ["low", "middle", "high"];

fn table1_row(model: &str, mode: CaptionMode, rows: &[RecordRow]) -> Table1Row {
    let n = rows.len() as f64;
    let mean_ac = rows.iter().map(|r| r.ac).sum::<f64>() / n;
    let mean_baseline = rows.iter().map(|r| r.baseline).sum::<f64>() / n;
    Table1Row {
        model: model.to_string(),
        caption_mode: mode.as_str().to_string(),
        records: rows.len(),
        mean_baseline,
        mean_ac,
        improvement: mean_ac - mean_baseline,
    }
}

/// Fails unless every run evaluated the same set of images.
pub fn check_same_images(runs: &[RunData]) -> Result<()> {
    let Some(first) = runs.first() else {
        bail!("report needs at least one run");
    };
    let ids = |r: &RunData| r.captions.iter().map(|c| c.image_id.clone()).collect::<BTreeSet<_>>();
    let reference = ids(first);
    for run in &runs[1..] {
        let other = ids(run);
        if other != reference {
            let diff = reference.symmetric_difference(&other).next().cloned().unwrap_or_default();
            bail!(
                "runs {} and {} were evaluated on different images (e.g. {diff})",
                first.name,
                run.name
            );
        }
    }
    Ok(())
}

pub fn build_report(runs: &[RunData], bins: usize) -> Result<Report> {
    check_same_images(runs)?;
    let mut rep = Report::default();
    for run in runs {
        let m = run.name.as_str();
        if !run.records_gt.is_empty() {
            rep.table1.push(table1_row(m, CaptionMode::Gt, &run.records_gt));
        }
        if let Some(gen) = run.records_generated.as_deref().filter(|g| !g.is_empty()) {
            rep.table1.push(table1_row(m, CaptionMode::Generated, gen));
        }

        let core: Vec<AcRecord> = run.records_gt.iter().map(to_ac_record).collect::<Result<_>>()?;
        if let Ok(groups) = size_split(&core) {
            rep.table2.extend(size_rows(&groups).into_iter().map(|s| Table2Row {
                model: m.to_string(),
                size: s.size,
                records: s.records,
                mean_area: s.mean_area,
                mean_baseline: s.mean_baseline,
                mean_ac: s.mean_ac,
            }));
        }

        let corpus: Vec<CorpusEntry> = run.captions.iter().map(CaptionRow::corpus_entry).collect();
        let b = bleu_1_to_4(&corpus).with_context(|| format!("BLEU for run {m}"))?;
        rep.table3.push(Table3Row {
            model: m.to_string(),
            images: corpus.len(),
            bleu1: b[0],
            bleu2: b[1],
            bleu3: b[2],
            bleu4: b[3],
        });

        let split_records = run.records_generated.as_deref().unwrap_or(&run.records_gt);
        let (acs, caps) = correctness_inputs(split_records, &run.captions)?;
        if let Ok(groups) = correctness_split(&acs, &caps) {
            for (g, name) in groups.iter().zip(CORRECTNESS_NAMES) {
                rep.table4.push(Table4Row {
                    model: m.to_string(),
                    group: name.to_string(),
                    images: g.members.len(),
                    min_ac: g.min_ac,
                    max_ac: g.max_ac,
                    mean_ac: g.mean_ac,
                    bleu1: g.bleu[0],
                    bleu2: g.bleu[1],
                    bleu3: g.bleu[2],
                    bleu4: g.bleu[3],
                });
            }
        }

        for (a, b, rho) in spearman_pairs(&run.words_gt) {
            rep.spearman.push(SpearmanRow {
                model: m.to_string(),
                metric_a: a.to_string(),
                metric_b: b.to_string(),
                rho,
            });
        }

        let improvements: Vec<f64> = run.records_gt.iter().map(RecordRow::improvement).collect();
        rep.histogram.extend(histogram_rows(&improvements, bins).into_iter().map(|h| ModelHistogramRow {
            model: m.to_string(),
            bin_lo: h.bin_lo,
            bin_hi: h.bin_hi,
            count: h.count,
        }));
    }
    Ok(rep)
}

pub fn write_report(rep: &Report, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_csv(&out.join("table1.csv"), &rep.table1)?;
    write_csv(&out.join("table2.csv"), &rep.table2)?;
    write_csv(&out.join("table3.csv"), &rep.table3)?;
    write_csv(&out.join("table4.csv"), &rep.table4)?;
    write_csv(&out.join("spearman.csv"), &rep.spearman)?;
    write_csv(&out.join("histogram.csv"), &rep.histogram)?;
    Ok(())
}

pub fn report(inputs: &[RunInput], out: &Path, bins: usize) -> Result<Report> {
    let runs: Vec<RunData> = inputs.iter().map(load_run).collect::<Result<_>>()?;
    let rep = build_report(&runs, bins)?;
    write_report(&rep, out)?;
    Ok(rep)
}
