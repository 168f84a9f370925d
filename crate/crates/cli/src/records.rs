//! Row types of the emitted CSV files. Every report is recomputed from these.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{Context, Result};
use attncorr_core::bleu::CorpusEntry;
use attncorr_core::pipeline::WordMetric;
use attncorr_core::AcRecord;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// One evaluated phrase (`ac_records_{mode}.csv`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub image_id: String,
    pub phrase: String,
    pub source: String,
    pub span_start: usize,
    pub span_end: usize,
    pub area_fraction: f64,
    pub baseline: f64,
    pub ac: f64,
    /// Per-word scores joined with `;`.
    pub word_scores: String,
}

impl From<&AcRecord> for RecordRow {
    fn from(r: &AcRecord) -> Self {
        Self {
            image_id: r.image_id.clone(),
            phrase: r.phrase.clone(),
            source: r.source.as_str().to_string(),
            span_start: r.span.start,
            span_end: r.span.end,
            area_fraction: r.area_fraction,
            baseline: r.baseline,
            ac: r.ac,
            word_scores: r.word_scores.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
        }
    }
}

impl RecordRow {
    pub fn improvement(&self) -> f64 {
        self.ac - self.baseline
    }
}

/// One evaluated word (`word_metrics_{mode}.csv`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordRow {
    pub image_id: String,
    pub timestep: usize,
    pub word: String,
    pub ac: f64,
    pub neg_l1: f64,
    pub neg_l2: f64,
    pub neg_kl: f64,
}

impl From<&WordMetric> for WordRow {
    fn from(w: &WordMetric) -> Self {
        Self {
            image_id: w.image_id.clone(),
            timestep: w.timestep,
            word: w.word.clone(),
            ac: w.ac,
            neg_l1: w.neg_l1,
            neg_l2: w.neg_l2,
            neg_kl: w.neg_kl,
        }
    }
}

/// One generated caption with its reference (`captions.csv`), tokens
/// separated by single spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRow {
    pub image_id: String,
    pub generated: String,
    pub reference: String,
}

impl CaptionRow {
    pub fn corpus_entry(&self) -> CorpusEntry {
        let toks = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
        CorpusEntry::new(toks(&self.generated), vec![toks(&self.reference)])
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes a header-only file when `rows` is empty, which `csv` would skip.
pub fn write_csv_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    if !rows.is_empty() {
        return write_csv(path, rows);
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header)?;
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("reading {}", path.display()))
}
