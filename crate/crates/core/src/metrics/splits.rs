use serde::{Deserialize, Serialize};

use crate::bleu::{bleu_1_to_4, BleuError, CorpusEntry};

use super::{AcRecord, MetricError};

/// Regions covering at least this share of the image count as full-image.
pub const FULL_IMAGE_FRACTION: f64 = 0.995;

/// Drops phrases whose region is (nearly) the whole image.
pub fn filter_evaluable(records: Vec<AcRecord>) -> Vec<AcRecord> {
    records
        .into_iter()
        .filter(|r| r.area_fraction < FULL_IMAGE_FRACTION)
        .collect()
}

/// Sizes of three near-equal groups; the remainder goes to earlier groups.
pub fn tercile_sizes(n: usize) -> [usize; 3] {
    let (q, r) = (n / 3, n % 3);
    [q + (r > 0) as usize, q + (r > 1) as usize, q]
}

/// Indices of `keys` in stable ascending order, cut into terciles.
fn tercile_indices(keys: &[f64]) -> [Vec<usize>; 3] {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    let sizes = tercile_sizes(keys.len());
    let mut it = order.into_iter();
    sizes.map(|s| it.by_ref().take(s).collect())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeGroup {
    /// Indices into the input records.
    pub members: Vec<usize>,
    pub mean_area: f64,
    pub mean_baseline: f64,
    pub mean_ac: f64,
}

/// Small / medium / large groups by region area fraction.
pub fn size_split(records: &[AcRecord]) -> Result<[SizeGroup; 3], MetricError> {
    if records.len() < 3 {
        return Err(MetricError::TooFew {
            need: 3,
            got: records.len(),
        });
    }
    let areas: Vec<f64> = records.iter().map(|r| r.area_fraction).collect();
    Ok(tercile_indices(&areas).map(|members| SizeGroup {
        mean_area: mean(members.iter().map(|&i| records[i].area_fraction)),
        mean_baseline: mean(members.iter().map(|&i| records[i].baseline)),
        mean_ac: mean(members.iter().map(|&i| records[i].ac)),
        members,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessGroup {
    pub members: Vec<usize>,
    pub min_ac: f64,
    pub max_ac: f64,
    pub mean_ac: f64,
    pub bleu: [f64; 4],
}

/// Low / middle / high groups by per-image mean AC, each scored with corpus
/// BLEU over its own images.
pub fn correctness_split(mean_ac: &[f64], captions: &[CorpusEntry]) -> Result<[CorrectnessGroup; 3], MetricError> {
    if mean_ac.len() != captions.len() {
        return Err(MetricError::LengthMismatch(mean_ac.len(), captions.len()));
    }
    if mean_ac.len() < 3 {
        return Err(MetricError::TooFew {
            need: 3,
            got: mean_ac.len(),
        });
    }
    let groups = tercile_indices(mean_ac);
    let mut out = Vec::with_capacity(3);
    for members in groups {
        let corpus: Vec<CorpusEntry> = members.iter().map(|&i| captions[i].clone()).collect();
        let bleu = bleu_1_to_4(&corpus).map_err(|e| match e {
            BleuError::EmptyCorpus => MetricError::TooFew { need: 1, got: 0 },
            _ => MetricError::NonFinite,
        })?;
        let acs = members.iter().map(|&i| mean_ac[i]);
        out.push(CorrectnessGroup {
            min_ac: acs.clone().fold(f64::INFINITY, f64::min),
            max_ac: acs.clone().fold(f64::NEG_INFINITY, f64::max),
            mean_ac: mean(acs),
            bleu,
            members,
        });
    }
    Ok(out.try_into().expect("three groups"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width histogram over `[lo, hi]`; the last bin is closed, values
/// outside the range are clamped into the end bins.
pub fn improvement_histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<HistogramBin> {
    assert!(bins > 0 && hi > lo);
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &v in values.iter().filter(|v| v.is_finite()) {
        let idx = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        out[idx].count += 1;
    }
    out
}
