//! Corpus-level BLEU with clipped n-gram counts and the brevity penalty
//! taken against the closest reference length. No smoothing.

use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl CorpusEntry {
    pub fn new(candidate: Vec<String>, references: Vec<Vec<String>>) -> Self {
        Self { candidate, references }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BleuError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("corpus entry {0} has no reference")]
    NoReference(usize),
    #[error("n_max must be in 1..=4, got {0}")]
    Order(usize),
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sufficient statistics of a corpus: clipped matches and candidate n-gram
/// totals for n = 1..=4, plus candidate and effective reference lengths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn of_entry(entry: &CorpusEntry) -> Self {
        let c = entry.candidate.len();
        let mut s = BleuStats {
            candidate_len: c,
            // Closest reference length; ties go to the shorter one.
            reference_len: entry
                .references
                .iter()
                .map(Vec::len)
                .min_by_key(|&r| (r.abs_diff(c), r))
                .unwrap_or(0),
            ..Default::default()
        };
        for n in 1..=4 {
            let cand = ngram_counts(&entry.candidate, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &entry.references {
                for (g, k) in ngram_counts(r, n) {
                    let slot = max_ref.entry(g).or_insert(0);
                    *slot = (*slot).max(k);
                }
            }
            s.totals[n - 1] = entry.candidate.len().saturating_sub(n - 1);
            s.matches[n - 1] = cand
                .iter()
                .map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..4 {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    pub fn score(&self, n_max: usize) -> Result<f64, BleuError> {
        if !(1..=4).contains(&n_max) {
            return Err(BleuError::Order(n_max));
        }
        let mut log_sum = 0.0;
        for n in 0..n_max {
            if self.matches[n] == 0 || self.totals[n] == 0 {
                return Ok(0.0);
            }
            log_sum += (self.matches[n] as f64 / self.totals[n] as f64).ln();
        }
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        Ok((log_sum / n_max as f64).exp() * bp)
    }
}

fn corpus_stats(corpus: &[CorpusEntry]) -> Result<BleuStats, BleuError> {
    if corpus.is_empty() {
        return Err(BleuError::EmptyCorpus);
    }
    let mut total = BleuStats::default();
    for (i, e) in corpus.iter().enumerate() {
        if e.references.is_empty() {
            return Err(BleuError::NoReference(i));
        }
        total.add(&BleuStats::of_entry(e));
    }
    Ok(total)
}

pub fn bleu(corpus: &[CorpusEntry], n_max: usize) -> Result<f64, BleuError> {
    corpus_stats(corpus)?.score(n_max)
}

/// BLEU-1 through BLEU-4.
pub fn bleu_1_to_4(corpus: &[CorpusEntry]) -> Result<[f64; 4], BleuError> {
    let stats = corpus_stats(corpus)?;
    let mut out = [0.0; 4];
    for (n, slot) in out.iter_mut().enumerate() {
        *slot = stats.score(n + 1)?;
    }
    Ok(out)
}
