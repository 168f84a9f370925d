use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MetricError;

const KL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// `KL(beta || alpha)`.
    #[default]
    BetaAlpha,
    /// `KL(alpha || beta)`.
    AlphaBeta,
}

impl FromStr for KlDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "beta-alpha" => Ok(KlDirection::BetaAlpha),
            "alpha-beta" => Ok(KlDirection::AlphaBeta),
            other => Err(format!("unknown KL direction {other:?} (beta-alpha|alpha-beta)")),
        }
    }
}

impl KlDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            KlDirection::BetaAlpha => "beta-alpha",
            KlDirection::AlphaBeta => "alpha-beta",
        }
    }
}

/// Negated distances between two distributions; larger is better and 0 is
/// the maximum of each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AltMetrics {
    pub neg_l1: f64,
    pub neg_l2: f64,
    pub neg_kl: f64,
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi.max(KL_FLOOR)).ln())
        .sum()
}

pub fn alt_metrics(alpha: &[f64], beta: &[f64], direction: KlDirection) -> Result<AltMetrics, MetricError> {
    if alpha.len() != beta.len() {
        return Err(MetricError::LengthMismatch(alpha.len(), beta.len()));
    }
    let (mut l1, mut l2) = (0.0, 0.0);
    for (a, b) in alpha.iter().zip(beta) {
        let d = b - a;
        l1 += d.abs();
        l2 += d * d;
    }
    let kl = match direction {
        KlDirection::BetaAlpha => kl(beta, alpha),
        KlDirection::AlphaBeta => kl(alpha, beta),
    };
    Ok(AltMetrics {
        neg_l1: -l1,
        neg_l2: -l2.sqrt(),
        neg_kl: -kl,
    })
}

/// 1-based ranks; tied values share their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman's rho as the Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    if xs.len() != ys.len() {
        return Err(MetricError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricError::TooFew { need: 2, got: xs.len() });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Constant);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
