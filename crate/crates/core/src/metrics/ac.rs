use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::captioner::AttentionMap;
use crate::grid::{cell_coverage, rasterize_region, Region};

use super::MetricError;

/// Fraction of attention mass inside `region` after resampling the map to
/// `res x res` pixels.
///
/// Computed as `sum_cells alpha_cell * covered_fraction(cell)` on the
/// renormalized map, which equals upsample-then-sum exactly.
pub fn word_ac(alpha: &AttentionMap, region: &Region, res: usize) -> Result<f64, MetricError> {
    let g = alpha.grid_side;
    if alpha.weights.len() != g * g {
        return Err(MetricError::CellCount {
            got: alpha.weights.len(),
            expected: g * g,
        });
    }
    let coverage = cell_coverage(&rasterize_region(region, res)?, g)?;
    let total = alpha.total();
    if !(total > 0.0) || !total.is_finite() {
        return Err(MetricError::NonFinite);
    }
    let inside: f64 = alpha.weights.iter().zip(&coverage).map(|(a, c)| a * c).sum();
    Ok((inside / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Max,
    Mean,
}

impl Aggregator {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregator::Max => "max",
            Aggregator::Mean => "mean",
        }
    }
}

impl FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Aggregator::Max),
            "mean" => Ok(Aggregator::Mean),
            other => Err(format!("unknown aggregator {other:?} (max|mean)")),
        }
    }
}

pub fn phrase_ac(scores: &[f64], agg: Aggregator) -> Result<f64, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::TooFew { need: 1, got: 0 });
    }
    Ok(match agg {
        Aggregator::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregator::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
    })
}

/// AC of a uniform map: the region's share of the image.
pub fn uniform_baseline(region: &Region, res: usize) -> Result<f64, MetricError> {
    region.validate(res)?;
    Ok(region.pixel_count() as f64 / (res * res) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PixelBox;

    #[test]
    fn one_hot_inside_region() {
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let a = AttentionMap {
            weights: w,
            grid_side: 3,
        };
        let r: Region = PixelBox::new(16, 16, 40, 48).into();
        assert_eq!(word_ac(&a, &r, 48).unwrap(), 1.0);
    }

    #[test]
    fn uniform_map_gives_area_fraction() {
        let a = AttentionMap::uniform(4);
        let r: Region = PixelBox::new(0, 0, 32, 64).into();
        assert!((word_ac(&a, &r, 64).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(uniform_baseline(&r, 64).unwrap(), 0.5);
        assert_eq!(uniform_baseline(&PixelBox::full(64).into(), 64).unwrap(), 1.0);
    }

    #[test]
    fn phrase_aggregation() {
        assert_eq!(phrase_ac(&[0.3, 0.54], Aggregator::Max).unwrap(), 0.54);
        assert!((phrase_ac(&[0.2, 0.4], Aggregator::Mean).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(phrase_ac(&[0.7], Aggregator::Mean).unwrap(), 0.7);
        assert!(phrase_ac(&[], Aggregator::Max).is_err());
    }

    #[test]
    fn wrong_cell_count() {
        let a = AttentionMap {
            weights: vec![1.0; 3],
            grid_side: 2,
        };
        assert!(word_ac(&a, &PixelBox::full(4).into(), 4).is_err());
    }
}
