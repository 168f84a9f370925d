use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, Tensor};
use crate::gt_attention::GroundTruthMap;
use crate::seed::sub_seed;

use super::model::{total_loss_graph, LossBreakdown, ParamNodes};
use super::{Adam, AdamConfig, Dims, FeatureGrid, ModelError, ModelParams};

/// Source of attention targets during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupervisionMode {
    /// Caption loss only (implicit attention).
    None,
    Strong,
    Weak,
}

impl SupervisionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SupervisionMode::None => "none",
            SupervisionMode::Strong => "strong",
            SupervisionMode::Weak => "weak",
        }
    }
}

impl FromStr for SupervisionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" | "implicit" => Ok(SupervisionMode::None),
            "strong" => Ok(SupervisionMode::Strong),
            "weak" => Ok(SupervisionMode::Weak),
            other => Err(format!("unknown supervision mode {other:?} (none|strong|weak)")),
        }
    }
}

impl std::fmt::Display for SupervisionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub supervision: SupervisionMode,
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Half-width of the uniform initialization interval.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            supervision: SupervisionMode::None,
            epochs: 10,
            lr: 1e-3,
            dropout: 0.0,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    /// Weight actually applied to the attention term.
    pub fn effective_lambda(&self) -> f64 {
        match self.supervision {
            SupervisionMode::None => 0.0,
            _ => self.lambda,
        }
    }
}

/// One training caption with its (optional) per-word attention targets.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub features: FeatureGrid,
    /// Word ids without BOS/EOS.
    pub caption: Vec<usize>,
    pub targets: Option<Vec<GroundTruthMap>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean over samples of the summed caption loss.
    pub caption_loss: f64,
    /// Mean over samples of the summed, unweighted attention loss.
    pub attention_loss: f64,
    /// Target cells where the attention log floor was hit.
    pub clamped: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,caption_loss,attention_loss,clamped\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{}",
                e.epoch, e.caption_loss, e.attention_loss, e.clamped
            )
            .unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}, step {step} (sample {sample}): {reason}")]
    Diverged {
        epoch: usize,
        step: usize,
        sample: usize,
        reason: String,
    },
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Trains a decoder from scratch with Adam, one caption per update.
///
/// All randomness comes from `config.seed` through named sub-seeds
/// (`init`, `order`, `dropout`), so a run is replayable.
pub fn train(items: &[TrainItem], dims: Dims, config: &TrainConfig) -> Result<(ModelParams, TrainLog), TrainError> {
    if items.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if !(0.0..1.0).contains(&config.dropout) {
        return Err(TrainError::Config(format!("dropout must be in [0, 1), got {}", config.dropout)));
    }
    if !(config.lr >= 0.0) || !(config.lambda >= 0.0) {
        return Err(TrainError::Config("lr and lambda must be >= 0".into()));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, "init"));
    let mut order_rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, "order"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, "dropout"));

    let mut params = ModelParams::random(dims, config.init_scale, &mut init_rng)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &params,
    );
    let lambda = config.effective_lambda();
    let keep = 1.0 - config.dropout;

    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let (mut cap_sum, mut attn_sum, mut clamped) = (0.0, 0.0, 0);
        for &idx in &order {
            let item = &items[idx];
            let masks: Option<Vec<Tensor>> = (config.dropout > 0.0).then(|| {
                (0..=item.caption.len())
                    .map(|_| {
                        let m = (0..dims.hidden)
                            .map(|_| {
                                if dropout_rng.random::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        Tensor::row(m).expect("finite mask")
                    })
                    .collect()
            });
            let diverged = |reason: String| TrainError::Diverged {
                epoch,
                step,
                sample: idx,
                reason,
            };
            let targets = if lambda > 0.0 { item.targets.as_deref() } else { None };

            let mut g = Graph::with_capacity(64 * (item.caption.len() + 1));
            let p = ParamNodes::register(&mut g, &params);
            let nodes = match total_loss_graph(
                &mut g,
                &p,
                &item.features,
                &item.caption,
                targets,
                lambda,
                masks.as_deref(),
            ) {
                Ok(n) => n,
                Err(ModelError::Autodiff(e @ AutodiffError::NonFinite { .. })) => {
                    return Err(diverged(e.to_string()))
                }
                Err(e) => return Err(e.into()),
            };
            let breakdown = LossBreakdown::read(&g, &nodes);
            let mut grads = g.backward(nodes.total).map_err(ModelError::from)?;
            let grads: Vec<Tensor> = p.ids().iter().map(|&id| grads.take(id)).collect();
            if grads.iter().any(|t| !t.all_finite()) {
                return Err(diverged("non-finite gradient".into()));
            }
            adam.step(&mut params, &grads);
            if params.tensors().iter().any(|t| !t.all_finite()) {
                return Err(diverged("non-finite parameter after update".into()));
            }

            cap_sum += breakdown.caption;
            attn_sum += breakdown.attention;
            clamped += breakdown.clamped;
            step += 1;
        }
        let n = items.len() as f64;
        log.epochs.push(EpochStats {
            epoch,
            caption_loss: cap_sum / n,
            attention_loss: attn_sum / n,
            clamped,
        });
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> Dims {
        Dims {
            vocab: 6,
            embed: 4,
            hidden: 6,
            feature: 3,
            grid_side: 2,
        }
    }

    fn item() -> TrainItem {
        TrainItem {
            features: FeatureGrid::new(2, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 0.]).unwrap(),
            caption: vec![2, 3, 4, 5],
            targets: Some(vec![
                GroundTruthMap::absent(2),
                GroundTruthMap::present(vec![1.0, 0.0, 0.0, 0.0], 2),
                GroundTruthMap::present(vec![0.0, 0.0, 1.0, 0.0], 2),
                GroundTruthMap::uniform(2),
            ]),
        }
    }

    #[test]
    fn zero_lr_keeps_init() {
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 3,
            seed: 11,
            ..Default::default()
        };
        let (params, log) = train(&[item()], dims(), &cfg).unwrap();
        let init = ModelParams::random(
            dims(),
            cfg.init_scale,
            &mut ChaCha8Rng::seed_from_u64(sub_seed(11, "init")),
        )
        .unwrap();
        assert_eq!(params, init);
        assert_eq!(log.epochs.len(), 3);
    }

    #[test]
    fn overfits_single_sample() {
        let cfg = TrainConfig {
            lr: 0.02,
            epochs: 60,
            seed: 3,
            ..Default::default()
        };
        let (_, log) = train(&[item()], dims(), &cfg).unwrap();
        let first = log.epochs[0].caption_loss;
        let last = log.epochs.last().unwrap().caption_loss;
        assert!(last < 0.1 * first, "{first} -> {last}");
    }

    #[test]
    fn none_mode_equals_lambda_zero() {
        let base = TrainConfig {
            lr: 0.01,
            epochs: 4,
            seed: 5,
            dropout: 0.3,
            ..Default::default()
        };
        let none = train(&[item(), item()], dims(), &base).unwrap();
        let strong0 = train(
            &[item(), item()],
            dims(),
            &TrainConfig {
                supervision: SupervisionMode::Strong,
                lambda: 0.0,
                ..base.clone()
            },
        )
        .unwrap();
        assert_eq!(none.1, strong0.1);
        assert_eq!(none.0, strong0.0);
        assert_eq!(none.1.to_csv(), strong0.1.to_csv());
    }

    #[test]
    fn strong_supervision_lowers_attention_loss() {
        let cfg = TrainConfig {
            lr: 0.02,
            epochs: 40,
            seed: 8,
            supervision: SupervisionMode::Strong,
            ..Default::default()
        };
        let (_, log) = train(&[item()], dims(), &cfg).unwrap();
        let first = log.epochs[0].attention_loss;
        let last = log.epochs.last().unwrap().attention_loss;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn replay_is_deterministic() {
        let cfg = TrainConfig {
            lr: 0.01,
            epochs: 3,
            seed: 21,
            dropout: 0.5,
            supervision: SupervisionMode::Strong,
            ..Default::default()
        };
        let a = train(&[item(), item(), item()], dims(), &cfg).unwrap();
        let b = train(&[item(), item(), item()], dims(), &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            lr: 1e6,
            epochs: 50,
            seed: 1,
            init_scale: 5.0,
            ..Default::default()
        };
        // A huge learning rate either blows up or saturates; whichever
        // happens first, training must not silently produce NaN params.
        match train(&[item()], dims(), &cfg) {
            Ok((params, _)) => assert!(params.tensors().iter().all(Tensor::all_finite)),
            Err(TrainError::Diverged { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert_eq!(train(&[], dims(), &TrainConfig::default()).unwrap_err(), TrainError::EmptyDataset);
        let cfg = TrainConfig {
            dropout: 1.0,
            ..Default::default()
        };
        assert!(matches!(train(&[item()], dims(), &cfg), Err(TrainError::Config(_))));
    }
}
