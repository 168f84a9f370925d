use crate::autodiff::Graph;

use super::model::{init_state, run_step, StepOutput, StepState};
use super::{AttentionMap, FeatureGrid, ModelError, ModelParams, ParamNodes, Vocab};

/// Teacher-forced decode of a gold caption.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcedDecode {
    /// One map per caption word.
    pub alphas: Vec<AttentionMap>,
    /// One distribution per caption word.
    pub word_logprobs: Vec<Vec<f64>>,
}

/// Greedy decode from BOS.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyDecode {
    /// Generated ids without BOS/EOS.
    pub tokens: Vec<usize>,
    /// One map per generated token.
    pub alphas: Vec<AttentionMap>,
}

/// Feeds the gold word at every step and records the attention used to
/// predict each caption word. The EOS step is not run.
pub fn decode_forced(params: &ModelParams, features: &FeatureGrid, caption: &[usize]) -> Result<ForcedDecode, ModelError> {
    let mut g = Graph::with_capacity(64 * (caption.len() + 1));
    let p = ParamNodes::register(&mut g, params);
    let st = StepState::new(&mut g, &p, features)?;
    let (mut h, mut c) = init_state(&mut g, &p, features)?;
    let mut out = ForcedDecode {
        alphas: Vec::with_capacity(caption.len()),
        word_logprobs: Vec::with_capacity(caption.len()),
    };
    for t in 0..caption.len() {
        let y_prev = if t == 0 { Vocab::BOS } else { caption[t - 1] };
        let nodes = run_step(&mut g, &p, &st, y_prev, h, c, None)?;
        let step = StepOutput::read(&g, &nodes, features.grid_side());
        out.alphas.push(step.alpha);
        out.word_logprobs.push(step.word_logprobs);
        h = nodes.h;
        c = nodes.c;
    }
    Ok(out)
}

/// Argmax decoding; BOS is never emitted and ties go to the lowest id.
pub fn decode_greedy(params: &ModelParams, features: &FeatureGrid, max_len: usize) -> Result<GreedyDecode, ModelError> {
    if max_len == 0 {
        return Err(ModelError::InvalidArgument("max_len must be >= 1".into()));
    }
    let mut g = Graph::with_capacity(64 * (max_len + 1));
    let p = ParamNodes::register(&mut g, params);
    let st = StepState::new(&mut g, &p, features)?;
    let (mut h, mut c) = init_state(&mut g, &p, features)?;
    let mut out = GreedyDecode {
        tokens: Vec::new(),
        alphas: Vec::new(),
    };
    let mut y_prev = Vocab::BOS;
    while out.tokens.len() < max_len {
        let nodes = run_step(&mut g, &p, &st, y_prev, h, c, None)?;
        let lp = g.value(nodes.logprobs).data();
        let mut best = Vocab::EOS;
        for (id, &v) in lp.iter().enumerate().skip(Vocab::EOS + 1) {
            if v > lp[best] {
                best = id;
            }
        }
        if best == Vocab::EOS {
            break;
        }
        out.tokens.push(best);
        out.alphas.push(AttentionMap {
            weights: g.value(nodes.alpha).data().to_vec(),
            grid_side: features.grid_side(),
        });
        y_prev = best;
        h = nodes.h;
        c = nodes.c;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::captioner::model::total_loss_graph;
    use crate::captioner::{Dims, ParamId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> Dims {
        Dims {
            vocab: 7,
            embed: 4,
            hidden: 5,
            feature: 3,
            grid_side: 2,
        }
    }

    fn features() -> FeatureGrid {
        FeatureGrid::new(2, 3, vec![0.5, -0.2, 0.1, 0.9, 0.3, -0.7, 0.0, 0.4, 0.8, -0.6, 0.2, 0.3]).unwrap()
    }

    fn params() -> ModelParams {
        ModelParams::random(dims(), 0.8, &mut ChaCha8Rng::seed_from_u64(17)).unwrap()
    }

    #[test]
    fn forced_matches_training_graph() {
        let caption = [3, 4, 6, 2];
        let d = decode_forced(&params(), &features(), &caption).unwrap();
        assert_eq!(d.alphas.len(), caption.len());
        let mut g = Graph::new();
        let p = ParamNodes::register(&mut g, &params());
        let nodes = total_loss_graph(&mut g, &p, &features(), &caption, None, 0.0, None).unwrap();
        for (a, &n) in d.alphas.iter().zip(&nodes.alphas) {
            assert_eq!(a.weights.as_slice(), g.value(n).data());
            assert!((a.total() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn always_eos_gives_empty_caption() {
        let mut p = ModelParams::zeros(dims()).unwrap();
        // Embedding row sum pushes every step's logits toward EOS.
        p.set(ParamId::Embedding, Tensor::filled(&[7, 4], 1.0)).unwrap();
        let mut w = vec![0.0; 4 * 7];
        for r in 0..4 {
            w[r * 7 + Vocab::EOS] = 1.0;
        }
        p.set(ParamId::OutWord, Tensor::matrix(4, 7, w).unwrap()).unwrap();
        let d = decode_greedy(&p, &features(), 10).unwrap();
        assert!(d.tokens.is_empty());
        assert!(d.alphas.is_empty());
    }

    #[test]
    fn ties_pick_lowest_non_bos_id() {
        // Zero params give a uniform distribution: EOS wins the tie.
        let p = ModelParams::zeros(dims()).unwrap();
        assert!(decode_greedy(&p, &features(), 5).unwrap().tokens.is_empty());
    }

    #[test]
    fn greedy_is_bounded_and_deterministic() {
        let p = params();
        for max_len in 1..6 {
            let a = decode_greedy(&p, &features(), max_len).unwrap();
            let b = decode_greedy(&p, &features(), max_len).unwrap();
            assert_eq!(a, b);
            assert!(a.tokens.len() <= max_len);
            assert_eq!(a.tokens.len(), a.alphas.len());
            assert!(a.tokens.iter().all(|&t| t != Vocab::BOS && t != Vocab::EOS));
        }
        assert!(decode_greedy(&p, &features(), 0).is_err());
    }
}
