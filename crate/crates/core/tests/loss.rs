use attncorr_core::autodiff::{grad_check, AutodiffError};
use attncorr_core::captioner::{total_loss, total_loss_graph, ParamNodes};
use attncorr_core::{Dims, FeatureGrid, GroundTruthMap, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> (ModelParams, FeatureGrid) {
    let dims = Dims {
        vocab: 7,
        embed: 3,
        hidden: 4,
        feature: 3,
        grid_side: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = ModelParams::random(dims, 0.5, &mut rng).unwrap();
    let feats = FeatureGrid::new(2, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    (params, feats)
}

fn targets() -> Vec<GroundTruthMap> {
    vec![
        GroundTruthMap::absent(2),
        GroundTruthMap::present(vec![0.7, 0.3, 0.0, 0.0], 2),
        GroundTruthMap::uniform(2),
        GroundTruthMap::absent(2),
    ]
}

const CAPTION: [usize; 4] = [3, 5, 4, 1];

#[test]
fn total_loss_gradients_match_finite_differences() {
    let (params, feats) = tiny();
    let t = targets();
    for lambda in [0.0, 1.0, 10.0] {
        let report = grad_check(
            |g, ids| {
                let p = ParamNodes::from_ids(g, ids).map_err(|e| AutodiffError::InvalidArgument(e.to_string()))?;
                let nodes = total_loss_graph(g, &p, &feats, &CAPTION, Some(&t), lambda, None)
                    .map_err(|e| AutodiffError::InvalidArgument(e.to_string()))?;
                Ok(nodes.total)
            },
            params.tensors(),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "lambda {lambda}: {report:?}");
    }
}

#[test]
fn lambda_scales_only_the_attention_term() {
    let (params, feats) = tiny();
    let t = targets();
    let base = total_loss(&params, &feats, &CAPTION, None, 1.0).unwrap();
    assert_eq!(base.attention, 0.0);
    for lambda in [0.0, 1.0, 10.0] {
        let l = total_loss(&params, &feats, &CAPTION, Some(&t), lambda).unwrap();
        assert_eq!(l.caption, base.caption);
        assert_eq!(l.attention > 0.0, lambda > 0.0);
        assert!((l.total - (l.caption + lambda * l.attention)).abs() < 1e-12);
    }
}
