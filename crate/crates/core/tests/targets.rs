use std::collections::BTreeMap;

use attncorr_core::gt_attention::{strong_beta, ClassLabeledRegion, GtState, WeakStats};
use attncorr_core::{EmbeddingTable, GroundTruthMap, PixelBox, Region, WeakSupervision};
use proptest::prelude::*;

const CLASSES: [&str; 4] = ["circle", "square", "star", "ring"];
const WORDS: [&str; 3] = ["ball", "box", "shape"];
const SCENES: [&str; 2] = ["grass", "sky"];

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < 1e-6 {
        let mut e = vec![0.0; v.len()];
        e[0] = 1.0;
        return e;
    }
    v.into_iter().map(|x| x / n).collect()
}

fn table() -> impl Strategy<Value = EmbeddingTable> {
    let n = CLASSES.len() + WORDS.len() + SCENES.len();
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), n).prop_map(|vs| {
        let names = CLASSES.iter().chain(&WORDS).chain(&SCENES);
        EmbeddingTable::new(names.zip(vs).map(|(k, v)| (k.to_string(), unit(v))).collect::<BTreeMap<_, _>>())
            .unwrap()
    })
}

fn pixel_box(res: usize) -> impl Strategy<Value = PixelBox> {
    (0..res, 0..res, 1..=res, 1..=res).prop_map(move |(a, b, c, d)| {
        let (x0, x1) = (a.min(c - 1), c.max(a + 1).min(res));
        let (y0, y1) = (b.min(d - 1), d.max(b + 1).min(res));
        PixelBox::new(x0, y0, x1, y1)
    })
}

fn scene() -> impl Strategy<Value = (usize, usize, Vec<ClassLabeledRegion>)> {
    (1usize..6, 4usize..30).prop_flat_map(|(g, res)| {
        let region = (pixel_box(res), prop::sample::select(CLASSES.to_vec())).prop_map(|(b, c)| ClassLabeledRegion {
            region: b.into(),
            class_name: c.to_string(),
        });
        (Just(g), Just(res), prop::collection::vec(region, 0..4))
    })
}

fn assert_normalized(m: &GroundTruthMap) -> Result<(), TestCaseError> {
    let GtState::Present(w) = &m.state else {
        return Err(TestCaseError::fail(format!("expected a present target, got {:?}", m.state)));
    };
    prop_assert_eq!(w.len(), m.grid_side * m.grid_side);
    prop_assert!(w.iter().all(|&x| x >= 0.0 && x.is_finite()));
    prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    Ok(())
}

fn support(m: &GroundTruthMap) -> Vec<bool> {
    match &m.state {
        GtState::Present(w) => w.iter().map(|&x| x > 0.0).collect(),
        _ => vec![false; m.grid_side * m.grid_side],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn target_properties(emb in table(), (g, res, regions) in scene(), word in prop::sample::select([WORDS.as_slice(), SCENES.as_slice(), &CLASSES].concat())) {
        let boxes: Vec<Region> = regions.iter().map(|r| r.region.clone()).collect();
        let strong = strong_beta(&boxes, res, g).unwrap();
        if boxes.is_empty() {
            prop_assert!(strong.is_absent());
        } else {
            assert_normalized(&strong)?;
        }

        let weak = WeakSupervision::new(emb.clone(), SCENES.iter().map(|s| s.to_string()));
        let mut stats = WeakStats::default();
        let m = weak.beta(word, &regions, res, g, &mut stats).unwrap();
        let passing = regions
            .iter()
            .any(|r| emb.similarity(word, &r.class_name).unwrap() > weak.threshold);
        if SCENES.contains(&word) {
            prop_assert_eq!(m.state, GtState::Uniform);
        } else if passing {
            assert_normalized(&m)?;
        } else {
            prop_assert!(m.is_absent());
        }
        prop_assert_eq!(stats.present + stats.uniform + stats.absent, 1);
    }
}

proptest! {
    #[test]
    fn strong_ignores_region_order((g, res, regions) in scene(), rot in 0usize..4) {
        prop_assume!(!regions.is_empty());
        let boxes: Vec<Region> = regions.iter().map(|r| r.region.clone()).collect();
        let mut rotated = boxes.clone();
        rotated.rotate_left(rot % boxes.len());
        let a = strong_beta(&boxes, res, g).unwrap().weights().unwrap();
        let b = strong_beta(&rotated, res, g).unwrap().weights().unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_regions_do_not_change_strong((g, res, regions) in scene()) {
        prop_assume!(!regions.is_empty());
        let boxes: Vec<Region> = regions.iter().map(|r| r.region.clone()).collect();
        let doubled: Vec<Region> = boxes.iter().chain(&boxes).cloned().collect();
        prop_assert_eq!(strong_beta(&boxes, res, g).unwrap(), strong_beta(&doubled, res, g).unwrap());
    }

    #[test]
    fn raising_the_threshold_shrinks_support(
        emb in table(),
        (g, res, regions) in scene(),
        word in prop::sample::select(WORDS.to_vec()),
        t in -1.0f64..1.0,
        dt in 0.0f64..1.0,
    ) {
        let mut stats = WeakStats::default();
        let lo = WeakSupervision::new(emb.clone(), []).with_threshold(t);
        let hi = WeakSupervision::new(emb, []).with_threshold(t + dt);
        let a = lo.beta(word, &regions, res, g, &mut stats).unwrap();
        let b = hi.beta(word, &regions, res, g, &mut stats).unwrap();
        if a.is_absent() {
            prop_assert!(b.is_absent());
        }
        for (in_lo, in_hi) in support(&a).into_iter().zip(support(&b)) {
            prop_assert!(in_lo || !in_hi);
        }
    }
}
