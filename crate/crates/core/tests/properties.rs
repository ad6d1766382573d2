use std::collections::HashMap;

use proptest::prelude::*;

use depthforge_core::eval::{quality_curve, whdr, Prediction, RankedCorpus, RankedItem};
use depthforge_core::forge::{choose_threshold, sample_pairs, Closer, DatasetRecord, DepthPair, View};
use depthforge_core::geometry::{reconstruct_pair, SfmConfig};
use depthforge_core::synth::{generate_scene, ordering_agreement, SceneSpec};

fn items(pairs: &[(f64, f64)]) -> Vec<RankedItem> {
    pairs.iter().enumerate().map(|(i, &(score, quality))| RankedItem { id: format!("r{i:04}"), score, quality }).collect()
}

fn scored() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-5.0..5.0f64, 0.0..=1.0f64), 1..200)
}

proptest! {
    #[test]
    fn curve_is_bounded_by_the_oracle(pairs in scored()) {
        let it = items(&pairs);
        let c = quality_curve(&RankedCorpus::new(it.clone()).unwrap()).unwrap();
        let o = quality_curve(&RankedCorpus::oracle(&it).unwrap()).unwrap();
        let mean = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
        prop_assert!((c.value(100) - mean).abs() < 1e-12);
        prop_assert!((o.value(100) - mean).abs() < 1e-12);
        for p in 1..=100 {
            prop_assert!(c.value(p) <= o.value(p) + 1e-12);
        }
        for w in o.points.windows(2) {
            prop_assert!(w[1].1 <= w[0].1 + 1e-12);
        }
        let (lo, hi) = pairs.iter().fold((1.0f64, 0.0f64), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
        prop_assert!(c.auc >= lo - 1e-12 && c.auc <= hi + 1e-12);
    }

    #[test]
    fn curve_depends_only_on_score_order(pairs in scored(), a in 0.1..10.0f64, b in -3.0..3.0f64) {
        let it = items(&pairs);
        let moved: Vec<RankedItem> = it.iter().map(|i| RankedItem { score: a * i.score + b, ..i.clone() }).collect();
        let c1 = quality_curve(&RankedCorpus::new(it).unwrap()).unwrap();
        let c2 = quality_curve(&RankedCorpus::new(moved).unwrap()).unwrap();
        prop_assert_eq!(c1, c2);
    }

    #[test]
    fn stricter_targets_need_higher_thresholds(pairs in scored(), t1 in 0.0..1.0f64, t2 in 0.0..1.0f64) {
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        if let Ok(strict) = choose_threshold(&pairs, hi) {
            let loose = choose_threshold(&pairs, lo).unwrap();
            prop_assert!(loose.threshold <= strict.threshold);
            prop_assert!(loose.retained >= strict.retained);
            prop_assert!(strict.mean_quality >= hi - 1e-9);
            let kept = pairs.iter().filter(|p| p.0 >= strict.threshold).count();
            prop_assert_eq!(kept, strict.retained);
        }
    }

    #[test]
    fn whdr_of_inverted_predictions_is_complementary(
        closer in prop::collection::vec(prop::bool::ANY, 1..100),
        guess in prop::collection::vec(prop::bool::ANY, 100),
    ) {
        let side = |b: bool| if b { Closer::A } else { Closer::B };
        let pairs: Vec<DepthPair> =
            closer.iter().map(|&c| DepthPair { xa: 0.0, ya: 0.0, xb: 1.0, yb: 1.0, closer: side(c) }).collect();
        let ann = vec![DatasetRecord { image_id: "x/a".into(), pairs }];
        let pred: Vec<Closer> = guess[..closer.len()].iter().map(|&g| side(g)).collect();
        let inv: Vec<Closer> = pred.iter().map(|c| c.inverted()).collect();
        let w = whdr(&[Prediction { image_id: "x/a".into(), closer: pred }], &ann).unwrap();
        let wi = whdr(&[Prediction { image_id: "x/a".into(), closer: inv }], &ann).unwrap();
        prop_assert!((w + wi - 1.0).abs() < 1e-12);
        let ties = whdr(&[Prediction { image_id: "x/a".into(), closer: vec![Closer::Equal; closer.len()] }], &ann).unwrap();
        prop_assert_eq!(ties, 1.0);
    }

    #[test]
    fn ordering_agreement_identities(depths in prop::collection::vec(1.0..100.0f64, 2..60), margin in 1.0..1.5f64) {
        let reversed: Vec<f64> = depths.iter().map(|d| 101.0 - d).collect();
        let scaled: Vec<f64> = depths.iter().map(|d| 3.0 * d).collect();
        match ordering_agreement(&depths, &depths, margin, 0) {
            Some(q) => {
                prop_assert_eq!(q, 1.0);
                prop_assert_eq!(ordering_agreement(&scaled, &depths, margin, 0), Some(1.0));
                prop_assert_eq!(ordering_agreement(&reversed, &depths, margin, 0), Some(0.0));
            }
            None => prop_assert!(ordering_agreement(&reversed, &depths, margin, 0).is_none()),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn emitted_pairs_agree_with_the_reconstruction(
        seed in 0..1000u64,
        max_pairs in 1..400usize,
        margin in 1.0..1.2f64,
    ) {
        let spec = SceneSpec { n_points: 80, noise_px: 0.5, seed, ..SceneSpec::default() };
        let Ok(r) = reconstruct_pair(&generate_scene(&spec).unwrap().0, &SfmConfig::default()) else {
            return Ok(());
        };
        for view in [View::A, View::B] {
            let depth: HashMap<(u64, u64), f64> = r
                .points
                .iter()
                .map(|p| {
                    let (x, y, d) = match view {
                        View::A => (p.corr.x1, p.corr.y1, p.depth_a),
                        View::B => (p.corr.x2, p.corr.y2, p.depth_b),
                    };
                    ((x.to_bits(), y.to_bits()), d)
                })
                .collect();
            let pairs = sample_pairs(&r, view, max_pairs, margin, 5);
            prop_assert!(pairs.len() <= max_pairs);
            prop_assert_eq!(&pairs, &sample_pairs(&r, view, max_pairs, margin, 5));
            for p in &pairs {
                let da = depth[&(p.xa.to_bits(), p.ya.to_bits())];
                let db = depth[&(p.xb.to_bits(), p.yb.to_bits())];
                prop_assert!(da.max(db) / da.min(db) >= margin);
                let want = if da < db { Closer::A } else { Closer::B };
                prop_assert_eq!(p.closer, want);
            }
        }
    }

    #[test]
    fn more_noise_does_not_improve_reconstruction_fit(seed in 0..1000u64) {
        let cfg = SfmConfig::default();
        let f_true = cfg.grid.values(640.0)[20];
        let fit = |noise_px: f64| {
            let spec = SceneSpec { noise_px, f_true, seed, ..SceneSpec::default() };
            reconstruct_pair(&generate_scene(&spec).unwrap().0, &cfg).ok().map(|r| r.mean_reproj)
        };
        if let (Some(clean), Some(noisy)) = (fit(0.0), fit(1.0)) {
            prop_assert!(clean < 1e-6);
            prop_assert!(noisy > clean);
        }
    }
}
