mod common;

use common::*;
use depthforge_core::cues::CueMask;
use depthforge_core::qanet::{QaModel, TrainPair, Widths};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gradients_match_finite_differences_on_small_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut checked, mut kinks) = (0, 0);
    for draw in 0..40 {
        let mask = random_mask(&mut rng);
        let widths = random_widths(&mut rng);
        let model = random_model(mask, &widths, &mut rng);
        let a = random_cues("a", mask, rng.gen_range(1..10), &mut rng);
        let b = random_cues("b", mask, rng.gen_range(1..10), &mut rng);
        let pair = TrainPair { cue_a: &a, cue_b: &b, s1: rng.gen(), s2: rng.gen() };
        let g = gradient_check(&model, &pair, 1e-3);
        assert!(g.max_rel_err < 1e-4, "draw {draw}: {}", g.max_rel_err);
        checked += g.checked;
        kinks += g.kinks;
    }
    assert!(kinks * 20 < checked, "{kinks} kinks vs {checked} checked");
}

#[test]
fn permutation_and_duplication_leave_the_score_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = random_model(CueMask::full(), &Widths::default(), &mut rng);
    let cv = random_cues("p", CueMask::full(), 30, &mut rng);
    let s = model.score(&cv).unwrap();
    let mut perm: Vec<usize> = (0..30).collect();
    for _ in 0..20 {
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        assert_eq!(model.score(&cv.permuted(&perm)).unwrap().to_bits(), s.to_bits());
    }
    let mut dup: Vec<usize> = (0..30).collect();
    dup.extend([4, 4, 17]);
    let d = cv.permuted(&dup);
    let d = depthforge_core::cues::CueVector { n: 33, ..d };
    assert_eq!(model.score(&d).unwrap().to_bits(), s.to_bits());
}

#[test]
fn model_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let m = random_model(CueMask::strict_point_cues(), &Widths::default(), &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(&path, m.to_json()).unwrap();
    let back = QaModel::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, m);
}
