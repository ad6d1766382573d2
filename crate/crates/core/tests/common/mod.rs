#![allow(dead_code)]

use std::collections::BTreeSet;

use depthforge_core::cues::{CueMask, CueName, CueVector};
use depthforge_core::qanet::{pair_loss, pair_loss_gradient, Arch, QaModel, TrainPair, Widths};
use rand::Rng;

pub fn random_mask<R: Rng>(rng: &mut R) -> CueMask {
    loop {
        let drop: BTreeSet<CueName> = CueName::ALL.into_iter().filter(|_| rng.gen_bool(0.3)).collect();
        let m = CueMask::full().without(&drop);
        if m.point_dim() > 0 {
            return m;
        }
    }
}

pub fn random_cues<R: Rng>(id: &str, mask: CueMask, n: usize, rng: &mut R) -> CueVector {
    CueVector {
        pair_id: id.into(),
        mask,
        recon_cues: (0..mask.recon_dim()).map(|_| rng.gen_range(-1.0..2.0)).collect(),
        point_cues: (0..n * mask.point_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        n,
    }
}

pub fn random_widths<R: Rng>(rng: &mut R) -> Widths {
    let mut layers = |max_depth: usize| -> Vec<usize> {
        let depth = rng.gen_range(1..=max_depth);
        (0..depth).map(|_| rng.gen_range(2..=8)).collect()
    };
    let point = layers(3);
    let recon = layers(2);
    let head = layers(2);
    Widths { point, recon, head }
}

pub fn random_model<R: Rng>(mask: CueMask, widths: &Widths, rng: &mut R) -> QaModel {
    let mut m = QaModel::init(Arch::new(mask, widths).unwrap(), rng).unwrap();
    // Nonzero biases so that no unit sits exactly at a rectifier kink.
    for p in m.params_mut() {
        if *p == 0.0 {
            *p = rng.gen_range(-0.1..0.1);
        }
    }
    m
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Parameters whose +-h perturbation moved some rectifier or pooling argmax.
    pub kinks: usize,
}

/// Central differences of the pair loss against the analytic gradient, parameter by
/// parameter, relative error `|a - n| / max(1e-8, |n|)`.
pub fn gradient_check(model: &QaModel, pair: &TrainPair, h: f64) -> GradCheck {
    let (_, analytic) = pair_loss_gradient(model, pair).unwrap();
    let base = model.flat_params();
    let sig = |m: &QaModel| (m.activation_signature(pair.cue_a).unwrap(), m.activation_signature(pair.cue_b).unwrap());
    let sig0 = sig(model);
    let mut work = model.clone();
    let mut out = GradCheck { max_rel_err: 0.0, checked: 0, kinks: 0 };
    for (i, &theta) in base.iter().enumerate() {
        work.set_param(i, theta + h);
        let lp = pair_loss(&work, pair).unwrap();
        let sp = sig(&work);
        work.set_param(i, theta - h);
        let lm = pair_loss(&work, pair).unwrap();
        let sm = sig(&work);
        work.set_param(i, theta);
        if sp != sig0 || sm != sig0 {
            out.kinks += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1e-8);
        out.max_rel_err = out.max_rel_err.max(rel);
        out.checked += 1;
    }
    out
}
