use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{ranking_loss, ranking_loss_grad};
use super::model::{Arch, QaModel, Widths};
use super::QanetError;
use crate::cues::CueVector;

pub const MIN_CORPUS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Pairs per gradient step.
    pub batch_size: usize,
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    /// Minimum quality gap for a pair to be sampled.
    pub delta_pair: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub widths: Widths,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 24,
            pairs_per_epoch: 2048,
            delta_pair: 0.05,
            seed: 0,
            val_fraction: 0.2,
            widths: Widths::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), QanetError> {
        let bad = |what: &str| Err(QanetError::InvalidConfig(what.into()));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.beta1 <= 0.0 || self.beta2 <= 0.0 {
            return bad("moment decays must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.pairs_per_epoch == 0 {
            return bad("batch_size, epochs and pairs_per_epoch must be positive");
        }
        if !(self.delta_pair > 0.0 && self.delta_pair < 1.0) {
            return bad("delta_pair must lie in (0, 1)");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainItem {
    pub cues: CueVector,
    pub quality: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainPair<'a> {
    pub cue_a: &'a CueVector,
    pub cue_b: &'a CueVector,
    pub s1: f64,
    pub s2: f64,
}

impl TrainPair<'_> {
    fn describe(&self, p1: f64, p2: f64) -> String {
        format!(
            "pair ({}, {}) with qualities ({}, {}) and scores ({}, {})",
            self.cue_a.pair_id, self.cue_b.pair_id, self.s1, self.s2, p1, p2
        )
    }
}

/// Ranking loss of one pair under `model`.
pub fn pair_loss(model: &QaModel, pair: &TrainPair) -> Result<f64, QanetError> {
    let p1 = model.score(pair.cue_a)?;
    let p2 = model.score(pair.cue_b)?;
    ranking_loss(p1, p2, pair.s1, pair.s2)
}

fn accumulate_pair(model: &QaModel, pair: &TrainPair, grad: &mut QaModel) -> Result<f64, QanetError> {
    let ta = model.forward(pair.cue_a)?;
    let tb = model.forward(pair.cue_b)?;
    let (p1, p2) = (ta.score(), tb.score());
    let loss = ranking_loss(p1, p2, pair.s1, pair.s2)?;
    let (d1, d2) = ranking_loss_grad(p1, p2, pair.s1, pair.s2)?;
    if !loss.is_finite() || !d1.is_finite() || !d2.is_finite() {
        return Err(QanetError::NonFiniteGradient(pair.describe(p1, p2)));
    }
    model.backward(pair.cue_a, &ta, d1, grad);
    model.backward(pair.cue_b, &tb, d2, grad);
    if grad.layers().any(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite())) {
        return Err(QanetError::NonFiniteGradient(pair.describe(p1, p2)));
    }
    Ok(loss)
}

/// Loss of one pair and its gradient in `QaModel::flat_params` order.
pub fn pair_loss_gradient(model: &QaModel, pair: &TrainPair) -> Result<(f64, Vec<f64>), QanetError> {
    let mut grad = model.zeros_like();
    let loss = accumulate_pair(model, pair, &mut grad)?;
    Ok((loss, grad.flat_params()))
}

/// Adam optimizer state bound to one model.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: QaModel,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Trainer {
    pub fn new(model: QaModel, cfg: &TrainConfig) -> Self {
        let n = model.param_count();
        Self {
            model,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    /// One update on the mean loss of `batch`; returns that mean loss (before the update).
    ///
    /// Per-pair gradients may be computed in parallel; they are summed in batch order.
    pub fn grad_step(&mut self, batch: &[TrainPair]) -> Result<f64, QanetError> {
        if batch.is_empty() {
            return Err(QanetError::EmptyBatch);
        }
        let model = &self.model;
        let parts: Vec<Result<(f64, Vec<f64>), QanetError>> =
            batch.par_iter().map(|p| pair_loss_gradient(model, p)).collect();
        let mut grad = vec![0.0; self.m.len()];
        let mut loss = 0.0;
        for part in parts {
            let (l, g) = part?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let scale = 1.0 / batch.len() as f64;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in self.model.params_mut().zip(&grad).zip(&mut self.m).zip(&mut self.v) {
            let g = g * scale;
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(loss * scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: QaModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

impl TrainReport {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,loss,val_acc\n");
        for e in &self.log {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.val_acc));
        }
        s
    }
}

/// Fraction of item pairs with quality gap at least `delta` whose score order matches the
/// quality order. Equal scores count as wrong. `None` when no pair is eligible.
pub fn validation_accuracy(scores: &[f64], qualities: &[f64], delta: f64) -> Option<f64> {
    let mut good = 0u64;
    let mut total = 0u64;
    for i in 0..scores.len() {
        for j in i + 1..scores.len() {
            let dq = qualities[i] - qualities[j];
            if dq.abs() < delta {
                continue;
            }
            total += 1;
            let ds = scores[i] - scores[j];
            if ds * dq > 0.0 {
                good += 1;
            }
        }
    }
    (total > 0).then(|| good as f64 / total as f64)
}

fn has_gap(qualities: &[f64], delta: f64) -> bool {
    let lo = qualities.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = qualities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo >= delta
}

fn sample_pair<R: Rng>(rng: &mut R, pool: &[usize], q: &[f64], delta: f64) -> (usize, usize) {
    // Rejection sampling over ordered index pairs; callers guarantee an eligible pair exists.
    loop {
        let a = pool[rng.gen_range(0..pool.len())];
        let b = pool[rng.gen_range(0..pool.len())];
        if (q[a] - q[b]).abs() >= delta {
            return (a, b);
        }
    }
}

/// Trains a fresh model on `corpus` and returns the epoch with the best validation
/// pairwise ordering accuracy.
pub fn train(corpus: &[TrainItem], cfg: &TrainConfig) -> Result<TrainReport, QanetError> {
    cfg.validate()?;
    if corpus.len() < MIN_CORPUS {
        return Err(QanetError::InsufficientCorpus { needed: MIN_CORPUS, got: corpus.len() });
    }
    let q: Vec<f64> = corpus.iter().map(|c| c.quality).collect();
    if !has_gap(&q, cfg.delta_pair) {
        return Err(QanetError::NoEligiblePairs(cfg.delta_pair));
    }
    let mask = corpus[0].cues.mask;
    let arch = Arch::new(mask, &cfg.widths)?;
    for item in corpus {
        if item.cues.mask != mask || item.cues.recon_cues.len() != mask.recon_dim() {
            return Err(QanetError::DimMismatch {
                expected: (mask.point_dim(), mask.recon_dim()),
                got: (item.cues.point_dim(), item.cues.recon_cues.len()),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((corpus.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, corpus.len() - 1);
    let (val, tr) = order.split_at(n_val);
    let tr_q: Vec<f64> = tr.iter().map(|&i| q[i]).collect();
    if !has_gap(&tr_q, cfg.delta_pair) {
        return Err(QanetError::NoEligiblePairs(cfg.delta_pair));
    }
    let val_q: Vec<f64> = val.iter().map(|&i| q[i]).collect();

    let model = QaModel::init(arch, &mut rng)?;
    let mut trainer = Trainer::new(model, cfg);
    let mut best: Option<(usize, f64, QaModel)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        let mut remaining = cfg.pairs_per_epoch;
        while remaining > 0 {
            let k = remaining.min(cfg.batch_size);
            remaining -= k;
            let idx: Vec<(usize, usize)> = (0..k).map(|_| sample_pair(&mut rng, tr, &q, cfg.delta_pair)).collect();
            let batch: Vec<TrainPair> = idx
                .iter()
                .map(|&(a, b)| TrainPair { cue_a: &corpus[a].cues, cue_b: &corpus[b].cues, s1: q[a], s2: q[b] })
                .collect();
            loss_sum += trainer.grad_step(&batch)?;
            steps += 1;
        }
        let scores = val
            .par_iter()
            .map(|&i| trainer.model.score(&corpus[i].cues))
            .collect::<Result<Vec<f64>, _>>()?;
        let val_acc = validation_accuracy(&scores, &val_q, cfg.delta_pair).unwrap_or(0.0);
        log.push(EpochLog { epoch, loss: loss_sum / steps as f64, val_acc });
        if best.as_ref().is_none_or(|(_, acc, _)| val_acc > *acc) {
            best = Some((epoch, val_acc, trainer.model.clone()));
        }
    }
    let (best_epoch, best_val_acc, model) = best.expect("at least one epoch");
    let ids = |ix: &[usize]| ix.iter().map(|&i| corpus[i].cues.pair_id.clone()).collect();
    Ok(TrainReport { model, log, best_epoch, best_val_acc, train_ids: ids(tr), val_ids: ids(val) })
}
