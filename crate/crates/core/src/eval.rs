//! Quality-ranking curves, their baselines, cue ablations, and WHDR.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cues::{ablate_cues, CueError, CueName};
use crate::forge::{Closer, DatasetRecord};
use crate::qanet::{train, QaModel, QanetError, TrainConfig, TrainItem};

pub const CURVE_POINTS: usize = 100;
pub const RANDOM_SHUFFLES: u64 = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("item {id}: quality {quality} outside [0, 1] or score not finite")]
    InvalidItem { id: String, quality: f64 },
    #[error("no prediction for {image_id} pair {index}")]
    MissingPrediction { image_id: String, index: usize },
    #[error("no annotated pairs")]
    NoAnnotations,
    #[error(transparent)]
    Cue(#[from] CueError),
    #[error(transparent)]
    Qanet(#[from] QanetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub id: String,
    pub score: f64,
    pub quality: f64,
}

/// Items ordered by descending score, ties by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCorpus {
    items: Vec<RankedItem>,
}

impl RankedCorpus {
    pub fn new(mut items: Vec<RankedItem>) -> Result<Self, EvalError> {
        if items.is_empty() {
            return Err(EvalError::EmptyCorpus);
        }
        let mut seen = HashSet::new();
        for it in &items {
            if !(0.0..=1.0).contains(&it.quality) || !it.score.is_finite() {
                return Err(EvalError::InvalidItem { id: it.id.clone(), quality: it.quality });
            }
            if !seen.insert(it.id.as_str()) {
                return Err(EvalError::DuplicateId(it.id.clone()));
            }
        }
        items.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        Ok(Self { items })
    }

    /// The perfect ranking: scores replaced by the qualities themselves.
    pub fn oracle(items: &[RankedItem]) -> Result<Self, EvalError> {
        Self::new(items.iter().map(|it| RankedItem { score: it.quality, ..it.clone() }).collect())
    }

    pub fn items(&self) -> &[RankedItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn mean_quality(&self) -> f64 {
        self.items.iter().map(|i| i.quality).sum::<f64>() / self.items.len() as f64
    }

    /// Mean quality of the first `k` items.
    pub fn top_mean(&self, k: usize) -> f64 {
        let k = k.clamp(1, self.items.len());
        self.items[..k].iter().map(|i| i.quality).sum::<f64>() / k as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityCurve {
    /// `(n_percent, mean quality of the top n percent)` for n = 1..=100.
    pub points: Vec<(u32, f64)>,
    pub auc: f64,
    pub n_items: usize,
}

/// Neumaier-compensated sum, so that averaging equal values returns that value.
fn accurate_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

fn prefix_size(percent: usize, n: usize) -> usize {
    // ceil(percent * n / 100) in integers; at least 1 whenever n >= 1.
    (percent * n).div_ceil(CURVE_POINTS)
}

fn curve_from_qualities(q: &[f64]) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(q.len() + 1);
    prefix.push(0.0);
    for v in q {
        prefix.push(prefix.last().unwrap() + v);
    }
    (1..=CURVE_POINTS)
        .map(|p| {
            let k = prefix_size(p, q.len());
            prefix[k] / k as f64
        })
        .collect()
}

impl QualityCurve {
    fn from_values(values: Vec<f64>, n_items: usize) -> Self {
        let auc = accurate_sum(values.iter().copied()) / CURVE_POINTS as f64;
        let points = values.into_iter().enumerate().map(|(i, v)| (i as u32 + 1, v)).collect();
        Self { points, auc, n_items }
    }

    pub fn value(&self, percent: u32) -> f64 {
        self.points[percent as usize - 1].1
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n_percent,mean_quality\n");
        for (n, q) in &self.points {
            s.push_str(&format!("{n},{q}\n"));
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::json!({ "auc": self.auc, "n_items": self.n_items }).to_string()
    }
}

pub fn quality_curve(rc: &RankedCorpus) -> Result<QualityCurve, EvalError> {
    if rc.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let q: Vec<f64> = rc.items.iter().map(|i| i.quality).collect();
    Ok(QualityCurve::from_values(curve_from_qualities(&q), q.len()))
}

/// Upper bound (perfect ranking) and random-ranking curves. The random curve is the
/// pointwise mean over 20 seeded shuffles.
pub fn baselines(items: &[RankedItem], seed: u64) -> Result<(QualityCurve, QualityCurve), EvalError> {
    let upper = quality_curve(&RankedCorpus::oracle(items)?)?;
    let base = RankedCorpus::new(items.to_vec())?;
    let mut q: Vec<f64> = base.items.iter().map(|i| i.quality).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curves: Vec<Vec<f64>> = (0..RANDOM_SHUFFLES)
        .map(|_| {
            q.shuffle(&mut rng);
            curve_from_qualities(&q)
        })
        .collect();
    let random = (0..CURVE_POINTS)
        .map(|p| accurate_sum(curves.iter().map(|c| c[p])) / RANDOM_SHUFFLES as f64)
        .collect();
    Ok((upper, QualityCurve::from_values(random, q.len())))
}

/// Scores every item with `model`, after restricting its cues to the model's mask.
pub fn score_items(model: &QaModel, items: &[TrainItem]) -> Result<Vec<RankedItem>, EvalError> {
    items
        .par_iter()
        .map(|it| {
            let cv = crate::cues::apply_mask(&it.cues, model.arch.mask)?;
            Ok(RankedItem { id: it.cues.pair_id.clone(), score: model.score(&cv)?, quality: it.quality })
        })
        .collect()
}

pub fn variant_label(drop: &BTreeSet<CueName>) -> String {
    if drop.is_empty() {
        "Full".into()
    } else {
        drop.iter().map(|c| format!("-{}", c.label())).collect::<Vec<_>>().join(" ")
    }
}

/// The standard variant list: full cues, then each cue group dropped on its own.
pub fn single_cue_variants() -> Vec<BTreeSet<CueName>> {
    std::iter::once(BTreeSet::new()).chain(CueName::ALL.into_iter().map(|c| BTreeSet::from([c]))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn auc(&self, variant: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant).map(|r| r.auc)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,auc\n");
        for r in &self.rows {
            s.push_str(&format!("{},{}\n", r.variant, r.auc));
        }
        s
    }
}

/// Trains one model per variant on `train_set` (identical config and seed, only the cues
/// differ) and evaluates each on `test_set`. Upperbound and random rows are appended.
pub fn ablation_suite(
    train_set: &[TrainItem],
    test_set: &[TrainItem],
    variants: &[BTreeSet<CueName>],
    cfg: &TrainConfig,
    baseline_seed: u64,
) -> Result<AblationTable, EvalError> {
    let mut rows = Vec::with_capacity(variants.len() + 2);
    for drop in variants {
        let ablate = |items: &[TrainItem]| -> Result<Vec<TrainItem>, EvalError> {
            items
                .iter()
                .map(|it| Ok(TrainItem { cues: ablate_cues(&it.cues, drop)?, quality: it.quality }))
                .collect()
        };
        let tr = ablate(train_set)?;
        let te = ablate(test_set)?;
        let report = train(&tr, cfg)?;
        let ranked = RankedCorpus::new(score_items(&report.model, &te)?)?;
        rows.push(AblationRow { variant: variant_label(drop), auc: quality_curve(&ranked)?.auc });
    }
    let plain: Vec<RankedItem> = test_set
        .iter()
        .map(|it| RankedItem { id: it.cues.pair_id.clone(), score: 0.0, quality: it.quality })
        .collect();
    let (upper, random) = baselines(&plain, baseline_seed)?;
    rows.push(AblationRow { variant: "Upperbound".into(), auc: upper.auc });
    rows.push(AblationRow { variant: "Random Ranking".into(), auc: random.auc });
    Ok(AblationTable { rows })
}

/// Per-image depth-order decisions, one per annotated pair in the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub closer: Vec<Closer>,
}

/// Unweighted disagreement rate. A predicted tie disagrees with every annotation.
pub fn whdr(predictions: &[Prediction], annotations: &[DatasetRecord]) -> Result<f64, EvalError> {
    let by_image: BTreeMap<&str, &[Closer]> =
        predictions.iter().map(|p| (p.image_id.as_str(), p.closer.as_slice())).collect();
    let mut total = 0usize;
    let mut wrong = 0usize;
    for rec in annotations {
        for (index, pair) in rec.pairs.iter().enumerate() {
            let pred = by_image
                .get(rec.image_id.as_str())
                .and_then(|c| c.get(index))
                .ok_or_else(|| EvalError::MissingPrediction { image_id: rec.image_id.clone(), index })?;
            total += 1;
            if *pred != pair.closer {
                wrong += 1;
            }
        }
    }
    if total == 0 {
        return Err(EvalError::NoAnnotations);
    }
    Ok(wrong as f64 / total as f64)
}
