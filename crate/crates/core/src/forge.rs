//! Reconstruct, score, filter, and emit relative-depth training records.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cues::{apply_mask, extract_cues, CueMask};
use crate::geometry::{derive_seed, reconstruct_pair, FramePair, Reconstruction, SfmConfig};
use crate::qanet::{QaModel, QanetError};

pub const DEFAULT_PAIRS_PER_IMAGE: usize = 281;
pub const DEFAULT_EMISSION_MARGIN: f64 = 1.03;
/// Above this many candidate point pairs, sampling switches from enumeration to rejection.
const ENUMERATION_LIMIT: usize = 4_000_000;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("model expects cue mask {model:?}, pipeline is configured for {config:?}")]
    ModelArchMismatch { model: CueMask, config: CueMask },
    #[error("invalid model: {0}")]
    InvalidModel(#[from] QanetError),
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("duplicate pair id {0}")]
    DuplicatePairId(String),
    #[error("target mean quality {target} is not reached by any score threshold (best {best})")]
    TargetUnreachable { target: f64, best: f64 },
    #[error("no scored items")]
    EmptyCorpus,
}

/// Which point of a pair is closer to the camera. `Equal` only appears in predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Closer {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
    #[serde(rename = "=")]
    Equal,
}

impl Closer {
    pub fn inverted(self) -> Self {
        match self {
            Closer::A => Closer::B,
            Closer::B => Closer::A,
            Closer::Equal => Closer::Equal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum View {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
}

impl View {
    pub fn tag(self) -> &'static str {
        match self {
            View::A => "a",
            View::B => "b",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPair {
    pub xa: f64,
    pub ya: f64,
    pub xb: f64,
    pub yb: f64,
    pub closer: Closer,
}

/// One frame of a retained reconstruction with its ordered point pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    /// `<pair_id>/a` or `<pair_id>/b`.
    pub image_id: String,
    pub pairs: Vec<DepthPair>,
}

/// Up to `max_pairs` point pairs whose depth ratio in `view` is at least `margin`, drawn
/// uniformly without replacement and returned in point-index order.
pub fn sample_pairs(recon: &Reconstruction, view: View, max_pairs: usize, margin: f64, seed: u64) -> Vec<DepthPair> {
    let mut pts: Vec<_> = recon.points.iter().collect();
    pts.sort_by_key(|p| p.corr_id());
    let n = pts.len();
    if n < 2 || max_pairs == 0 {
        return Vec::new();
    }
    let depth = |i: usize| match view {
        View::A => pts[i].depth_a,
        View::B => pts[i].depth_b,
    };
    let eligible = |i: usize, j: usize| {
        let (a, b) = (depth(i), depth(j));
        a.max(b) / a.min(b) >= margin
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{}/{}", recon.pair_id, view.tag())));
    let total = n * (n - 1) / 2;

    let mut chosen: Vec<(usize, usize)> = if total <= ENUMERATION_LIMIT {
        let all: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| eligible(i, j)).collect();
        let k = max_pairs.min(all.len());
        index::sample(&mut rng, all.len(), k).into_iter().map(|s| all[s]).collect()
    } else {
        let mut seen = BTreeSet::new();
        let mut attempts = 0;
        while seen.len() < max_pairs && attempts < 50 * max_pairs {
            attempts += 1;
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            let (i, j) = (i.min(j), i.max(j));
            if i != j && eligible(i, j) {
                seen.insert((i, j));
            }
        }
        seen.into_iter().collect()
    };
    chosen.sort_unstable();

    chosen
        .into_iter()
        .map(|(i, j)| {
            let (p, q) = (&pts[i].corr, &pts[j].corr);
            let ((xa, ya), (xb, yb)) = match view {
                View::A => ((p.x1, p.y1), (q.x1, q.y1)),
                View::B => ((p.x2, p.y2), (q.x2, q.y2)),
            };
            let closer = if depth(i) < depth(j) { Closer::A } else { Closer::B };
            DepthPair { xa, ya, xb, yb, closer }
        })
        .collect()
}

/// How scored reconstructions are kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetainRule {
    /// Score at least this much.
    Threshold(f64),
    /// This fraction of the scored reconstructions, best first.
    TopFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub sfm: SfmConfig,
    pub retain: RetainRule,
    pub pairs_per_image: usize,
    /// Minimum depth ratio of an emitted pair.
    pub emission_margin: f64,
    pub seed: u64,
    pub cue_mask: CueMask,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sfm: SfmConfig::default(),
            retain: RetainRule::Threshold(0.0),
            pairs_per_image: DEFAULT_PAIRS_PER_IMAGE,
            emission_margin: DEFAULT_EMISSION_MARGIN,
            seed: 0,
            cue_mask: CueMask::full(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ForgeError> {
        let bad = |m: &str| Err(ForgeError::InvalidConfig(m.into()));
        match self.retain {
            RetainRule::Threshold(t) if t.is_nan() => return bad("threshold is NaN"),
            RetainRule::TopFraction(f) if !(f > 0.0 && f <= 1.0) => return bad("top_fraction must lie in (0, 1]"),
            _ => {}
        }
        if self.pairs_per_image == 0 {
            return bad("pairs_per_image must be at least 1");
        }
        if !(self.emission_margin > 1.0) {
            return bad("emission_margin must exceed 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub pair_id: String,
    /// Absent when the pair never reached scoring.
    pub score: Option<f64>,
    pub retained: bool,
    /// Rejection code, `threshold` for scored pairs that were filtered out.
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub n_pairs: usize,
    pub n_scored: usize,
    pub n_retained: usize,
    pub n_records: usize,
    pub n_depth_pairs: usize,
    /// Effective score threshold (the lowest retained score in top-fraction mode).
    pub threshold: Option<f64>,
    pub rejections: BTreeMap<String, usize>,
    pub pairs: Vec<PairOutcome>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub records: Vec<DatasetRecord>,
    pub report: PipelineReport,
    /// Reconstructions of the retained pairs, in pair-id order.
    pub retained: Vec<Reconstruction>,
}

enum Stage {
    Rejected(String),
    Scored(Box<Reconstruction>, f64),
}

fn process(pair: &FramePair, model: &QaModel, cfg: &PipelineConfig) -> Stage {
    let recon = match reconstruct_pair(pair, &cfg.sfm) {
        Ok(r) => r,
        Err(rej) => return Stage::Rejected(rej.reason.as_str().into()),
    };
    let cues = match extract_cues(&recon).and_then(|cv| apply_mask(&cv, cfg.cue_mask)) {
        Ok(cv) => cv,
        Err(_) => return Stage::Rejected("non_finite_cue".into()),
    };
    match model.score(&cues) {
        Ok(s) if s.is_finite() => Stage::Scored(Box::new(recon), s),
        _ => Stage::Rejected("non_finite_score".into()),
    }
}

/// Runs the whole batch. Per-pair failures are counted in the report; only configuration
/// and model problems are errors.
pub fn run_pipeline(pairs: &[FramePair], model: &QaModel, cfg: &PipelineConfig) -> Result<PipelineOutput, ForgeError> {
    cfg.validate()?;
    model.validate()?;
    if model.arch.mask != cfg.cue_mask {
        return Err(ForgeError::ModelArchMismatch { model: model.arch.mask, config: cfg.cue_mask });
    }
    let mut sorted: Vec<&FramePair> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].pair_id == w[1].pair_id) {
        return Err(ForgeError::DuplicatePairId(w[0].pair_id.clone()));
    }

    let stages: Vec<Stage> = sorted.par_iter().map(|p| process(p, model, cfg)).collect();

    let threshold = match cfg.retain {
        RetainRule::Threshold(t) => Some(t),
        RetainRule::TopFraction(frac) => {
            let mut scores: Vec<f64> = stages
                .iter()
                .filter_map(|s| match s {
                    Stage::Scored(_, v) => Some(*v),
                    Stage::Rejected(_) => None,
                })
                .collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let keep = (frac * scores.len() as f64).ceil() as usize;
            keep.checked_sub(1).and_then(|k| scores.get(k).copied())
        }
    };

    let mut report = PipelineReport {
        n_pairs: pairs.len(),
        n_scored: 0,
        n_retained: 0,
        n_records: 0,
        n_depth_pairs: 0,
        threshold,
        rejections: BTreeMap::new(),
        pairs: Vec::with_capacity(pairs.len()),
    };
    let mut records = Vec::new();
    let mut retained = Vec::new();
    for (pair, stage) in sorted.iter().zip(stages) {
        match stage {
            Stage::Rejected(reason) => {
                *report.rejections.entry(reason.clone()).or_default() += 1;
                report.pairs.push(PairOutcome {
                    pair_id: pair.pair_id.clone(),
                    score: None,
                    retained: false,
                    reason: Some(reason),
                });
            }
            Stage::Scored(recon, score) => {
                report.n_scored += 1;
                let keep = threshold.is_some_and(|t| score >= t);
                if keep {
                    report.n_retained += 1;
                    for view in [View::A, View::B] {
                        let sampled = sample_pairs(&recon, view, cfg.pairs_per_image, cfg.emission_margin, cfg.seed);
                        report.n_depth_pairs += sampled.len();
                        records.push(DatasetRecord {
                            image_id: format!("{}/{}", recon.pair_id, view.tag()),
                            pairs: sampled,
                        });
                    }
                    retained.push(*recon);
                } else {
                    *report.rejections.entry("threshold".into()).or_default() += 1;
                }
                report.pairs.push(PairOutcome {
                    pair_id: pair.pair_id.clone(),
                    score: Some(score),
                    retained: keep,
                    reason: (!keep).then(|| "threshold".into()),
                });
            }
        }
    }
    report.n_records = records.len();
    Ok(PipelineOutput { records, report, retained })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub threshold: f64,
    pub retained: usize,
    pub fraction: f64,
    pub mean_quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub retained: usize,
    pub mean_quality: f64,
    /// One row per distinct score, highest threshold first.
    pub table: Vec<TradeoffRow>,
}

impl ThresholdChoice {
    pub fn table_csv(&self) -> String {
        let mut s = String::from("threshold,retained,fraction,mean_quality\n");
        for r in &self.table {
            s.push_str(&format!("{},{},{},{}\n", r.threshold, r.retained, r.fraction, r.mean_quality));
        }
        s
    }
}

/// Smallest score threshold whose retained set (score >= threshold) has mean quality at
/// least `target`. Means within 1e-12 relative of the target count as reaching it, so
/// passing a mean computed in a different summation order still selects the full set.
pub fn choose_threshold(scored: &[(f64, f64)], target: f64) -> Result<ThresholdChoice, ForgeError> {
    if scored.is_empty() {
        return Err(ForgeError::EmptyCorpus);
    }
    let mut items = scored.to_vec();
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n = items.len();
    let mut table = Vec::new();
    let mut sum = 0.0;
    let mut i = 0;
    while i < n {
        let s = items[i].0;
        while i < n && items[i].0 == s {
            sum += items[i].1;
            i += 1;
        }
        table.push(TradeoffRow { threshold: s, retained: i, fraction: i as f64 / n as f64, mean_quality: sum / i as f64 });
    }
    let slack = 1e-12 * target.abs();
    let best = table.iter().map(|r| r.mean_quality).fold(f64::NEG_INFINITY, f64::max);
    let pick = table
        .iter()
        .rev()
        .find(|r| r.mean_quality >= target - slack)
        .ok_or(ForgeError::TargetUnreachable { target, best })?;
    Ok(ThresholdChoice { threshold: pick.threshold, retained: pick.retained, mean_quality: pick.mean_quality, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraModel, Correspondence, FundamentalMatrix, Mat3, ReconPoint, RelativePose, Vec3};

    fn recon(depths: &[(f64, f64)]) -> Reconstruction {
        let points = depths
            .iter()
            .enumerate()
            .map(|(i, &(da, db))| ReconPoint {
                corr: Correspondence::new(i, 10.0 + i as f64, 20.0, 30.0 + i as f64, 40.0),
                x: Vec3::new(0.0, 0.0, da),
                depth_a: da,
                depth_b: db,
                reproj_err: 0.0,
                sampson: 0.0,
                ray_angle: 0.1,
            })
            .collect();
        Reconstruction {
            pair_id: "r".into(),
            width: 640,
            height: 480,
            camera: CameraModel::centered(500.0, 640, 480),
            pose: RelativePose { r: Mat3::identity(), t: Vec3::x() },
            fundamental: FundamentalMatrix { f: Mat3::identity(), inlier_ids: vec![] },
            points,
            mean_reproj: 0.0,
        }
    }

    #[test]
    fn two_points() {
        let r = recon(&[(2.0, 1.0), (1.0, 1.5)]);
        let a = sample_pairs(&r, View::A, 281, 1.03, 0);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].closer, Closer::B);
        assert_eq!((a[0].xb, a[0].yb), (11.0, 20.0));
        let b = sample_pairs(&r, View::B, 281, 1.03, 0);
        assert_eq!(b[0].closer, Closer::A);
        assert_eq!((b[0].xa, b[0].ya), (30.0, 40.0));
    }

    #[test]
    fn equal_depths_give_nothing() {
        let r = recon(&[(3.0, 3.0); 10]);
        assert!(sample_pairs(&r, View::A, 281, 1.03, 0).is_empty());
    }

    #[test]
    fn cap_is_reached_on_large_reconstructions() {
        let depths: Vec<(f64, f64)> = (0..300).map(|i| (1.0 + i as f64, 300.0 - i as f64)).collect();
        let r = recon(&depths);
        let s = sample_pairs(&r, View::A, 281, 1.03, 9);
        assert_eq!(s.len(), 281);
        assert_eq!(s, sample_pairs(&r, View::A, 281, 1.03, 9));
        assert_ne!(s, sample_pairs(&r, View::A, 281, 1.03, 10));
    }

    #[test]
    fn threshold_choice() {
        let scored = [(0.9, 1.0), (0.8, 0.9), (0.8, 0.7), (0.1, 0.2)];
        let c = choose_threshold(&scored, 0.85).unwrap();
        assert_eq!(c.table.len(), 3);
        assert_eq!(c.threshold, 0.8);
        assert_eq!(c.retained, 3);
        let mean = scored.iter().map(|s| s.1).sum::<f64>() / 4.0;
        assert_eq!(choose_threshold(&scored, mean).unwrap().threshold, 0.1);
        assert!(matches!(choose_threshold(&scored, 1.01), Err(ForgeError::TargetUnreachable { .. })));
        assert!(c.table_csv().starts_with("threshold,retained,fraction,mean_quality\n0.9,1,0.25,1\n"));
    }

    #[test]
    fn config_validation() {
        let frac = PipelineConfig { retain: RetainRule::TopFraction(0.0), ..PipelineConfig::default() };
        assert!(frac.validate().is_err());
        let nan = PipelineConfig { retain: RetainRule::Threshold(f64::NAN), ..PipelineConfig::default() };
        assert!(nan.validate().is_err());
        let json = r#"{"retain": {"top_fraction": 0.2}, "seed": 3}"#;
        let cfg: PipelineConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.retain, RetainRule::TopFraction(0.2));
        assert_eq!(cfg.pairs_per_image, 281);
        let margin = PipelineConfig { emission_margin: 1.0, ..PipelineConfig::default() };
        assert!(margin.validate().is_err());
        PipelineConfig::default().validate().unwrap();
    }
}
