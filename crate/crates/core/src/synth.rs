//! Synthetic two-view scenes with known ground truth, plus the relative-depth quality
//! score that compares a reconstruction against that ground truth.

use std::collections::HashMap;

use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{
    derive_seed, fundamental_from_pose, reconstruct_pair, sampson_distance, CameraModel,
    Correspondence, FramePair, Mat3, Reconstruction, RejectedPair, RelativePose, SfmConfig, Vec3,
};

/// Random frame-B coordinates closer than this (Sampson, squared px) to the true
/// epipolar geometry are redrawn, so every labelled outlier is geometrically inconsistent.
pub const OUTLIER_MIN_SAMPSON: f64 = 16.0;

/// Depth ratio below which a ground-truth pair has no reliable ordering.
pub const DEFAULT_ORDER_MARGIN: f64 = 1.02;

const EXACT_PAIR_LIMIT: usize = 2000;
const SAMPLED_PAIRS: usize = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("placed only {placed} of {wanted} visible points")]
    FrustumExhausted { placed: usize, wanted: usize },
    #[error("no point pair has a reliable ground-truth ordering")]
    NoEligiblePairs,
    #[error("correspondence {0} has no ground truth")]
    MissingGroundTruth(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub n_points: usize,
    pub f_true: f64,
    pub width: u32,
    pub height: u32,
    /// Direction from camera A's center to camera B's; the baseline has unit length.
    pub baseline_dir: [f64; 3],
    pub rot_deg: f64,
    /// Depth range in camera A, in baseline units.
    pub depth_range: (f64, f64),
    pub noise_px: f64,
    pub outlier_frac: f64,
    pub moving_frac: f64,
    pub moving_mag: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_points: 200,
            f_true: 600.0,
            width: 640,
            height: 480,
            baseline_dir: [1.0, 0.0, 0.0],
            rot_deg: 5.0,
            depth_range: (3.0, 15.0),
            noise_px: 0.0,
            outlier_frac: 0.0,
            moving_frac: 0.0,
            moving_mag: 0.5,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        let (near, far) = self.depth_range;
        if !(near > 0.0) || !(far > near) {
            return bad("depth range must satisfy 0 < near < far");
        }
        if self.width == 0 || self.height == 0 || !(self.f_true > 0.0) {
            return bad("image size and focal must be positive");
        }
        if !(0.0..1.0).contains(&self.outlier_frac) || !(0.0..1.0).contains(&self.moving_frac) {
            return bad("outlier_frac and moving_frac must lie in [0, 1)");
        }
        if self.outlier_frac + self.moving_frac >= 1.0 {
            return bad("outlier_frac + moving_frac must be < 1");
        }
        if !(self.noise_px >= 0.0) || !(self.moving_mag >= 0.0) || !(self.rot_deg.is_finite()) {
            return bad("noise, motion magnitude and rotation must be finite and non-negative");
        }
        let d = Vec3::from(self.baseline_dir);
        if !(d.norm() > 0.0) || !d.norm().is_finite() {
            return bad("baseline direction must be a nonzero vector");
        }
        if self.n_points == 0 {
            return bad("n_points must be positive");
        }
        Ok(())
    }

    pub fn pair_id(&self) -> String {
        format!("synth-{:016x}", self.seed)
    }

    /// Short content hash of the spec, stable across runs.
    pub fn spec_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointLabel {
    Inlier,
    Outlier,
    Moving,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtPoint {
    pub id: usize,
    pub depth_a: f64,
    pub depth_b: f64,
    pub label: PointLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pair_id: String,
    pub f_true: f64,
    /// Row-major rotation of `X_b = R X_a + t`.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub points: Vec<GtPoint>,
}

impl GroundTruth {
    pub fn pose(&self) -> RelativePose {
        RelativePose { r: Mat3::from_row_slice(&self.r), t: Vec3::from(self.t) }
    }

    pub fn count(&self, label: PointLabel) -> usize {
        self.points.iter().filter(|p| p.label == label).count()
    }
}

fn sample_depth(rng: &mut ChaCha8Rng, near: f64, far: f64) -> f64 {
    // Uniform in frustum volume: density grows with z^2.
    let (a, b) = (near.powi(3), far.powi(3));
    (a + rng.gen::<f64>() * (b - a)).cbrt()
}

/// Samples a two-view scene: rigid points, optional independently moving points and
/// random-coordinate outliers, with Gaussian pixel noise on both frames.
pub fn generate_scene(spec: &SceneSpec) -> Result<(FramePair, GroundTruth), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let camera = CameraModel::centered(spec.f_true, spec.width, spec.height);
    let (w, h) = (spec.width as f64, spec.height as f64);

    let axis: [f64; 3] = UnitSphere.sample(&mut rng);
    let rot = *Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::from(axis)), spec.rot_deg.to_radians())
        .matrix();
    let center_b = Vec3::from(spec.baseline_dir).normalize();
    let pose = RelativePose { r: rot, t: -(rot * center_b) };
    let true_f = fundamental_from_pose(&camera, &pose);

    let n = spec.n_points;
    let n_out = (spec.outlier_frac * n as f64).floor() as usize;
    let n_mov = (spec.moving_frac * n as f64).floor() as usize;
    let mut labels = vec![PointLabel::Inlier; n];
    for (k, i) in rand::seq::index::sample(&mut rng, n, n_out + n_mov).into_iter().enumerate() {
        labels[i] = if k < n_out { PointLabel::Outlier } else { PointLabel::Moving };
    }

    let noise = Normal::new(0.0, spec.noise_px).expect("noise validated non-negative");
    let inside = |x: f64, y: f64| (0.0..w).contains(&x) && (0.0..h).contains(&y);
    let (near, far) = spec.depth_range;
    let budget = 10 * n;
    let mut attempts = 0;
    let mut matches = Vec::with_capacity(n);
    let mut gt = Vec::with_capacity(n);

    for (id, &label) in labels.iter().enumerate() {
        loop {
            attempts += 1;
            if attempts > budget {
                return Err(SynthError::FrustumExhausted { placed: matches.len(), wanted: n });
            }
            let (u, v) = (rng.gen::<f64>() * w, rng.gen::<f64>() * h);
            let z = sample_depth(&mut rng, near, far);
            let (nx, ny) = camera.unproject(u, v);
            let x_a = Vec3::new(nx * z, ny * z, z);
            let displaced = if label == PointLabel::Moving {
                let d: [f64; 3] = UnitSphere.sample(&mut rng);
                x_a + Vec3::from(d) * spec.moving_mag
            } else {
                x_a
            };
            let x_b = pose.to_b(&displaced);
            if x_b.z <= 0.0 {
                continue;
            }
            let (pu, pv) = camera.project(&x_b);
            if !inside(pu, pv) {
                continue;
            }
            let (x1, y1) = (u + noise.sample(&mut rng), v + noise.sample(&mut rng));
            let (mut x2, mut y2) = (pu + noise.sample(&mut rng), pv + noise.sample(&mut rng));
            if !inside(x1, y1) || !inside(x2, y2) {
                continue;
            }
            if label == PointLabel::Outlier {
                loop {
                    attempts += 1;
                    if attempts > budget {
                        return Err(SynthError::FrustumExhausted { placed: matches.len(), wanted: n });
                    }
                    x2 = rng.gen::<f64>() * w;
                    y2 = rng.gen::<f64>() * h;
                    let c = Correspondence::new(id, x1, y1, x2, y2);
                    if sampson_distance(&true_f, &c).map_or(true, |d| d >= OUTLIER_MIN_SAMPSON) {
                        break;
                    }
                }
            }
            matches.push(Correspondence::new(id, x1, y1, x2, y2));
            gt.push(GtPoint { id, depth_a: x_a.z, depth_b: x_b.z, label });
            break;
        }
    }

    let pair = FramePair { pair_id: spec.pair_id(), width: spec.width, height: spec.height, matches };
    let mut r = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            r[3 * i + j] = pose.r[(i, j)];
        }
    }
    let truth = GroundTruth {
        pair_id: pair.pair_id.clone(),
        f_true: spec.f_true,
        r,
        t: [pose.t.x, pose.t.y, pose.t.z],
        points: gt,
    };
    Ok((pair, truth))
}

fn pair_agrees(recon: &[f64], truth: &[f64], i: usize, j: usize, margin: f64) -> Option<bool> {
    let (ti, tj) = (truth[i], truth[j]);
    if ti.max(tj) / ti.min(tj) < margin {
        return None;
    }
    let want = (ti - tj).signum();
    let got = recon[i] - recon[j];
    Some(got != 0.0 && got.signum() == want)
}

/// Fraction of point pairs whose reconstructed depth order matches the truth.
///
/// Pairs whose true depth ratio is below `margin` are skipped. Returns `None` when no
/// pair is eligible. Exact over all pairs up to 2000 points; beyond that a seeded
/// uniform sample of pairs is used.
pub fn ordering_agreement(recon: &[f64], truth: &[f64], margin: f64, seed: u64) -> Option<f64> {
    assert_eq!(recon.len(), truth.len());
    let n = recon.len();
    let (mut agree, mut total) = (0usize, 0usize);
    if n <= EXACT_PAIR_LIMIT {
        for i in 0..n {
            for j in (i + 1)..n {
                if let Some(ok) = pair_agrees(recon, truth, i, j, margin) {
                    total += 1;
                    agree += ok as usize;
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..SAMPLED_PAIRS {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            if let Some(ok) = pair_agrees(recon, truth, i, j, margin) {
                total += 1;
                agree += ok as usize;
            }
        }
    }
    (total > 0).then(|| agree as f64 / total as f64)
}

/// Ground-truth relative-depth quality of a reconstruction, averaged over both views.
///
/// A view without eligible pairs is left out of the average.
pub fn gt_quality(recon: &Reconstruction, gt: &GroundTruth, margin: f64) -> Result<f64, SynthError> {
    let by_id: HashMap<usize, &GtPoint> = gt.points.iter().map(|p| (p.id, p)).collect();
    let n = recon.points.len();
    let mut rec_a = Vec::with_capacity(n);
    let mut rec_b = Vec::with_capacity(n);
    let mut tru_a = Vec::with_capacity(n);
    let mut tru_b = Vec::with_capacity(n);
    for p in &recon.points {
        let g = by_id.get(&p.corr_id()).ok_or(SynthError::MissingGroundTruth(p.corr_id()))?;
        rec_a.push(p.depth_a);
        rec_b.push(p.depth_b);
        tru_a.push(g.depth_a);
        tru_b.push(g.depth_b);
    }
    let seed = derive_seed(0, &recon.pair_id);
    let views: Vec<f64> = [
        ordering_agreement(&rec_a, &tru_a, margin, seed),
        ordering_agreement(&rec_b, &tru_b, margin, seed ^ 1),
    ]
    .into_iter()
    .flatten()
    .collect();
    if views.is_empty() {
        return Err(SynthError::NoEligiblePairs);
    }
    Ok(views.iter().sum::<f64>() / views.len() as f64)
}

/// Per-scene hyperparameter ranges for a QANet training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusRecipe {
    pub width: u32,
    pub height: u32,
    pub noise_px: (f64, f64),
    pub outlier_frac: (f64, f64),
    pub moving_frac: (f64, f64),
    pub rot_deg: (f64, f64),
    /// Inclusive.
    pub n_points: (usize, usize),
    /// Focal range as multiples of the larger image side, sampled log-uniformly.
    pub focal_factor: (f64, f64),
    pub depth_range: (f64, f64),
    pub moving_mag: (f64, f64),
}

impl Default for CorpusRecipe {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            noise_px: (0.0, 2.0),
            outlier_frac: (0.0, 0.3),
            moving_frac: (0.0, 0.4),
            rot_deg: (1.0, 15.0),
            n_points: (50, 400),
            focal_factor: (0.6, 1.6),
            depth_range: (3.0, 15.0),
            moving_mag: (0.05, 0.5),
        }
    }
}

impl CorpusRecipe {
    /// The `index`-th scene of a corpus rooted at `seed`.
    pub fn sample_spec(&self, seed: u64, index: u64) -> SceneSpec {
        let scene_seed = derive_seed(seed, &format!("scene-{index}"));
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed ^ 0x5eed);
        let uni = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| lo + rng.gen::<f64>() * (hi - lo);
        let max_dim = self.width.max(self.height) as f64;
        let (flo, fhi) = self.focal_factor;
        let f_true = max_dim * (flo.ln() + rng.gen::<f64>() * (fhi.ln() - flo.ln())).exp();
        let dir: [f64; 3] = UnitSphere.sample(&mut rng);
        SceneSpec {
            n_points: rng.gen_range(self.n_points.0..=self.n_points.1),
            f_true,
            width: self.width,
            height: self.height,
            baseline_dir: dir,
            rot_deg: uni(&mut rng, self.rot_deg),
            depth_range: self.depth_range,
            noise_px: uni(&mut rng, self.noise_px),
            outlier_frac: uni(&mut rng, self.outlier_frac),
            moving_frac: uni(&mut rng, self.moving_frac),
            moving_mag: uni(&mut rng, self.moving_mag),
            seed: scene_seed,
        }
    }
}

/// One generated scene and what the SfM stage made of it.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub spec: SceneSpec,
    pub pair: FramePair,
    pub truth: GroundTruth,
    pub recon: Result<Reconstruction, RejectedPair>,
    /// `None` when reconstruction failed or no pair had a reliable ordering.
    pub quality: Option<f64>,
}

pub fn build_item(spec: SceneSpec, sfm: &SfmConfig, margin: f64) -> Result<CorpusItem, SynthError> {
    let (pair, truth) = generate_scene(&spec)?;
    let recon = reconstruct_pair(&pair, sfm);
    let quality = recon.as_ref().ok().and_then(|r| gt_quality(r, &truth, margin).ok());
    Ok(CorpusItem { spec, pair, truth, recon, quality })
}

/// Generates scenes `0..count` of the corpus in parallel; output order follows the index.
/// Scenes whose generation fails are skipped.
pub fn generate_corpus(
    recipe: &CorpusRecipe,
    seed: u64,
    range: std::ops::Range<u64>,
    sfm: &SfmConfig,
    margin: f64,
) -> Vec<CorpusItem> {
    range
        .into_par_iter()
        .filter_map(|i| build_item(recipe.sample_spec(seed, i), sfm, margin).ok())
        .collect()
}

/// Generates scenes until `target` of them have a defined quality score.
pub fn generate_scored_corpus(
    recipe: &CorpusRecipe,
    seed: u64,
    target: usize,
    sfm: &SfmConfig,
    margin: f64,
) -> Vec<CorpusItem> {
    let mut out = Vec::with_capacity(target);
    let mut next = 0u64;
    while out.len() < target {
        let batch = ((target - out.len()) as u64 * 5 / 4).max(16);
        let items = generate_corpus(recipe, seed, next..next + batch, sfm, margin);
        next += batch;
        out.extend(items.into_iter().filter(|it| it.quality.is_some()).take(target - out.len()));
    }
    out
}
