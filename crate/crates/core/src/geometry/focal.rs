use serde::{Deserialize, Serialize};

use super::pose::decompose_essential;
use super::triangulate::{solve_point, triangulate};
use super::{
    sampson_distance, CameraModel, Correspondence, FundamentalMatrix, GeometryError, ReconPoint,
    RelativePose,
};

/// Candidate focal lengths, log-spaced as multiples of the larger image side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalGrid {
    pub count: usize,
    pub lo_factor: f64,
    pub hi_factor: f64,
    /// Explicit candidates in pixels; overrides the log grid when non-empty.
    pub explicit: Vec<f64>,
}

impl Default for FocalGrid {
    fn default() -> Self {
        Self { count: 40, lo_factor: 0.3, hi_factor: 3.0, explicit: Vec::new() }
    }
}

impl FocalGrid {
    pub fn explicit(values: Vec<f64>) -> Self {
        Self { explicit: values, ..Self::default() }
    }

    pub fn values(&self, max_dim: f64) -> Vec<f64> {
        if !self.explicit.is_empty() {
            return self.explicit.clone();
        }
        let lo = self.lo_factor * max_dim;
        let hi = self.hi_factor * max_dim;
        match self.count {
            0 => Vec::new(),
            1 => vec![lo],
            n => {
                let ratio = (hi / lo).ln() / (n - 1) as f64;
                (0..n).map(|k| lo * (ratio * k as f64).exp()).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocalSearch {
    pub camera: CameraModel,
    pub pose: RelativePose,
    pub points: Vec<ReconPoint>,
    pub mean_reproj: f64,
}

/// A match in normalized image coordinates, `(frame A, frame B)`.
type NormMatch = ((f64, f64), (f64, f64));

fn cheiral_count(pose: &RelativePose, norm: &[NormMatch]) -> usize {
    norm.iter()
        .filter(|(a, b)| {
            solve_point(pose, *a, *b).is_some_and(|x| x.z > 0.0 && pose.to_b(&x).z > 0.0)
        })
        .count()
}

/// Grid search over the focal length; keeps the candidate with the lowest mean
/// reprojection error after triangulation.
///
/// `matches` should be the consensus set of `f`. Points failing cheirality under the
/// selected pose are left out of the result.
pub fn search_focal(
    f: &FundamentalMatrix,
    matches: &[Correspondence],
    width: u32,
    height: u32,
    grid: &FocalGrid,
    min_cheiral_frac: f64,
) -> Result<FocalSearch, GeometryError> {
    let max_dim = width.max(height) as f64;
    let candidates = grid.values(max_dim);
    if candidates.is_empty() {
        return Err(GeometryError::InvalidPair("empty focal grid".into()));
    }
    if matches.is_empty() {
        return Err(GeometryError::InsufficientMatches { needed: 1, got: 0 });
    }
    let needed = (min_cheiral_frac * matches.len() as f64).ceil() as usize;

    let mut best: Option<(f64, CameraModel, RelativePose)> = None;
    for &focal in &candidates {
        let camera = CameraModel::centered(focal, width, height);
        let k = camera.k();
        let e = k.transpose() * f.f * k;
        let Ok(poses) = decompose_essential(&e) else { continue };
        let norm: Vec<_> = matches
            .iter()
            .map(|m| (camera.unproject(m.x1, m.y1), camera.unproject(m.x2, m.y2)))
            .collect();
        let mut chosen = poses[0];
        let mut chosen_count = 0;
        for pose in poses {
            let count = cheiral_count(&pose, &norm);
            if count > chosen_count {
                chosen = pose;
                chosen_count = count;
            }
        }
        if chosen_count == 0 || chosen_count < needed {
            continue;
        }
        let (sum, count) = matches
            .iter()
            .filter_map(|m| triangulate(&camera, &chosen, m).ok())
            .fold((0.0, 0usize), |(s, c), t| (s + t.reproj_err(), c + 1));
        if count == 0 {
            continue;
        }
        let mean = sum / count as f64;
        if best.as_ref().is_none_or(|(b, _, _)| mean < *b) {
            best = Some((mean, camera, chosen));
        }
    }
    let (_, camera, pose) = best.ok_or(GeometryError::NoCheiralPose)?;

    let mut points = Vec::with_capacity(matches.len());
    for m in matches {
        let Ok(t) = triangulate(&camera, &pose, m) else { continue };
        let Ok(sampson) = sampson_distance(&f.f, m) else { continue };
        points.push(ReconPoint {
            corr: *m,
            x: t.x,
            depth_a: t.depth_a,
            depth_b: t.depth_b,
            reproj_err: t.reproj_err(),
            sampson,
            ray_angle: t.ray_angle,
        });
    }
    if points.is_empty() {
        return Err(GeometryError::NoCheiralPose);
    }
    let mean_reproj = points.iter().map(|p| p.reproj_err).sum::<f64>() / points.len() as f64;
    Ok(FocalSearch { camera, pose, points, mean_reproj })
}
