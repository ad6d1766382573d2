//! Two-view epipolar geometry and reconstruction.
//!
//! The pipeline is: robust fundamental-matrix estimation (normalized 8-point inside
//! RANSAC), removal of every non-consensus match, a grid search over the single unknown
//! focal length, essential-matrix decomposition with a cheirality vote, and linear
//! triangulation. There is no bundle adjustment.

mod focal;
mod fundamental;
mod pose;
mod reconstruct;
mod triangulate;

pub use focal::{search_focal, FocalGrid, FocalSearch};
pub use fundamental::{eight_point, estimate_fundamental, sampson_distance, RansacConfig};
pub use pose::{decompose_essential, fundamental_from_pose};
pub use reconstruct::reconstruct_pair;
pub use triangulate::{triangulate, Triangulated};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("need at least {needed} matches, got {got}")]
    InsufficientMatches { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("both epipolar line gradients vanish")]
    ZeroDenominator,
    #[error("no pose candidate places enough points in front of both cameras")]
    NoCheiralPose,
    #[error("point lies behind a camera")]
    BehindCamera,
    #[error("median triangulation angle {median_deg:.3} deg is below the parallax floor")]
    LowParallax { median_deg: f64 },
    #[error("invalid frame pair: {0}")]
    InvalidPair(String),
}

/// Machine-readable rejection codes for a frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    InsufficientMatches,
    DegenerateConfiguration,
    NoCheiralPose,
    LowParallax,
    InvalidPair,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::InsufficientMatches => "insufficient_matches",
            RejectReason::DegenerateConfiguration => "degenerate_configuration",
            RejectReason::NoCheiralPose => "no_cheiral_pose",
            RejectReason::LowParallax => "low_parallax",
            RejectReason::InvalidPair => "invalid_pair",
        }
    }
}

impl GeometryError {
    pub fn reason(&self) -> RejectReason {
        match self {
            GeometryError::InsufficientMatches { .. } => RejectReason::InsufficientMatches,
            GeometryError::DegenerateConfiguration(_) | GeometryError::ZeroDenominator => {
                RejectReason::DegenerateConfiguration
            }
            GeometryError::NoCheiralPose | GeometryError::BehindCamera => RejectReason::NoCheiralPose,
            GeometryError::LowParallax { .. } => RejectReason::LowParallax,
            GeometryError::InvalidPair(_) => RejectReason::InvalidPair,
        }
    }
}

/// A failed frame pair, tagged with why it was rejected.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("pair {pair_id} rejected ({}): {source}", .reason.as_str())]
pub struct RejectedPair {
    pub pair_id: String,
    pub reason: RejectReason,
    pub source: GeometryError,
}

/// A matched feature across the two frames of a pair, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub id: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Correspondence {
    pub fn new(id: usize, x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { id, x1, y1, x2, y2 }
    }

    pub fn a_h(&self) -> Vec3 {
        Vec3::new(self.x1, self.y1, 1.0)
    }

    pub fn b_h(&self) -> Vec3 {
        Vec3::new(self.x2, self.y2, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePair {
    pub pair_id: String,
    pub width: u32,
    pub height: u32,
    pub matches: Vec<Correspondence>,
}

impl FramePair {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidPair("zero image dimension".into()));
        }
        if self.matches.is_empty() {
            return Err(GeometryError::InvalidPair("no matches".into()));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        let mut ids: Vec<usize> = self.matches.iter().map(|m| m.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|p| p[0] == p[1]) {
            return Err(GeometryError::InvalidPair("duplicate match id".into()));
        }
        for m in &self.matches {
            let coords = [m.x1, m.y1, m.x2, m.y2];
            if coords.iter().any(|c| !c.is_finite()) {
                return Err(GeometryError::InvalidPair(format!("match {} is not finite", m.id)));
            }
            let inside = |x: f64, y: f64| (0.0..w).contains(&x) && (0.0..h).contains(&y);
            if !inside(m.x1, m.y1) || !inside(m.x2, m.y2) {
                return Err(GeometryError::InvalidPair(format!(
                    "match {} lies outside the {}x{} image",
                    m.id, self.width, self.height
                )));
            }
        }
        Ok(())
    }

    pub fn max_dim(&self) -> f64 {
        self.width.max(self.height) as f64
    }
}

/// Rank-2, unit-Frobenius fundamental matrix with the consensus set it was fit on.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalMatrix {
    pub f: Mat3,
    pub inlier_ids: Vec<usize>,
}

/// Pinhole camera with square pixels and centered principal point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    pub fn centered(focal: f64, width: u32, height: u32) -> Self {
        Self { focal, cx: width as f64 / 2.0, cy: height as f64 / 2.0 }
    }

    pub fn k(&self) -> Mat3 {
        Mat3::new(self.focal, 0.0, self.cx, 0.0, self.focal, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel to normalized image coordinates.
    pub fn unproject(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.cx) / self.focal, (y - self.cy) / self.focal)
    }

    /// Camera-frame point to pixel.
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        (self.focal * p.x / p.z + self.cx, self.focal * p.y / p.z + self.cy)
    }
}

/// Maps camera-A coordinates into camera B: `X_b = R X_a + t`, with `|t| = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub r: Mat3,
    pub t: Vec3,
}

impl RelativePose {
    pub fn to_b(&self, x_a: &Vec3) -> Vec3 {
        self.r * x_a + self.t
    }

    /// Center of camera B expressed in the camera-A frame.
    pub fn center_b(&self) -> Vec3 {
        -(self.r.transpose() * self.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconPoint {
    pub corr: Correspondence,
    pub x: Vec3,
    pub depth_a: f64,
    pub depth_b: f64,
    /// Mean of the two per-view reprojection errors, in pixels.
    pub reproj_err: f64,
    pub sampson: f64,
    pub ray_angle: f64,
}

impl ReconPoint {
    pub fn corr_id(&self) -> usize {
        self.corr.id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub pair_id: String,
    pub width: u32,
    pub height: u32,
    pub camera: CameraModel,
    pub pose: RelativePose,
    pub fundamental: FundamentalMatrix,
    pub points: Vec<ReconPoint>,
    pub mean_reproj: f64,
}

impl Reconstruction {
    pub fn max_dim(&self) -> f64 {
        self.width.max(self.height) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SfmConfig {
    pub seed: u64,
    pub ransac: RansacConfig,
    pub grid: FocalGrid,
    pub min_inliers: usize,
    pub min_cheiral_frac: f64,
    /// Pairs whose median triangulation angle falls below this are rejected.
    pub min_median_angle_deg: f64,
}

impl Default for SfmConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            ransac: RansacConfig::default(),
            grid: FocalGrid::default(),
            min_inliers: 30,
            min_cheiral_frac: 0.8,
            min_median_angle_deg: 0.5,
        }
    }
}

/// Derives a per-item seed from a base seed and a string key, independent of processing order.
pub fn derive_seed(base: u64, key: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(key.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// SVD of a 3x3 matrix by one-sided Jacobi rotations, singular values sorted descending.
///
/// nalgebra's SVD loses ~1e-10 in reconstruction when two singular values nearly
/// coincide, which is always the case for essential matrices; Jacobi stays at machine
/// precision. Returns `None` for matrices of rank below 2.
pub(crate) fn svd3(m: &Mat3) -> Option<(Mat3, Vec3, Mat3)> {
    let mut a = *m;
    let mut v = Mat3::identity();
    for _sweep in 0..64 {
        let mut rotated = false;
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let alpha = a.column(p).norm_squared();
            let beta = a.column(q).norm_squared();
            let gamma = a.column(p).dot(&a.column(q));
            if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for mat in [&mut a, &mut v] {
                let cp: Vec3 = mat.column(p).into_owned();
                let cq: Vec3 = mat.column(q).into_owned();
                mat.set_column(p, &(cp * c - cq * s));
                mat.set_column(q, &(cp * s + cq * c));
            }
        }
        if !rotated {
            break;
        }
    }
    let norms = Vec3::new(a.column(0).norm(), a.column(1).norm(), a.column(2).norm());
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let s = Vec3::new(norms[order[0]], norms[order[1]], norms[order[2]]);
    if !(s[0] > 0.0) || s[1] <= 1e-14 * s[0] || !s[0].is_finite() {
        return None;
    }
    let mut u = Mat3::zeros();
    let mut vs = Mat3::zeros();
    for (k, &i) in order.iter().enumerate() {
        vs.set_column(k, &v.column(i));
        if k < 2 {
            u.set_column(k, &(a.column(i) / s[k]));
        }
    }
    let u3: Vec3 = if s[2] > 1e-14 * s[0] {
        a.column(order[2]) / s[2]
    } else {
        let c: Vec3 = u.column(0).cross(&u.column(1));
        c.normalize()
    };
    u.set_column(2, &u3);
    Some((u, s, vs.transpose()))
}

#[cfg(test)]
mod svd_tests {
    use super::*;

    #[test]
    fn jacobi_svd_reconstructs_clustered_spectrum() {
        let r1 = *nalgebra::Rotation3::from_euler_angles(0.3, -0.7, 1.1).matrix();
        let r2 = *nalgebra::Rotation3::from_euler_angles(-1.2, 0.4, 0.2).matrix();
        for diag in [[1.0, 1.0, 0.0], [0.7081, 0.7061, 0.0], [3.0, 2.0, 1.0], [1.0, 1e-3, 0.0]] {
            let m = r1 * Mat3::from_diagonal(&Vec3::from(diag)) * r2;
            let (u, s, v_t) = svd3(&m).unwrap();
            assert!((u * Mat3::from_diagonal(&s) * v_t - m).norm() < 1e-15 * 10.0);
            assert!((u.transpose() * u - Mat3::identity()).norm() < 1e-14);
            assert!((v_t * v_t.transpose() - Mat3::identity()).norm() < 1e-14);
            assert!(s[0] >= s[1] && s[1] >= s[2]);
        }
    }
}
