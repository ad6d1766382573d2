//! Geometric cues fed to the quality network. Nothing here looks at pixel values; a
//! reconstruction record is all that is needed.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Reconstruction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CueError {
    #[error("non-finite cue value in {pair_id}")]
    NonFiniteCue { pair_id: String },
    #[error("every point-wise cue was dropped")]
    EmptyCues,
    #[error("reconstruction {0} has no points")]
    NoPoints(String),
}

/// Cue groups that can be ablated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CueName {
    Coords2D,
    Sampson,
    Angle,
    Focal,
    /// Both the per-point and the mean reprojection error.
    RepErr,
}

impl CueName {
    pub const ALL: [CueName; 5] =
        [CueName::Coords2D, CueName::Sampson, CueName::Angle, CueName::Focal, CueName::RepErr];

    /// Short label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            CueName::Coords2D => "2D",
            CueName::Sampson => "Sam",
            CueName::Angle => "Ang",
            CueName::Focal => "Focal",
            CueName::RepErr => "RepErr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().trim_start_matches('-').to_ascii_lowercase();
        Some(match s.as_str() {
            "2d" | "coords2d" | "coords" => CueName::Coords2D,
            "sam" | "sampson" => CueName::Sampson,
            "ang" | "angle" => CueName::Angle,
            "focal" => CueName::Focal,
            "reperr" | "reproj" => CueName::RepErr,
            _ => return None,
        })
    }
}

/// Which cue columns are present. Column order is fixed:
/// points `(x1, y1, x2, y2, sampson, angle, reproj)`, reconstruction `(focal, mean_reproj)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CueMask {
    pub coords: bool,
    pub sampson: bool,
    pub angle: bool,
    pub point_reproj: bool,
    pub focal: bool,
    pub mean_reproj: bool,
}

impl Default for CueMask {
    fn default() -> Self {
        Self::full()
    }
}

impl CueMask {
    pub fn full() -> Self {
        Self { coords: true, sampson: true, angle: true, point_reproj: true, focal: true, mean_reproj: true }
    }

    /// Only coordinates, Sampson distance and ray angle per point.
    pub fn strict_point_cues() -> Self {
        Self { point_reproj: false, ..Self::full() }
    }

    pub fn without(mut self, drop: &BTreeSet<CueName>) -> Self {
        for name in drop {
            match name {
                CueName::Coords2D => self.coords = false,
                CueName::Sampson => self.sampson = false,
                CueName::Angle => self.angle = false,
                CueName::Focal => self.focal = false,
                CueName::RepErr => {
                    self.point_reproj = false;
                    self.mean_reproj = false;
                }
            }
        }
        self
    }

    fn point_columns(&self) -> [bool; 7] {
        let c = self.coords;
        [c, c, c, c, self.sampson, self.angle, self.point_reproj]
    }

    fn recon_columns(&self) -> [bool; 2] {
        [self.focal, self.mean_reproj]
    }

    pub fn point_dim(&self) -> usize {
        self.point_columns().iter().filter(|&&b| b).count()
    }

    pub fn recon_dim(&self) -> usize {
        self.recon_columns().iter().filter(|&&b| b).count()
    }
}

/// Network input for one reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CueRecord", into = "CueRecord")]
pub struct CueVector {
    pub pair_id: String,
    pub mask: CueMask,
    pub recon_cues: Vec<f64>,
    /// Row-major `n x point_dim`.
    pub point_cues: Vec<f64>,
    pub n: usize,
}

impl CueVector {
    pub fn point_dim(&self) -> usize {
        self.mask.point_dim()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.point_dim();
        &self.point_cues[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.point_cues.chunks_exact(self.point_dim().max(1))
    }

    /// Same cues with the point rows reordered: row `k` of the result is row `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> CueVector {
        let mut out = self.clone();
        out.point_cues = perm.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        out
    }
}

#[derive(Serialize, Deserialize)]
struct CueRecord {
    pair_id: String,
    mask: CueMask,
    recon_cues: Vec<f64>,
    point_cues: Vec<Vec<f64>>,
    n: usize,
}

impl From<CueVector> for CueRecord {
    fn from(cv: CueVector) -> Self {
        let point_cues = cv.rows().map(<[f64]>::to_vec).collect();
        CueRecord { pair_id: cv.pair_id, mask: cv.mask, recon_cues: cv.recon_cues, point_cues, n: cv.n }
    }
}

impl TryFrom<CueRecord> for CueVector {
    type Error = String;

    fn try_from(r: CueRecord) -> Result<Self, String> {
        let d = r.mask.point_dim();
        if r.point_cues.len() != r.n || r.point_cues.iter().any(|row| row.len() != d) {
            return Err(format!("point_cues of {} do not match n = {} and mask width {}", r.pair_id, r.n, d));
        }
        if r.recon_cues.len() != r.mask.recon_dim() {
            return Err(format!("recon_cues of {} do not match the mask", r.pair_id));
        }
        Ok(CueVector {
            pair_id: r.pair_id,
            mask: r.mask,
            recon_cues: r.recon_cues,
            point_cues: r.point_cues.into_iter().flatten().collect(),
            n: r.n,
        })
    }
}

/// Full cue vector: 2 reconstruction-wise cues and 7 cues per point.
pub fn extract_cues(recon: &Reconstruction) -> Result<CueVector, CueError> {
    if recon.points.is_empty() {
        return Err(CueError::NoPoints(recon.pair_id.clone()));
    }
    let scale = recon.max_dim();
    let (w, h) = (recon.width as f64, recon.height as f64);
    let mut point_cues = Vec::with_capacity(recon.points.len() * 7);
    let mut points: Vec<_> = recon.points.iter().collect();
    points.sort_by_key(|p| p.corr_id());
    for p in points {
        let c = &p.corr;
        point_cues.extend_from_slice(&[
            (2.0 * c.x1 - w) / scale,
            (2.0 * c.y1 - h) / scale,
            (2.0 * c.x2 - w) / scale,
            (2.0 * c.y2 - h) / scale,
            p.sampson.ln_1p(),
            p.ray_angle,
            p.reproj_err.ln_1p(),
        ]);
    }
    let recon_cues = vec![recon.camera.focal / scale, recon.mean_reproj.ln_1p()];
    if point_cues.iter().chain(&recon_cues).any(|v| !v.is_finite()) {
        return Err(CueError::NonFiniteCue { pair_id: recon.pair_id.clone() });
    }
    Ok(CueVector {
        pair_id: recon.pair_id.clone(),
        mask: CueMask::full(),
        recon_cues,
        point_cues,
        n: recon.points.len(),
    })
}

/// Restricts a cue vector to the columns enabled in `mask` (which must be a subset of the
/// vector's own mask).
pub fn apply_mask(cv: &CueVector, mask: CueMask) -> Result<CueVector, CueError> {
    if mask.point_dim() == 0 {
        return Err(CueError::EmptyCues);
    }
    let have_p = cv.mask.point_columns();
    let want_p = mask.point_columns();
    let have_r = cv.mask.recon_columns();
    let want_r = mask.recon_columns();
    let select = |have: &[bool], want: &[bool]| -> Vec<usize> {
        // Index into the present columns for each wanted column.
        let mut idx = Vec::new();
        let mut pos = 0;
        for (h, w) in have.iter().zip(want) {
            if *h {
                if *w {
                    idx.push(pos);
                }
                pos += 1;
            }
        }
        idx
    };
    if want_p.iter().zip(&have_p).any(|(w, h)| *w && !h) || want_r.iter().zip(&have_r).any(|(w, h)| *w && !h) {
        // Asking for a column that is not there; keep only the intersection.
        let inter = CueMask {
            coords: mask.coords && cv.mask.coords,
            sampson: mask.sampson && cv.mask.sampson,
            angle: mask.angle && cv.mask.angle,
            point_reproj: mask.point_reproj && cv.mask.point_reproj,
            focal: mask.focal && cv.mask.focal,
            mean_reproj: mask.mean_reproj && cv.mask.mean_reproj,
        };
        return apply_mask(cv, inter);
    }
    let pcols = select(&have_p, &want_p);
    let rcols = select(&have_r, &want_r);
    let point_cues = cv.rows().flat_map(|row| pcols.iter().map(move |&j| row[j])).collect();
    let recon_cues = rcols.iter().map(|&j| cv.recon_cues[j]).collect();
    Ok(CueVector { pair_id: cv.pair_id.clone(), mask, recon_cues, point_cues, n: cv.n })
}

/// Drops the named cue groups.
pub fn ablate_cues(cv: &CueVector, drop: &BTreeSet<CueName>) -> Result<CueVector, CueError> {
    apply_mask(cv, cv.mask.without(drop))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        CameraModel, Correspondence, FundamentalMatrix, Mat3, ReconPoint, RelativePose, Vec3,
    };

    fn recon() -> Reconstruction {
        let pts = (0..4)
            .map(|i| ReconPoint {
                corr: Correspondence::new(3 - i, 320.0 + i as f64, 240.0, 300.0, 250.0 + i as f64),
                x: Vec3::new(0.0, 0.0, 5.0),
                depth_a: 5.0,
                depth_b: 5.0,
                reproj_err: 0.5 * i as f64,
                sampson: 0.1 * i as f64,
                ray_angle: 0.1,
            })
            .collect();
        Reconstruction {
            pair_id: "r".into(),
            width: 640,
            height: 480,
            camera: CameraModel::centered(640.0, 640, 480),
            pose: RelativePose { r: Mat3::identity(), t: Vec3::x() },
            fundamental: FundamentalMatrix { f: Mat3::identity(), inlier_ids: vec![] },
            points: pts,
            mean_reproj: 0.75,
        }
    }

    #[test]
    fn center_maps_to_zero_and_rows_follow_id_order() {
        let cv = extract_cues(&recon()).unwrap();
        assert_eq!(cv.n, 4);
        assert_eq!(cv.point_dim(), 7);
        // id 0 is the point at x1 = 323.
        let last = cv.row(3);
        assert_eq!(last[0], 0.0);
        assert_eq!(last[1], 0.0);
        assert!((cv.row(0)[0] - 6.0 / 640.0).abs() < 1e-15);
        assert_eq!(cv.recon_cues, vec![1.0, 0.75f64.ln_1p()]);
    }

    #[test]
    fn ablation_widths() {
        let cv = extract_cues(&recon()).unwrap();
        assert_eq!(ablate_cues(&cv, &BTreeSet::new()).unwrap(), cv);
        let no2d = ablate_cues(&cv, &[CueName::Coords2D].into()).unwrap();
        assert_eq!(no2d.point_dim(), 3);
        assert_eq!(no2d.point_cues.len(), 12);
        assert_eq!(no2d.row(3), &cv.row(3)[4..]);
        let no_recon = ablate_cues(&cv, &[CueName::Focal, CueName::RepErr].into()).unwrap();
        assert!(no_recon.recon_cues.is_empty());
        assert_eq!(no_recon.point_dim(), 6);
        let all: BTreeSet<_> = CueName::ALL.into_iter().collect();
        assert_eq!(ablate_cues(&cv, &all), Err(CueError::EmptyCues));
        let point_only =
            ablate_cues(&cv, &[CueName::Coords2D, CueName::Sampson, CueName::Angle, CueName::RepErr].into());
        assert_eq!(point_only, Err(CueError::EmptyCues));
    }

    #[test]
    fn non_finite_cue_is_rejected() {
        let mut r = recon();
        r.points[1].sampson = f64::NAN;
        assert!(matches!(extract_cues(&r), Err(CueError::NonFiniteCue { .. })));
    }

    #[test]
    fn json_round_trip() {
        let cv = extract_cues(&recon()).unwrap();
        let s = serde_json::to_string(&cv).unwrap();
        let back: CueVector = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cv);
        assert!(s.contains("\"point_cues\":[["));
    }

    #[test]
    fn names_parse() {
        for n in CueName::ALL {
            assert_eq!(CueName::parse(n.label()), Some(n));
            assert_eq!(CueName::parse(&format!("-{}", n.label())), Some(n));
        }
        assert_eq!(CueName::parse("pixels"), None);
    }
}
