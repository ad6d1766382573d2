//! File formats: match files, JSON-lines records, manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    fundamental_from_pose, CameraModel, Correspondence, FramePair, FundamentalMatrix, Mat3, ReconPoint,
    Reconstruction, RelativePose, Vec3,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("invalid record {pair_id}: {msg}")]
    InvalidRecord { pair_id: String, msg: String },
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io { path: path.into(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.into(), source })?;
    }
    fs::write(path, text).map_err(|source| IoError::Io { path: path.into(), source })
}

/// `PAIR <pair_id> <width> <height> <n>` followed by `n` lines of `x1 y1 x2 y2`.
/// Blank lines and lines starting with `#` are ignored. Match ids are line indices.
pub fn parse_match_file(text: &str) -> Result<FramePair, IoError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hl, header) = lines.next().ok_or(IoError::Parse { line: 0, msg: "empty match file".into() })?;
    let err = |line: usize, msg: String| IoError::Parse { line, msg };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "PAIR" {
        return Err(err(hl, "expected `PAIR <pair_id> <width> <height> <n_matches>`".into()));
    }
    let num = |s: &str, what: &str| s.parse::<u64>().map_err(|e| err(hl, format!("{what}: {e}")));
    let width = u32::try_from(num(fields[2], "width")?).map_err(|e| err(hl, e.to_string()))?;
    let height = u32::try_from(num(fields[3], "height")?).map_err(|e| err(hl, e.to_string()))?;
    let n = num(fields[4], "n_matches")? as usize;
    let mut matches = Vec::with_capacity(n);
    for (line, l) in lines {
        if matches.len() == n {
            return Err(err(line, format!("more than the {n} declared matches")));
        }
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| err(line, format!("{t:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        if v.len() != 4 {
            return Err(err(line, format!("expected 4 coordinates, got {}", v.len())));
        }
        matches.push(Correspondence::new(matches.len(), v[0], v[1], v[2], v[3]));
    }
    if matches.len() != n {
        return Err(err(hl, format!("declared {n} matches, found {}", matches.len())));
    }
    Ok(FramePair { pair_id: fields[1].to_string(), width, height, matches })
}

/// Inverse of [`parse_match_file`]; coordinates are written in shortest round-trip form.
/// Match ids are not stored, so they must already equal the line indices to survive.
pub fn format_match_file(pair: &FramePair) -> String {
    let mut s = format!("PAIR {} {} {} {}\n", pair.pair_id, pair.width, pair.height, pair.matches.len());
    for m in &pair.matches {
        let _ = writeln!(s, "{} {} {} {}", m.x1, m.y1, m.x2, m.y2);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub id: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    #[serde(rename = "X")]
    pub x: [f64; 3],
    pub depth_a: f64,
    pub depth_b: f64,
    pub reproj: f64,
    pub sampson: f64,
    pub angle: f64,
}

/// One reconstruction as stored on disk, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconRecord {
    pub pair_id: String,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub mean_reproj: f64,
    pub pose: PoseRecord,
    pub points: Vec<PointRecord>,
}

impl From<&Reconstruction> for ReconRecord {
    fn from(r: &Reconstruction) -> Self {
        let mut rm = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rm[3 * i + j] = r.pose.r[(i, j)];
            }
        }
        ReconRecord {
            pair_id: r.pair_id.clone(),
            width: r.width,
            height: r.height,
            focal: r.camera.focal,
            mean_reproj: r.mean_reproj,
            pose: PoseRecord { r: rm, t: [r.pose.t.x, r.pose.t.y, r.pose.t.z] },
            points: r
                .points
                .iter()
                .map(|p| PointRecord {
                    id: p.corr.id,
                    x1: p.corr.x1,
                    y1: p.corr.y1,
                    x2: p.corr.x2,
                    y2: p.corr.y2,
                    x: [p.x.x, p.x.y, p.x.z],
                    depth_a: p.depth_a,
                    depth_b: p.depth_b,
                    reproj: p.reproj_err,
                    sampson: p.sampson,
                    angle: p.ray_angle,
                })
                .collect(),
        }
    }
}

impl ReconRecord {
    /// Rebuilds the reconstruction. The fundamental matrix is not stored; it is derived
    /// from the camera and pose, and its consensus set is the stored point ids.
    pub fn to_reconstruction(&self) -> Result<Reconstruction, IoError> {
        let bad = |msg: &str| IoError::InvalidRecord { pair_id: self.pair_id.clone(), msg: msg.into() };
        if self.width == 0 || self.height == 0 {
            return Err(bad("zero image dimension"));
        }
        if !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(bad("focal must be positive"));
        }
        if self.points.is_empty() {
            return Err(bad("no points"));
        }
        let camera = CameraModel::centered(self.focal, self.width, self.height);
        let pose = RelativePose { r: Mat3::from_row_slice(&self.pose.r), t: Vec3::from(self.pose.t) };
        let points = self
            .points
            .iter()
            .map(|p| ReconPoint {
                corr: Correspondence::new(p.id, p.x1, p.y1, p.x2, p.y2),
                x: Vec3::from(p.x),
                depth_a: p.depth_a,
                depth_b: p.depth_b,
                reproj_err: p.reproj,
                sampson: p.sampson,
                ray_angle: p.angle,
            })
            .collect();
        Ok(Reconstruction {
            pair_id: self.pair_id.clone(),
            width: self.width,
            height: self.height,
            camera,
            pose,
            fundamental: FundamentalMatrix {
                f: fundamental_from_pose(&camera, &pose),
                inlier_ids: self.points.iter().map(|p| p.id).collect(),
            },
            points,
            mean_reproj: self.mean_reproj,
        })
    }
}

/// One line of a synthetic corpus manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub pair_id: String,
    pub spec_hash: String,
    /// `None` when the pair was rejected or had no reliable depth ordering.
    pub gt_quality: Option<f64>,
    /// Rejection code when reconstruction failed.
    pub rejected: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub pair_id: String,
    pub score: f64,
}

/// Serializes one value per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("record serializes"));
        s.push('\n');
    }
    s
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, IoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| IoError::Json { line: i + 1, source }))
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    parse_jsonl(&read_text(path)?).map_err(|e| match e {
        IoError::Json { line, source } => IoError::Parse { line, msg: format!("{}: {source}", path.display()) },
        other => other,
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    write_text(path, &to_jsonl(items))
}
