use nalgebra::{DMatrix, Matrix3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{svd3, Correspondence, FundamentalMatrix, GeometryError, Mat3};

const MIN_SAMPLE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub max_iterations: usize,
    pub confidence: f64,
    /// Sampson distance threshold, squared pixels.
    pub threshold: f64,
    /// Consensus-set refits after the sampling phase.
    pub refine_rounds: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { max_iterations: 2000, confidence: 0.999, threshold: 1.0, refine_rounds: 5 }
    }
}

/// First-order geometric error of `c` under `f`, in squared pixels.
pub fn sampson_distance(f: &Mat3, c: &Correspondence) -> Result<f64, GeometryError> {
    let x1 = c.a_h();
    let x2 = c.b_h();
    let fx1 = f * x1;
    let ftx2 = f.transpose() * x2;
    let num = x2.dot(&fx1);
    let den = fx1.x * fx1.x + fx1.y * fx1.y + ftx2.x * ftx2.x + ftx2.y * ftx2.y;
    if den <= f64::MIN_POSITIVE {
        return Err(GeometryError::ZeroDenominator);
    }
    Ok(num * num / den)
}

/// Hartley similarity: centroid to origin, mean distance to sqrt(2).
fn normalizing_transform(pts: impl Iterator<Item = (f64, f64)> + Clone) -> Result<Mat3, GeometryError> {
    let n = pts.clone().count() as f64;
    let (sx, sy) = pts.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let mean_dist = pts.map(|(x, y)| ((x - mx).powi(2) + (y - my).powi(2)).sqrt()).sum::<f64>() / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(GeometryError::DegenerateConfiguration("all points coincide"));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0))
}

/// Normalized 8-point algorithm on every given match.
///
/// Returns a rank-2 matrix scaled to unit Frobenius norm.
pub fn eight_point(matches: &[Correspondence]) -> Result<Mat3, GeometryError> {
    let n = matches.len();
    if n < MIN_SAMPLE {
        return Err(GeometryError::InsufficientMatches { needed: MIN_SAMPLE, got: n });
    }
    let t1 = normalizing_transform(matches.iter().map(|m| (m.x1, m.y1)))?;
    let t2 = normalizing_transform(matches.iter().map(|m| (m.x2, m.y2)))?;

    // Pad to at least 9 rows so the SVD yields the full right singular basis.
    let rows = n.max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, m) in matches.iter().enumerate() {
        let p = t1 * m.a_h();
        let q = t2 * m.b_h();
        let (x, y) = (p.x / p.z, p.y / p.z);
        let (xp, yp) = (q.x / q.z, q.y / q.z);
        let row = [xp * x, xp * y, xp, yp * x, yp * y, yp, x, y, 1.0];
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateConfiguration("svd failed"))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let (largest, second_smallest) = (sv[order[0]], sv[order[7]]);
    if second_smallest <= 1e-10 * largest {
        return Err(GeometryError::DegenerateConfiguration("rank-deficient linear system"));
    }
    let null = v_t.row(order[8]);
    let f_hat = Matrix3::from_row_slice(&null.iter().copied().collect::<Vec<_>>());

    let (u, mut s, v_t) = svd3(&f_hat).ok_or(GeometryError::DegenerateConfiguration("svd failed"))?;
    s[2] = 0.0;
    let f_rank2 = u * Matrix3::from_diagonal(&s) * v_t;

    let f = t2.transpose() * f_rank2 * t1;
    let norm = f.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(GeometryError::DegenerateConfiguration("vanishing fundamental matrix"));
    }
    Ok(f / norm)
}

fn consensus(f: &Mat3, matches: &[Correspondence], threshold: f64) -> Vec<usize> {
    matches
        .iter()
        .enumerate()
        .filter(|(_, m)| matches!(sampson_distance(f, m), Ok(d) if d < threshold))
        .map(|(i, _)| i)
        .collect()
}

fn required_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let good_sample = inlier_ratio.powi(MIN_SAMPLE as i32);
    if good_sample >= 1.0 {
        return 1;
    }
    if good_sample <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - good_sample).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// RANSAC over minimal 8-point samples, then iterated refits on the consensus set.
///
/// The returned `inlier_ids` are exactly the matches whose Sampson distance under the
/// returned matrix is below the threshold.
pub fn estimate_fundamental(
    matches: &[Correspondence],
    cfg: &RansacConfig,
    seed: u64,
) -> Result<FundamentalMatrix, GeometryError> {
    let n = matches.len();
    if n < MIN_SAMPLE {
        return Err(GeometryError::InsufficientMatches { needed: MIN_SAMPLE, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Vec<usize> = Vec::new();
    let mut needed = cfg.max_iterations.max(1);
    let mut iter = 0;
    let mut sample = Vec::with_capacity(MIN_SAMPLE);
    while iter < needed {
        iter += 1;
        sample.clear();
        sample.extend(index::sample(&mut rng, n, MIN_SAMPLE).into_iter().map(|i| matches[i]));
        let Ok(f) = eight_point(&sample) else { continue };
        let inliers = consensus(&f, matches, cfg.threshold);
        if inliers.len() > best.len() {
            best = inliers;
            let ratio = best.len() as f64 / n as f64;
            needed = required_iterations(ratio, cfg.confidence, cfg.max_iterations.max(1));
        }
    }
    if best.len() < MIN_SAMPLE {
        return Err(GeometryError::InsufficientMatches { needed: MIN_SAMPLE, got: best.len() });
    }

    let mut current = best;
    let mut f = Mat3::zeros();
    for _ in 0..cfg.refine_rounds.max(1) {
        let subset: Vec<Correspondence> = current.iter().map(|&i| matches[i]).collect();
        f = eight_point(&subset)?;
        let next = consensus(&f, matches, cfg.threshold);
        if next.len() < MIN_SAMPLE {
            return Err(GeometryError::InsufficientMatches { needed: MIN_SAMPLE, got: next.len() });
        }
        let stable = next == current;
        current = next;
        if stable {
            break;
        }
    }
    Ok(FundamentalMatrix { f, inlier_ids: current.iter().map(|&i| matches[i].id).collect() })
}
