use super::{
    derive_seed, estimate_fundamental, search_focal, Correspondence, FramePair, GeometryError,
    Reconstruction, RejectedPair, SfmConfig,
};

fn reject(pair: &FramePair, source: GeometryError) -> RejectedPair {
    RejectedPair { pair_id: pair.pair_id.clone(), reason: source.reason(), source }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Full two-view reconstruction of one frame pair.
///
/// Only the RANSAC consensus set is reconstructed; everything else is dropped before
/// triangulation. The RANSAC stream is seeded from `cfg.seed` and the pair id, so the
/// result does not depend on the order pairs are processed in.
pub fn reconstruct_pair(pair: &FramePair, cfg: &SfmConfig) -> Result<Reconstruction, RejectedPair> {
    pair.validate().map_err(|e| reject(pair, e))?;
    let seed = derive_seed(cfg.seed, &pair.pair_id);
    let fundamental =
        estimate_fundamental(&pair.matches, &cfg.ransac, seed).map_err(|e| reject(pair, e))?;

    let keep: std::collections::HashSet<usize> = fundamental.inlier_ids.iter().copied().collect();
    let survivors: Vec<Correspondence> =
        pair.matches.iter().filter(|m| keep.contains(&m.id)).copied().collect();
    if survivors.len() < cfg.min_inliers {
        return Err(reject(
            pair,
            GeometryError::InsufficientMatches { needed: cfg.min_inliers, got: survivors.len() },
        ));
    }

    let search = search_focal(
        &fundamental,
        &survivors,
        pair.width,
        pair.height,
        &cfg.grid,
        cfg.min_cheiral_frac,
    )
    .map_err(|e| reject(pair, e))?;
    if search.points.len() < cfg.min_inliers {
        return Err(reject(
            pair,
            GeometryError::InsufficientMatches { needed: cfg.min_inliers, got: search.points.len() },
        ));
    }

    let median_deg = median(search.points.iter().map(|p| p.ray_angle).collect()).to_degrees();
    if median_deg < cfg.min_median_angle_deg {
        return Err(reject(pair, GeometryError::LowParallax { median_deg }));
    }

    Ok(Reconstruction {
        pair_id: pair.pair_id.clone(),
        width: pair.width,
        height: pair.height,
        camera: search.camera,
        pose: search.pose,
        fundamental,
        points: search.points,
        mean_reproj: search.mean_reproj,
    })
}
