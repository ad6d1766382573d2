use nalgebra::Matrix3;

use super::{svd3, CameraModel, GeometryError, Mat3, RelativePose, Vec3};

fn skew(v: &Vec3) -> Mat3 {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// The four `(R, t)` candidates of an essential matrix, `|t| = 1`.
///
/// The input does not need equal nonzero singular values; the decomposition projects it
/// onto the essential manifold.
pub fn decompose_essential(e: &Mat3) -> Result<[RelativePose; 4], GeometryError> {
    let (mut u, _, mut v_t) =
        svd3(e).ok_or(GeometryError::DegenerateConfiguration("essential svd failed"))?;
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vec3 = u.column(2).into_owned().normalize();
    Ok([
        RelativePose { r: r1, t },
        RelativePose { r: r1, t: -t },
        RelativePose { r: r2, t },
        RelativePose { r: r2, t: -t },
    ])
}

/// Fundamental matrix implied by a calibrated pose, unit Frobenius norm.
pub fn fundamental_from_pose(camera: &CameraModel, pose: &RelativePose) -> Mat3 {
    let k_inv = camera.k().try_inverse().expect("focal > 0 makes K invertible");
    let e = skew(&pose.t) * pose.r;
    let f = k_inv.transpose() * e * k_inv;
    f / f.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn candidates_include_the_true_pose() {
        let r = *Rotation3::from_euler_angles(0.1, -0.2, 0.05).matrix();
        let t = Vec3::new(0.6, -0.3, 0.2).normalize();
        let e = skew(&t) * r;
        let cands = decompose_essential(&(e * 3.7)).unwrap();
        let hit = cands.iter().any(|p| (p.r - r).norm() < 1e-9 && (p.t - t).norm() < 1e-9);
        assert!(hit);
        for p in &cands {
            assert!((p.r.transpose() * p.r - Mat3::identity()).norm() < 1e-9);
            assert!((p.r.determinant() - 1.0).abs() < 1e-9);
            assert!((p.t.norm() - 1.0).abs() < 1e-12);
        }
    }
}
