use nalgebra::{Matrix3, Matrix4x3, Vector4};

use super::{CameraModel, Correspondence, GeometryError, RelativePose, Vec3};

/// Linear least-squares triangulation in normalized coordinates.
///
/// Camera A is `[I | 0]`, camera B is `[R | t]`. Returns `None` when the normal
/// equations are singular (rays parallel).
pub(crate) fn solve_point(pose: &RelativePose, a: (f64, f64), b: (f64, f64)) -> Option<Vec3> {
    let r = &pose.r;
    let t = &pose.t;
    let (u1, v1) = a;
    let (u2, v2) = b;
    let m = Matrix4x3::new(
        1.0,
        0.0,
        -u1,
        0.0,
        1.0,
        -v1,
        r[(0, 0)] - u2 * r[(2, 0)],
        r[(0, 1)] - u2 * r[(2, 1)],
        r[(0, 2)] - u2 * r[(2, 2)],
        r[(1, 0)] - v2 * r[(2, 0)],
        r[(1, 1)] - v2 * r[(2, 1)],
        r[(1, 2)] - v2 * r[(2, 2)],
    );
    let rhs = Vector4::new(0.0, 0.0, u2 * t.z - t.x, v2 * t.z - t.y);
    let mt = m.transpose();
    let normal: Matrix3<f64> = mt * m;
    let x = normal.cholesky()?.solve(&(mt * rhs));
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Result of triangulating one correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulated {
    pub x: Vec3,
    pub depth_a: f64,
    pub depth_b: f64,
    pub reproj_a: f64,
    pub reproj_b: f64,
    /// Angle at the point between the rays to the two camera centers, radians.
    pub ray_angle: f64,
}

impl Triangulated {
    pub fn reproj_err(&self) -> f64 {
        0.5 * (self.reproj_a + self.reproj_b)
    }
}

/// Triangulates `c`, rejecting points that do not lie in front of both cameras.
pub fn triangulate(
    camera: &CameraModel,
    pose: &RelativePose,
    c: &Correspondence,
) -> Result<Triangulated, GeometryError> {
    let a = camera.unproject(c.x1, c.y1);
    let b = camera.unproject(c.x2, c.y2);
    let x = solve_point(pose, a, b).ok_or(GeometryError::BehindCamera)?;
    let xb = pose.to_b(&x);
    let (depth_a, depth_b) = (x.z, xb.z);
    if !(depth_a > 0.0 && depth_b > 0.0) {
        return Err(GeometryError::BehindCamera);
    }
    let (pa_x, pa_y) = camera.project(&x);
    let (pb_x, pb_y) = camera.project(&xb);
    let reproj_a = (pa_x - c.x1).hypot(pa_y - c.y1);
    let reproj_b = (pb_x - c.x2).hypot(pb_y - c.y2);

    let to_a = -x;
    let to_b = pose.center_b() - x;
    let cos = to_a.dot(&to_b) / (to_a.norm() * to_b.norm());
    let ray_angle = cos.clamp(-1.0, 1.0).acos();

    Ok(Triangulated { x, depth_a, depth_b, reproj_a, reproj_b, ray_angle })
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::Mat3;

    fn lateral() -> (CameraModel, RelativePose) {
        let cam = CameraModel::centered(500.0, 640, 480);
        // Camera B centered at (1, 0, 0): X_b = X_a - (1, 0, 0).
        let pose = RelativePose { r: Mat3::identity(), t: Vec3::new(-1.0, 0.0, 0.0) };
        (cam, pose)
    }

    #[test]
    fn exact_point_on_axis() {
        let (cam, pose) = lateral();
        let x = Vec3::new(0.0, 0.0, 5.0);
        let (x1, y1) = cam.project(&x);
        let (x2, y2) = cam.project(&pose.to_b(&x));
        let t = triangulate(&cam, &pose, &Correspondence::new(0, x1, y1, x2, y2)).unwrap();
        assert!((t.x - x).norm() < 1e-9);
        assert!(t.reproj_err() < 1e-9);
        assert!((t.depth_a - 5.0).abs() < 1e-9);
        assert!((t.ray_angle - (1.0f64 / 5.0).atan()).abs() < 1e-12);
    }

    #[test]
    fn point_behind_is_rejected() {
        let (cam, pose) = lateral();
        // Crossed rays: disparity with the wrong sign places the point behind both cameras.
        let c = Correspondence::new(0, 320.0, 240.0, 420.0, 240.0);
        assert_eq!(triangulate(&cam, &pose, &c), Err(GeometryError::BehindCamera));
    }

    #[test]
    fn parallel_rays_are_rejected() {
        let (cam, pose) = lateral();
        let c = Correspondence::new(0, 320.0, 240.0, 320.0, 240.0);
        assert!(triangulate(&cam, &pose, &c).is_err());
    }
}
