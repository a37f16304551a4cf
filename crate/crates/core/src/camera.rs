//! Pinhole camera with a rigid world-to-camera transform.

use crate::scalar::Real;

/// Pinhole intrinsics plus a row-major 4x4 world-to-camera matrix whose upper
/// 3x3 block is a rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera<T> {
    pub width: usize,
    pub height: usize,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub world_to_camera: [[T; 4]; 4],
}

impl<T: Real> Camera<T> {
    pub fn rotation(&self) -> [[T; 3]; 3] {
        let w = &self.world_to_camera;
        [
            [w[0][0], w[0][1], w[0][2]],
            [w[1][0], w[1][1], w[1][2]],
            [w[2][0], w[2][1], w[2][2]],
        ]
    }

    pub fn translation(&self) -> [T; 3] {
        let w = &self.world_to_camera;
        [w[0][3], w[1][3], w[2][3]]
    }

    /// Point mapped into camera space.
    pub fn to_camera(&self, p: &[T; 3]) -> [T; 3] {
        let r = self.rotation();
        let t = self.translation();
        let mut out = [T::zero(); 3];
        for a in 0..3 {
            out[a] = r[a][0] * p[0] + r[a][1] * p[1] + r[a][2] * p[2] + t[a];
        }
        out
    }

    /// Camera center in world space, -R^T t.
    pub fn center(&self) -> [T; 3] {
        let r = self.rotation();
        let t = self.translation();
        let mut out = [T::zero(); 3];
        for a in 0..3 {
            out[a] = -(r[0][a] * t[0] + r[1][a] * t[1] + r[2][a] * t[2]);
        }
        out
    }

    /// Inward-facing camera on a ring of the given radius, looking at the
    /// origin with +y roughly up. Used by the synthetic scenes and tests.
    pub fn looking_at_origin(
        width: usize,
        height: usize,
        fx: T,
        fy: T,
        position: [T; 3],
    ) -> Camera<T> {
        let norm3 = |v: [T; 3]| {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        };
        let cross = |a: [T; 3], b: [T; 3]| {
            [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ]
        };
        // Camera looks down +z in camera space.
        let fwd = norm3([-position[0], -position[1], -position[2]]);
        let world_up = [T::zero(), T::one(), T::zero()];
        let right = norm3(cross(fwd, world_up));
        let up = cross(right, fwd);
        // Rows of R are the camera axes expressed in world coordinates; the
        // camera-space frame is (right, -up, forward) so +y points down the
        // image as pixel rows do.
        let r = [right, [-up[0], -up[1], -up[2]], fwd];
        let mut w = [[T::zero(); 4]; 4];
        for a in 0..3 {
            for b in 0..3 {
                w[a][b] = r[a][b];
            }
            w[a][3] = -(r[a][0] * position[0] + r[a][1] * position[1] + r[a][2] * position[2]);
        }
        w[3][3] = T::one();
        let half = crate::scalar::real::<T>(0.5);
        Camera {
            width,
            height,
            fx,
            fy,
            cx: T::from_f64(width as f64) * half,
            cy: T::from_f64(height as f64) * half,
            world_to_camera: w,
        }
    }
}
