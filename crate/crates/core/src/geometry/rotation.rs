use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::Pose3D;

/// Azimuth (about the vertical y axis) and elevation (about the horizontal
/// x axis), both in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RotationParams {
    pub azimuth: f64,
    pub elevation: f64,
}

impl RotationParams {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self { azimuth, elevation }
    }

    pub fn azimuth_only(azimuth: f64) -> Self {
        Self {
            azimuth,
            elevation: 0.0,
        }
    }

    fn azimuth_matrix(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
    }

    fn elevation_matrix(e: f64) -> Matrix3<f64> {
        let (s, c) = e.sin_cos();
        Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
    }

    /// `R = R_elev(elevation) · R_azim(azimuth)`.
    pub fn matrix(&self) -> Matrix3<f64> {
        Self::elevation_matrix(self.elevation) * Self::azimuth_matrix(self.azimuth)
    }

    /// `∂R / ∂elevation`.
    pub fn d_matrix_d_elevation(&self) -> Matrix3<f64> {
        let (s, c) = self.elevation.sin_cos();
        let d_elev = Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s);
        d_elev * Self::azimuth_matrix(self.azimuth)
    }
}

/// Applies `p ↦ R (p − root) + root` to every keypoint, or the inverse
/// rotation when `inverse` is set. The pivot is the pose's own root.
pub fn rotate_pose(pose: &Pose3D, rot: RotationParams, inverse: bool) -> Pose3D {
    let m = if inverse { rot.matrix().transpose() } else { rot.matrix() };
    rotate_about(pose, &m, pose.root())
}

pub(crate) fn rotate_about(pose: &Pose3D, m: &Matrix3<f64>, pivot: [f64; 3]) -> Pose3D {
    let r = Vector3::from(pivot);
    Pose3D {
        coords: pose
            .coords
            .iter()
            .map(|p| (m * (Vector3::from(*p) - r) + r).into())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Pose3D {
        Pose3D::new(vec![
            [0.0, 0.0, 10.0],
            [0.4, -1.2, 10.5],
            [-0.3, 0.8, 9.1],
            [1.1, 0.2, 10.2],
        ])
    }

    #[test]
    fn zero_angles_are_identity() {
        let p = sample();
        assert_eq!(rotate_pose(&p, RotationParams::default(), false), p);
    }

    #[test]
    fn half_turn_negates_x_and_z_offsets() {
        let p = sample();
        let r = rotate_pose(&p, RotationParams::azimuth_only(std::f64::consts::PI), false);
        let root = p.root();
        for (a, b) in p.coords.iter().zip(&r.coords) {
            assert!((b[0] - root[0] + (a[0] - root[0])).abs() < 1e-12);
            assert!((b[1] - a[1]).abs() < 1e-12);
            assert!((b[2] - root[2] + (a[2] - root[2])).abs() < 1e-12);
        }
    }

    #[test]
    fn elevation_derivative_matches_finite_difference() {
        let rot = RotationParams::new(0.7, -0.4);
        let h = 1e-6;
        let plus = RotationParams::new(0.7, -0.4 + h).matrix();
        let minus = RotationParams::new(0.7, -0.4 - h).matrix();
        let fd = (plus - minus) / (2.0 * h);
        assert!((fd - rot.d_matrix_d_elevation()).abs().max() < 1e-9);
    }

    proptest! {
        #[test]
        fn inverse_undoes_rotation(az in -3.2f64..3.2, el in -1.6f64..1.6) {
            let p = sample();
            let rot = RotationParams::new(az, el);
            let back = rotate_pose(&rotate_pose(&p, rot, false), rot, true);
            for (a, b) in p.coords.iter().zip(&back.coords) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() < 1e-12);
                }
            }
        }
    }
}
