use nalgebra::{Matrix3, Vector3};

use super::Pose3D;
use crate::error::{Error, Result};

/// Similarity transform `p ↦ scale · R p + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl Similarity {
    /// Least-squares similarity mapping `source` onto `target` (Umeyama),
    /// restricted to proper rotations.
    pub fn estimate(source: &Pose3D, target: &Pose3D) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::Topology(format!(
                "{} vs {} joints",
                source.len(),
                target.len()
            )));
        }
        let n = source.len() as f64;
        let src: Vec<Vector3<f64>> = source.coords.iter().map(|p| Vector3::from(*p)).collect();
        let dst: Vec<Vector3<f64>> = target.coords.iter().map(|p| Vector3::from(*p)).collect();
        let mu_s = src.iter().sum::<Vector3<f64>>() / n;
        let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
        let mut var_s = 0.0;
        let mut cov = Matrix3::zeros();
        for (s, d) in src.iter().zip(&dst) {
            let s0 = s - mu_s;
            let d0 = d - mu_d;
            var_s += s0.norm_squared();
            cov += d0 * s0.transpose();
        }
        if !(var_s > 1e-300) || !var_s.is_finite() {
            return Err(Error::DegeneratePose("all source keypoints coincide".into()));
        }
        let svd = cov.svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V^T");
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        let rotation = u * d * v_t;
        let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
        let scale = trace / var_s;
        let translation = mu_d - scale * rotation * mu_s;
        Ok(Self {
            rotation,
            scale,
            translation,
        })
    }

    pub fn apply(&self, pose: &Pose3D) -> Pose3D {
        Pose3D {
            coords: pose
                .coords
                .iter()
                .map(|p| (self.scale * self.rotation * Vector3::from(*p) + self.translation).into())
                .collect(),
        }
    }
}

/// `pred` after the similarity transform that best matches `target` in the
/// least-squares sense.
pub fn procrustes_align(pred: &Pose3D, target: &Pose3D) -> Result<Pose3D> {
    let once = align_centered(pred, target)?;
    // A second pass removes the residual rotation left by the SVD.
    align_centered(&once, target)
}

fn align_centered(pred: &Pose3D, target: &Pose3D) -> Result<Pose3D> {
    let sim = Similarity::estimate(pred, target)?;
    let mean = |p: &Pose3D| p.coords.iter().map(|c| Vector3::from(*c)).sum::<Vector3<f64>>() / p.len() as f64;
    let (mu_s, mu_d) = (mean(pred), mean(target));
    Ok(Pose3D {
        coords: pred
            .coords
            .iter()
            .map(|p| (sim.scale * (sim.rotation * (Vector3::from(*p) - mu_s)) + mu_d).into())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotate_pose, RotationParams};

    fn residual(a: &Pose3D, b: &Pose3D) -> f64 {
        a.coords
            .iter()
            .zip(&b.coords)
            .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
            .sum()
    }

    fn target() -> Pose3D {
        Pose3D::new(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.2, -0.3],
            [-0.4, 1.3, 0.5],
            [0.7, -0.9, 1.1],
            [0.2, 0.4, -1.2],
        ])
    }

    #[test]
    fn identical_poses_align_exactly() {
        let t = target();
        let a = procrustes_align(&t, &t).unwrap();
        assert!(residual(&a, &t) < 1e-24);
    }

    #[test]
    fn recovers_similarity() {
        let t = target();
        let moved = rotate_pose(&t, RotationParams::new(1.1, -0.6), false)
            .scaled(2.0)
            .coords
            .iter()
            .map(|p| [p[0] + 3.0, p[1] - 1.0, p[2] + 0.5])
            .collect();
        let a = procrustes_align(&Pose3D::new(moved), &t).unwrap();
        assert!(residual(&a, &t) < 1e-20);
    }

    #[test]
    fn never_reflects() {
        let t = target();
        let mirrored = Pose3D::new(t.coords.iter().map(|p| [-p[0], p[1], p[2]]).collect());
        let sim = Similarity::estimate(&mirrored, &t).unwrap();
        assert!((sim.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_collapsed_prediction() {
        let t = target();
        let collapsed = Pose3D::new(vec![[1.0, 1.0, 1.0]; 5]);
        assert!(matches!(procrustes_align(&collapsed, &t), Err(Error::DegeneratePose(_))));
    }

    /// Exhaustive oracle for planar 3-point configurations: the optimal
    /// rotation keeps the plane, so it is an in-plane rotation by θ, possibly
    /// composed with a half-turn about an in-plane axis (an in-plane mirror).
    /// For each θ the best scale and translation are closed-form.
    fn grid_oracle(src: &[[f64; 2]], dst: &[[f64; 2]]) -> f64 {
        let n = src.len() as f64;
        let centroid = |pts: &[[f64; 2]]| {
            let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p[0], a.1 + p[1]));
            [sx / n, sy / n]
        };
        let cd = centroid(dst);
        let d0: Vec<[f64; 2]> = dst.iter().map(|p| [p[0] - cd[0], p[1] - cd[1]]).collect();
        let eval = |pts: &[[f64; 2]], theta: f64| -> f64 {
            let (s, c) = theta.sin_cos();
            let r: Vec<[f64; 2]> = pts.iter().map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect();
            let cr = centroid(&r);
            let r0: Vec<[f64; 2]> = r.iter().map(|p| [p[0] - cr[0], p[1] - cr[1]]).collect();
            let dot: f64 = r0.iter().zip(&d0).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).sum();
            let sq: f64 = r0.iter().map(|a| a[0] * a[0] + a[1] * a[1]).sum();
            let scale = (dot / sq).max(0.0);
            r0.iter()
                .zip(&d0)
                .map(|(a, b)| (scale * a[0] - b[0]).powi(2) + (scale * a[1] - b[1]).powi(2))
                .sum()
        };
        let mirrored: Vec<[f64; 2]> = src.iter().map(|p| [p[0], -p[1]]).collect();
        let mut best = f64::INFINITY;
        for pts in [src.to_vec(), mirrored] {
            let step = 0.001;
            let mut k = -std::f64::consts::PI;
            let mut best_theta = 0.0;
            let mut best_val = f64::INFINITY;
            while k <= std::f64::consts::PI {
                let v = eval(&pts, k);
                if v < best_val {
                    best_val = v;
                    best_theta = k;
                }
                k += step;
            }
            // refine inside the winning grid cell
            let fine = step / 1000.0;
            let mut t = best_theta - step;
            while t <= best_theta + step {
                best_val = best_val.min(eval(&pts, t));
                t += fine;
            }
            best = best.min(best_val);
        }
        best
    }

    #[test]
    fn matches_rotation_grid_oracle() {
        let src = [[0.0, 0.0], [1.0, 0.1], [0.3, 0.8]];
        let dst = [[0.05, -0.02], [0.62, 0.81], [-0.49, 0.33]];
        let oracle = grid_oracle(&src, &dst);
        let to3 = |p: &[[f64; 2]]| Pose3D::new(p.iter().map(|q| [q[0], q[1], 0.0]).collect());
        let aligned = procrustes_align(&to3(&src), &to3(&dst)).unwrap();
        let got = residual(&aligned, &to3(&dst));
        assert!((got - oracle).abs() < 1e-6, "procrustes {got} vs oracle {oracle}");
    }
}
