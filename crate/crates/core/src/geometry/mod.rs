//! Pose containers, normalization, perspective lifting and projection,
//! rotations, similarity alignment and evaluation metrics.
//!
//! Coordinates follow the camera convention: x right, y down, z into the
//! scene. The root joint is index 0.

mod metrics;
mod procrustes;
mod rotation;
mod skeleton;

pub use metrics::{auc, compute_metric, mpjpe, n_mpjpe, optimal_scale, pa_mpjpe, pck, Metric, AUC_MAX_THRESHOLD, PCK_THRESHOLD};
pub use procrustes::{procrustes_align, Similarity};
pub use rotation::{rotate_pose, RotationParams};
pub use skeleton::{Segment, SkeletonTopology};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

/// Fixed camera distance of the root, in lifting units.
pub const DEFAULT_CAMERA_DISTANCE: f64 = 10.0;

/// Smallest admissible depth after lifting.
pub const MIN_DEPTH: f64 = 1.0;

/// Root-centered 2D keypoints in normalized image units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose2D {
    pub coords: Vec<[f64; 2]>,
}

/// 3D keypoints in camera-frame units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose3D {
    pub coords: Vec<[f64; 3]>,
}

impl Pose2D {
    pub fn new(coords: Vec<[f64; 2]>) -> Self {
        Self { coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Flattened `(x, y)` pairs for the given joints.
    pub fn gather(&self, joints: &[usize]) -> Vec<f64> {
        joints.iter().flat_map(|&j| self.coords[j]).collect()
    }

    /// Flattened `(x, y)` pairs of every joint except the root.
    pub fn flatten_non_root(&self) -> Vec<f64> {
        self.coords[1..].iter().flatten().copied().collect()
    }

    /// Inverse of [`Pose2D::flatten_non_root`]; the root is placed at the origin.
    pub fn from_non_root(flat: &[f64]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::Shape {
                context: "flattened 2D pose",
                expected: flat.len() + 1,
                got: flat.len(),
            });
        }
        let mut coords = vec![[0.0, 0.0]];
        coords.extend(flat.chunks_exact(2).map(|c| [c[0], c[1]]));
        Ok(Self { coords })
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().flatten().all(|v| v.is_finite())
    }
}

impl Pose3D {
    pub fn new(coords: Vec<[f64; 3]>) -> Self {
        Self { coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn root(&self) -> [f64; 3] {
        self.coords[0]
    }

    /// Pose translated so that the root sits at the origin.
    pub fn root_centered(&self) -> Pose3D {
        let r = self.root();
        Pose3D {
            coords: self
                .coords
                .iter()
                .map(|p| [p[0] - r[0], p[1] - r[1], p[2] - r[2]])
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Pose3D {
        Pose3D {
            coords: self.coords.iter().map(|p| [p[0] * s, p[1] * s, p[2] * s]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().flatten().all(|v| v.is_finite())
    }
}

/// Output of [`normalize_pose`].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub pose: Pose2D,
    /// Multiplier applied after root translation; divide by it to undo.
    pub scale: f64,
    /// Raw root position that was subtracted.
    pub root: [f64; 2],
}

/// Root-centers a raw 2D pose and rescales it so the head–root distance is
/// `1 / c`.
///
/// A pose that is already normalized comes back unchanged with scale 1.
pub fn normalize_pose(raw: &[[f64; 2]], head: usize, c: f64) -> Result<Normalized> {
    if !(c > 0.0) {
        return Err(Error::Config(format!("camera distance must be positive, got {c}")));
    }
    if head == 0 || head >= raw.len() {
        return Err(Error::Topology(format!("head index {head} out of range")));
    }
    let root = raw[0];
    let dx = raw[head][0] - root[0];
    let dy = raw[head][1] - root[1];
    let dist = dx.hypot(dy);
    if !(dist > 0.0) || !dist.is_finite() {
        return Err(Error::DegeneratePose("head coincides with the root".into()));
    }
    let mut scale = (1.0 / c) / dist;
    // absorb round-off so that normalization is idempotent
    if (scale - 1.0).abs() < 1e-12 {
        scale = 1.0;
    }
    let coords = raw
        .iter()
        .map(|p| [(p[0] - root[0]) * scale, (p[1] - root[1]) * scale])
        .collect();
    Ok(Normalized {
        pose: Pose2D { coords },
        scale,
        root,
    })
}

/// Depth of a keypoint from its predicted offset: `max(1, d + c)`.
#[inline]
pub fn depth_from_offset(offset: f64, c: f64) -> f64 {
    (offset + c).max(MIN_DEPTH)
}

/// Lifts a normalized 2D pose to 3D with one depth offset per joint:
/// `(x z, y z, z)` with `z = max(1, d + c)`.
pub fn perspective_lift(pose: &Pose2D, depth_offsets: &[f64], c: f64) -> Result<Pose3D> {
    ensure_len("depth offsets", pose.len(), depth_offsets.len())?;
    let coords = pose
        .coords
        .iter()
        .zip(depth_offsets)
        .map(|(p, &d)| {
            let z = depth_from_offset(d, c);
            [p[0] * z, p[1] * z, z]
        })
        .collect();
    Ok(Pose3D { coords })
}

/// Pinhole projection `(X / Z, Y / Z)`.
pub fn project(pose: &Pose3D) -> Result<Pose2D> {
    let coords = pose
        .coords
        .iter()
        .enumerate()
        .map(|(j, p)| {
            if p[2] > 0.0 {
                Ok([p[0] / p[2], p[1] / p[2]])
            } else {
                Err(Error::NonPositiveDepth { joint: j, depth: p[2] })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pose2D { coords })
}

/// Relative bone lengths: each bone's Euclidean length divided by the sum of
/// all bone lengths. Works for 2D and 3D coordinates alike.
pub fn bone_lengths<const D: usize>(
    coords: &[[f64; D]],
    topology: &SkeletonTopology,
) -> Result<Vec<f64>> {
    ensure_len("bone lengths", topology.num_joints(), coords.len())?;
    let raw: Vec<f64> = topology
        .bones()
        .iter()
        .map(|&(p, c)| {
            coords[p]
                .iter()
                .zip(&coords[c])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegeneratePose("skeleton has zero total bone length".into()));
    }
    Ok(raw.into_iter().map(|l| l / total).collect())
}
