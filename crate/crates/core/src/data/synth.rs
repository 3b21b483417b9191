use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PoseRecord;
use crate::error::{Error, Result};
use crate::geometry::{normalize_pose, project, Pose3D, RotationParams, SkeletonTopology, DEFAULT_CAMERA_DISTANCE, MIN_DEPTH};

/// Closed interval sampled uniformly; `min == max` pins the value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleRange {
    pub min: f64,
    pub max: f64,
}

impl AngleRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { min: v, max: v }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !self.min.is_finite() || !self.max.is_finite() || self.min > self.max {
            return Err(Error::Config(format!("invalid range for {name}: [{}, {}]", self.min, self.max)));
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.gen_range(self.min..=self.max)
    }
}

/// Limb lengths in millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimbLengths {
    pub pelvis_to_hip: f64,
    pub thigh: f64,
    pub shin: f64,
    pub pelvis_to_spine: f64,
    pub spine_to_neck: f64,
    pub neck_to_head: f64,
    pub head_to_top: f64,
    pub neck_to_shoulder: f64,
    pub upper_arm: f64,
    pub forearm: f64,
}

impl Default for LimbLengths {
    fn default() -> Self {
        Self {
            pelvis_to_hip: 130.0,
            thigh: 440.0,
            shin: 420.0,
            pelvis_to_spine: 240.0,
            spine_to_neck: 260.0,
            neck_to_head: 120.0,
            head_to_top: 110.0,
            neck_to_shoulder: 150.0,
            upper_arm: 290.0,
            forearm: 260.0,
        }
    }
}

impl LimbLengths {
    fn as_array(&self) -> [f64; 10] {
        [
            self.pelvis_to_hip,
            self.thigh,
            self.shin,
            self.pelvis_to_spine,
            self.spine_to_neck,
            self.neck_to_head,
            self.head_to_top,
            self.neck_to_shoulder,
            self.upper_arm,
            self.forearm,
        ]
    }
}

/// Generator settings. Angles are radians. Body frame: x toward the
/// subject's left, y down, z forward. Flexion angles move the distal end
/// forward, raise and abduction angles move it outward. Missing fields
/// take their defaults when read from a file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub limbs: LimbLengths,
    /// Each limb of each pose is scaled by a factor drawn from
    /// `[1 - jitter, 1 + jitter]`.
    pub length_jitter: f64,
    pub hip_flexion: AngleRange,
    pub hip_abduction: AngleRange,
    pub knee_flexion: AngleRange,
    pub spine_lean: AngleRange,
    pub spine_lateral: AngleRange,
    pub spine_twist: AngleRange,
    pub neck_flexion: AngleRange,
    pub shoulder_raise: AngleRange,
    pub shoulder_swing: AngleRange,
    pub elbow_flexion: AngleRange,
    pub azimuth: AngleRange,
    pub camera_elevation: AngleRange,
    pub camera_distance: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            limbs: LimbLengths::default(),
            length_jitter: 0.05,
            hip_flexion: AngleRange::new(-0.3, 1.2),
            hip_abduction: AngleRange::new(0.0, 0.5),
            knee_flexion: AngleRange::new(0.0, 1.6),
            spine_lean: AngleRange::new(-0.2, 0.5),
            spine_lateral: AngleRange::new(-0.25, 0.25),
            spine_twist: AngleRange::new(-0.4, 0.4),
            neck_flexion: AngleRange::new(-0.3, 0.4),
            shoulder_raise: AngleRange::new(0.0, 2.4),
            shoulder_swing: AngleRange::new(-0.6, 1.5),
            elbow_flexion: AngleRange::new(0.0, 2.2),
            azimuth: AngleRange::new(-std::f64::consts::PI, std::f64::consts::PI),
            camera_elevation: AngleRange::fixed(0.0),
            camera_distance: DEFAULT_CAMERA_DISTANCE,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("hip_flexion", self.hip_flexion),
            ("hip_abduction", self.hip_abduction),
            ("knee_flexion", self.knee_flexion),
            ("spine_lean", self.spine_lean),
            ("spine_lateral", self.spine_lateral),
            ("spine_twist", self.spine_twist),
            ("neck_flexion", self.neck_flexion),
            ("shoulder_raise", self.shoulder_raise),
            ("shoulder_swing", self.shoulder_swing),
            ("elbow_flexion", self.elbow_flexion),
            ("azimuth", self.azimuth),
            ("camera_elevation", self.camera_elevation),
        ];
        for (name, r) in ranges {
            r.validate(name)?;
        }
        if self.limbs.as_array().iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Config("limb lengths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.length_jitter) {
            return Err(Error::Config(format!("length jitter must lie in [0, 1), got {}", self.length_jitter)));
        }
        if !(self.camera_distance > 0.0) || !self.camera_distance.is_finite() {
            return Err(Error::Config(format!("camera distance must be positive, got {}", self.camera_distance)));
        }
        Ok(())
    }
}

fn rx(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), a)
}

fn ry(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), a)
}

fn rz(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), a)
}

/// One body-frame skeleton in millimetres, pelvis at the origin, in
/// human17 joint order.
fn body_pose<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Vec<Vector3<f64>> {
    let mut len = cfg.limbs.clone();
    if cfg.length_jitter > 0.0 {
        let j = cfg.length_jitter;
        for l in [
            &mut len.pelvis_to_hip,
            &mut len.thigh,
            &mut len.shin,
            &mut len.pelvis_to_spine,
            &mut len.spine_to_neck,
            &mut len.neck_to_head,
            &mut len.head_to_top,
            &mut len.neck_to_shoulder,
            &mut len.upper_arm,
            &mut len.forearm,
        ] {
            *l *= rng.gen_range(1.0 - j..=1.0 + j);
        }
    }
    let down = Vector3::new(0.0, 1.0, 0.0);
    let up = -down;
    let mut p = vec![Vector3::zeros(); 17];

    // legs: right (side -1) then left (side +1)
    for (side, base) in [(-1.0, 1), (1.0, 4)] {
        let hip = Vector3::new(side * len.pelvis_to_hip, 0.0, 0.0);
        let r_hip = rz(-side * cfg.hip_abduction.sample(rng)) * rx(cfg.hip_flexion.sample(rng));
        let r_knee = r_hip * rx(-cfg.knee_flexion.sample(rng));
        p[base] = hip;
        p[base + 1] = hip + r_hip * down * len.thigh;
        p[base + 2] = p[base + 1] + r_knee * down * len.shin;
    }

    let r_torso = ry(cfg.spine_twist.sample(rng)) * rz(cfg.spine_lateral.sample(rng)) * rx(-cfg.spine_lean.sample(rng));
    p[7] = r_torso * up * len.pelvis_to_spine;
    p[8] = p[7] + r_torso * up * len.spine_to_neck;
    let r_head = r_torso * rx(-cfg.neck_flexion.sample(rng));
    p[9] = p[8] + r_head * up * len.neck_to_head;
    p[10] = p[9] + r_head * up * len.head_to_top;

    // arms: left (side +1) then right (side -1)
    for (side, base) in [(1.0, 11), (-1.0, 14)] {
        let shoulder = p[8] + r_torso * Vector3::new(side * len.neck_to_shoulder, 0.0, 0.0);
        let r_arm = r_torso * rx(cfg.shoulder_swing.sample(rng)) * rz(-side * cfg.shoulder_raise.sample(rng));
        let r_elbow = r_arm * rx(cfg.elbow_flexion.sample(rng));
        p[base] = shoulder;
        p[base + 1] = shoulder + r_arm * down * len.upper_arm;
        p[base + 2] = p[base + 1] + r_elbow * down * len.forearm;
    }
    p
}

/// Places a root-centered millimetre pose in the lifting frame: uniformly
/// rescaled so the root sits at depth `c` and the projected head lies at
/// distance `1 / c` from the projected root. The projection of the result is
/// the normalized 2D pose.
pub fn lifting_frame_3d(joints_3d: &Pose3D, head: usize, c: f64) -> Result<Pose3D> {
    if head == 0 || head >= joints_3d.len() {
        return Err(Error::Topology(format!("head index {head} out of range")));
    }
    let g = joints_3d.root_centered();
    let h = g.coords[head];
    let r = h[0].hypot(h[1]);
    if !(r > 0.0) {
        return Err(Error::DegeneratePose("head projects onto the root".into()));
    }
    let distance = c * r - h[2];
    if !(distance > 0.0) {
        return Err(Error::NonPositiveDepth { joint: 0, depth: distance });
    }
    let u = c / distance;
    Ok(Pose3D::new(g.coords.iter().map(|p| [u * p[0], u * p[1], u * p[2] + c]).collect()))
}

const MAX_ATTEMPTS: usize = 1000;

/// Forward-kinematics poses with uniformly drawn joint angles and global
/// azimuth. `joints_3d` is root-centered in camera-aligned millimetres;
/// `joints_2d` is its normalized perspective projection.
pub fn generate_synthetic(count: usize, seed: u64, config: &SynthConfig, topology: &SkeletonTopology) -> Result<Vec<PoseRecord>> {
    config.validate()?;
    if topology.num_joints() != 17 {
        return Err(Error::Topology("the generator builds 17-joint skeletons".into()));
    }
    let c = config.camera_distance;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut attempt = 0;
        let record = loop {
            attempt += 1;
            if attempt > MAX_ATTEMPTS {
                return Err(Error::Config("generator settings never yield a visible pose".into()));
            }
            let body = body_pose(config, &mut rng);
            let rot = RotationParams::new(config.azimuth.sample(&mut rng), config.camera_elevation.sample(&mut rng)).matrix();
            let g = Pose3D::new(body.iter().map(|v| (rot * v).into()).collect());
            let Ok(lifted) = lifting_frame_3d(&g, topology.head(), c) else {
                continue;
            };
            if lifted.coords.iter().any(|p| p[2] < MIN_DEPTH) {
                continue;
            }
            let Ok(norm) = project(&lifted).and_then(|p| normalize_pose(&p.coords, topology.head(), c)) else {
                continue;
            };
            break PoseRecord {
                id: format!("synth-{seed}-{i:06}"),
                joints_2d: norm.pose.coords,
                joints_3d: Some(g.coords),
                camera_tag: Some("synthetic".into()),
            };
        };
        out.push(record);
    }
    Ok(out)
}
