//! Occlusion scenarios, routing of visible keypoints to lifters whose whole
//! input segment is visible, and per-scenario completion networks.

mod eval;
mod fill;

pub use eval::{evaluate_occlusion, OcclusionRow, CONTROL_SCENARIO};
pub use fill::{
    distillation_loss, FillSpace, OcclusionConfig, OcclusionEpoch, OcclusionNet, OcclusionTrainConfig,
    OcclusionTraining, train_occlusion,
};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose2D, Pose3D, Segment, SkeletonTopology};
use crate::lifter::{lift_batch, poses_to_batch, LifterSet, Plan};

/// The eight limb-level occlusions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
    LeftArmAndLeg,
    RightArmAndLeg,
    BothLegs,
    FullTorso,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        ScenarioKind::LeftArm,
        ScenarioKind::RightArm,
        ScenarioKind::LeftLeg,
        ScenarioKind::RightLeg,
        ScenarioKind::LeftArmAndLeg,
        ScenarioKind::RightArmAndLeg,
        ScenarioKind::BothLegs,
        ScenarioKind::FullTorso,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::LeftArm => "left-arm",
            ScenarioKind::RightArm => "right-arm",
            ScenarioKind::LeftLeg => "left-leg",
            ScenarioKind::RightLeg => "right-leg",
            ScenarioKind::LeftArmAndLeg => "left-arm-and-leg",
            ScenarioKind::RightArmAndLeg => "right-arm-and-leg",
            ScenarioKind::BothLegs => "both-legs",
            ScenarioKind::FullTorso => "full-torso",
        }
    }

    fn masked_joints(self, topology: &SkeletonTopology) -> Result<Vec<usize>> {
        let named = |names: &[&str]| -> Result<Vec<usize>> {
            names
                .iter()
                .map(|n| {
                    topology
                        .joint_index(n)
                        .ok_or_else(|| Error::Topology(format!("scenario {self} needs joint '{n}'")))
                })
                .collect()
        };
        const L_ARM: [&str; 3] = ["l_shoulder", "l_elbow", "l_wrist"];
        const R_ARM: [&str; 3] = ["r_shoulder", "r_elbow", "r_wrist"];
        const L_LEG: [&str; 3] = ["l_hip", "l_knee", "l_ankle"];
        const R_LEG: [&str; 3] = ["r_hip", "r_knee", "r_ankle"];
        match self {
            ScenarioKind::LeftArm => named(&L_ARM),
            ScenarioKind::RightArm => named(&R_ARM),
            ScenarioKind::LeftLeg => named(&L_LEG),
            ScenarioKind::RightLeg => named(&R_LEG),
            ScenarioKind::LeftArmAndLeg => named(&[L_ARM, L_LEG].concat()),
            ScenarioKind::RightArmAndLeg => named(&[R_ARM, R_LEG].concat()),
            ScenarioKind::BothLegs => Ok(topology.segment(Segment::Legs).to_vec()),
            ScenarioKind::FullTorso => Ok(topology.segment(Segment::Torso).to_vec()),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown occlusion scenario '{s}'")))
    }
}

/// A keypoint mask together with the lifters that lift what stays visible.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionScenario {
    pub name: String,
    /// Sorted joint indices, never the root.
    pub masked: Vec<usize>,
    pub routing: Plan,
}

impl OcclusionScenario {
    pub fn named(kind: ScenarioKind, topology: &SkeletonTopology) -> Result<Self> {
        Self::build(kind.as_str().to_string(), kind.masked_joints(topology)?, topology)
    }

    pub fn all_named(topology: &SkeletonTopology) -> Result<Vec<Self>> {
        ScenarioKind::ALL.iter().map(|&k| Self::named(k, topology)).collect()
    }

    /// Any mask. Visible joints that no fully visible lifter covers are
    /// added to the mask, so they are completed rather than lifted.
    pub fn custom(name: &str, masked: &[usize], topology: &SkeletonTopology) -> Result<Self> {
        Self::build(name.to_string(), masked.to_vec(), topology)
    }

    fn build(name: String, mut masked: Vec<usize>, topology: &SkeletonTopology) -> Result<Self> {
        let j = topology.num_joints();
        if masked.contains(&0) {
            return Err(Error::Config(format!("scenario {name}: the root cannot be masked")));
        }
        if let Some(&bad) = masked.iter().find(|&&m| m >= j) {
            return Err(Error::Topology(format!("scenario {name}: joint {bad} out of range")));
        }
        masked.sort_unstable();
        masked.dedup();
        let mut parts = Vec::new();
        let mut assigned = vec![false; j];
        assigned[0] = true;
        for &m in &masked {
            assigned[m] = true;
        }
        for seg in Segment::ALL {
            let members = topology.segment(seg);
            if members.iter().any(|m| masked.contains(m)) {
                continue;
            }
            let take: Vec<usize> = members.iter().copied().filter(|&m| !assigned[m]).collect();
            if take.is_empty() {
                continue;
            }
            for &t in &take {
                assigned[t] = true;
            }
            parts.push((seg, take));
        }
        if parts.is_empty() {
            return Err(Error::UnsupportedScenario(format!(
                "{name}: every lifter has a masked keypoint in its input"
            )));
        }
        let stray: Vec<usize> = (1..j).filter(|&k| !assigned[k]).collect();
        if !stray.is_empty() {
            log::warn!("scenario {name}: joints {stray:?} have no fully visible lifter and are completed instead");
            masked.extend(stray);
            masked.sort_unstable();
        }
        Ok(Self {
            name,
            masked,
            routing: Plan { parts },
        })
    }

    /// Non-root joints that stay visible, sorted.
    pub fn visible(&self, topology: &SkeletonTopology) -> Vec<usize> {
        topology.non_root_joints().filter(|j| !self.masked.contains(j)).collect()
    }

    /// Checks the partition and routing invariants, for scenarios read from
    /// a file.
    pub fn validate(&self, topology: &SkeletonTopology) -> Result<()> {
        let j = topology.num_joints();
        let err = |m: String| Err(Error::Config(format!("scenario {}: {m}", self.name)));
        if self.masked.contains(&0) {
            return err("the root cannot be masked".into());
        }
        let mut count = vec![0usize; j];
        for &m in &self.masked {
            if m >= j {
                return err(format!("joint {m} out of range"));
            }
            count[m] += 1;
        }
        for (seg, joints) in &self.routing.parts {
            let members = topology.segment(*seg);
            if members.iter().any(|m| self.masked.contains(m)) {
                return err(format!("the {seg} lifter has a masked input"));
            }
            for &r in joints {
                if !members.contains(&r) {
                    return err(format!("joint {r} is not in the {seg} segment"));
                }
                count[r] += 1;
            }
        }
        match (1..j).find(|&k| count[k] != 1) {
            Some(k) => err(format!("joint {k} is covered {} times", count[k])),
            None => Ok(()),
        }
    }
}

/// A 2D pose with some keypoints flagged absent. Absent coordinates are
/// zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedPose2D {
    pub pose: Pose2D,
    /// `true` for masked joints.
    pub mask: Vec<bool>,
}

/// Lifted visible keypoints in the lifting frame. Masked joints sit at the
/// root.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialPose3D {
    pub pose: Pose3D,
    pub mask: Vec<bool>,
    pub elevation: f64,
}

pub fn mask_pose(pose: &Pose2D, scenario: &OcclusionScenario) -> Result<MaskedPose2D> {
    if scenario.masked.contains(&0) {
        return Err(Error::Config(format!("scenario {}: the root cannot be masked", scenario.name)));
    }
    let mut mask = vec![false; pose.len()];
    let mut coords = pose.coords.clone();
    for &m in &scenario.masked {
        if m >= pose.len() {
            return Err(Error::Topology(format!("scenario {}: joint {m} out of range", scenario.name)));
        }
        mask[m] = true;
        coords[m] = [0.0, 0.0];
    }
    Ok(MaskedPose2D {
        pose: Pose2D::new(coords),
        mask,
    })
}

fn mask_vec(scenario: &OcclusionScenario, joints: usize) -> Vec<bool> {
    let mut mask = vec![false; joints];
    scenario.masked.iter().for_each(|&m| mask[m] = true);
    mask
}

/// Lifts the visible keypoints of a batch (rows of `2 J` values; masked
/// entries are ignored) with the scenario's routing.
pub fn partial_lift_batch(
    batch: &Array2<f64>,
    scenario: &OcclusionScenario,
    lifters: &LifterSet,
    topology: &SkeletonTopology,
    c: f64,
) -> Result<(Vec<Pose3D>, Array1<f64>)> {
    let j = topology.num_joints();
    crate::error::ensure_len("partial lift input", 2 * j, batch.ncols())?;
    let mut clean = batch.clone();
    for &m in &scenario.masked {
        clean.column_mut(2 * m).fill(0.0);
        clean.column_mut(2 * m + 1).fill(0.0);
    }
    let (offsets, elevation) = lifters.lift_with_plan(&clean, &scenario.routing, j)?;
    Ok((lift_batch(&clean, &offsets, c), elevation))
}

pub fn partial_lift(
    partial: &MaskedPose2D,
    scenario: &OcclusionScenario,
    lifters: &LifterSet,
    topology: &SkeletonTopology,
    c: f64,
) -> Result<PartialPose3D> {
    let expected = mask_vec(scenario, partial.pose.len());
    if expected != partial.mask {
        return Err(Error::Config(format!("pose mask does not match scenario {}", scenario.name)));
    }
    let batch = poses_to_batch(std::slice::from_ref(&partial.pose), topology.num_joints())?;
    let (mut poses, elevation) = partial_lift_batch(&batch, scenario, lifters, topology, c)?;
    Ok(PartialPose3D {
        pose: poses.remove(0),
        mask: expected,
        elevation: elevation[0],
    })
}
