use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the four independently lifted keypoint groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Segment {
    Legs,
    Torso,
    Left,
    Right,
}

impl Segment {
    /// Fixed processing order. Lifter updates within a training step follow it.
    pub const ALL: [Segment; 4] = [Segment::Legs, Segment::Torso, Segment::Left, Segment::Right];

    pub fn index(self) -> usize {
        match self {
            Segment::Legs => 0,
            Segment::Torso => 1,
            Segment::Left => 2,
            Segment::Right => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Legs => "legs",
            Segment::Torso => "torso",
            Segment::Left => "left",
            Segment::Right => "right",
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Segment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "legs" => Ok(Segment::Legs),
            "torso" => Ok(Segment::Torso),
            "left" => Ok(Segment::Left),
            "right" => Ok(Segment::Right),
            other => Err(Error::Config(format!("unknown segment '{other}'"))),
        }
    }
}

/// Joint names, bone tree and segment membership of a skeleton.
///
/// The root joint is always index 0. Segments never contain the root: the root
/// sits at the origin in 2D and at `(0, 0, c)` once lifted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    joint_names: Vec<String>,
    bones: Vec<(usize, usize)>,
    segments: [Vec<usize>; 4],
    head: usize,
}

impl SkeletonTopology {
    /// Builds a topology and checks its structural invariants: the bones form
    /// a tree rooted at joint 0, and the legs and torso segments partition the
    /// non-root joints.
    pub fn new(
        joint_names: Vec<String>,
        bones: Vec<(usize, usize)>,
        segments: [Vec<usize>; 4],
        head: usize,
    ) -> Result<Self> {
        let n = joint_names.len();
        if n < 2 {
            return Err(Error::Topology("need at least two joints".into()));
        }
        if bones.len() != n - 1 {
            return Err(Error::Topology(format!(
                "{} bones for {} joints; a tree needs {}",
                bones.len(),
                n,
                n - 1
            )));
        }
        let mut parent = vec![usize::MAX; n];
        for &(p, c) in &bones {
            if p >= n || c >= n || c == 0 || p == c {
                return Err(Error::Topology(format!("invalid bone ({p}, {c})")));
            }
            if parent[c] != usize::MAX {
                return Err(Error::Topology(format!("joint {c} has two parents")));
            }
            parent[c] = p;
        }
        // every joint must reach the root without revisiting a joint
        for start in 1..n {
            let mut j = start;
            let mut steps = 0;
            while j != 0 {
                j = parent[j];
                steps += 1;
                if j == usize::MAX || steps > n {
                    return Err(Error::Topology(format!("joint {start} is not connected to the root")));
                }
            }
        }
        for seg in &segments {
            if seg.iter().any(|&j| j == 0 || j >= n) {
                return Err(Error::Topology("segments must hold valid non-root joints".into()));
            }
        }
        let mut cover = vec![0u8; n];
        for &j in segments[Segment::Legs.index()]
            .iter()
            .chain(&segments[Segment::Torso.index()])
        {
            cover[j] += 1;
        }
        if cover[1..].iter().any(|&k| k != 1) {
            return Err(Error::Topology(
                "legs and torso must partition the non-root joints".into(),
            ));
        }
        if head == 0 || head >= n {
            return Err(Error::Topology("head must be a non-root joint".into()));
        }
        Ok(Self {
            joint_names,
            bones,
            segments,
            head,
        })
    }

    /// The 17-joint layout used throughout: pelvis root, right leg, left leg,
    /// spine chain, left arm, right arm.
    pub fn human17() -> Self {
        let names = [
            "pelvis",
            "r_hip",
            "r_knee",
            "r_ankle",
            "l_hip",
            "l_knee",
            "l_ankle",
            "spine",
            "neck",
            "head",
            "head_top",
            "l_shoulder",
            "l_elbow",
            "l_wrist",
            "r_shoulder",
            "r_elbow",
            "r_wrist",
        ];
        let bones = vec![
            (0, 1),
            (1, 2),
            (2, 3),
            (0, 4),
            (4, 5),
            (5, 6),
            (0, 7),
            (7, 8),
            (8, 9),
            (9, 10),
            (8, 11),
            (11, 12),
            (12, 13),
            (8, 14),
            (14, 15),
            (15, 16),
        ];
        let segments = [
            vec![1, 2, 3, 4, 5, 6],
            vec![7, 8, 9, 10, 11, 12, 13, 14, 15, 16],
            vec![4, 5, 6, 7, 8, 9, 10, 11, 12, 13],
            vec![1, 2, 3, 7, 8, 9, 10, 14, 15, 16],
        ];
        Self::new(names.iter().map(|s| s.to_string()).collect(), bones, segments, 9)
            .expect("built-in topology is valid")
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    pub fn bone_names(&self) -> Vec<String> {
        self.bones
            .iter()
            .map(|&(p, c)| format!("{}-{}", self.joint_names[p], self.joint_names[c]))
            .collect()
    }

    pub fn head(&self) -> usize {
        self.head
    }

    pub fn segment(&self, seg: Segment) -> &[usize] {
        &self.segments[seg.index()]
    }

    /// Joints shared by the left and right segments (spine, neck, head,
    /// head-top for the human skeleton).
    pub fn spine_chain(&self) -> Vec<usize> {
        let right = self.segment(Segment::Right);
        self.segment(Segment::Left)
            .iter()
            .copied()
            .filter(|j| right.contains(j))
            .collect()
    }

    pub fn non_root_joints(&self) -> std::ops::Range<usize> {
        1..self.num_joints()
    }

    /// Column indices of a joint list inside a flattened `(x0, y0, x1, y1, ..)`
    /// vector of all joints.
    pub fn flat_columns(joints: &[usize]) -> Vec<usize> {
        joints.iter().flat_map(|&j| [2 * j, 2 * j + 1]).collect()
    }
}
