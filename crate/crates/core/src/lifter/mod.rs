//! Segment lifting networks, candidate assembly and the unsupervised
//! rotate-and-reproject training objective.

mod cycle;
mod train;

pub use cycle::{
    bone_loss, consistency_cycle, cycle_from_depths, deformation_loss, objective_and_gradients, CycleOutputs,
    LossBreakdown, Objective, BONE_WEIGHT,
};
pub use train::{train_lifters, LifterEpoch, LifterTrainConfig, LifterTraining};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::geometry::{depth_from_offset, Pose2D, Pose3D, Segment, SkeletonTopology};
use crate::nn::{check_input, relu, relu_backward, Dense, Init, Network, Parameters, ResidualBlock, ResidualTape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifterConfig {
    pub width: usize,
    /// Residual blocks in each of the depth and elevation paths.
    pub path_blocks: usize,
}

impl Default for LifterConfig {
    fn default() -> Self {
        Self {
            width: 1024,
            path_blocks: 3,
        }
    }
}

/// Two-path residual network for one segment.
///
/// Input: the segment's normalized 2D keypoints, flattened. Output row:
/// one depth offset per segment keypoint followed by one elevation angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifterModel {
    pub segment: Segment,
    pub joints: Vec<usize>,
    pub input: Dense,
    pub shared: ResidualBlock,
    pub depth_blocks: Vec<ResidualBlock>,
    pub depth_out: Dense,
    pub elevation_blocks: Vec<ResidualBlock>,
    pub elevation_out: Dense,
}

pub struct LifterTape {
    fingerprint: u64,
    x: Array2<f64>,
    pre_in: Array2<f64>,
    shared: ResidualTape,
    depth: Vec<ResidualTape>,
    depth_last: Array2<f64>,
    elevation: Vec<ResidualTape>,
    elevation_last: Array2<f64>,
}

impl LifterModel {
    pub const INIT_SCHEME: &'static str = "kaiming-uniform hidden layers, zero output layers";

    /// Output layers start at zero, so a fresh lifter predicts zero depth
    /// offsets and zero elevation.
    pub fn new<R: Rng + ?Sized>(segment: Segment, topology: &SkeletonTopology, config: &LifterConfig, rng: &mut R) -> Self {
        Self::with_init(segment, topology.segment(segment).to_vec(), config, Init::KaimingUniform, Init::Zeros, rng)
    }

    pub fn with_init<R: Rng + ?Sized>(
        segment: Segment,
        joints: Vec<usize>,
        config: &LifterConfig,
        hidden: Init,
        output: Init,
        rng: &mut R,
    ) -> Self {
        let w = config.width;
        let k = joints.len();
        Self {
            segment,
            input: Dense::new(2 * k, w, hidden, rng),
            shared: ResidualBlock::new(w, hidden, rng),
            depth_blocks: (0..config.path_blocks).map(|_| ResidualBlock::new(w, hidden, rng)).collect(),
            depth_out: Dense::new(w, k, output, rng),
            elevation_blocks: (0..config.path_blocks).map(|_| ResidualBlock::new(w, hidden, rng)).collect(),
            elevation_out: Dense::new(w, 1, output, rng),
            joints,
        }
    }

    pub fn num_keypoints(&self) -> usize {
        self.joints.len()
    }

    pub fn architecture(&self) -> serde_json::Value {
        serde_json::json!({
            "type": "two-path-residual-lifter",
            "segment": self.segment.as_str(),
            "joints": self.joints,
            "width": self.input.output_dim(),
            "path_blocks": self.depth_blocks.len(),
            "activation": "relu",
        })
    }

    /// Depth offsets and elevation for one segment input.
    pub fn lift_segment(&self, segment_2d: &[f64]) -> Result<SegmentPrediction> {
        ensure_len("lifter input", self.input_dim(), segment_2d.len())?;
        let x = Array2::from_shape_vec((1, segment_2d.len()), segment_2d.to_vec()).expect("shape checked");
        let y = self.predict(&x)?;
        let k = self.num_keypoints();
        Ok(SegmentPrediction {
            offsets: y.row(0).iter().take(k).copied().collect(),
            elevation: y[(0, k)],
        })
    }
}

fn run_path(blocks: &[ResidualBlock], out: &Dense, h: &Array2<f64>) -> (Array2<f64>, Vec<ResidualTape>, Array2<f64>) {
    let mut h = h.clone();
    let mut tapes = Vec::with_capacity(blocks.len());
    for b in blocks {
        let (y, t) = b.forward(&h);
        tapes.push(t);
        h = y;
    }
    (out.apply(&h), tapes, h)
}

fn back_path(
    blocks: &[ResidualBlock],
    out: &Dense,
    tapes: &[ResidualTape],
    last: &Array2<f64>,
    dy: &Array2<f64>,
    grads: Option<(&mut Vec<ResidualBlock>, &mut Dense)>,
) -> Array2<f64> {
    let (mut g_blocks, g_out) = match grads {
        Some((b, o)) => (Some(b), Some(o)),
        None => (None, None),
    };
    let mut d = out.backward_from(last, dy, g_out);
    for i in (0..blocks.len()).rev() {
        let g = g_blocks.as_deref_mut().map(|gb| &mut gb[i]);
        d = blocks[i].backward(&tapes[i], &d, g);
    }
    d
}

impl Parameters for LifterModel {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.input.visit(f);
        self.shared.visit(f);
        self.depth_blocks.iter().for_each(|b| b.visit(f));
        self.depth_out.visit(f);
        self.elevation_blocks.iter().for_each(|b| b.visit(f));
        self.elevation_out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.input.visit_mut(f);
        self.shared.visit_mut(f);
        self.depth_blocks.iter_mut().for_each(|b| b.visit_mut(f));
        self.depth_out.visit_mut(f);
        self.elevation_blocks.iter_mut().for_each(|b| b.visit_mut(f));
        self.elevation_out.visit_mut(f);
    }
}

impl Network for LifterModel {
    type Tape = LifterTape;

    fn input_dim(&self) -> usize {
        self.input.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.num_keypoints() + 1
    }

    fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, LifterTape)> {
        check_input("lifter input", self.input_dim(), x)?;
        let pre_in = self.input.apply(x);
        let (h, shared) = self.shared.forward(&relu(&pre_in));
        let (d, depth, depth_last) = run_path(&self.depth_blocks, &self.depth_out, &h);
        let (e, elevation, elevation_last) = run_path(&self.elevation_blocks, &self.elevation_out, &h);
        let y = ndarray::concatenate(Axis(1), &[d.view(), e.view()]).expect("equal row counts");
        Ok((
            y,
            LifterTape {
                fingerprint: self.fingerprint(),
                x: x.clone(),
                pre_in,
                shared,
                depth,
                depth_last,
                elevation,
                elevation_last,
            },
        ))
    }

    fn backward(&self, tape: &LifterTape, dy: &Array2<f64>, grads: Option<&mut LifterModel>) -> Result<Array2<f64>> {
        if tape.fingerprint != self.fingerprint() {
            return Err(Error::StaleTape("lifter parameters changed since forward".into()));
        }
        check_input("lifter output gradient", self.output_dim(), dy)?;
        if dy.nrows() != tape.x.nrows() {
            return Err(Error::StaleTape("batch size differs from forward".into()));
        }
        let k = self.num_keypoints();
        let dd = dy.slice(ndarray::s![.., ..k]).to_owned();
        let de = dy.slice(ndarray::s![.., k..]).to_owned();
        let (g_in, g_shared, g_depth, g_elev) = match grads {
            Some(g) => (
                Some(&mut g.input),
                Some(&mut g.shared),
                Some((&mut g.depth_blocks, &mut g.depth_out)),
                Some((&mut g.elevation_blocks, &mut g.elevation_out)),
            ),
            None => (None, None, None, None),
        };
        let mut dh = back_path(&self.depth_blocks, &self.depth_out, &tape.depth, &tape.depth_last, &dd, g_depth);
        dh += &back_path(
            &self.elevation_blocks,
            &self.elevation_out,
            &tape.elevation,
            &tape.elevation_last,
            &de,
            g_elev,
        );
        let d = self.shared.backward(&tape.shared, &dh, g_shared);
        let d = relu_backward(&tape.pre_in, &d);
        Ok(self.input.backward_from(&tape.x, &d, g_in))
    }
}

/// One lifter's output for a single pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentPrediction {
    /// One per segment keypoint, in segment order.
    pub offsets: Vec<f64>,
    pub elevation: f64,
}

/// How a full pose is put together from segment lifters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Candidate {
    /// Legs lifter plus torso lifter.
    LegsTorso,
    /// Left and right lifters, spine chain from the right lifter.
    LeftRightR,
    /// Left and right lifters, spine chain from the left lifter.
    LeftRightL,
}

impl Candidate {
    pub const ALL: [Candidate; 3] = [Candidate::LegsTorso, Candidate::LeftRightR, Candidate::LeftRightL];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Candidate::LegsTorso => "legs-torso",
            Candidate::LeftRightR => "left-right-r",
            Candidate::LeftRightL => "left-right-l",
        }
    }

    /// The lifters used and the joints each one supplies.
    pub fn plan(self, topology: &SkeletonTopology) -> Plan {
        let chain = topology.spine_chain();
        let without_chain = |s: Segment| -> Vec<usize> {
            topology.segment(s).iter().copied().filter(|j| !chain.contains(j)).collect()
        };
        let full = |s: Segment| topology.segment(s).to_vec();
        let parts = match self {
            Candidate::LegsTorso => vec![(Segment::Legs, full(Segment::Legs)), (Segment::Torso, full(Segment::Torso))],
            Candidate::LeftRightR => vec![
                (Segment::Left, without_chain(Segment::Left)),
                (Segment::Right, full(Segment::Right)),
            ],
            Candidate::LeftRightL => vec![
                (Segment::Left, full(Segment::Left)),
                (Segment::Right, without_chain(Segment::Right)),
            ],
        };
        Plan { parts }
    }
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Candidate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Candidate::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown candidate '{s}' (expected legs-torso, left-right-r or left-right-l)")))
    }
}

/// Which lifter supplies which joints. Elevation is the mean over the
/// lifters in the plan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub parts: Vec<(Segment, Vec<usize>)>,
}

impl Plan {
    pub fn joints(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.parts.iter().flat_map(|(_, j)| j.iter().copied()).collect();
        all.sort_unstable();
        all
    }
}

/// The four lifters, indexed by [`Segment::index`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifterSet {
    pub lifters: Vec<LifterModel>,
}

impl LifterSet {
    pub fn new<R: Rng + ?Sized>(topology: &SkeletonTopology, config: &LifterConfig, rng: &mut R) -> Self {
        Self {
            lifters: Segment::ALL.iter().map(|&s| LifterModel::new(s, topology, config, rng)).collect(),
        }
    }

    pub fn get(&self, seg: Segment) -> &LifterModel {
        &self.lifters[seg.index()]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            lifters: self.lifters.iter().map(Parameters::zeros_like).collect(),
        }
    }

    /// Runs the plan's lifters on a batch of full 2D poses (rows of `2 J`
    /// values, root included) and returns depth offsets (`B × J`, root 0)
    /// and elevations.
    pub fn lift_with_plan(&self, poses: &Array2<f64>, plan: &Plan, num_joints: usize) -> Result<(Array2<f64>, Array1<f64>)> {
        let mut outputs: [Option<Array2<f64>>; 4] = Default::default();
        for (seg, _) in &plan.parts {
            if outputs[seg.index()].is_none() {
                let lifter = self.get(*seg);
                let x = poses.select(Axis(1), &SkeletonTopology::flat_columns(&lifter.joints));
                outputs[seg.index()] = Some(lifter.predict(&x)?);
            }
        }
        assemble_batch(&outputs, self, plan, num_joints)
    }

    /// 3D poses in the lifting frame (root at `(0, 0, c)`) for a batch of
    /// normalized 2D poses.
    pub fn predict(&self, poses: &[Pose2D], candidate: Candidate, topology: &SkeletonTopology, c: f64) -> Result<Vec<Pose3D>> {
        let plan = candidate.plan(topology);
        let batch = poses_to_batch(poses, topology.num_joints())?;
        let (offsets, _) = self.lift_with_plan(&batch, &plan, topology.num_joints())?;
        Ok(lift_batch(&batch, &offsets, c))
    }
}

/// Stacks poses into rows of `2 J` values.
pub fn poses_to_batch(poses: &[Pose2D], num_joints: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((poses.len(), 2 * num_joints));
    for (i, p) in poses.iter().enumerate() {
        ensure_len("pose joints", num_joints, p.len())?;
        for (j, c) in p.coords.iter().enumerate() {
            out[(i, 2 * j)] = c[0];
            out[(i, 2 * j + 1)] = c[1];
        }
    }
    Ok(out)
}

pub(crate) fn lift_batch(batch: &Array2<f64>, offsets: &Array2<f64>, c: f64) -> Vec<Pose3D> {
    batch
        .outer_iter()
        .zip(offsets.outer_iter())
        .map(|(row, off)| {
            Pose3D::new(
                (0..off.len())
                    .map(|j| {
                        let z = depth_from_offset(off[j], c);
                        [row[2 * j] * z, row[2 * j + 1] * z, z]
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Gathers depth offsets and mean elevation from per-segment outputs.
pub(crate) fn assemble_batch(
    outputs: &[Option<Array2<f64>>; 4],
    lifters: &LifterSet,
    plan: &Plan,
    num_joints: usize,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let rows = outputs.iter().flatten().map(|o| o.nrows()).next().unwrap_or(0);
    let mut offsets = Array2::zeros((rows, num_joints));
    let mut elevation = Array1::zeros(rows);
    for (seg, joints) in &plan.parts {
        let out = outputs[seg.index()]
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing prediction for the {seg} lifter")))?;
        let lifter = lifters.get(*seg);
        for &j in joints {
            let pos = lifter
                .joints
                .iter()
                .position(|&x| x == j)
                .ok_or_else(|| Error::Topology(format!("joint {j} is not in the {seg} segment")))?;
            offsets.column_mut(j).assign(&out.column(pos));
        }
        elevation += &out.column(lifter.num_keypoints());
    }
    elevation /= plan.parts.len().max(1) as f64;
    Ok((offsets, elevation))
}

/// Reverse of [`assemble_batch`]: adds the offset and elevation gradients
/// into the per-segment output gradients.
pub(crate) fn assemble_backward(
    d_offsets: &Array2<f64>,
    d_elevation: &Array1<f64>,
    lifters: &LifterSet,
    plan: &Plan,
    out_grads: &mut [Option<Array2<f64>>; 4],
) {
    let n = plan.parts.len().max(1) as f64;
    for (seg, joints) in &plan.parts {
        let lifter = lifters.get(*seg);
        let g = out_grads[seg.index()].get_or_insert_with(|| Array2::zeros((d_offsets.nrows(), lifter.output_dim())));
        for &j in joints {
            let pos = lifter.joints.iter().position(|&x| x == j).expect("plan validated by assemble_batch");
            let mut col = g.column_mut(pos);
            col += &d_offsets.column(j);
        }
        let mut col = g.column_mut(lifter.num_keypoints());
        col.scaled_add(1.0 / n, d_elevation);
    }
}

/// Three full-pose candidates built from per-segment predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct AssembledPrediction {
    /// In [`Candidate::ALL`] order.
    pub poses: Vec<Pose3D>,
    pub elevations: Vec<f64>,
}

impl AssembledPrediction {
    pub fn get(&self, candidate: Candidate) -> (&Pose3D, f64) {
        (&self.poses[candidate.index()], self.elevations[candidate.index()])
    }
}

/// Builds the three candidates for one pose from the four segment
/// predictions (indexed by [`Segment::index`]).
pub fn assemble(
    pose: &Pose2D,
    predictions: &[Option<SegmentPrediction>; 4],
    topology: &SkeletonTopology,
    c: f64,
) -> Result<AssembledPrediction> {
    ensure_len("pose joints", topology.num_joints(), pose.len())?;
    let mut poses = Vec::with_capacity(3);
    let mut elevations = Vec::with_capacity(3);
    for cand in Candidate::ALL {
        let plan = cand.plan(topology);
        let mut offsets = vec![0.0; topology.num_joints()];
        let mut elevation = 0.0;
        for (seg, joints) in &plan.parts {
            let p = predictions[seg.index()]
                .as_ref()
                .ok_or_else(|| Error::Config(format!("missing prediction for the {seg} lifter")))?;
            let members = topology.segment(*seg);
            ensure_len("segment prediction offsets", members.len(), p.offsets.len())?;
            for &j in joints {
                let pos = members.iter().position(|&x| x == j).expect("plan joints belong to the segment");
                offsets[j] = p.offsets[pos];
            }
            elevation += p.elevation;
        }
        elevations.push(elevation / plan.parts.len() as f64);
        poses.push(crate::geometry::perspective_lift(pose, &offsets, c)?);
    }
    Ok(AssembledPrediction { poses, elevations })
}
