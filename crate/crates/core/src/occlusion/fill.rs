use std::fmt;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{partial_lift_batch, MaskedPose2D, OcclusionScenario, PartialPose3D};
use crate::error::{ensure_len, Error, Result};
use crate::geometry::{Pose2D, Pose3D, RotationParams, SkeletonTopology};
use crate::lifter::{lift_batch, Candidate, LifterSet};
use crate::nn::{Adam, AdamConfig, Init, Network, Parameters, ResMlp};

/// Coordinate space a completion network works in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FillSpace {
    #[serde(rename = "3d")]
    ThreeD,
    #[serde(rename = "2d")]
    TwoD,
}

impl FillSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            FillSpace::ThreeD => "3d",
            FillSpace::TwoD => "2d",
        }
    }

    fn dim(self) -> usize {
        match self {
            FillSpace::ThreeD => 3,
            FillSpace::TwoD => 2,
        }
    }
}

impl fmt::Display for FillSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub width: usize,
    pub blocks: usize,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self { width: 1024, blocks: 2 }
    }
}

/// Predicts the masked keypoints of one scenario from the visible ones.
///
/// In 3D the network sees root-centered lifting-frame coordinates; in 2D it
/// sees normalized coordinates multiplied by the camera distance, which
/// brings both spaces to comparable magnitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionNet {
    pub scenario: String,
    pub space: FillSpace,
    pub visible: Vec<usize>,
    pub masked: Vec<usize>,
    pub camera_distance: f64,
    pub net: ResMlp,
}

impl OcclusionNet {
    pub const INIT_SCHEME: &'static str = "kaiming-uniform hidden layers, zero output layer";

    /// Zero output layer: a fresh net places every masked keypoint on the
    /// root.
    pub fn new<R: Rng + ?Sized>(
        scenario: &OcclusionScenario,
        space: FillSpace,
        config: &OcclusionConfig,
        topology: &SkeletonTopology,
        camera_distance: f64,
        rng: &mut R,
    ) -> Self {
        Self::with_init(scenario, space, config, topology, camera_distance, Init::Zeros, rng)
    }

    pub fn with_init<R: Rng + ?Sized>(
        scenario: &OcclusionScenario,
        space: FillSpace,
        config: &OcclusionConfig,
        topology: &SkeletonTopology,
        camera_distance: f64,
        output_init: Init,
        rng: &mut R,
    ) -> Self {
        let visible = scenario.visible(topology);
        let d = space.dim();
        Self {
            scenario: scenario.name.clone(),
            space,
            net: ResMlp::new(d * visible.len(), config.width, config.blocks, d * scenario.masked.len(), Init::KaimingUniform, output_init, rng),
            visible,
            masked: scenario.masked.clone(),
            camera_distance,
        }
    }

    pub fn architecture(&self) -> serde_json::Value {
        serde_json::json!({
            "type": "residual-mlp-occlusion",
            "scenario": self.scenario,
            "space": self.space.as_str(),
            "visible": self.visible,
            "masked": self.masked,
            "width": self.net.width(),
            "blocks": self.net.blocks.len(),
            "activation": "relu",
        })
    }

    fn check_space(&self, space: FillSpace) -> Result<()> {
        if self.space != space {
            return Err(Error::Config(format!("{} net for {} used in {space}", self.space, self.scenario)));
        }
        Ok(())
    }

    fn check_mask(&self, mask: &[bool]) -> Result<()> {
        let masked: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
        if masked != self.masked {
            return Err(Error::Config(format!("pose mask does not match scenario {}", self.scenario)));
        }
        Ok(())
    }

    /// Root-centered visible coordinates, one row per pose.
    pub fn inputs_3d(&self, poses: &[Pose3D]) -> Result<Array2<f64>> {
        self.check_space(FillSpace::ThreeD)?;
        gather_3d(poses, &self.visible)
    }

    /// Scaled visible coordinates from rows of `2 J` values.
    pub fn inputs_2d(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_space(FillSpace::TwoD)?;
        Ok(gather_2d(batch, &self.visible) * self.camera_distance)
    }

    /// Replaces the masked keypoints of lifting-frame poses with network
    /// predictions. Visible keypoints are copied through.
    pub fn fill_3d_batch(&self, poses: &[Pose3D]) -> Result<Vec<Pose3D>> {
        let y = self.net.predict(&self.inputs_3d(poses)?)?;
        Ok(poses
            .iter()
            .zip(y.outer_iter())
            .map(|(p, row)| {
                let root = p.root();
                let mut out = p.clone();
                for (k, &j) in self.masked.iter().enumerate() {
                    out.coords[j] = [root[0] + row[3 * k], root[1] + row[3 * k + 1], root[2] + row[3 * k + 2]];
                }
                out
            })
            .collect())
    }

    pub fn fill_3d(&self, partial: &PartialPose3D) -> Result<Pose3D> {
        self.check_mask(&partial.mask)?;
        ensure_len("partial pose joints", partial.mask.len(), partial.pose.len())?;
        Ok(self.fill_3d_batch(std::slice::from_ref(&partial.pose))?.remove(0))
    }

    /// Completes rows of `2 J` values in 2D.
    pub fn fill_2d_batch(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        let y = self.net.predict(&self.inputs_2d(batch)?)? / self.camera_distance;
        let mut out = batch.clone();
        for (k, &j) in self.masked.iter().enumerate() {
            out.column_mut(2 * j).assign(&y.column(2 * k));
            out.column_mut(2 * j + 1).assign(&y.column(2 * k + 1));
        }
        Ok(out)
    }

    pub fn fill_2d(&self, partial: &MaskedPose2D) -> Result<Pose2D> {
        self.check_mask(&partial.mask)?;
        let batch = crate::lifter::poses_to_batch(std::slice::from_ref(&partial.pose), partial.mask.len())?;
        let out = self.fill_2d_batch(&batch)?;
        Ok(Pose2D::new(out.row(0).as_slice().expect("row-major").chunks(2).map(|c| [c[0], c[1]]).collect()))
    }
}

impl Parameters for OcclusionNet {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.net.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.net.visit_mut(f);
    }
}

fn gather_3d(poses: &[Pose3D], joints: &[usize]) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((poses.len(), 3 * joints.len()));
    for (i, p) in poses.iter().enumerate() {
        let root = p.root();
        for (k, &j) in joints.iter().enumerate() {
            let q = p.coords.get(j).ok_or_else(|| Error::Topology(format!("joint {j} missing from pose")))?;
            for d in 0..3 {
                x[(i, 3 * k + d)] = q[d] - root[d];
            }
        }
    }
    Ok(x)
}

fn gather_2d(batch: &Array2<f64>, joints: &[usize]) -> Array2<f64> {
    batch.select(Axis(1), &SkeletonTopology::flat_columns(joints))
}

/// Rotates every coordinate triple of row `i` about the vertical axis by
/// `azimuth[i]`.
fn rotate_rows(x: &Array2<f64>, azimuth: &[f64]) -> Array2<f64> {
    let mut out = x.clone();
    for (mut row, &a) in out.outer_iter_mut().zip(azimuth) {
        let m = RotationParams::azimuth_only(a).matrix();
        for k in 0..row.len() / 3 {
            let v = [row[3 * k], row[3 * k + 1], row[3 * k + 2]];
            for r in 0..3 {
                row[3 * k + r] = m[(r, 0)] * v[0] + m[(r, 1)] * v[1] + m[(r, 2)] * v[2];
            }
        }
    }
    out
}

/// Mean squared difference between the network's prediction and the
/// teacher targets. With `azimuth`, inputs and targets of each row are
/// first rotated by the same angle (3D nets only).
pub fn distillation_loss(net: &OcclusionNet, inputs: &Array2<f64>, targets: &Array2<f64>, azimuth: Option<&[f64]>) -> Result<f64> {
    let (x, t) = augment(net, inputs, targets, azimuth)?;
    let y = net.net.predict(&x)?;
    ensure_len("distillation targets", y.ncols(), t.ncols())?;
    Ok(mse(&y, &t))
}

fn augment(net: &OcclusionNet, inputs: &Array2<f64>, targets: &Array2<f64>, azimuth: Option<&[f64]>) -> Result<(Array2<f64>, Array2<f64>)> {
    match azimuth {
        None => Ok((inputs.clone(), targets.clone())),
        Some(a) => {
            net.check_space(FillSpace::ThreeD)?;
            ensure_len("azimuth angles", inputs.nrows(), a.len())?;
            Ok((rotate_rows(inputs, a), rotate_rows(targets, a)))
        }
    }
}

fn mse(y: &Array2<f64>, t: &Array2<f64>) -> f64 {
    let n = y.len().max(1) as f64;
    (y - t).mapv(|d| d * d).sum() / n
}

fn loss_and_grad(net: &OcclusionNet, x: &Array2<f64>, t: &Array2<f64>, grads: &mut OcclusionNet) -> Result<f64> {
    let (y, tape) = net.net.forward(x)?;
    ensure_len("distillation targets", y.ncols(), t.ncols())?;
    let diff = &y - t;
    let n = y.len().max(1) as f64;
    let dy = &diff * (2.0 / n);
    net.net.backward(&tape, &dy, Some(&mut grads.net))?;
    Ok(diff.mapv(|d| d * d).sum() / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Random azimuth in `[-π, π]` per sample and step (3D nets only).
    pub azimuth_augmentation: bool,
}

impl Default for OcclusionTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 256,
            adam: AdamConfig::default(),
            azimuth_augmentation: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionEpoch {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug)]
pub struct OcclusionTraining {
    pub net: OcclusionNet,
    pub trace: Vec<OcclusionEpoch>,
}

/// Inputs and targets for a completion net on unoccluded normalized 2D
/// poses. 3D targets are the legs-and-torso lift of the full pose; 2D
/// targets are the true masked coordinates.
pub(crate) fn training_pairs(
    net: &OcclusionNet,
    scenario: &OcclusionScenario,
    lifters: &LifterSet,
    data: &Array2<f64>,
    topology: &SkeletonTopology,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let c = net.camera_distance;
    match net.space {
        FillSpace::ThreeD => {
            let (partial, _) = partial_lift_batch(data, scenario, lifters, topology, c)?;
            let plan = Candidate::LegsTorso.plan(topology);
            let (offsets, _) = lifters.lift_with_plan(data, &plan, topology.num_joints())?;
            let teacher = lift_batch(data, &offsets, c);
            Ok((net.inputs_3d(&partial)?, gather_3d(&teacher, &net.masked)?))
        }
        FillSpace::TwoD => Ok((net.inputs_2d(data)?, gather_2d(data, &net.masked) * c)),
    }
}

/// Fits a completion net for `scenario` on unoccluded normalized 2D poses
/// (rows of `2 J` values). The lifters act as fixed teachers.
pub fn train_occlusion<R: Rng + ?Sized>(
    mut net: OcclusionNet,
    scenario: &OcclusionScenario,
    lifters: &LifterSet,
    data: &Array2<f64>,
    topology: &SkeletonTopology,
    config: &OcclusionTrainConfig,
    rng: &mut R,
) -> Result<OcclusionTraining> {
    if net.scenario != scenario.name || net.masked != scenario.masked {
        return Err(Error::Config(format!("net for {} cannot train on scenario {}", net.scenario, scenario.name)));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    ensure_len("occlusion training data", 2 * topology.num_joints(), data.ncols())?;
    let (inputs, targets) = training_pairs(&net, scenario, lifters, data, topology)?;
    let rotate = config.azimuth_augmentation && net.space == FillSpace::ThreeD;
    let mut adam = Adam::for_model(config.adam, &net);
    let mut grads = net.zeros_like();
    let mut order: Vec<usize> = (0..inputs.nrows()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            let x = inputs.select(Axis(0), idx);
            let t = targets.select(Axis(0), idx);
            let (x, t) = if rotate {
                let a: Vec<f64> = (0..idx.len()).map(|_| rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI)).collect();
                (rotate_rows(&x, &a), rotate_rows(&t, &a))
            } else {
                (x, t)
            };
            grads.fill_zero();
            let loss = loss_and_grad(&net, &x, &t, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    reason: format!("{} {} occlusion loss is {loss}", net.scenario, net.space),
                });
            }
            adam.step(&mut net, &grads).map_err(|e| Error::Divergence {
                epoch,
                reason: e.to_string(),
            })?;
            sum += loss;
            batches += 1;
        }
        let entry = OcclusionEpoch {
            epoch,
            loss: sum / batches.max(1) as f64,
            learning_rate: adam.learning_rate(),
        };
        log::debug!("{} {} occlusion epoch {epoch}: loss {:.6}", net.scenario, net.space, entry.loss);
        adam.end_epoch();
        trace.push(entry);
    }
    Ok(OcclusionTraining { net, trace })
}
