use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cycle::{objective_and_gradients, LossBreakdown};
use super::LifterSet;
use crate::error::{Error, Result};
use crate::flow::FlowSet;
use crate::geometry::{normalize_pose, Segment, SkeletonTopology, DEFAULT_CAMERA_DISTANCE};
use crate::nn::{Adam, AdamConfig, Parameters};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifterTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Perturbation strength of the full-pose flow samples added to each
    /// batch; `None` disables the augmentation.
    pub sigma: Option<f64>,
    pub adam: AdamConfig,
    /// Objective weight of each candidate, in [`super::Candidate::ALL`] order.
    pub candidate_weights: [f64; 3],
    pub camera_distance: f64,
}

impl Default for LifterTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            sigma: Some(0.2),
            adam: AdamConfig::default(),
            candidate_weights: [1.0, 1.0, 1.0],
            camera_distance: DEFAULT_CAMERA_DISTANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifterEpoch {
    pub epoch: usize,
    /// Batch mean of the weighted objective.
    pub total: f64,
    /// Batch means of each term, summed over candidates with their weights.
    pub terms: LossBreakdown,
    pub skipped_nf: usize,
    pub sampled_poses: usize,
    pub learning_rate: f64,
}

#[derive(Clone, Debug)]
pub struct LifterTraining {
    pub lifters: LifterSet,
    pub trace: Vec<LifterEpoch>,
}

/// Perturbed full-pose flow samples for the rows of `batch`, renormalized
/// and re-centered; degenerate or non-finite samples are dropped.
fn sampled_rows<R: Rng + ?Sized>(
    flows: &FlowSet,
    batch: &Array2<f64>,
    sigma: f64,
    topology: &SkeletonTopology,
    c: f64,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let j = topology.num_joints();
    let non_root: Vec<usize> = (2..2 * j).collect();
    let samples = flows.full.sample_perturbed_batch(&batch.select(Axis(1), &non_root), sigma, rng)?;
    let mut rows = Vec::new();
    let mut count = 0;
    for s in samples.outer_iter() {
        if !s.iter().all(|v| v.is_finite()) {
            continue;
        }
        let mut raw = vec![[0.0; 2]; j];
        for k in 1..j {
            raw[k] = [s[2 * (k - 1)], s[2 * (k - 1) + 1]];
        }
        if let Ok(n) = normalize_pose(&raw, topology.head(), c) {
            rows.extend(n.pose.coords.iter().flatten());
            count += 1;
        }
    }
    Ok(Array2::from_shape_vec((count, 2 * j), rows).expect("rows collected per pose"))
}

/// Trains the four lifters jointly on root-centered normalized 2D poses
/// (rows of `2 J` values). `on_epoch` sees every completed epoch together
/// with the parameters at its end; a non-finite objective aborts with
/// [`Error::Divergence`], leaving the last reported parameters as the last
/// good state.
#[allow(clippy::too_many_arguments)]
pub fn train_lifters<R: Rng + ?Sized>(
    mut lifters: LifterSet,
    data: &Array2<f64>,
    flows: &FlowSet,
    bone_means: &[f64],
    topology: &SkeletonTopology,
    config: &LifterTrainConfig,
    rng: &mut R,
    on_epoch: &mut dyn FnMut(&LifterEpoch, &LifterSet),
) -> Result<LifterTraining> {
    crate::error::ensure_len("lifter training data", 2 * topology.num_joints(), data.ncols())?;
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let c = config.camera_distance;
    let mut adams: Vec<Adam> = lifters.lifters.iter().map(|l| Adam::for_model(config.adam, l)).collect();
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        let mut sum_total = 0.0;
        let mut terms = LossBreakdown::default();
        let mut skipped = 0;
        let mut sampled_poses = 0;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            let real = data.select(Axis(0), idx);
            let batch = match config.sigma {
                Some(sigma) => {
                    let extra = sampled_rows(flows, &real, sigma, topology, c, rng)?;
                    sampled_poses += extra.nrows();
                    ndarray::concatenate(Axis(0), &[real.view(), extra.view()]).expect("equal widths")
                }
                None => real,
            };
            let azimuth = Array1::from_shape_fn(batch.nrows(), |_| {
                rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI)
            });
            let (obj, grads) = objective_and_gradients(
                &lifters,
                flows,
                &batch,
                &azimuth,
                bone_means,
                topology,
                &config.candidate_weights,
                c,
                true,
            )
            .map_err(|e| match e {
                Error::DegeneratePose(_) | Error::NonFinite(_) | Error::NonPositiveDepth { .. } => Error::Divergence {
                    epoch,
                    reason: format!("lifting cycle broke down: {e}"),
                },
                e => e,
            })?;
            if !obj.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    reason: format!("lifting objective is {}", obj.total),
                });
            }
            let grads = grads.expect("gradients requested");
            for seg in Segment::ALL {
                let i = seg.index();
                adams[i]
                    .step(&mut lifters.lifters[i], &grads.lifters[i])
                    .map_err(|e| Error::Divergence {
                        epoch,
                        reason: format!("{seg} lifter: {e}"),
                    })?;
            }
            sum_total += obj.total;
            for (cand, br) in &obj.per_candidate {
                terms.add_scaled(br, config.candidate_weights[cand.index()]);
            }
            skipped += obj.skipped_nf;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        let mut mean_terms = LossBreakdown::default();
        mean_terms.add_scaled(&terms, 1.0 / n);
        let entry = LifterEpoch {
            epoch,
            total: sum_total / n,
            terms: mean_terms,
            skipped_nf: skipped,
            sampled_poses,
            learning_rate: adams[0].learning_rate(),
        };
        log::debug!("lifters epoch {epoch}: total {:.5}", entry.total);
        adams.iter_mut().for_each(Adam::end_epoch);
        if !lifters.lifters.iter().all(|l| l.all_finite()) {
            return Err(Error::Divergence {
                epoch,
                reason: "non-finite lifter parameters".into(),
            });
        }
        on_epoch(&entry, &lifters);
        trace.push(entry);
    }
    Ok(LifterTraining { lifters, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{FlowConfig, FlowModel, FlowTarget};
    use crate::lifter::LifterConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_flows(topo: &SkeletonTopology, rng: &mut ChaCha8Rng) -> FlowSet {
        let cfg = FlowConfig {
            blocks: 2,
            hidden: vec![4],
            scale_bound: 2.0,
        };
        FlowSet {
            full: FlowModel::new(FlowTarget::Full, 32, &cfg, rng),
            segments: Segment::ALL
                .iter()
                .map(|&s| FlowModel::new(FlowTarget::Segment(s), 2 * topo.segment(s).len(), &cfg, rng))
                .collect(),
        }
    }

    fn data(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
        let topo = SkeletonTopology::human17();
        let mut rows = Vec::new();
        for _ in 0..n {
            let mut raw = vec![[0.0; 2]; 17];
            for p in raw.iter_mut().skip(1) {
                *p = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
            }
            raw[9] = [0.0, -0.1];
            rows.extend(normalize_pose(&raw, topo.head(), 10.0).unwrap().pose.coords.into_iter().flatten());
        }
        Array2::from_shape_vec((n, 34), rows).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let topo = SkeletonTopology::human17();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let flows = identity_flows(&topo, &mut rng);
        let lifters = LifterSet::new(&topo, &LifterConfig { width: 8, path_blocks: 1 }, &mut rng);
        let cfg = LifterTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train_lifters(lifters.clone(), &data(&mut rng, 10), &flows, &[1.0 / 16.0; 16], &topo, &cfg, &mut rng, &mut |_, _| {}).unwrap();
        assert_eq!(out.lifters, lifters);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn same_seed_same_trace() {
        let topo = SkeletonTopology::human17();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let flows = identity_flows(&topo, &mut rng);
            let lifters = LifterSet::new(&topo, &LifterConfig { width: 8, path_blocks: 1 }, &mut rng);
            let d = data(&mut rng, 24);
            let cfg = LifterTrainConfig {
                epochs: 2,
                batch_size: 8,
                ..Default::default()
            };
            let mut seen = 0;
            let out = train_lifters(lifters, &d, &flows, &[1.0 / 16.0; 16], &topo, &cfg, &mut rng, &mut |_, _| seen += 1).unwrap();
            assert_eq!(seen, 2);
            out
        };
        let a = run();
        let b = run();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.lifters, b.lifters);
        assert!(a.trace.iter().all(|e| e.total.is_finite() && e.sampled_poses == 24));
    }
}
