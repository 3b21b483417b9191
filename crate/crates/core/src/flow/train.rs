use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FlowConfig, FlowModel, FlowSet, FlowTarget};
use crate::error::{Error, Result};
use crate::geometry::{Segment, SkeletonTopology};
use crate::nn::{Adam, AdamConfig, Parameters};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Latent perturbation strength for the sampled half of each batch.
    pub sigma: f64,
    pub adam: AdamConfig,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            sigma: 0.2,
            adam: AdamConfig::default(),
        }
    }
}

/// Where the perturbed samples `x'` of each batch come from.
#[derive(Clone, Copy)]
pub enum SampleSource<'a> {
    /// Real data only.
    None,
    /// The flow being trained perturbs its own batch.
    SelfFlow,
    /// A trained full-pose flow perturbs the matching rows of `data`; the
    /// result is sliced to `columns`.
    Full {
        flow: &'a FlowModel,
        data: &'a Array2<f64>,
        columns: &'a [usize],
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowEpoch {
    pub epoch: usize,
    /// Joint objective: mean NLL of real plus mean NLL of sampled rows.
    pub loss: f64,
    pub nll_real: f64,
    pub nll_sampled: f64,
    pub held_out_nll: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Clone, Debug)]
pub struct FlowTraining {
    pub flow: FlowModel,
    pub trace: Vec<FlowEpoch>,
}

fn mean_nll(flow: &FlowModel, x: &Array2<f64>) -> Result<f64> {
    if x.nrows() == 0 {
        return Ok(f64::NAN);
    }
    Ok(flow.nll_batch(x)?.mean().unwrap_or(f64::NAN))
}

fn divergence(epoch: usize, reason: impl Into<String>) -> Error {
    Error::Divergence {
        epoch,
        reason: reason.into(),
    }
}

/// Minimizes `mean NLL(x) + mean NLL(x')` with Adam, where `x'` are
/// perturbed-latent samples drawn from `source` at every batch (treated as
/// constants). Returns the trained flow and one trace entry per epoch.
pub fn train_flow<R: Rng + ?Sized>(
    mut flow: FlowModel,
    data: &Array2<f64>,
    source: SampleSource<'_>,
    config: &FlowTrainConfig,
    validation: Option<&Array2<f64>>,
    rng: &mut R,
) -> Result<FlowTraining> {
    crate::error::ensure_len("flow training data", flow.dim, data.ncols())?;
    if let SampleSource::Full { data: full, columns, .. } = source {
        if full.nrows() != data.nrows() {
            return Err(Error::Shape {
                context: "full-pose sampler rows",
                expected: data.nrows(),
                got: full.nrows(),
            });
        }
        crate::error::ensure_len("full-pose sampler columns", flow.dim, columns.len())?;
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut adam = Adam::new(config.adam, flow.num_params());
    let mut trace = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        let (mut sum_real, mut sum_sampled, mut n_real, mut n_sampled) = (0.0, 0.0, 0usize, 0usize);
        for idx in order.chunks(config.batch_size) {
            let x = data.select(Axis(0), idx);
            let sampled = match source {
                SampleSource::None => None,
                SampleSource::SelfFlow => Some(flow.sample_perturbed_batch(&x, config.sigma, rng)?),
                SampleSource::Full { flow: full, data: full_data, columns } => {
                    let rows = full_data.select(Axis(0), idx);
                    let s = full.sample_perturbed_batch(&rows, config.sigma, rng)?;
                    Some(s.select(Axis(1), columns))
                }
            };
            let mut grads = flow.zeros_like();
            let w = Array1::from_elem(x.nrows(), 1.0 / x.nrows() as f64);
            let (nll, _) = flow.nll_with_grad(&x, &w, Some(&mut grads))?;
            let real = nll.sum();
            let mut batch_loss = real / x.nrows() as f64;
            sum_real += real;
            n_real += x.nrows();
            if let Some(xs) = sampled {
                if !xs.iter().all(|v| v.is_finite()) {
                    return Err(divergence(epoch, "non-finite perturbed sample"));
                }
                let ws = Array1::from_elem(xs.nrows(), 1.0 / xs.nrows() as f64);
                let (nll_s, _) = flow.nll_with_grad(&xs, &ws, Some(&mut grads))?;
                sum_sampled += nll_s.sum();
                n_sampled += xs.nrows();
                batch_loss += nll_s.sum() / xs.nrows() as f64;
            }
            if !batch_loss.is_finite() {
                return Err(divergence(epoch, format!("flow '{}' NLL is {batch_loss}", flow.target)));
            }
            adam.step(&mut flow, &grads).map_err(|e| divergence(epoch, e.to_string()))?;
        }
        let nll_real = sum_real / n_real.max(1) as f64;
        let nll_sampled = if n_sampled > 0 { sum_sampled / n_sampled as f64 } else { 0.0 };
        let held_out_nll = validation.map(|v| mean_nll(&flow, v)).transpose()?;
        let entry = FlowEpoch {
            epoch,
            loss: nll_real + nll_sampled,
            nll_real,
            nll_sampled,
            held_out_nll,
            learning_rate: adam.learning_rate(),
        };
        log::debug!("flow {} epoch {epoch}: loss {:.5}", flow.target, entry.loss);
        trace.push(entry);
        adam.end_epoch();
    }
    Ok(FlowTraining { flow, trace })
}

/// The RNG stream for one flow of a set, independent of training order.
pub(crate) fn target_rng(seed: u64, target: FlowTarget) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = FlowTarget::ALL.iter().position(|&t| t == target).unwrap_or(0);
    rng.set_stream(stream as u64 + 1);
    rng
}

pub struct FlowSetTraining {
    pub flows: FlowSet,
    /// One trace per flow, in [`FlowTarget::ALL`] order.
    pub traces: Vec<(FlowTarget, Vec<FlowEpoch>)>,
}

/// Columns of a segment within the flattened non-root pose vector.
pub fn segment_columns(topology: &SkeletonTopology, seg: Segment) -> Vec<usize> {
    let shifted: Vec<usize> = topology.segment(seg).iter().map(|&j| j - 1).collect();
    SkeletonTopology::flat_columns(&shifted)
}

/// Trains one flow of the set exactly as [`train_flow_set`] would. Segment
/// targets need the trained full-pose flow as their sampler.
#[allow(clippy::too_many_arguments)]
pub fn train_flow_target(
    topology: &SkeletonTopology,
    target: FlowTarget,
    full_data: &Array2<f64>,
    validation: Option<&Array2<f64>>,
    full_flow: Option<&FlowModel>,
    flow_config: &FlowConfig,
    train_config: &FlowTrainConfig,
    seed: u64,
) -> Result<FlowTraining> {
    let full_dim = 2 * (topology.num_joints() - 1);
    crate::error::ensure_len("full-pose flow data", full_dim, full_data.ncols())?;
    let mut rng = target_rng(seed, target);
    match target {
        FlowTarget::Full => {
            let init = FlowModel::new(FlowTarget::Full, full_dim, flow_config, &mut rng);
            train_flow(init, full_data, SampleSource::SelfFlow, train_config, validation, &mut rng)
        }
        FlowTarget::Segment(seg) => {
            let full = full_flow.ok_or_else(|| Error::Config(format!("the {seg} flow needs a trained full-pose flow")))?;
            crate::error::ensure_len("full-pose sampler dimension", full_dim, full.dim)?;
            let cols = segment_columns(topology, seg);
            let data = full_data.select(Axis(1), &cols);
            let val = validation.map(|v| v.select(Axis(1), &cols));
            let init = FlowModel::new(target, cols.len(), flow_config, &mut rng);
            let source = SampleSource::Full {
                flow: full,
                data: full_data,
                columns: &cols,
            };
            train_flow(init, &data, source, train_config, val.as_ref(), &mut rng)
        }
    }
}

/// Trains the full-pose flow on `full_data` (rows = flattened non-root
/// poses), then the four segment flows with samples drawn from it. The
/// segment flows are independent of one another and may run on separate
/// threads; results do not depend on `parallel`.
pub fn train_flow_set(
    topology: &SkeletonTopology,
    full_data: &Array2<f64>,
    validation: Option<&Array2<f64>>,
    flow_config: &FlowConfig,
    train_config: &FlowTrainConfig,
    seed: u64,
    parallel: bool,
) -> Result<FlowSetTraining> {
    let full_dim = 2 * (topology.num_joints() - 1);
    crate::error::ensure_len("full-pose flow data", full_dim, full_data.ncols())?;
    let full = train_flow_target(topology, FlowTarget::Full, full_data, validation, None, flow_config, train_config, seed)?;
    let train_segment = |seg: Segment| -> Result<FlowTraining> {
        train_flow_target(topology, FlowTarget::Segment(seg), full_data, validation, Some(&full.flow), flow_config, train_config, seed)
    };
    let segments: Vec<Result<FlowTraining>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = Segment::ALL.iter().map(|&seg| s.spawn(move || train_segment(seg))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Config("flow training thread panicked".into()))))
                .collect()
        })
    } else {
        Segment::ALL.iter().map(|&seg| train_segment(seg)).collect()
    };
    let mut traces = vec![(FlowTarget::Full, full.trace)];
    let mut models = Vec::with_capacity(4);
    for (seg, r) in Segment::ALL.iter().zip(segments) {
        let t = r?;
        traces.push((FlowTarget::Segment(*seg), t.trace));
        models.push(t.flow);
    }
    Ok(FlowSetTraining {
        flows: FlowSet {
            full: full.flow,
            segments: models,
        },
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn toy_config() -> FlowConfig {
        FlowConfig {
            blocks: 4,
            hidden: vec![16, 16],
            scale_bound: 2.0,
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flow = FlowModel::new(FlowTarget::Full, 4, &toy_config(), &mut rng);
        let data = Array2::from_shape_fn((10, 4), |(i, j)| (i * j) as f64 * 0.1);
        let cfg = FlowTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train_flow(flow.clone(), &data, SampleSource::SelfFlow, &cfg, None, &mut rng).unwrap();
        assert_eq!(out.flow, flow);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn one_dimensional_gaussian_reaches_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = Array2::from_shape_fn((4000, 1), |_| rng.sample::<f64, _>(StandardNormal));
        let flow = FlowModel::with_output_init(FlowTarget::Full, 1, &toy_config(), crate::nn::Init::ScaledKaiming(0.3), &mut rng);
        let cfg = FlowTrainConfig {
            epochs: 10,
            batch_size: 256,
            sigma: 0.2,
            adam: AdamConfig {
                learning_rate: 1e-3,
                ..Default::default()
            },
        };
        let out = train_flow(flow, &data, SampleSource::None, &cfg, None, &mut rng).unwrap();
        let entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        let fresh = Array2::from_shape_fn((20000, 1), |_| rng.sample::<f64, _>(StandardNormal));
        let nll = out.flow.nll_batch(&fresh).unwrap().mean().unwrap();
        assert!((nll - entropy).abs() < 0.05, "{nll} vs {entropy}");
    }

    #[test]
    fn segment_columns_index_the_full_vector() {
        let t = SkeletonTopology::human17();
        assert_eq!(segment_columns(&t, Segment::Legs), (0..12).collect::<Vec<_>>());
        assert_eq!(segment_columns(&t, Segment::Torso), (12..32).collect::<Vec<_>>());
        assert_eq!(segment_columns(&t, Segment::Left).len(), 20);
    }

    #[test]
    fn set_training_is_independent_of_parallelism() {
        let t = SkeletonTopology::human17();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = Array2::from_shape_fn((40, 32), |_| rng.gen_range(-0.1..0.1));
        let cfg = FlowTrainConfig {
            epochs: 2,
            batch_size: 16,
            ..Default::default()
        };
        let fc = FlowConfig {
            blocks: 2,
            hidden: vec![8],
            scale_bound: 2.0,
        };
        let a = train_flow_set(&t, &data, None, &fc, &cfg, 3, false).unwrap();
        let b = train_flow_set(&t, &data, None, &fc, &cfg, 3, true).unwrap();
        assert_eq!(a.flows, b.flows);
        assert_eq!(a.traces, b.traces);
        assert_eq!(a.flows.segments[0].dim, 12);
    }
}
