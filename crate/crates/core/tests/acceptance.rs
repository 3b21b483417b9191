//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Training-based criteria run at desk scale: 5,000 synthetic poses, batch
//! 256, 20 lifter epochs, with the network widths below.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Rotation3, Unit, Vector3};
use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use poselift_core::data::{batch_2d, compute_bone_stats, generate_synthetic, lifting_frame_3d, SynthConfig};
use poselift_core::flow::{train_flow_set, FlowConfig, FlowModel, FlowSet, FlowTarget, FlowTrainConfig};
use poselift_core::geometry::{auc, bone_lengths, mpjpe, n_mpjpe, pa_mpjpe, pck, DEFAULT_CAMERA_DISTANCE};
use poselift_core::lifter::{
    bone_loss, cycle_from_depths, deformation_loss, objective_and_gradients, train_lifters, Candidate, LifterConfig, LifterModel,
    LifterSet, LifterTrainConfig,
};
use poselift_core::nn::{AdamConfig, Init, Network, Parameters};
use poselift_core::occlusion::{
    evaluate_occlusion, train_occlusion, FillSpace, OcclusionConfig, OcclusionNet, OcclusionScenario, OcclusionTrainConfig,
};
use poselift_core::{Pose3D, PoseRecord, Segment, SkeletonTopology};

const C: f64 = DEFAULT_CAMERA_DISTANCE;
const TRAIN_POSES: usize = 5000;
const HELD_OUT_POSES: usize = 1000;
const EPOCHS: usize = 20;
const BATCH: usize = 256;
const FLOW_BLOCKS: usize = 8;
const FLOW_HIDDEN: usize = 256;
const LIFTER_WIDTH: usize = 128;
const LIFTER_PATH_BLOCKS: usize = 3;
const OCCLUSION_WIDTH: usize = 256;
const OCCLUSION_BLOCKS: usize = 2;
const OCCLUSION_EPOCHS: usize = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_flow(dim: usize, hidden: &[usize], blocks: usize, gain: f64, rng: &mut ChaCha8Rng) -> FlowModel {
    let cfg = FlowConfig {
        blocks,
        hidden: hidden.to_vec(),
        scale_bound: 2.0,
    };
    FlowModel::with_output_init(FlowTarget::Full, dim, &cfg, Init::ScaledKaiming(gain), rng)
}

/// Normalized pose coordinates, the inputs flows actually see, lie within a
/// few tenths of the origin.
const POSE_COORD_SCALE: f64 = 0.1;

fn round_trip_error(input_scale: f64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for _ in 0..50 {
        let dim = rng.gen_range(1..=32);
        let flow = random_flow(dim, &[FLOW_HIDDEN, FLOW_HIDDEN], FLOW_BLOCKS, 1.0, &mut rng);
        for _ in 0..20 {
            let x: Vec<f64> = (0..dim).map(|_| input_scale * normal(&mut rng)).collect();
            let (z, _) = flow.encode(&x).unwrap();
            let back = flow.decode(&z).unwrap();
            let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(err);
            count += 1;
        }
    }
    (worst, count)
}

fn flow_invertibility() -> Outcome {
    let (worst, count) = round_trip_error(POSE_COORD_SCALE);
    let (unit, _) = round_trip_error(1.0);
    outcome(
        worst < 1e-9,
        format!("{count} inputs at pose scale on 50 random 8-block flows, max |decode(encode(x)) - x| = {worst:.2e} (unit-scale inputs: {unit:.2e})"),
    )
}

fn log_det_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let dim = 1 + case % 8;
        let flow = random_flow(dim, &[8], 4, 1.0, &mut rng);
        let x: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        let (_, analytic) = flow.encode(&x).unwrap();
        let mut jac = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let mut up = x.clone();
            let mut down = x.clone();
            up[k] += h;
            down[k] -= h;
            let (zu, _) = flow.encode(&up).unwrap();
            let (zd, _) = flow.encode(&down).unwrap();
            for i in 0..dim {
                jac[(i, k)] = (zu[i] - zd[i]) / (2.0 * h);
            }
        }
        let numeric = jac.determinant().abs().ln();
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
        worst = worst.max(rel);
    }
    outcome(worst < 1e-6, format!("100 flows of dim 1-8, max relative error {worst:.2e}"))
}

const FD_STEP: f64 = 1e-4;

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

/// Adds Gaussian noise to every parameter so that no unit sits exactly on a
/// ReLU kink (zero-initialized biases put whole dead rows at zero).
fn jitter<M: Parameters>(model: &mut M, scale: f64, rng: &mut ChaCha8Rng) {
    let flat: Vec<f64> = model.to_flat().iter().map(|v| v + scale * normal(rng)).collect();
    model.load_flat(&flat).unwrap();
}

/// Largest relative error between `analytic` and a fourth-order central
/// difference of `loss` over every parameter of `model`.
fn fd_audit<M: Parameters + Clone>(model: &M, analytic: &[f64], loss: impl Fn(&M) -> f64) -> (f64, usize) {
    let base = model.to_flat();
    assert_eq!(base.len(), analytic.len());
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut at = |k: f64| {
            let mut p = base.clone();
            p[i] = base[i] + k * FD_STEP;
            probe.load_flat(&p).unwrap();
            loss(&probe)
        };
        let numeric = (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * FD_STEP);
        worst = worst.max(rel_error(analytic[i], numeric));
    }
    (worst, base.len())
}

fn small_flows(topo: &SkeletonTopology, gain: f64, rng: &mut ChaCha8Rng) -> FlowSet {
    FlowSet {
        full: random_flow(32, &[6], 2, gain, rng),
        segments: Segment::ALL
            .iter()
            .map(|&s| {
                let cfg = FlowConfig {
                    blocks: 2,
                    hidden: vec![6],
                    scale_bound: 2.0,
                };
                FlowModel::with_output_init(FlowTarget::Segment(s), 2 * topo.segment(s).len(), &cfg, Init::ScaledKaiming(gain), rng)
            })
            .collect(),
    }
}

fn gradient_audit(topo: &SkeletonTopology) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;

    for dim in [3, 12, 32] {
        let mut flow = random_flow(dim, &[5], 4, 0.5, &mut rng);
        jitter(&mut flow, 0.05, &mut rng);
        let x = Array2::from_shape_fn((4, dim), |_| normal(&mut rng));
        let mut g = flow.zeros_like();
        flow.nll_with_grad(&x, &Array1::ones(4), Some(&mut g)).unwrap();
        let (e, n) = fd_audit(&flow, &g.to_flat(), |f| f.nll_batch(&x).unwrap().sum());
        worst = worst.max(e);
        parts.push(format!("flow dim {dim}: {n} params {e:.1e}"));
    }

    let cfg = LifterConfig { width: 6, path_blocks: 1 };
    let mut lifters = LifterSet {
        lifters: Segment::ALL
            .iter()
            .map(|&s| LifterModel::with_init(s, topo.segment(s).to_vec(), &cfg, Init::KaimingUniform, Init::ScaledKaiming(0.3), &mut rng))
            .collect(),
    };
    lifters.lifters.iter_mut().for_each(|l| jitter(l, 0.05, &mut rng));
    let mut flows = small_flows(topo, 0.3, &mut rng);
    jitter(&mut flows.full, 0.05, &mut rng);
    flows.segments.iter_mut().for_each(|f| jitter(f, 0.05, &mut rng));
    let records = generate_synthetic(4, 7, &SynthConfig::default(), topo).unwrap();
    let bones = compute_bone_stats(&records, topo).unwrap().lengths;
    let batch = batch_2d(&records);
    let azimuth = Array1::from_shape_fn(4, |_| rng.gen_range(-3.0..3.0));
    let objective = |l: &LifterSet| {
        objective_and_gradients(l, &flows, &batch, &azimuth, &bones, topo, &[1.0, 1.0, 1.0], C, false)
            .unwrap()
            .0
            .total
    };
    let (_, grads) = objective_and_gradients(&lifters, &flows, &batch, &azimuth, &bones, topo, &[1.0, 1.0, 1.0], C, true).unwrap();
    let grads = grads.unwrap();
    for seg in Segment::ALL {
        let i = seg.index();
        let (e, n) = fd_audit(&lifters.lifters[i], &grads.lifters[i].to_flat(), |m| {
            let mut l = lifters.clone();
            l.lifters[i] = m.clone();
            objective(&l)
        });
        worst = worst.max(e);
        parts.push(format!("{seg} lifter: {n} params {e:.1e}"));
    }

    let scenario = OcclusionScenario::all_named(topo).unwrap().remove(0);
    for space in [FillSpace::ThreeD, FillSpace::TwoD] {
        let mut net = OcclusionNet::with_init(
            &scenario,
            space,
            &OcclusionConfig { width: 6, blocks: 1 },
            topo,
            C,
            Init::ScaledKaiming(0.5),
            &mut rng,
        );
        jitter(&mut net.net, 0.05, &mut rng);
        let x = Array2::from_shape_fn((5, net.net.input_dim()), |_| normal(&mut rng));
        let t = Array2::from_shape_fn((5, net.net.output_dim()), |_| normal(&mut rng));
        let mse = |m: &poselift_core::nn::ResMlp| {
            let y = m.predict(&x).unwrap();
            (&y - &t).mapv(|v| v * v).mean().unwrap()
        };
        let (y, tape) = net.net.forward(&x).unwrap();
        let dy = (&y - &t) * (2.0 / y.len() as f64);
        let mut g = net.net.zeros_like();
        net.net.backward(&tape, &dy, Some(&mut g)).unwrap();
        let (e, n) = fd_audit(&net.net, &g.to_flat(), mse);
        worst = worst.max(e);
        parts.push(format!("occlusion {}: {n} params {e:.1e}", space.as_str()));
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.1e} ({})", parts.join(", ")))
}

fn azimuth_rotate(p: &Pose3D, a: f64) -> Pose3D {
    let r = p.coords[0];
    let (s, c) = a.sin_cos();
    Pose3D::new(
        p.coords
            .iter()
            .map(|q| {
                let (x, y, z) = (q[0] - r[0], q[1] - r[1], q[2] - r[2]);
                [c * x + s * z + r[0], y + r[1], -s * x + c * z + r[2]]
            })
            .collect(),
    )
}

fn oracle_consistency(topo: &SkeletonTopology) -> Outcome {
    let records = generate_synthetic(64, 11, &SynthConfig::default(), topo).unwrap();
    let y2 = batch_2d(&records);
    let frames: Vec<Pose3D> = records
        .iter()
        .map(|r| lifting_frame_3d(&r.pose_3d().unwrap(), topo.head(), C).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let azimuth = Array1::from_shape_fn(records.len(), |_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
    let offsets = Array2::from_shape_fn((records.len(), 17), |(b, j)| frames[b].coords[j][2] - C);
    let rotated: Vec<Pose3D> = frames.iter().zip(&azimuth).map(|(f, &a)| azimuth_rotate(f, a)).collect();
    let relift = |_: &Array2<f64>| Ok(Array2::from_shape_fn((rotated.len(), 17), |(b, j)| rotated[b].coords[j][2] - C));
    let out = cycle_from_depths(&y2, &offsets, &Array1::zeros(records.len()), &azimuth, C, relift).unwrap();

    let pose = &frames[0];
    let own = bone_lengths(&pose.coords, topo).unwrap();
    let l_b = bone_loss(pose, &own, topo).unwrap();
    let other = frames[1].clone();
    let l_def = deformation_loss(&[pose.clone(), pose.clone()], &[other.clone(), other]).unwrap();

    let pass = out.l_2d < 1e-9 && out.l_3d < 1e-9 && l_b == 0.0 && l_def == 0.0;
    outcome(
        pass,
        format!("L_2D {:.1e}, L_3D {:.1e}, bone loss {l_b:.1e}, deformation loss {l_def:.1e}", out.l_2d, out.l_3d),
    )
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose3D {
    Pose3D::new((0..17).map(|_| [300.0 * normal(rng), 300.0 * normal(rng), 300.0 * normal(rng)]).collect())
}

fn metric_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut pa_worst: f64 = 0.0;
    let mut n_violations = 0;
    let mut mono_violations = 0;
    for _ in 0..1000 {
        let gt = random_pose(&mut rng);
        let axis = Unit::new_normalize(Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng)));
        let rot = Rotation3::from_axis_angle(&axis, rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
        let scale = rng.gen_range(0.2..5.0);
        let shift = Vector3::new(1000.0 * normal(&mut rng), 1000.0 * normal(&mut rng), 1000.0 * normal(&mut rng));
        let moved = Pose3D::new(gt.coords.iter().map(|p| (scale * (rot * Vector3::from(*p)) + shift).into()).collect());
        pa_worst = pa_worst.max(pa_mpjpe(&moved, &gt).unwrap());

        let pred = random_pose(&mut rng);
        if n_mpjpe(&pred, &gt).unwrap() > mpjpe(&pred, &gt).unwrap() {
            n_violations += 1;
        }

        let dir = random_pose(&mut rng).scaled(0.1);
        let mut last = (f64::INFINITY, f64::INFINITY);
        for k in 0..8 {
            let noisy = Pose3D::new(
                gt.coords
                    .iter()
                    .zip(&dir.coords)
                    .map(|(g, d)| [g[0] + k as f64 * d[0], g[1] + k as f64 * d[1], g[2] + k as f64 * d[2]])
                    .collect(),
            );
            let now = (pck(&noisy, &gt, 150.0).unwrap(), auc(&noisy, &gt).unwrap());
            if now.0 > last.0 || now.1 > last.1 {
                mono_violations += 1;
            }
            last = now;
        }
        let mut prev = -1.0;
        for t in [0.0, 50.0, 100.0, 150.0, 300.0, 1e9] {
            let v = pck(&pred, &gt, t).unwrap();
            if v < prev {
                mono_violations += 1;
            }
            prev = v;
        }
        if (pck(&pred, &gt, 1e9).unwrap() - 100.0).abs() > 0.0 {
            mono_violations += 1;
        }
    }
    outcome(
        pa_worst < 1e-9 && n_violations == 0 && mono_violations == 0,
        format!("max PA-MPJPE under similarity {pa_worst:.1e}, N-MPJPE > MPJPE in {n_violations}/1000, monotonicity violations {mono_violations}"),
    )
}

fn relative_bone_deviation(rows: &Array2<f64>, means: &[f64], topo: &SkeletonTopology) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for r in rows.outer_iter() {
        if !r.iter().all(|v| v.is_finite()) {
            continue;
        }
        let mut coords = vec![[0.0; 2]; 17];
        for j in 1..17 {
            coords[j] = [r[2 * (j - 1)], r[2 * (j - 1) + 1]];
        }
        let Ok(b) = bone_lengths(&coords, topo) else { continue };
        if !b.iter().all(|v| v.is_finite()) {
            continue;
        }
        sum += b.iter().zip(means).map(|(x, m)| (x - m).abs()).sum::<f64>() / b.len() as f64;
        n += 1;
    }
    (sum / n.max(1) as f64, rows.nrows() - n)
}

fn sampling_behaviour(full: &FlowModel, train: &Array2<f64>, topo: &SkeletonTopology) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let same = full.sample_perturbed_batch(train, 0.0, &mut rng).unwrap();
    let zero_err = (&same - train).iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let draws = ndarray::concatenate(Axis(0), &[train.view(), train.view()]).unwrap();
    let draws = draws.slice(s![..10_000, ..]).to_owned();
    let mut devs = Vec::new();
    for sigma in [0.05, 0.1, 0.2, 0.4] {
        let out = full.sample_perturbed_batch(&draws, sigma, &mut rng).unwrap();
        let d = (&out - &draws).map_axis(Axis(1), |r| r.dot(&r).sqrt());
        devs.push(d.iter().filter(|v| v.is_finite()).sum::<f64>() / d.len() as f64);
    }
    let monotone = devs.windows(2).all(|w| w[0] < w[1]);

    let mut means = vec![0.0; topo.bones().len()];
    let (_, dropped) = relative_bone_deviation(train, &means, topo);
    assert_eq!(dropped, 0);
    for r in train.outer_iter() {
        let mut coords = vec![[0.0; 2]; 17];
        for j in 1..17 {
            coords[j] = [r[2 * (j - 1)], r[2 * (j - 1) + 1]];
        }
        for (m, b) in means.iter_mut().zip(bone_lengths(&coords, topo).unwrap()) {
            *m += b / train.nrows() as f64;
        }
    }
    let perturbed = full.sample_perturbed_batch(train, 0.2, &mut rng).unwrap();
    let prior = full.sample_prior(train.nrows(), &mut rng).unwrap();
    let (dev_perturbed, bad_p) = relative_bone_deviation(&perturbed, &means, topo);
    let (dev_prior, bad_q) = relative_bone_deviation(&prior, &means, topo);
    let elapsed = start.elapsed();
    let pass = zero_err < 1e-9 && monotone && dev_perturbed < dev_prior && elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "sigma=0 error {zero_err:.1e}; deviation by sigma {:?}; bone deviation sigma=0.2 {dev_perturbed:.4} vs prior {dev_prior:.4} (non-finite {bad_p}/{bad_q}); {:.1}s",
            devs.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    )
}

fn held_out_pa(lifters: &LifterSet, records: &[PoseRecord], topo: &SkeletonTopology) -> f64 {
    let poses: Vec<_> = records.iter().map(PoseRecord::pose_2d).collect();
    let preds = lifters.predict(&poses, Candidate::LegsTorso, topo, C).unwrap();
    let total: f64 = preds
        .iter()
        .zip(records)
        .map(|(p, r)| pa_mpjpe(&p.root_centered(), &r.pose_3d().unwrap()).unwrap())
        .sum();
    total / records.len() as f64
}

struct Trained {
    flows: FlowSet,
    lifters: LifterSet,
    train: Array2<f64>,
    flow_rows: Array2<f64>,
    held_out: Vec<PoseRecord>,
}

fn end_to_end(topo: &SkeletonTopology) -> (Outcome, Trained) {
    let records = generate_synthetic(TRAIN_POSES, 2024, &SynthConfig::default(), topo).unwrap();
    let held_out = generate_synthetic(HELD_OUT_POSES, 4048, &SynthConfig::default(), topo).unwrap();
    let train = batch_2d(&records);
    let flow_rows = train.slice(s![.., 2..]).to_owned();
    let bones = compute_bone_stats(&records, topo).unwrap().lengths;

    let start = Instant::now();
    let flow_cfg = FlowConfig {
        blocks: FLOW_BLOCKS,
        hidden: vec![FLOW_HIDDEN, FLOW_HIDDEN],
        ..FlowConfig::default()
    };
    let flow_train = FlowTrainConfig {
        epochs: EPOCHS,
        batch_size: BATCH,
        ..FlowTrainConfig::default()
    };
    let flows = train_flow_set(topo, &flow_rows, None, &flow_cfg, &flow_train, 7, false).unwrap();
    let flow_time = start.elapsed();

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let lifter_cfg = LifterConfig {
        width: LIFTER_WIDTH,
        path_blocks: LIFTER_PATH_BLOCKS,
    };
    let init = LifterSet::new(topo, &lifter_cfg, &mut rng);
    let baseline = held_out_pa(&init.zeros_like(), &held_out, topo);
    let config = LifterTrainConfig {
        epochs: EPOCHS,
        batch_size: BATCH,
        ..LifterTrainConfig::default()
    };
    let trained = train_lifters(init, &train, &flows.flows, &bones, topo, &config, &mut rng, &mut |_, _| {}).unwrap();
    let elapsed = start.elapsed();
    let pa = held_out_pa(&trained.lifters, &held_out, topo);
    let first = trained.trace.first().map_or(f64::NAN, |e| e.total);
    let last = trained.trace.last().map_or(f64::NAN, |e| e.total);
    let pass = pa < baseline && elapsed < Duration::from_secs(3600);
    let detail = format!(
        "held-out PA-MPJPE {pa:.1} mm vs zero-depth baseline {baseline:.1} mm; loss {first:.3} -> {last:.3}; flows {:.0}s, flows+lifters {:.0}s",
        flow_time.as_secs_f64(),
        elapsed.as_secs_f64()
    );
    (
        outcome(pass, detail),
        Trained {
            flows: flows.flows,
            lifters: trained.lifters,
            train,
            flow_rows,
            held_out,
        },
    )
}

fn occlusion_ordering(t: &Trained, topo: &SkeletonTopology) -> Outcome {
    let start = Instant::now();
    let scenarios = OcclusionScenario::all_named(topo).unwrap();
    let net_cfg = OcclusionConfig {
        width: OCCLUSION_WIDTH,
        blocks: OCCLUSION_BLOCKS,
    };
    let train_cfg = OcclusionTrainConfig {
        epochs: OCCLUSION_EPOCHS,
        batch_size: BATCH,
        ..OcclusionTrainConfig::default()
    };
    let mut nets = Vec::new();
    for (i, sc) in scenarios.iter().enumerate() {
        for space in [FillSpace::ThreeD, FillSpace::TwoD] {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + i as u64);
            let net = OcclusionNet::new(sc, space, &net_cfg, topo, C, &mut rng);
            nets.push(train_occlusion(net, sc, &t.lifters, &t.train, topo, &train_cfg, &mut rng).unwrap().net);
        }
    }
    let rows = evaluate_occlusion(&scenarios, &nets, &t.lifters, &t.held_out, topo, C).unwrap();
    let mut wins = 0;
    let mut cells = Vec::new();
    for sc in &scenarios {
        let get = |space: &str| rows.iter().find(|r| r.scenario == sc.name && r.space == space).unwrap().pa_mpjpe;
        let (o3, o2) = (get("3d"), get("2d"));
        if o3 <= o2 {
            wins += 1;
        }
        cells.push(format!("{} {o3:.1}/{o2:.1}", sc.name));
    }
    outcome(
        wins >= 6,
        format!(
            "O_3D <= O_2D on {wins}/8 (PA-MPJPE 3d/2d: {}); {:.0}s",
            cells.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn determinism(topo: &SkeletonTopology) -> Outcome {
    let records = generate_synthetic(300, 5, &SynthConfig::default(), topo).unwrap();
    let data = batch_2d(&records);
    let rows = data.slice(s![.., 2..]).to_owned();
    let bones = compute_bone_stats(&records, topo).unwrap().lengths;
    let adam = AdamConfig::default();
    let run = || {
        let flow_cfg = FlowConfig {
            blocks: 2,
            hidden: vec![16],
            ..FlowConfig::default()
        };
        let flow_train = FlowTrainConfig {
            epochs: 2,
            batch_size: 64,
            sigma: 0.2,
            adam,
        };
        let flows = train_flow_set(topo, &rows, Some(&rows), &flow_cfg, &flow_train, 3, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let init = LifterSet::new(topo, &LifterConfig { width: 16, path_blocks: 1 }, &mut rng);
        let cfg = LifterTrainConfig {
            epochs: 2,
            batch_size: 64,
            ..LifterTrainConfig::default()
        };
        let lifters = train_lifters(init, &data, &flows.flows, &bones, topo, &cfg, &mut rng, &mut |_, _| {}).unwrap();
        let sc = OcclusionScenario::all_named(topo).unwrap().remove(2);
        let occ: Vec<_> = [FillSpace::ThreeD, FillSpace::TwoD]
            .into_iter()
            .map(|space| {
                let mut rng = ChaCha8Rng::seed_from_u64(3);
                let net = OcclusionNet::new(&sc, space, &OcclusionConfig { width: 16, blocks: 1 }, topo, C, &mut rng);
                let cfg = OcclusionTrainConfig {
                    epochs: 2,
                    batch_size: 64,
                    ..OcclusionTrainConfig::default()
                };
                train_occlusion(net, &sc, &lifters.lifters, &data, topo, &cfg, &mut rng).unwrap()
            })
            .collect();
        serde_json::to_string(&(
            &flows.flows,
            &flows.traces,
            &lifters.lifters,
            &lifters.trace,
            occ.iter().map(|o| (&o.net, &o.trace)).collect::<Vec<_>>(),
        ))
        .unwrap()
    };
    let a = run();
    let b = run();
    outcome(a == b, format!("two seeded runs of all three trainers: {} bytes each, identical: {}", a.len(), a == b))
}

fn main() {
    let topo = SkeletonTopology::human17();
    let mut results: Vec<(usize, Outcome, Duration)> = Vec::new();
    let timed = |n: usize, f: &mut dyn FnMut() -> Outcome, results: &mut Vec<(usize, Outcome, Duration)>| {
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed();
        eprintln!("criterion {n} done in {:.1}s", elapsed.as_secs_f64());
        results.push((n, o, elapsed));
    };
    timed(1, &mut flow_invertibility, &mut results);
    timed(2, &mut log_det_agreement, &mut results);
    timed(3, &mut || gradient_audit(&topo), &mut results);
    timed(4, &mut || oracle_consistency(&topo), &mut results);
    timed(5, &mut metric_correctness, &mut results);
    let mut trained = None;
    timed(
        7,
        &mut || {
            let (o, t) = end_to_end(&topo);
            trained = Some(t);
            o
        },
        &mut results,
    );
    let t = trained.expect("end-to-end run finished");
    timed(6, &mut || sampling_behaviour(&t.flows.full, &t.flow_rows, &topo), &mut results);
    timed(8, &mut || occlusion_ordering(&t, &topo), &mut results);
    timed(9, &mut || determinism(&topo), &mut results);

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, o, elapsed) in &results {
        println!(
            "criterion {n}: {} - {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    // ACCEPTANCE_STRICT turns any FAIL into a non-zero exit.
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
