use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::{s, Array1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use poselift_core::data::{batch_2d, compute_bone_stats, generate_synthetic, SynthConfig};
use poselift_core::flow::{FlowConfig, FlowModel, FlowSet, FlowTarget};
use poselift_core::geometry::{pa_mpjpe, DEFAULT_CAMERA_DISTANCE};
use poselift_core::lifter::{objective_and_gradients, Candidate, LifterConfig, LifterSet};
use poselift_core::{Segment, SkeletonTopology};

const WIDTH: usize = 256;

fn setup() -> (SkeletonTopology, Vec<poselift_core::PoseRecord>, FlowSet, LifterSet, Vec<f64>) {
    let topo = SkeletonTopology::human17();
    let records = generate_synthetic(256, 1, &SynthConfig::default(), &topo).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = FlowConfig {
        hidden: vec![WIDTH, WIDTH],
        ..FlowConfig::default()
    };
    let flows = FlowSet {
        full: FlowModel::new(FlowTarget::Full, 32, &cfg, &mut rng),
        segments: Segment::ALL
            .iter()
            .map(|&s| FlowModel::new(FlowTarget::Segment(s), 2 * topo.segment(s).len(), &cfg, &mut rng))
            .collect(),
    };
    let lifters = LifterSet::new(&topo, &LifterConfig { width: WIDTH, path_blocks: 3 }, &mut rng);
    let bones = compute_bone_stats(&records, &topo).unwrap().lengths;
    (topo, records, flows, lifters, bones)
}

fn benches(c: &mut Criterion) {
    let (topo, records, flows, lifters, bones) = setup();
    let batch = batch_2d(&records);
    let non_root = batch.slice(s![.., 2..]).to_owned();
    let poses: Vec<_> = records.iter().map(|r| r.pose_2d()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let azimuth = Array1::from_shape_fn(batch.nrows(), |_| rng.gen_range(-3.1..3.1));

    c.bench_function("flow_nll_256", |b| b.iter(|| flows.full.nll_batch(black_box(&non_root)).unwrap()));
    c.bench_function("lift_legs_torso_256", |b| {
        b.iter(|| lifters.predict(black_box(&poses), Candidate::LegsTorso, &topo, DEFAULT_CAMERA_DISTANCE).unwrap())
    });
    let mut group = c.benchmark_group("objective");
    group.sample_size(10);
    for grads in [false, true] {
        group.bench_function(if grads { "with_gradients_256" } else { "value_256" }, |b| {
            b.iter(|| {
                objective_and_gradients(&lifters, &flows, &batch, &azimuth, &bones, &topo, &[1.0; 3], DEFAULT_CAMERA_DISTANCE, grads)
                    .unwrap()
            })
        });
    }
    group.finish();

    let gts: Vec<_> = records.iter().map(|r| r.pose_3d().unwrap()).collect();
    c.bench_function("pa_mpjpe_256", |b| {
        b.iter_batched(
            || gts.iter().map(|g| g.scaled(1.1)).collect::<Vec<_>>(),
            |preds| preds.iter().zip(&gts).map(|(p, g)| pa_mpjpe(p, g).unwrap()).sum::<f64>(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(forward, benches);
criterion_main!(forward);
