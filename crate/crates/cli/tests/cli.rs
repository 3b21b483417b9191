use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use poselift_cli::MetricRow;
use poselift_core::data::{load_dataset, save_dataset};
use poselift_core::flow::FlowModel;
use poselift_core::nn::Checkpoint;
use poselift_core::SkeletonTopology;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn poselift(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poselift"))
        .args(args)
        .current_dir(dir)
        .env_remove("LINKS_SEED")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = poselift(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    poselift(dir, args).status.code().expect("exit code")
}

fn synth(dir: &Path, count: usize) {
    ok(dir, &["synth", "--count", &count.to_string(), "--seed", "3", "--out", "data.jsonl"]);
}

const FLOW: &[&str] = &["--blocks", "2", "--hidden", "12,12", "--batch-size", "32"];
const LIFTER: &[&str] = &["--width", "24", "--path-blocks", "1", "--batch-size", "32"];

fn train_flows(dir: &Path, out: &str, epochs: &str) {
    let mut args = vec!["train-flow", "--data", "data.jsonl", "--out-dir", out, "--seed", "5", "--epochs", epochs];
    args.extend_from_slice(FLOW);
    ok(dir, &args);
}

fn read_rows(path: &Path) -> Vec<MetricRow> {
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

#[test]
fn synth_is_deterministic_and_seed_is_required() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["synth", "--count", "20", "--seed", "9", "--out", "a.jsonl"]);
    let b = poselift(t.path(), &["synth", "--count", "20", "--out", "b.jsonl"]);
    assert_eq!(b.status.code(), Some(2));
    let b = Command::new(env!("CARGO_BIN_EXE_poselift"))
        .args(["synth", "--count", "20", "--out", "b.jsonl"])
        .current_dir(t.path())
        .env("LINKS_SEED", "9")
        .output()
        .unwrap();
    assert!(b.status.success());
    assert_eq!(fs::read(t.path().join("a.jsonl")).unwrap(), fs::read(t.path().join("b.jsonl")).unwrap());
}

#[test]
fn flow_training_is_reproducible() {
    let t = TempDir::new().unwrap();
    synth(t.path(), 60);
    train_flows(t.path(), "a", "1");
    train_flows(t.path(), "b", "1");
    for name in ["flow-full.json", "flow-legs.json", "flow-right.json", "trace-flow-torso.csv"] {
        assert_eq!(
            fs::read(t.path().join("a").join(name)).unwrap(),
            fs::read(t.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn zero_epoch_flow_is_the_identity() {
    let t = TempDir::new().unwrap();
    synth(t.path(), 10);
    train_flows(t.path(), "m", "0");
    let ck = Checkpoint::<FlowModel>::load(&t.path().join("m/flow-full.json"), "flow").unwrap();
    let x: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
    let (z, logdet) = ck.model.encode(&x).unwrap();
    assert_eq!(z, x);
    assert_eq!(logdet, 0.0);
    assert_eq!(ck.seed, 5);
}

#[test]
fn segment_flow_needs_the_full_flow_first() {
    let t = TempDir::new().unwrap();
    synth(t.path(), 30);
    let mut args = vec!["train-flow", "--data", "data.jsonl", "--out-dir", "m", "--seed", "1", "--epochs", "1", "--segment", "legs"];
    args.extend_from_slice(FLOW);
    assert_eq!(code(t.path(), &args), 2);
    let mut full = vec!["train-flow", "--data", "data.jsonl", "--out-dir", "m", "--seed", "1", "--epochs", "1", "--segment", "full"];
    full.extend_from_slice(FLOW);
    ok(t.path(), &full);
    ok(t.path(), &args);
    assert!(t.path().join("m/flow-legs.json").is_file());
}

#[test]
fn lifters_need_flows_and_data_needs_ground_truth() {
    let t = TempDir::new().unwrap();
    synth(t.path(), 20);
    let mut args = vec!["train-lifters", "--data", "data.jsonl", "--flows", "none", "--out-dir", "l", "--seed", "1", "--epochs", "1"];
    args.extend_from_slice(LIFTER);
    assert_eq!(code(t.path(), &args), 2);
    assert_eq!(code(t.path(), &["eval", "--data", "data.jsonl", "--lifters", "none", "--out", "m.csv"]), 2);

    let topo = SkeletonTopology::human17();
    let mut records = load_dataset(&t.path().join("data.jsonl"), &topo).unwrap().records;
    records.iter_mut().for_each(|r| r.joints_3d = None);
    save_dataset(&t.path().join("flat.jsonl"), &records).unwrap();
    assert_eq!(
        code(t.path(), &["eval", "--data", "flat.jsonl", "--predictions", "data.jsonl", "--out", "m.csv"]),
        3
    );
    train_flows(t.path(), "f", "0");
    let mut args = vec!["train-lifters", "--data", "flat.jsonl", "--flows", "f", "--out-dir", "l", "--seed", "1", "--epochs", "1"];
    args.extend_from_slice(LIFTER);
    assert_eq!(code(t.path(), &args), 3);
}

#[test]
fn huge_learning_rate_exits_with_divergence() {
    let t = TempDir::new().unwrap();
    synth(t.path(), 40);
    train_flows(t.path(), "f", "0");
    let mut args = vec![
        "train-lifters", "--data", "data.jsonl", "--flows", "f", "--out-dir", "l", "--seed", "1", "--epochs", "3", "--lr", "1e300",
    ];
    args.extend_from_slice(LIFTER);
    assert_eq!(code(t.path(), &args), 4);
    assert!(t.path().join("l/trace-lifters.csv").is_file());
}

#[test]
fn ground_truth_predictions_score_perfectly() {
    let t = TempDir::new().unwrap();
    synth(t.path(), 25);
    ok(t.path(), &["eval", "--data", "data.jsonl", "--predictions", "data.jsonl", "--out", "m.csv", "--metric", "mpjpe", "--metric", "pa-mpjpe", "--metric", "n-mpjpe", "--metric", "pck150", "--metric", "auc"]);
    let rows = read_rows(&t.path().join("m.csv"));
    assert_eq!(rows.len(), 5);
    for r in rows {
        assert_eq!(r.sample_count, 25);
        match r.metric.as_str() {
            "pck150" | "auc" => assert!((r.value - 100.0).abs() < 1e-9, "{r:?}"),
            _ => assert!(r.value.abs() < 1e-6, "{r:?}"),
        }
    }
}

#[test]
fn metric_totals_match_a_per_pose_oracle() {
    let t = TempDir::new().unwrap();
    synth(t.path(), 30);
    let topo = SkeletonTopology::human17();
    let mut records = load_dataset(&t.path().join("data.jsonl"), &topo).unwrap().records;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut expected = 0.0;
    for r in records.iter_mut() {
        let gt = r.joints_3d.clone().unwrap();
        let shift = [rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0)];
        let noise: Vec<[f64; 3]> = (0..17)
            .map(|j| if j == 0 { [0.0; 3] } else { [rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0)] })
            .collect();
        let pred: Vec<[f64; 3]> = gt
            .iter()
            .zip(&noise)
            .map(|(g, n)| [g[0] + n[0] + shift[0], g[1] + n[1] + shift[1], g[2] + n[2] + shift[2]])
            .collect();
        // The root carries no noise, so root-centering removes only the shift.
        let d: f64 = noise.iter().map(|n| (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()).sum();
        expected += d / 17.0;
        r.joints_3d = Some(pred);
    }
    expected /= records.len() as f64;
    save_dataset(&t.path().join("pred.jsonl"), &records).unwrap();
    ok(t.path(), &["eval", "--data", "data.jsonl", "--predictions", "pred.jsonl", "--out", "m.csv", "--metric", "mpjpe"]);
    let rows = read_rows(&t.path().join("m.csv"));
    assert_eq!(rows.len(), 1);
    assert!((rows[0].value - expected).abs() < 1e-9, "{} vs {expected}", rows[0].value);
    assert_eq!(rows[0].sample_count, 30);
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let t = TempDir::new().unwrap();
    let dir = t.path();
    synth(dir, 80);
    train_flows(dir, "m", "1");
    let mut args = vec!["train-lifters", "--data", "data.jsonl", "--flows", "m", "--out-dir", "m", "--seed", "2", "--epochs", "1"];
    args.extend_from_slice(LIFTER);
    ok(dir, &args);
    ok(dir, &[
        "train-occlusion", "--data", "data.jsonl", "--lifters", "m", "--out-dir", "o", "--seed", "4", "--epochs", "1",
        "--width", "16", "--blocks", "1", "--scenario", "left-arm", "--scenario", "both-legs", "--custom-mask", "13,16",
    ]);
    ok(dir, &[
        "eval", "--data", "data.jsonl", "--lifters", "m", "--occlusion", "o", "--out", "r/metrics.csv",
        "--candidate", "legs-torso", "--candidate", "left-right-r", "--candidate", "left-right-l",
        "--render-dir", "r/svg", "--render-count", "3",
    ]);
    let rows = read_rows(&dir.join("r/metrics.csv"));
    for cand in ["legs-torso", "left-right-r", "left-right-l"] {
        let n = rows.iter().filter(|r| r.scenario == "no-occlusion" && r.candidate == cand).count();
        assert_eq!(n, 4, "{cand}");
    }
    for scenario in ["left-arm", "both-legs", "custom"] {
        for space in ["3d", "2d"] {
            assert!(rows.iter().any(|r| r.scenario == scenario && r.space == space), "{scenario} {space}");
            assert!(dir.join(format!("o/occlusion-{scenario}-{space}.json")).is_file());
        }
    }
    assert!(rows.iter().all(|r| r.value.is_finite()));
    let table = fs::read_to_string(dir.join("r/occlusion.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 1 + 6);
    let svgs = fs::read_dir(dir.join("r/svg")).unwrap().count();
    assert_eq!(svgs, 3);

    ok(dir, &["render", "--data", "data.jsonl", "--out-dir", "fig", "--lifters", "m", "--id", "synth-3-000004"]);
    let svg = fs::read_to_string(dir.join("fig/synth-3-000004.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("stroke-dasharray"));
    assert_eq!(code(dir, &["render", "--data", "data.jsonl", "--out-dir", "fig", "--id", "nope"]), 3);
}

#[test]
fn cross_body_custom_mask_is_rejected() {
    let t = TempDir::new().unwrap();
    synth(t.path(), 20);
    train_flows(t.path(), "m", "0");
    let mut args = vec!["train-lifters", "--data", "data.jsonl", "--flows", "m", "--out-dir", "m", "--seed", "2", "--epochs", "0"];
    args.extend_from_slice(LIFTER);
    ok(t.path(), &args);
    // Left wrist and right ankle leave no lifter fully visible.
    let c = code(t.path(), &["train-occlusion", "--data", "data.jsonl", "--lifters", "m", "--out-dir", "o", "--seed", "1", "--custom-mask", "13,3"]);
    assert_eq!(c, 2);
}
