//! The `poselift` command line: synthetic data, the three training stages,
//! evaluation reports and SVG renders.

pub mod render;
pub mod store;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::s;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use poselift_core::data::{batch_2d, compute_bone_stats, generate_synthetic, load_dataset, save_dataset, BoneStats, SynthConfig};
use poselift_core::flow::{train_flow_set, train_flow_target, FlowConfig, FlowEpoch, FlowModel, FlowTarget, FlowTrainConfig};
use poselift_core::geometry::{compute_metric, normalize_pose, optimal_scale, Metric, Pose3D, DEFAULT_CAMERA_DISTANCE};
use poselift_core::lifter::{train_lifters, Candidate, LifterConfig, LifterEpoch, LifterModel, LifterSet, LifterTrainConfig};
use poselift_core::nn::{AdamConfig, Checkpoint};
use poselift_core::occlusion::{
    evaluate_occlusion, train_occlusion, FillSpace, OcclusionConfig, OcclusionNet, OcclusionRow, OcclusionScenario,
    OcclusionTrainConfig, ScenarioKind,
};
use poselift_core::{Error, PoseRecord, Result, Segment, SkeletonTopology};

use store::{FLOW_KIND, LIFTER_KIND, OCCLUSION_KIND};

#[derive(Debug, Parser)]
#[command(name = "poselift", version, about = "Unsupervised segment-wise 2D-to-3D human pose lifting")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic pose file by forward kinematics.
    Synth(SynthArgs),
    /// Train the normalizing flows (full pose and four segments).
    TrainFlow(TrainFlowArgs),
    /// Train the four segment lifters against trained flows.
    TrainLifters(TrainLiftersArgs),
    /// Train per-scenario occlusion completion networks.
    TrainOcclusion(TrainOcclusionArgs),
    /// Evaluate lifters (and optionally occlusion nets) on poses with 3D.
    Eval(EvalArgs),
    /// Draw poses, and optionally lifter predictions, as SVG figures.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Random seed. Falls back to the LINKS_SEED environment variable.
    #[arg(long, env = "LINKS_SEED")]
    pub seed: Option<u64>,
}

impl SeedArg {
    fn require(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required: pass --seed or set LINKS_SEED".into()))
    }
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    /// Initial Adam learning rate.
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    /// Learning-rate multiplier applied after every epoch.
    #[arg(long, default_value_t = 0.95)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
}

impl OptimArgs {
    fn adam(&self) -> Result<AdamConfig> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0) {
            return Err(Error::Config(format!("learning-rate decay must be positive, got {}", self.lr_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(AdamConfig {
            learning_rate: self.lr,
            epoch_decay: self.lr_decay,
            ..AdamConfig::default()
        })
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Output pose file.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator settings (JSON); missing fields keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the mean relative bone lengths of the generated poses.
    #[arg(long)]
    pub bone_stats: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FlowChoice {
    All,
    Full,
    Legs,
    Torso,
    Left,
    Right,
}

#[derive(Debug, Args)]
pub struct TrainFlowArgs {
    /// Pose file with normalized 2D keypoints.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for checkpoints and traces.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Which flow to train. Segment flows sample from the full-pose flow,
    /// which must already be in the output directory.
    #[arg(long, value_enum, default_value_t = FlowChoice::All)]
    pub segment: FlowChoice,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Latent perturbation strength of the generated samples.
    #[arg(long, default_value_t = 0.2)]
    pub sigma: f64,
    /// Number of coupling blocks.
    #[arg(long, default_value_t = 8)]
    pub blocks: usize,
    /// Hidden widths of each coupling subnetwork.
    #[arg(long, value_delimiter = ',', default_value = "1024,1024")]
    pub hidden: Vec<usize>,
    /// Fraction of poses (taken from the end of the file) held out for the
    /// validation NLL.
    #[arg(long, default_value_t = 0.1)]
    pub validation_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_CAMERA_DISTANCE)]
    pub camera_distance: f64,
    /// Train the four segment flows on separate threads.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct TrainLiftersArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding the five flow checkpoints.
    #[arg(long)]
    pub flows: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Mean relative bone lengths. Computed from the data's 3D when absent.
    #[arg(long)]
    pub bone_stats: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Perturbation strength of flow samples added to each batch.
    #[arg(long, default_value_t = 0.2)]
    pub sigma: f64,
    /// Train on real poses only.
    #[arg(long)]
    pub no_sampling: bool,
    #[arg(long, default_value_t = 1024)]
    pub width: usize,
    /// Residual blocks in each of the depth and elevation paths.
    #[arg(long, default_value_t = 3)]
    pub path_blocks: usize,
    /// Objective weights of legs-torso, left-right-r and left-right-l.
    #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
    pub candidate_weights: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_CAMERA_DISTANCE)]
    pub camera_distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SpaceChoice {
    #[value(name = "3d")]
    ThreeD,
    #[value(name = "2d")]
    TwoD,
    Both,
}

impl SpaceChoice {
    fn spaces(self) -> Vec<FillSpace> {
        match self {
            SpaceChoice::ThreeD => vec![FillSpace::ThreeD],
            SpaceChoice::TwoD => vec![FillSpace::TwoD],
            SpaceChoice::Both => vec![FillSpace::ThreeD, FillSpace::TwoD],
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainOcclusionArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding the four lifter checkpoints.
    #[arg(long)]
    pub lifters: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Scenarios to train (repeatable). Defaults to all eight.
    #[arg(long = "scenario")]
    pub scenarios: Vec<String>,
    /// Extra scenario masking these joint indices, named `custom`.
    #[arg(long, value_delimiter = ',')]
    pub custom_mask: Option<Vec<usize>>,
    /// Completion space: lift-then-fill (3d), fill-then-lift (2d) or both.
    #[arg(long, value_enum, default_value_t = SpaceChoice::Both)]
    pub space: SpaceChoice,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = 1024)]
    pub width: usize,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    /// Skip the random azimuth rotation of 3D training pairs.
    #[arg(long)]
    pub no_augmentation: bool,
    /// Train the networks on separate threads.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Pose file with 3D ground truth.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding the four lifter checkpoints.
    #[arg(long, required_unless_present = "predictions")]
    pub lifters: Option<PathBuf>,
    /// Pose file whose 3D keypoints are scored instead of lifter output,
    /// matched by id.
    #[arg(long, conflicts_with = "lifters")]
    pub predictions: Option<PathBuf>,
    /// Candidates to score (repeatable).
    #[arg(long = "candidate", value_parser = parse_candidate, default_value = "legs-torso")]
    pub candidates: Vec<Candidate>,
    /// Metrics to report (repeatable). PCK and AUC are computed after the
    /// same optimal scaling as N-MPJPE.
    #[arg(long = "metric", value_parser = parse_metric, default_values = ["pa-mpjpe", "n-mpjpe", "pck150", "auc"])]
    pub metrics: Vec<Metric>,
    /// Directory of occlusion checkpoints to score as well.
    #[arg(long)]
    pub occlusion: Option<PathBuf>,
    /// Metrics CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Occlusion table CSV; defaults to occlusion.csv beside --out.
    #[arg(long)]
    pub occlusion_out: Option<PathBuf>,
    /// Write SVG figures of the first poses here.
    #[arg(long)]
    pub render_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub render_count: usize,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overlay legs-torso predictions from these lifters.
    #[arg(long)]
    pub lifters: Option<PathBuf>,
    /// Render these ids (repeatable) instead of the first `--count` poses.
    #[arg(long = "id")]
    pub ids: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
}

fn parse_candidate(s: &str) -> std::result::Result<Candidate, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Process exit status for an error: 2 configuration, 3 data, 4 numerical
/// divergence, 1 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Topology(_) | Error::UnsupportedScenario(_) => 2,
        Error::Data(_) | Error::Json(_) | Error::DegeneratePose(_) | Error::NonFinite(_) | Error::Shape { .. } | Error::NonPositiveDepth { .. } => 3,
        Error::Divergence { .. } => 4,
        Error::Io(_) | Error::StaleTape(_) => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::TrainFlow(a) => cmd_train_flow(&a),
        Command::TrainLifters(a) => cmd_train_lifters(&a),
        Command::TrainOcclusion(a) => cmd_train_occlusion(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Render(a) => cmd_render(&a),
    }
}

fn need_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

fn parent_dir(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => out_dir(p),
        _ => Ok(()),
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(io::Error::from)?;
    for r in rows {
        w.serialize(r).map_err(io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a pose file, logging rejected lines; an empty result is an error.
pub fn load_records(path: &Path, topology: &SkeletonTopology) -> Result<Vec<PoseRecord>> {
    need_file(path, "pose file")?;
    let report = load_dataset(path, topology)?;
    for f in &report.failures {
        log::warn!("{}:{}: {}", path.display(), f.line, f.message);
    }
    if report.records.is_empty() {
        return Err(Error::Data(format!("{} holds no valid poses", path.display())));
    }
    if !report.failures.is_empty() {
        log::warn!("{}: {} line(s) skipped", path.display(), report.failures.len());
    }
    Ok(report.records)
}

/// Normalizes every record's 2D pose; degenerate poses are dropped with a
/// warning.
pub fn normalized(records: Vec<PoseRecord>, topology: &SkeletonTopology, c: f64) -> Result<Vec<PoseRecord>> {
    let mut out = Vec::with_capacity(records.len());
    for mut r in records {
        match normalize_pose(&r.joints_2d, topology.head(), c) {
            Ok(n) => {
                r.joints_2d = n.pose.coords;
                out.push(r);
            }
            Err(Error::DegeneratePose(m)) => log::warn!("pose {} skipped: {m}", r.id),
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(Error::Data("no pose survived normalization".into()));
    }
    Ok(out)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let seed = a.seed.require()?;
    let config = match &a.config {
        Some(p) => {
            need_file(p, "generator config")?;
            serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    let topology = SkeletonTopology::human17();
    let records = generate_synthetic(a.count, seed, &config, &topology)?;
    parent_dir(&a.out)?;
    save_dataset(&a.out, &records)?;
    if let Some(p) = &a.bone_stats {
        parent_dir(p)?;
        compute_bone_stats(&records, &topology)?.save(p, &topology)?;
    }
    log::info!("wrote {} poses to {}", records.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct FlowTraceRow {
    flow: String,
    epoch: usize,
    loss: f64,
    nll_real: f64,
    nll_sampled: f64,
    held_out_nll: Option<f64>,
    learning_rate: f64,
}

fn flow_trace(target: FlowTarget, trace: &[FlowEpoch]) -> Vec<FlowTraceRow> {
    trace
        .iter()
        .map(|e| FlowTraceRow {
            flow: target.as_str().to_string(),
            epoch: e.epoch,
            loss: e.loss,
            nll_real: e.nll_real,
            nll_sampled: e.nll_sampled,
            held_out_nll: e.held_out_nll,
            learning_rate: e.learning_rate,
        })
        .collect()
}

fn save_flow(dir: &Path, flow: &FlowModel, seed: u64, trace: &[FlowEpoch], cfg: &FlowTrainConfig) -> Result<()> {
    Checkpoint::new(FLOW_KIND, flow.architecture(), FlowModel::INIT_SCHEME, seed, flow.clone())
        .with_metadata("epochs", cfg.epochs.into())
        .with_metadata("sigma", cfg.sigma.into())
        .save(&store::flow_path(dir, flow.target))?;
    write_csv(&dir.join(format!("trace-flow-{}.csv", flow.target.as_str())), &flow_trace(flow.target, trace))
}

fn cmd_train_flow(a: &TrainFlowArgs) -> Result<()> {
    let seed = a.seed.require()?;
    let adam = a.optim.adam()?;
    if !(0.0..1.0).contains(&a.validation_fraction) {
        return Err(Error::Config(format!("validation fraction must lie in [0, 1), got {}", a.validation_fraction)));
    }
    if a.blocks == 0 || a.hidden.is_empty() || a.hidden.contains(&0) {
        return Err(Error::Config("flow needs at least one block and positive hidden widths".into()));
    }
    if !(a.sigma >= 0.0) {
        return Err(Error::Config(format!("sigma must be non-negative, got {}", a.sigma)));
    }
    let topology = SkeletonTopology::human17();
    let records = normalized(load_records(&a.data, &topology)?, &topology, a.camera_distance)?;
    out_dir(&a.out_dir)?;
    let all = batch_2d(&records);
    let full = all.slice(s![.., 2..]).to_owned();
    let held = (full.nrows() as f64 * a.validation_fraction).floor() as usize;
    let split = full.nrows() - held;
    let train = full.slice(s![..split, ..]).to_owned();
    let validation = (held > 0).then(|| full.slice(s![split.., ..]).to_owned());
    let flow_config = FlowConfig {
        blocks: a.blocks,
        hidden: a.hidden.clone(),
        ..FlowConfig::default()
    };
    let train_config = FlowTrainConfig {
        epochs: a.epochs,
        batch_size: a.optim.batch_size,
        sigma: a.sigma,
        adam,
    };
    let target = match a.segment {
        FlowChoice::All => None,
        FlowChoice::Full => Some(FlowTarget::Full),
        FlowChoice::Legs => Some(FlowTarget::Segment(Segment::Legs)),
        FlowChoice::Torso => Some(FlowTarget::Segment(Segment::Torso)),
        FlowChoice::Left => Some(FlowTarget::Segment(Segment::Left)),
        FlowChoice::Right => Some(FlowTarget::Segment(Segment::Right)),
    };
    match target {
        None => {
            let set = train_flow_set(&topology, &train, validation.as_ref(), &flow_config, &train_config, seed, a.parallel)?;
            for (target, trace) in &set.traces {
                save_flow(&a.out_dir, set.flows.get(*target), seed, trace, &train_config)?;
            }
        }
        Some(target) => {
            let full_flow = match target {
                FlowTarget::Full => None,
                FlowTarget::Segment(_) => Some(store::load_flow(&a.out_dir, FlowTarget::Full)?),
            };
            let t = train_flow_target(&topology, target, &train, validation.as_ref(), full_flow.as_ref(), &flow_config, &train_config, seed)?;
            save_flow(&a.out_dir, &t.flow, seed, &t.trace, &train_config)?;
        }
    }
    log::info!("flows written to {}", a.out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct LifterTraceRow {
    epoch: usize,
    total: f64,
    l_nf: f64,
    l_2d: f64,
    l_3d: f64,
    l_def: f64,
    l_b: f64,
    skipped_nf: usize,
    sampled_poses: usize,
    learning_rate: f64,
}

fn lifter_trace(trace: &[LifterEpoch]) -> Vec<LifterTraceRow> {
    trace
        .iter()
        .map(|e| LifterTraceRow {
            epoch: e.epoch,
            total: e.total,
            l_nf: e.terms.l_nf,
            l_2d: e.terms.l_2d,
            l_3d: e.terms.l_3d,
            l_def: e.terms.l_def,
            l_b: e.terms.l_b,
            skipped_nf: e.skipped_nf,
            sampled_poses: e.sampled_poses,
            learning_rate: e.learning_rate,
        })
        .collect()
}

fn save_lifters(dir: &Path, lifters: &LifterSet, seed: u64, c: f64, suffix: &str) -> Result<()> {
    for l in &lifters.lifters {
        let path = store::lifter_path(dir, l.segment);
        let path = if suffix.is_empty() { path } else { path.with_extension(format!("{suffix}.json")) };
        Checkpoint::new(LIFTER_KIND, l.architecture(), LifterModel::INIT_SCHEME, seed, l.clone())
            .with_metadata("camera_distance", c.into())
            .save(&path)?;
    }
    Ok(())
}

fn cmd_train_lifters(a: &TrainLiftersArgs) -> Result<()> {
    let seed = a.seed.require()?;
    let adam = a.optim.adam()?;
    let weights: [f64; 3] = a
        .candidate_weights
        .as_slice()
        .try_into()
        .map_err(|_| Error::Config("--candidate-weights takes exactly three values".into()))?;
    if a.width == 0 {
        return Err(Error::Config("lifter width must be positive".into()));
    }
    let topology = SkeletonTopology::human17();
    need_file(&a.data, "pose file")?;
    if let Some(p) = &a.bone_stats {
        need_file(p, "bone-stats file")?;
    }
    let flows = store::load_flows(&a.flows)?;
    let records = normalized(load_records(&a.data, &topology)?, &topology, a.camera_distance)?;
    let stats = match &a.bone_stats {
        Some(p) => BoneStats::load(p, &topology)?,
        None => compute_bone_stats(&records, &topology).map_err(|_| {
            Error::Data("no 3D poses to compute bone statistics from; pass --bone-stats".into())
        })?,
    };
    out_dir(&a.out_dir)?;
    stats.save(&a.out_dir.join("bone_stats.json"), &topology)?;
    let data = batch_2d(&records);
    let config = LifterTrainConfig {
        epochs: a.epochs,
        batch_size: a.optim.batch_size,
        sigma: (!a.no_sampling).then_some(a.sigma),
        adam,
        candidate_weights: weights,
        camera_distance: a.camera_distance,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = LifterSet::new(&topology, &LifterConfig { width: a.width, path_blocks: a.path_blocks }, &mut rng);
    let mut last_good: Option<LifterSet> = None;
    let mut seen: Vec<LifterEpoch> = Vec::new();
    let result = train_lifters(init, &data, &flows, &stats.lengths, &topology, &config, &mut rng, &mut |e, l| {
        last_good = Some(l.clone());
        seen.push(e.clone());
    });
    match result {
        Ok(t) => {
            save_lifters(&a.out_dir, &t.lifters, seed, a.camera_distance, "")?;
            write_csv(&a.out_dir.join("trace-lifters.csv"), &lifter_trace(&t.trace))?;
            log::info!("lifters written to {}", a.out_dir.display());
            Ok(())
        }
        Err(e) => {
            write_csv(&a.out_dir.join("trace-lifters.csv"), &lifter_trace(&seen))?;
            if let Some(l) = &last_good {
                save_lifters(&a.out_dir, l, seed, a.camera_distance, "last-good")?;
                log::warn!("saved the last finite lifters with suffix .last-good.json");
            }
            Err(e)
        }
    }
}

#[derive(Serialize)]
struct OcclusionTraceRow {
    scenario: String,
    space: String,
    epoch: usize,
    loss: f64,
    learning_rate: f64,
}

fn scenario_list(a: &TrainOcclusionArgs, topology: &SkeletonTopology) -> Result<Vec<OcclusionScenario>> {
    let mut out = if a.scenarios.is_empty() && a.custom_mask.is_none() {
        OcclusionScenario::all_named(topology)?
    } else {
        a.scenarios
            .iter()
            .map(|s| OcclusionScenario::named(s.parse::<ScenarioKind>()?, topology))
            .collect::<Result<Vec<_>>>()?
    };
    if let Some(mask) = &a.custom_mask {
        out.push(OcclusionScenario::custom("custom", mask, topology)?);
    }
    Ok(out)
}

fn cmd_train_occlusion(a: &TrainOcclusionArgs) -> Result<()> {
    let seed = a.seed.require()?;
    let adam = a.optim.adam()?;
    if a.width == 0 {
        return Err(Error::Config("occlusion width must be positive".into()));
    }
    let topology = SkeletonTopology::human17();
    let scenarios = scenario_list(a, &topology)?;
    need_file(&a.data, "pose file")?;
    let (lifters, c) = store::load_lifters(&a.lifters)?;
    let records = normalized(load_records(&a.data, &topology)?, &topology, c)?;
    out_dir(&a.out_dir)?;
    let data = batch_2d(&records);
    let net_config = OcclusionConfig { width: a.width, blocks: a.blocks };
    let train_config = OcclusionTrainConfig {
        epochs: a.epochs,
        batch_size: a.optim.batch_size,
        adam,
        azimuth_augmentation: !a.no_augmentation,
    };
    let jobs: Vec<(usize, &OcclusionScenario, FillSpace)> = scenarios
        .iter()
        .enumerate()
        .flat_map(|(i, s)| a.space.spaces().into_iter().map(move |sp| (i, s, sp)))
        .collect();
    let run_job = |&(i, scenario, space): &(usize, &OcclusionScenario, FillSpace)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + 2 * i as u64 + u64::from(space == FillSpace::TwoD));
        let net = OcclusionNet::new(scenario, space, &net_config, &topology, c, &mut rng);
        train_occlusion(net, scenario, &lifters, &data, &topology, &train_config, &mut rng)
    };
    let results: Vec<_> = if a.parallel {
        std::thread::scope(|sc| {
            let handles: Vec<_> = jobs.iter().map(|j| sc.spawn(move || run_job(j))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Config("occlusion training thread panicked".into()))))
                .collect()
        })
    } else {
        jobs.iter().map(run_job).collect()
    };
    let mut trace = Vec::new();
    for ((_, scenario, space), r) in jobs.iter().zip(results) {
        let t = r?;
        Checkpoint::new(OCCLUSION_KIND, t.net.architecture(), OcclusionNet::INIT_SCHEME, seed, t.net.clone())
            .with_metadata("scenario", serde_json::to_value(scenario)?)
            .with_metadata("epochs", a.epochs.into())
            .save(&store::occlusion_path(&a.out_dir, &scenario.name, *space))?;
        trace.extend(t.trace.iter().map(|e| OcclusionTraceRow {
            scenario: scenario.name.clone(),
            space: space.as_str().to_string(),
            epoch: e.epoch,
            loss: e.loss,
            learning_rate: e.learning_rate,
        }));
    }
    write_csv(&a.out_dir.join("trace-occlusion.csv"), &trace)?;
    log::info!("{} occlusion nets written to {}", jobs.len(), a.out_dir.display());
    Ok(())
}

/// One line of the metrics report.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub space: String,
    pub candidate: String,
    pub metric: String,
    pub value: f64,
    pub sample_count: usize,
}

/// A metric of a prediction in any frame against root-centered ground
/// truth: the prediction is root-centered first, and PCK and AUC are taken
/// after the optimal uniform scale.
pub fn pose_metric(pred: &Pose3D, gt: &Pose3D, metric: Metric) -> Result<f64> {
    let p = pred.root_centered();
    let g = gt.root_centered();
    match metric {
        Metric::Pck150 | Metric::Auc => {
            let s = optimal_scale(&p, &g)?;
            compute_metric(&p.scaled(s), &g, metric)
        }
        _ => compute_metric(&p, &g, metric),
    }
}

fn mean_metric(preds: &[Pose3D], gts: &[Pose3D], metric: Metric) -> Result<f64> {
    let mut sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        sum += pose_metric(p, g, metric)?;
    }
    Ok(sum / preds.len().max(1) as f64)
}

fn with_ground_truth(records: Vec<PoseRecord>) -> Result<Vec<PoseRecord>> {
    let total = records.len();
    let kept: Vec<PoseRecord> = records.into_iter().filter(|r| r.joints_3d.is_some()).collect();
    if kept.is_empty() {
        return Err(Error::Data("evaluation needs 3D ground truth and the dataset has none".into()));
    }
    if kept.len() < total {
        log::warn!("{} pose(s) without 3D ground truth skipped", total - kept.len());
    }
    Ok(kept)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let topology = SkeletonTopology::human17();
    need_file(&a.data, "pose file")?;
    if let Some(p) = &a.predictions {
        need_file(p, "prediction file")?;
    }
    let loaded = match &a.lifters {
        Some(dir) => Some(store::load_lifters(dir)?),
        None => None,
    };
    let occlusion = a.occlusion.as_deref().map(store::load_occlusion_nets).transpose()?;
    if occlusion.is_some() && loaded.is_none() {
        return Err(Error::Config("occlusion evaluation needs --lifters".into()));
    }
    let c = loaded.as_ref().map_or(DEFAULT_CAMERA_DISTANCE, |l| l.1);
    let records = with_ground_truth(normalized(load_records(&a.data, &topology)?, &topology, c)?)?;
    let gts: Vec<Pose3D> = records.iter().map(|r| r.pose_3d().expect("filtered").root_centered()).collect();
    parent_dir(&a.out)?;

    let mut rows = Vec::new();
    let mut renders: Option<Vec<Pose3D>> = None;
    match (&loaded, &a.predictions) {
        (Some((lifters, c)), _) => {
            let poses: Vec<_> = records.iter().map(PoseRecord::pose_2d).collect();
            for &cand in &a.candidates {
                let preds = lifters.predict(&poses, cand, &topology, *c)?;
                for &m in &a.metrics {
                    rows.push(MetricRow {
                        scenario: poselift_core::occlusion::CONTROL_SCENARIO.into(),
                        space: "none".into(),
                        candidate: cand.as_str().into(),
                        metric: m.as_str().into(),
                        value: mean_metric(&preds, &gts, m)?,
                        sample_count: preds.len(),
                    });
                }
                if renders.is_none() {
                    renders = Some(preds);
                }
            }
        }
        (None, Some(path)) => {
            let by_id: std::collections::HashMap<String, PoseRecord> =
                load_records(path, &topology)?.into_iter().map(|r| (r.id.clone(), r)).collect();
            let preds = records
                .iter()
                .map(|r| {
                    by_id
                        .get(&r.id)
                        .and_then(PoseRecord::pose_3d)
                        .ok_or_else(|| Error::Data(format!("no 3D prediction for pose {}", r.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            for &m in &a.metrics {
                rows.push(MetricRow {
                    scenario: poselift_core::occlusion::CONTROL_SCENARIO.into(),
                    space: "none".into(),
                    candidate: "predictions".into(),
                    metric: m.as_str().into(),
                    value: mean_metric(&preds, &gts, m)?,
                    sample_count: preds.len(),
                });
            }
            renders = Some(preds);
        }
        (None, None) => return Err(Error::Config("pass --lifters or --predictions".into())),
    }

    if let (Some(nets), Some((lifters, c))) = (occlusion, &loaded) {
        let mut scenarios: Vec<OcclusionScenario> = Vec::new();
        for (s, _) in &nets {
            if !scenarios.iter().any(|x| x.name == s.name) {
                s.validate(&topology)?;
                scenarios.push(s.clone());
            }
        }
        let nets: Vec<OcclusionNet> = nets.into_iter().map(|(_, n)| n).collect();
        let table: Vec<OcclusionRow> = evaluate_occlusion(&scenarios, &nets, lifters, &records, &topology, *c)?;
        for r in table.iter().skip(1) {
            for (metric, value) in [(Metric::PaMpjpe, r.pa_mpjpe), (Metric::NMpjpe, r.n_mpjpe)] {
                rows.push(MetricRow {
                    scenario: r.scenario.clone(),
                    space: r.space.clone(),
                    candidate: Candidate::LegsTorso.as_str().into(),
                    metric: metric.as_str().into(),
                    value,
                    sample_count: r.sample_count,
                });
            }
        }
        let path = a
            .occlusion_out
            .clone()
            .unwrap_or_else(|| a.out.with_file_name("occlusion.csv"));
        parent_dir(&path)?;
        write_csv(&path, &table)?;
    }
    write_csv(&a.out, &rows)?;

    if let Some(dir) = &a.render_dir {
        out_dir(dir)?;
        let preds = renders.unwrap_or_default();
        for (i, r) in records.iter().take(a.render_count).enumerate() {
            let svg = render::render_svg(r, preds.get(i), &topology);
            fs::write(dir.join(format!("{}.svg", file_stem(&r.id))), svg)?;
        }
    }
    Ok(())
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    let topology = SkeletonTopology::human17();
    need_file(&a.data, "pose file")?;
    let loaded = a.lifters.as_deref().map(store::load_lifters).transpose()?;
    let records = load_records(&a.data, &topology)?;
    let chosen: Vec<PoseRecord> = if a.ids.is_empty() {
        records.into_iter().take(a.count).collect()
    } else {
        a.ids
            .iter()
            .map(|id| {
                records
                    .iter()
                    .find(|r| &r.id == id)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("no pose with id {id}")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    out_dir(&a.out_dir)?;
    let preds = match &loaded {
        Some((lifters, c)) => {
            let chosen = normalized(chosen.clone(), &topology, *c)?;
            let poses: Vec<_> = chosen.iter().map(PoseRecord::pose_2d).collect();
            Some(lifters.predict(&poses, Candidate::LegsTorso, &topology, *c)?)
        }
        None => None,
    };
    for (i, r) in chosen.iter().enumerate() {
        let svg = render::render_svg(r, preds.as_ref().and_then(|p| p.get(i)), &topology);
        fs::write(a.out_dir.join(format!("{}.svg", file_stem(&r.id))), svg)?;
    }
    log::info!("{} figure(s) written to {}", chosen.len(), a.out_dir.display());
    Ok(())
}
