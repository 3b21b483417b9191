//! Where trained models live on disk and how commands find them.

use std::fs;
use std::path::{Path, PathBuf};

use poselift_core::flow::{FlowModel, FlowSet, FlowTarget};
use poselift_core::lifter::{LifterModel, LifterSet};
use poselift_core::nn::Checkpoint;
use poselift_core::occlusion::{FillSpace, OcclusionNet, OcclusionScenario};
use poselift_core::{Error, Result, Segment};

pub const FLOW_KIND: &str = "flow";
pub const LIFTER_KIND: &str = "lifter";
pub const OCCLUSION_KIND: &str = "occlusion";

pub fn flow_path(dir: &Path, target: FlowTarget) -> PathBuf {
    dir.join(format!("flow-{}.json", target.as_str()))
}

pub fn lifter_path(dir: &Path, seg: Segment) -> PathBuf {
    dir.join(format!("lifter-{}.json", seg.as_str()))
}

pub fn occlusion_path(dir: &Path, scenario: &str, space: FillSpace) -> PathBuf {
    dir.join(format!("occlusion-{scenario}-{}.json", space.as_str()))
}

fn staged(path: &Path, command: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "missing checkpoint {}; run `poselift {command}` first",
            path.display()
        )))
    }
}

pub fn load_flow(dir: &Path, target: FlowTarget) -> Result<FlowModel> {
    let path = flow_path(dir, target);
    staged(&path, "train-flow")?;
    let ck = Checkpoint::<FlowModel>::load(&path, FLOW_KIND)?;
    if ck.model.target != target {
        return Err(Error::Data(format!("{} holds the {} flow", path.display(), ck.model.target)));
    }
    Ok(ck.model)
}

pub fn load_flows(dir: &Path) -> Result<FlowSet> {
    let full = load_flow(dir, FlowTarget::Full)?;
    let segments = Segment::ALL
        .iter()
        .map(|&s| load_flow(dir, FlowTarget::Segment(s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowSet { full, segments })
}

/// The four lifters and the camera distance they were trained with.
pub fn load_lifters(dir: &Path) -> Result<(LifterSet, f64)> {
    let mut lifters = Vec::with_capacity(4);
    let mut distance = None;
    for seg in Segment::ALL {
        let path = lifter_path(dir, seg);
        staged(&path, "train-lifters")?;
        let ck = Checkpoint::<LifterModel>::load(&path, LIFTER_KIND)?;
        if ck.model.segment != seg {
            return Err(Error::Data(format!("{} holds the {} lifter", path.display(), ck.model.segment)));
        }
        let c = ck
            .metadata
            .get("camera_distance")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::Data(format!("{} lacks camera_distance metadata", path.display())))?;
        if distance.is_some_and(|d| d != c) {
            return Err(Error::Data("lifters were trained with different camera distances".into()));
        }
        distance = Some(c);
        lifters.push(ck.model);
    }
    Ok((LifterSet { lifters }, distance.expect("four lifters loaded")))
}

/// Every completion net in `dir`, in file-name order, with its scenario.
pub fn load_occlusion_nets(dir: &Path) -> Result<Vec<(OcclusionScenario, OcclusionNet)>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "no occlusion directory at {}; run `poselift train-occlusion` first",
            dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("occlusion-") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let ck = Checkpoint::<OcclusionNet>::load(&path, OCCLUSION_KIND)?;
        let scenario: OcclusionScenario = ck
            .metadata
            .get("scenario")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .ok_or_else(|| Error::Data(format!("{} lacks its scenario definition", path.display())))?;
        out.push((scenario, ck.model));
    }
    Ok(out)
}
