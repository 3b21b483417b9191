//! Pose records, the line-delimited pose file format, a forward-kinematics
//! generator for synthetic data, and mean relative bone lengths.

mod bones;
mod synth;

pub use bones::{compute_bone_stats, BoneStats, BoneStatsSource};
pub use synth::{generate_synthetic, lifting_frame_3d, AngleRange, LimbLengths, SynthConfig};

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose2D, Pose3D, SkeletonTopology};

/// One pose: normalized 2D keypoints and, when known, 3D keypoints in
/// millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub id: String,
    pub joints_2d: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints_3d: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_tag: Option<String>,
}

impl PoseRecord {
    pub fn pose_2d(&self) -> Pose2D {
        Pose2D::new(self.joints_2d.clone())
    }

    pub fn pose_3d(&self) -> Option<Pose3D> {
        self.joints_3d.clone().map(Pose3D::new)
    }

    fn validate(&self, joints: usize) -> std::result::Result<(), String> {
        if self.joints_2d.len() != joints {
            return Err(format!("expected {joints} 2D joints, found {}", self.joints_2d.len()));
        }
        if !self.joints_2d.iter().flatten().all(|v| v.is_finite()) {
            return Err("non-finite 2D coordinate".into());
        }
        if let Some(j3) = &self.joints_3d {
            if j3.len() != joints {
                return Err(format!("expected {joints} 3D joints, found {}", j3.len()));
            }
            if !j3.iter().flatten().all(|v| v.is_finite()) {
                return Err("non-finite 3D coordinate".into());
            }
        }
        Ok(())
    }
}

/// A rejected line of a pose file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LineError {
    /// 1-based.
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub records: Vec<PoseRecord>,
    pub failures: Vec<LineError>,
}

/// Reads a pose file: one JSON object per line, blank lines ignored. Bad
/// lines are collected in the report and loading continues.
pub fn load_dataset(path: &Path, topology: &SkeletonTopology) -> Result<LoadReport> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut report = LoadReport::default();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| LineError { line: i + 1, message };
        let record: PoseRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                report.failures.push(fail(format!("malformed record: {e}")));
                continue;
            }
        };
        if let Err(m) = record.validate(topology.num_joints()) {
            report.failures.push(fail(format!("record '{}': {m}", record.id)));
            continue;
        }
        if !ids.insert(record.id.clone()) {
            report.failures.push(fail(format!("duplicate id '{}'", record.id)));
            continue;
        }
        report.records.push(record);
    }
    Ok(report)
}

/// Like [`load_dataset`] but any rejected line is an error.
pub fn load_dataset_strict(path: &Path, topology: &SkeletonTopology) -> Result<Vec<PoseRecord>> {
    let report = load_dataset(path, topology)?;
    if let Some(first) = report.failures.first() {
        return Err(Error::Data(format!(
            "{}: {} bad line(s); line {}: {}",
            path.display(),
            report.failures.len(),
            first.line,
            first.message
        )));
    }
    Ok(report.records)
}

pub fn save_dataset(path: &Path, records: &[PoseRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Stacks the 2D poses into rows of `2 J` values.
pub fn batch_2d(records: &[PoseRecord]) -> Array2<f64> {
    let j = records.first().map_or(0, |r| r.joints_2d.len());
    let flat: Vec<f64> = records.iter().flat_map(|r| r.joints_2d.iter().flatten().copied()).collect();
    Array2::from_shape_vec((records.len(), 2 * j), flat).expect("records share a joint count")
}

/// Stacks the 2D poses without the root into rows of `2 (J − 1)` values,
/// the layout the full-pose flow consumes.
pub fn batch_non_root(records: &[PoseRecord]) -> Array2<f64> {
    let j = records.first().map_or(1, |r| r.joints_2d.len());
    let flat: Vec<f64> = records.iter().flat_map(|r| r.joints_2d[1..].iter().flatten().copied()).collect();
    Array2::from_shape_vec((records.len(), 2 * (j - 1)), flat).expect("records share a joint count")
}
