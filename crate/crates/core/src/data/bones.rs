use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PoseRecord;
use crate::error::{Error, Result};
use crate::geometry::{bone_lengths, SkeletonTopology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoneStatsSource {
    ComputedFromData,
    UserSupplied,
}

/// Mean relative bone lengths, in topology bone order, summing to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct BoneStats {
    pub lengths: Vec<f64>,
    pub source: BoneStatsSource,
}

#[derive(Serialize, Deserialize)]
struct BoneStatsFile {
    source: BoneStatsSource,
    bones: BTreeMap<String, f64>,
}

impl BoneStats {
    /// Checks positivity and rescales to sum exactly 1 (up to round-off).
    pub fn new(lengths: Vec<f64>, source: BoneStatsSource) -> Result<Self> {
        if lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Data("bone lengths must be positive and finite".into()));
        }
        let sum: f64 = lengths.iter().sum();
        Ok(Self {
            lengths: lengths.into_iter().map(|l| l / sum).collect(),
            source,
        })
    }

    pub fn save(&self, path: &Path, topology: &SkeletonTopology) -> Result<()> {
        let file = BoneStatsFile {
            source: self.source,
            bones: topology.bone_names().into_iter().zip(self.lengths.iter().copied()).collect(),
        };
        fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    /// Reads a file of named bone lengths. Files written by hand are marked
    /// user-supplied unless they say otherwise.
    pub fn load(path: &Path, topology: &SkeletonTopology) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let source = match value.get("source") {
            Some(s) => serde_json::from_value(s.clone())?,
            None => BoneStatsSource::UserSupplied,
        };
        let bones: BTreeMap<String, f64> = match value.get("bones") {
            Some(b) => serde_json::from_value(b.clone())?,
            None => serde_json::from_value(value)?,
        };
        let names = topology.bone_names();
        if bones.len() != names.len() {
            return Err(Error::Data(format!("expected {} bone lengths, found {}", names.len(), bones.len())));
        }
        let lengths = names
            .iter()
            .map(|n| bones.get(n).copied().ok_or_else(|| Error::Data(format!("missing bone '{n}'"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(lengths, source)
    }
}

/// Mean of the per-pose relative bone lengths over every record with 3D,
/// renormalized to sum 1.
pub fn compute_bone_stats(records: &[PoseRecord], topology: &SkeletonTopology) -> Result<BoneStats> {
    let mut sum = vec![0.0; topology.bones().len()];
    let mut n = 0usize;
    for r in records {
        if let Some(j3) = &r.joints_3d {
            for (s, l) in sum.iter_mut().zip(bone_lengths(j3, topology)?) {
                *s += l;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("bone statistics need at least one record with 3D joints".into()));
    }
    let mean: Vec<f64> = sum.into_iter().map(|s| s / n as f64).collect();
    BoneStats::new(mean, BoneStatsSource::ComputedFromData)
}
