use serde::{Deserialize, Serialize};

use super::{partial_lift_batch, FillSpace, OcclusionNet, OcclusionScenario};
use crate::data::{batch_2d, PoseRecord};
use crate::error::{Error, Result};
use crate::geometry::{n_mpjpe, pa_mpjpe, Pose3D, SkeletonTopology};
use crate::lifter::{lift_batch, Candidate, LifterSet};

/// Scenario name of the unoccluded reference row.
pub const CONTROL_SCENARIO: &str = "no-occlusion";

/// One line of the occlusion table. `space` is `3d`, `2d` or `none` for the
/// control row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionRow {
    pub scenario: String,
    pub space: String,
    pub pa_mpjpe: f64,
    pub n_mpjpe: f64,
    pub sample_count: usize,
}

fn row(scenario: &str, space: &str, preds: &[Pose3D], gts: &[Pose3D]) -> Result<OcclusionRow> {
    let mut pa = 0.0;
    let mut n = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        let p = p.root_centered();
        pa += pa_mpjpe(&p, g)?;
        n += n_mpjpe(&p, g)?;
    }
    let count = preds.len().max(1) as f64;
    Ok(OcclusionRow {
        scenario: scenario.to_string(),
        space: space.to_string(),
        pa_mpjpe: pa / count,
        n_mpjpe: n / count,
        sample_count: preds.len(),
    })
}

/// PA-MPJPE and N-MPJPE (mm) of both completion paths for every scenario,
/// after an unoccluded control row. 3D completes the partial lift; 2D
/// completes the keypoints and then lifts with legs and torso. A scenario
/// without a net for some space loses that row, with a warning.
pub fn evaluate_occlusion(
    scenarios: &[OcclusionScenario],
    nets: &[OcclusionNet],
    lifters: &LifterSet,
    records: &[PoseRecord],
    topology: &SkeletonTopology,
    c: f64,
) -> Result<Vec<OcclusionRow>> {
    let with_3d: Vec<PoseRecord> = records.iter().filter(|r| r.joints_3d.is_some()).cloned().collect();
    if with_3d.is_empty() {
        return Err(Error::Data("occlusion evaluation needs records with 3D joints".into()));
    }
    let gts: Vec<Pose3D> = with_3d.iter().map(|r| r.pose_3d().expect("filtered").root_centered()).collect();
    let batch = batch_2d(&with_3d);
    let plan = Candidate::LegsTorso.plan(topology);
    let lift_full = |b: &ndarray::Array2<f64>| -> Result<Vec<Pose3D>> {
        let (offsets, _) = lifters.lift_with_plan(b, &plan, topology.num_joints())?;
        Ok(lift_batch(b, &offsets, c))
    };
    let mut rows = vec![row(CONTROL_SCENARIO, "none", &lift_full(&batch)?, &gts)?];
    for scenario in scenarios {
        for space in [FillSpace::ThreeD, FillSpace::TwoD] {
            let Some(net) = nets.iter().find(|n| n.scenario == scenario.name && n.space == space) else {
                log::warn!("no {space} occlusion net for {}; row skipped", scenario.name);
                continue;
            };
            if net.masked != scenario.masked {
                return Err(Error::Config(format!("{space} net for {} has a different mask", scenario.name)));
            }
            let mut masked = batch.clone();
            for &m in &scenario.masked {
                masked.column_mut(2 * m).fill(0.0);
                masked.column_mut(2 * m + 1).fill(0.0);
            }
            let preds = match space {
                FillSpace::ThreeD => {
                    let (partial, _) = partial_lift_batch(&masked, scenario, lifters, topology, c)?;
                    net.fill_3d_batch(&partial)?
                }
                FillSpace::TwoD => lift_full(&net.fill_2d_batch(&masked)?)?,
            };
            rows.push(row(&scenario.name, space.as_str(), &preds, &gts)?);
        }
    }
    Ok(rows)
}
