use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{procrustes_align, Pose3D};
use crate::error::{Error, Result};

/// Distance threshold for PCK, in the ground-truth unit (mm).
pub const PCK_THRESHOLD: f64 = 150.0;
/// AUC averages PCK over the integer thresholds `0..=AUC_MAX_THRESHOLD`.
pub const AUC_MAX_THRESHOLD: u32 = 150;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Mpjpe,
    PaMpjpe,
    NMpjpe,
    Pck150,
    Auc,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Mpjpe, Metric::PaMpjpe, Metric::NMpjpe, Metric::Pck150, Metric::Auc];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mpjpe => "mpjpe",
            Metric::PaMpjpe => "pa-mpjpe",
            Metric::NMpjpe => "n-mpjpe",
            Metric::Pck150 => "pck150",
            Metric::Auc => "auc",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric '{s}'")))
    }
}

fn check_pair(pred: &Pose3D, gt: &Pose3D) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Topology(format!(
            "prediction has {} joints, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

fn distances<'a>(pred: &'a Pose3D, gt: &'a Pose3D) -> impl Iterator<Item = f64> + 'a {
    pred.coords.iter().zip(&gt.coords).map(|(p, g)| {
        ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt()
    })
}

fn mean_distance(pred: &Pose3D, gt: &Pose3D) -> f64 {
    distances(pred, gt).sum::<f64>() / pred.len() as f64
}

/// Mean per-joint Euclidean distance, no alignment.
pub fn mpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(mean_distance(pred, gt))
}

/// MPJPE after the similarity alignment of `pred` onto `gt`.
pub fn pa_mpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(mean_distance(&procrustes_align(pred, gt)?, gt))
}

/// MPJPE after rescaling `pred` by the single factor that minimizes it.
///
/// The objective is convex in the scale; the least-squares scale seeds a
/// golden-section search and the unscaled error is kept as a candidate, so
/// the result never exceeds [`mpjpe`].
pub fn n_mpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    let s = optimal_scale(pred, gt)?;
    Ok(mean_distance(&pred.scaled(s), gt))
}

/// The uniform scale of `pred` used by [`n_mpjpe`].
pub fn optimal_scale(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    check_pair(pred, gt)?;
    let err = |s: f64| mean_distance(&pred.scaled(s), gt);
    let pp: f64 = pred.coords.iter().flatten().map(|v| v * v).sum();
    let pg: f64 = pred.coords.iter().flatten().zip(gt.coords.iter().flatten()).map(|(a, b)| a * b).sum();
    if !(pp > 0.0) {
        return Ok(1.0);
    }
    let ls = (pg / pp).max(0.0);
    let (mut lo, mut hi) = (0.0, 2.0 * ls.max(1.0));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let (mut fa, mut fb) = (err(a), err(b));
    for _ in 0..80 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = err(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = err(b);
        }
    }
    let best = [(1.0, err(1.0)), (ls, err(ls)), (a, fa), (b, fb)]
        .into_iter()
        .fold((1.0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
    Ok(best.0)
}

/// Percentage of joints within `threshold` of the ground truth.
pub fn pck(pred: &Pose3D, gt: &Pose3D, threshold: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    let hits = distances(pred, gt).filter(|&d| d <= threshold).count();
    Ok(100.0 * hits as f64 / pred.len() as f64)
}

/// Mean PCK over the integer thresholds `0..=150`, as a percentage.
pub fn auc(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    check_pair(pred, gt)?;
    let d: Vec<f64> = distances(pred, gt).collect();
    let n = d.len() as f64;
    let total: f64 = (0..=AUC_MAX_THRESHOLD)
        .map(|t| d.iter().filter(|&&x| x <= t as f64).count() as f64 / n)
        .sum();
    Ok(100.0 * total / (AUC_MAX_THRESHOLD + 1) as f64)
}

pub fn compute_metric(pred: &Pose3D, gt: &Pose3D, metric: Metric) -> Result<f64> {
    match metric {
        Metric::Mpjpe => mpjpe(pred, gt),
        Metric::PaMpjpe => pa_mpjpe(pred, gt),
        Metric::NMpjpe => n_mpjpe(pred, gt),
        Metric::Pck150 => pck(pred, gt, PCK_THRESHOLD),
        Metric::Auc => auc(pred, gt),
    }
}
