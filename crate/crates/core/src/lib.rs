//! Unsupervised segment-wise 2D-to-3D human pose lifting.
//!
//! Four independent lifting networks (legs, torso, left side, right side)
//! are trained through a rotate-and-reproject consistency cycle scored by
//! affine-coupling normalizing flows. Partial 3D poses from the visible
//! segments are completed by per-scenario occlusion networks.

pub mod data;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod lifter;
pub mod nn;
pub mod occlusion;

pub use error::{Error, Result};
pub use data::{BoneStats, PoseRecord};
pub use flow::{FlowModel, FlowSet, FlowTarget};
pub use geometry::{Pose2D, Pose3D, Segment, SkeletonTopology};
pub use lifter::{Candidate, LifterSet};
pub use nn::Checkpoint;
pub use occlusion::{FillSpace, OcclusionNet, OcclusionScenario};
