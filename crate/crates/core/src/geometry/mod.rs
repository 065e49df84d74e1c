//! Pose sampling, the pixel → camera → world chain, and point sampling
//! along rays.
//!
//! Conventions: right-handed world with +y up; cameras look along their own
//! −z; spherical placement measures pitch from +y and yaw in the xz-plane.

mod pose;
mod rays;

pub use pose::{
    pose_from_angles, pose_to_angles, sample_angles, sample_pose, spherical_offset, Intrinsics,
    Pose, PoseDistribution, PoseLabel, PosePrior,
};
pub use rays::{
    bin_edges, generate_rays, importance_sample, project, stratified_sample, PointBatch, RayBatch,
};
