//! Evaluation metrics on rendered outputs and externally supplied
//! features, embeddings and estimates.

mod frechet;
mod manifest;
mod report;
mod scalar;
mod warp;

pub use frechet::{frechet_distance, gaussian_stats, FeatureStats, EIGEN_TOLERANCE};
pub use manifest::{
    evaluate_manifest, load_feature_stats, CameraSpec, EvalManifest, FeatureFiles, Metric,
    SampleEntry,
};
pub use report::{MetricReport, MetricRow};
pub use scalar::{depth_error, identity_consistency, mean_pose_error, pose_error, wrap_angle};
pub use warp::{reprojection_error, DepthMap, WarpView};
