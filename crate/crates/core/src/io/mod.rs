//! File formats: CRVT tensor archives, pose label files, meshes, images.

pub mod obj;
pub mod png;
pub mod pose_labels;
pub mod tensor_file;

pub use obj::{format_obj, parse_obj, read_obj, write_obj};
pub use png::{read_png, write_png};
pub use pose_labels::{format_pose_labels, parse_pose_labels, read_pose_labels, write_pose_labels};
