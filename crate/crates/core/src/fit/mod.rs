//! Inverse rendering of multi-view scenes through an assembled generator.

mod config;
mod losses;
mod trainer;
mod views;

pub use config::FitConfig;
pub use losses::{eikonal_loss, field_geometry, minimal_surface_loss, photometric_loss, psnr};
pub use trainer::{
    build_optimizer, fit_scene, fit_scene_with, held_out_psnr, FitRecord, FitReport,
};
pub use views::{
    background_value, cast_view, recipe_kind, recipe_name, SceneViews, View, ViewSpec,
};
