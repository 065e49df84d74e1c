use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub iterations: usize,
    pub rays_per_batch: usize,
    /// Default learning rate (decoder, mapper, upsampler).
    pub lr: f64,
    /// Learning rate of embedder feature grids and planes.
    pub embedder_lr: f64,
    /// Decoder learning rate when its activation is sine.
    pub siren_lr: f64,
    /// Extra `(name prefix → lr)` overrides, checked before the defaults.
    pub lr_groups: BTreeMap<String, f64>,
    pub lambda_photo: f64,
    pub lambda_eikonal: f64,
    pub lambda_min_surface: f64,
    pub min_surface_k: f64,
    pub eikonal_probes: usize,
    pub fd_step: f64,
    pub seed: u64,
    /// Held-out PSNR is recorded every this many iterations (and at the end).
    pub eval_every: usize,
    /// Write a checkpoint every this many iterations when an autosave path
    /// is given; 0 disables.
    pub autosave_every: usize,
    /// SDF pipelines: anneal the renderer's Laplace scale geometrically from
    /// its configured value to this one over the run.
    pub sdf_beta_final: Option<f64>,
    /// Stop once the held-out PSNR reaches this value.
    pub stop_psnr: Option<f64>,
    /// Synthetic captures: number of views (the last is held out) and the
    /// pitch range around the equator.
    pub n_views: usize,
    pub pitch_spread: f64,
    /// Size factor of built-in scene recipes (the sphere's radius).
    pub scene_scale: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 1000,
            rays_per_batch: 512,
            lr: 1e-3,
            embedder_lr: 2e-2,
            siren_lr: 6e-5,
            lr_groups: BTreeMap::new(),
            lambda_photo: 1.0,
            lambda_eikonal: 0.1,
            lambda_min_surface: 0.05,
            min_surface_k: 100.0,
            eikonal_probes: 256,
            fd_step: 1e-3,
            seed: 0,
            eval_every: 100,
            autosave_every: 0,
            sdf_beta_final: None,
            stop_psnr: None,
            n_views: 20,
            pitch_spread: 0.6,
            scene_scale: 0.6,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.rays_per_batch == 0 {
            return Err(Error::config("fit needs iterations and rays_per_batch ≥ 1"));
        }
        let weights = [
            self.lambda_photo,
            self.lambda_eikonal,
            self.lambda_min_surface,
        ];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::config(
                "loss weights must be finite and non-negative",
            ));
        }
        let rates = [self.lr, self.embedder_lr, self.siren_lr];
        if rates
            .iter()
            .chain(self.lr_groups.values())
            .any(|r| !(*r >= 0.0 && r.is_finite()))
        {
            return Err(Error::config(
                "learning rates must be finite and non-negative",
            ));
        }
        if !(self.fd_step > 0.0) || !(self.min_surface_k > 0.0) {
            return Err(Error::config("fd_step and min_surface_k must be positive"));
        }
        if self
            .sdf_beta_final
            .is_some_and(|b| !(b > 0.0 && b.is_finite()))
        {
            return Err(Error::config("sdf_beta_final must be positive"));
        }
        if self.n_views < 2 {
            return Err(Error::config("fitting needs at least 2 views"));
        }
        if !(self.scene_scale > 0.0 && self.scene_scale <= 1.0)
            || !(self.pitch_spread >= 0.0 && self.pitch_spread < 1.5)
        {
            return Err(Error::config(
                "scene_scale must lie in (0, 1] and pitch_spread in [0, 1.5)",
            ));
        }
        Ok(())
    }
}
