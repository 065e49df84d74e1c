//! Generator configuration, read from and written to TOML.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::{DecoderConfig, GeometryHead, Modulation};
use crate::embedder::EmbedderSpec;
use crate::error::{Error, Result};
use crate::fit::FitConfig;
use crate::geometry::{Intrinsics, PoseDistribution, PoseLabel, PosePrior};
use crate::io::{parse_pose_labels, read_pose_labels};
use crate::renderer::{RenderOptions, SamplingConfig};
use crate::upsampler::UpsamplerConfig;

use super::mapper::MapperConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Gaussian,
    Uniform,
    Deterministic,
}

/// `[pose_prior]`. Angles in radians; gaussian fields default to the face
/// prior (π/2 ± 0.155 pitch, π/2 ± 0.3 yaw).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosePriorConfig {
    pub kind: PriorKind,
    pub pitch_mean: f64,
    pub pitch_std: f64,
    pub yaw_mean: f64,
    pub yaw_std: f64,
    pub pitch_range: [f64; 2],
    pub yaw_range: [f64; 2],
    /// Inline label rows (16 row-major cam2world values + 4 normalized
    /// intrinsics) for the deterministic kind.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<Vec<f64>>,
    /// Pose label file for the deterministic kind, resolved relative to the
    /// config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels_file: Option<String>,
    pub radius: f64,
    pub look_at: [f64; 3],
}

impl Default for PosePriorConfig {
    fn default() -> Self {
        PosePriorConfig {
            kind: PriorKind::Gaussian,
            pitch_mean: FRAC_PI_2,
            pitch_std: 0.155,
            yaw_mean: FRAC_PI_2,
            yaw_std: 0.3,
            pitch_range: [FRAC_PI_2 - 0.3, FRAC_PI_2 + 0.3],
            yaw_range: [FRAC_PI_2 - 0.6, FRAC_PI_2 + 0.6],
            labels: Vec::new(),
            labels_file: None,
            radius: 3.0,
            look_at: [0.0; 3],
        }
    }
}

impl PosePriorConfig {
    pub fn from_prior(prior: &PosePrior) -> Self {
        let mut cfg = PosePriorConfig {
            radius: prior.radius,
            look_at: prior.look_at,
            ..Default::default()
        };
        match &prior.distribution {
            PoseDistribution::Gaussian {
                pitch_mean,
                pitch_std,
                yaw_mean,
                yaw_std,
            } => {
                cfg.kind = PriorKind::Gaussian;
                cfg.pitch_mean = *pitch_mean;
                cfg.pitch_std = *pitch_std;
                cfg.yaw_mean = *yaw_mean;
                cfg.yaw_std = *yaw_std;
            }
            PoseDistribution::Uniform { pitch, yaw } => {
                cfg.kind = PriorKind::Uniform;
                cfg.pitch_range = [pitch.0, pitch.1];
                cfg.yaw_range = [yaw.0, yaw.1];
            }
            PoseDistribution::Deterministic { labels } => {
                cfg.kind = PriorKind::Deterministic;
                cfg.labels = labels
                    .iter()
                    .map(|l| {
                        l.pose
                            .to_row_major()
                            .iter()
                            .chain(l.intrinsics.iter())
                            .copied()
                            .collect()
                    })
                    .collect();
            }
        }
        cfg
    }

    /// `base_dir` anchors a relative `labels_file`.
    pub fn to_prior(&self, base_dir: Option<&Path>) -> Result<PosePrior> {
        let distribution = match self.kind {
            PriorKind::Gaussian => PoseDistribution::Gaussian {
                pitch_mean: self.pitch_mean,
                pitch_std: self.pitch_std,
                yaw_mean: self.yaw_mean,
                yaw_std: self.yaw_std,
            },
            PriorKind::Uniform => PoseDistribution::Uniform {
                pitch: (self.pitch_range[0], self.pitch_range[1]),
                yaw: (self.yaw_range[0], self.yaw_range[1]),
            },
            PriorKind::Deterministic => PoseDistribution::Deterministic {
                labels: self.load_labels(base_dir)?,
            },
        };
        let prior = PosePrior {
            distribution,
            radius: self.radius,
            look_at: self.look_at,
        };
        prior.validate()?;
        Ok(prior)
    }

    fn load_labels(&self, base_dir: Option<&Path>) -> Result<Vec<PoseLabel>> {
        let mut labels = Vec::new();
        if !self.labels.is_empty() {
            let text: String = self
                .labels
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|v| format!("{:?}", v))
                        .collect::<Vec<_>>()
                        .join(" ")
                        + "\n"
                })
                .collect();
            labels.extend(parse_pose_labels(&text)?);
        }
        if let Some(file) = &self.labels_file {
            let path = match base_dir {
                Some(dir) => dir.join(file),
                None => file.into(),
            };
            labels.extend(read_pose_labels(path)?);
        }
        Ok(labels)
    }
}

/// `[renderer]`: camera, sampling and compositing options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Neural rendering resolution (square); the upsampler multiplies it.
    pub resolution: usize,
    pub fov_degrees: f64,
    /// Defaults to 0.5 × camera radius.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub near: Option<f64>,
    /// Defaults to 1.5 × camera radius.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub far: Option<f64>,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub jitter: bool,
    /// Rays per render chunk (and per random stream).
    pub chunk: usize,
    #[serde(flatten)]
    pub options: RenderOptions,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            resolution: 64,
            fov_degrees: 40.0,
            near: None,
            far: None,
            n_coarse: 32,
            n_fine: 0,
            jitter: true,
            chunk: 4096,
            options: RenderOptions::default(),
        }
    }
}

impl RenderConfig {
    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            n_coarse: self.n_coarse,
            n_fine: self.n_fine,
            jitter: self.jitter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    #[serde(default)]
    pub pose_prior: PosePriorConfig,
    pub embedder: EmbedderSpec,
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub renderer: RenderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upsampler: Option<UpsamplerConfig>,
    #[serde(default)]
    pub mapper: MapperConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub mesh: MeshConfig,
}

/// `[mesh]`: shape extraction defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshConfig {
    pub resolution: usize,
    /// Level set to extract; defaults to 0 for distance fields and 10 for
    /// densities.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iso: Option<f64>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            resolution: 64,
            iso: None,
        }
    }
}

impl MeshConfig {
    pub fn iso_for(&self, head: GeometryHead) -> f64 {
        self.iso.unwrap_or(match head {
            GeometryHead::Sdf => 0.0,
            GeometryHead::Density => 10.0,
        })
    }
}

impl GeneratorConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Fills widths derived from neighbouring modules (decoder input and
    /// latent widths, upsampler input and latent widths, feature output) and
    /// validates the whole chain. Widths already set must agree.
    pub fn resolve(&self) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.embedder.validate()?;
        cfg.mapper.validate()?;
        cfg.fit.validate()?;
        cfg.renderer.options.validate()?;
        if cfg.mesh.resolution < 8 || cfg.mesh.iso.is_some_and(|v| !v.is_finite()) {
            return Err(Error::config(
                "mesh needs resolution ≥ 8 and a finite iso level",
            ));
        }

        let embed = cfg.embedder.out_channels()?;
        fill(
            &mut cfg.decoder.in_dim,
            embed,
            "decoder in_dim vs embedder channels",
        )?;
        if cfg.decoder.modulation == Modulation::Film {
            fill(
                &mut cfg.decoder.latent_dim,
                cfg.mapper.w_dim,
                "decoder latent_dim vs mapper w_dim",
            )?;
        }
        cfg.decoder.validate()?;

        let colors = cfg.decoder.out_color_dim;
        match &mut cfg.upsampler {
            Some(up) => {
                if colors < 3 {
                    return Err(Error::config(
                        "an upsampled decoder needs out_color_dim ≥ 3 (RGB lives in the first 3)",
                    ));
                }
                fill(
                    &mut up.in_channels,
                    colors,
                    "upsampler in_channels vs decoder out_color_dim",
                )?;
                if up.modulation == Modulation::Film {
                    fill(
                        &mut up.latent_dim,
                        cfg.mapper.w_dim,
                        "upsampler latent_dim vs mapper w_dim",
                    )?;
                }
                up.validate()?;
            }
            None if colors != 3 => {
                return Err(Error::config(format!(
                    "without an upsampler the decoder must output 3 colors, got {}",
                    colors
                )));
            }
            None => {}
        }
        cfg.renderer.options.feature_output = cfg.upsampler.is_some();

        if cfg.embedder.is_mpi() && cfg.decoder.geometry_head != GeometryHead::Density {
            return Err(Error::config(
                "multiplane images composite occupancy; use the density head",
            ));
        }
        let r = &cfg.renderer;
        if r.resolution == 0 || r.chunk == 0 || r.n_coarse < 2 {
            return Err(Error::config(
                "renderer needs resolution ≥ 1, chunk ≥ 1, n_coarse ≥ 2",
            ));
        }
        if !(r.fov_degrees > 0.0 && r.fov_degrees < 180.0) {
            return Err(Error::config("field of view must lie in (0, 180) degrees"));
        }
        let (near, far) = cfg.near_far();
        if !(near > 0.0 && near < far) {
            return Err(Error::config(format!(
                "need 0 < near < far, got {} and {}",
                near, far
            )));
        }
        if cfg.pose_prior.kind != PriorKind::Deterministic {
            cfg.pose_prior.to_prior(None)?;
        } else if !(cfg.pose_prior.radius > 0.0) {
            return Err(Error::config("pose prior radius must be positive"));
        }
        Ok(cfg)
    }

    pub fn near_far(&self) -> (f64, f64) {
        let r = self.pose_prior.radius;
        (
            self.renderer.near.unwrap_or(0.5 * r),
            self.renderer.far.unwrap_or(1.5 * r),
        )
    }

    /// Intrinsics of the neural rendering.
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        let n = self.renderer.resolution;
        Intrinsics::from_fov(self.renderer.fov_degrees, n, n)
    }

    /// Side length of the final image.
    pub fn output_resolution(&self) -> usize {
        self.renderer.resolution * self.upsampler.as_ref().map_or(1, |u| u.scale())
    }
}

fn fill(slot: &mut usize, derived: usize, what: &str) -> Result<()> {
    if *slot == 0 {
        *slot = derived;
        Ok(())
    } else if *slot == derived {
        Ok(())
    } else {
        Err(Error::config(format!(
            "channel chain mismatch: {} ({} ≠ {})",
            what, slot, derived
        )))
    }
}
