//! Noise → latent mapping network and truncation.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::decoder::Linear;
use crate::error::{Error, Result};
use crate::params::Parameterized;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapperConfig {
    #[serde(default = "default_dim")]
    pub z_dim: usize,
    #[serde(default = "default_dim")]
    pub w_dim: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Feed `(cos, sin)` of the camera pitch and yaw alongside `z`.
    #[serde(default)]
    pub pose_conditioned: bool,
}

fn default_dim() -> usize {
    64
}

fn default_depth() -> usize {
    4
}

impl Default for MapperConfig {
    fn default() -> Self {
        MapperConfig {
            z_dim: default_dim(),
            w_dim: default_dim(),
            depth: default_depth(),
            pose_conditioned: false,
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 || self.w_dim == 0 || self.depth == 0 {
            return Err(Error::config("mapper needs z_dim, w_dim, depth ≥ 1"));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.z_dim + if self.pose_conditioned { 4 } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Mapper {
    pub config: MapperConfig,
    pub layers: Vec<Linear>,
    /// Running mean of mapped latents, used for truncation.
    pub w_avg: Vec<f64>,
    pub w_count: u64,
}

const SLOPE: f64 = 0.2;

impl Mapper {
    pub fn init(cfg: &MapperConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let mut width = cfg.input_dim();
        let mut layers = Vec::with_capacity(cfg.depth);
        for _ in 0..cfg.depth {
            // Unit-variance-preserving uniform init for the leaky slope.
            let bound = (6.0 / ((1.0 + SLOPE * SLOPE) * width as f64)).sqrt();
            layers.push(Linear::uniform(rng, width, cfg.w_dim, bound, 0.0)?);
            width = cfg.w_dim;
        }
        Ok(Mapper {
            config: cfg.clone(),
            layers,
            w_avg: vec![0.0; cfg.w_dim],
            w_count: 0,
        })
    }

    /// `z` scaled to unit norm, optionally joined with the pose encoding, then
    /// the MLP (leaky ReLU between layers, linear output).
    pub fn map(&self, z: &Tensor, pose: Option<(f64, f64)>) -> Result<Tensor> {
        let cfg = &self.config;
        if z.numel() != cfg.z_dim {
            return Err(Error::shape(z.shape(), &[cfg.z_dim], "mapper z"));
        }
        if !z.is_finite() {
            return Err(Error::NonFinite("mapper z".into()));
        }
        let z = z.reshape(&[1, cfg.z_dim])?;
        let norm = z.mul(&z)?.sum().sqrt()?;
        if norm.item() == 0.0 {
            return Err(Error::Domain {
                op: "map_latent",
                detail: "z has zero norm".into(),
            });
        }
        let mut x = z.div(&norm)?;
        match (cfg.pose_conditioned, pose) {
            (true, Some((pitch, yaw))) => {
                let enc = Tensor::new(
                    &[1, 4],
                    vec![pitch.cos(), pitch.sin(), yaw.cos(), yaw.sin()],
                )?;
                x = Tensor::concat_last(&[&x, &enc])?;
            }
            (true, None) => return Err(Error::config("pose-conditioned mapper needs a pose")),
            (false, Some(_)) => return Err(Error::config("mapper is not pose-conditioned")),
            (false, None) => {}
        }
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x)?;
            if i < last {
                x = x.leaky_relu(SLOPE);
            }
        }
        x.reshape(&[cfg.w_dim])
    }

    /// Folds one latent into the exact running mean.
    pub fn update_w_avg(&mut self, w: &[f64]) -> Result<()> {
        if w.len() != self.w_avg.len() {
            return Err(Error::shape(
                &[w.len()],
                &[self.w_avg.len()],
                "w_avg update",
            ));
        }
        self.w_count += 1;
        let n = self.w_count as f64;
        for (a, v) in self.w_avg.iter_mut().zip(w) {
            *a += (v - *a) / n;
        }
        Ok(())
    }

    pub fn w_avg_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.w_avg.len()], self.w_avg.clone())
    }
}

/// Standard normal noise vector.
pub fn sample_z(z_dim: usize, rng: &mut SeededRng) -> Tensor {
    let data = (0..z_dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_parts(vec![z_dim], data)
}

/// `w_avg + ψ (w − w_avg)`.
pub fn truncate(w: &Tensor, w_avg: &Tensor, psi: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::config(format!(
            "truncation ψ must lie in [0, 1], got {}",
            psi
        )));
    }
    if w.shape() != w_avg.shape() {
        return Err(Error::shape(w.shape(), w_avg.shape(), "truncation"));
    }
    w.scale(psi).add(&w_avg.scale(1.0 - psi))
}

impl Parameterized for Mapper {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("mapper/layer{}/weight", i), &l.weight));
            out.push((format!("mapper/layer{}/bias", i), &l.bias));
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("mapper/layer{}/weight", i), &mut l.weight));
            out.push((format!("mapper/layer{}/bias", i), &mut l.bias));
        }
        out
    }
}
