//! Volume rendering: raw field values along rays → pixels, depth and alpha.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{no_grad, Tensor};
use crate::decoder::{FieldSample, GeometryHead};
use crate::error::{Error, Result};
use crate::geometry::{importance_sample, stratified_sample, PointBatch, RayBatch};
use crate::rng::{split, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClampMode {
    Relu,
    Softplus,
    ExpTruncated { cap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    White,
    Black,
    LastSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    Expected,
    NormalizedExpected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    #[serde(default = "default_clamp")]
    pub clamp_mode: ClampMode,
    #[serde(default = "default_background")]
    pub background: Background,
    /// Density scale for signed distances; `1 / sdf_beta` when absent.
    #[serde(default)]
    pub sdf_alpha: Option<f64>,
    #[serde(default = "default_sdf_beta")]
    pub sdf_beta: f64,
    #[serde(default)]
    pub density_noise_std: f64,
    #[serde(default = "default_depth_mode")]
    pub depth_mode: DepthMode,
    /// Leave values unbounded (upsampler features) instead of squashing
    /// them to [−1, 1].
    #[serde(default)]
    pub feature_output: bool,
}

fn default_clamp() -> ClampMode {
    ClampMode::Softplus
}

fn default_background() -> Background {
    Background::White
}

fn default_sdf_beta() -> f64 {
    0.1
}

fn default_depth_mode() -> DepthMode {
    DepthMode::Expected
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            clamp_mode: default_clamp(),
            background: default_background(),
            sdf_alpha: None,
            sdf_beta: default_sdf_beta(),
            density_noise_std: 0.0,
            depth_mode: default_depth_mode(),
            feature_output: false,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        if let ClampMode::ExpTruncated { cap } = self.clamp_mode {
            if !(cap > 0.0) {
                return Err(Error::config("exp_truncated cap must be positive"));
            }
        }
        if !(self.sdf_beta > 0.0) {
            return Err(Error::config("sdf beta must be positive"));
        }
        if !(self.density_noise_std >= 0.0) {
            return Err(Error::config("density noise std must be non-negative"));
        }
        Ok(())
    }

    pub fn sdf_alpha(&self) -> f64 {
        self.sdf_alpha.unwrap_or(1.0 / self.sdf_beta)
    }
}

pub fn clamp_density(raw: &Tensor, mode: ClampMode) -> Tensor {
    match mode {
        ClampMode::Relu => raw.relu(),
        ClampMode::Softplus => raw.softplus(),
        // min(eʳ, cap) = exp(min(r, ln cap)), which keeps the gradient finite.
        ClampMode::ExpTruncated { cap } => raw.neg().clamp_min(-cap.ln()).neg().exp(),
    }
}

/// `α · Ψ_β(−d)` with Ψ the Laplace CDF.
pub fn sdf_to_density(d: &Tensor, alpha: f64, beta: f64) -> Tensor {
    d.neg().laplace_cdf(beta).scale(alpha)
}

/// Per-ray integration results; `weights` is `N × S`.
#[derive(Debug, Clone)]
pub struct RayOutput {
    pub color: Tensor,
    pub depth: Tensor,
    pub acc_alpha: Tensor,
    pub weights: Tensor,
    pub t_values: Vec<f64>,
}

/// Segment lengths: `t[i+1] − t[i]`, the last one reaching `far`.
pub fn segment_lengths(t: &[f64], n_samples: usize, far: f64) -> Result<Vec<f64>> {
    let mut delta = Vec::with_capacity(t.len());
    for (ray, ts) in t.chunks(n_samples).enumerate() {
        for i in 0..ts.len() {
            let next = if i + 1 < ts.len() {
                ts[i + 1]
            } else {
                far.max(ts[i])
            };
            if !(next >= ts[i]) {
                return Err(Error::UnsortedSamples { ray });
            }
            delta.push(next - ts[i]);
        }
    }
    Ok(delta)
}

/// Compositing weights from optical depths `σδ` (`N × S`):
/// `wᵢ = exp(−Σ_{j<i} σⱼδⱼ) · (1 − exp(−σᵢδᵢ))`.
pub fn weights_from_optical_depth(optical: &Tensor) -> Result<Tensor> {
    let alpha = optical.neg().exp().neg().offset(1.0);
    let transmittance = optical.cumsum_exclusive().neg().exp();
    transmittance.mul(&alpha)
}

/// Quadrature over `N` rays of `S` sorted samples. `values` is `N·S × C`.
pub fn integrate(
    t: &[f64],
    far: f64,
    sigma: &Tensor,
    values: &Tensor,
    opts: &RenderOptions,
) -> Result<RayOutput> {
    if sigma.rank() != 2 {
        return Err(Error::shape(
            sigma.shape(),
            &[t.len()],
            "integrate sigma must be N × S",
        ));
    }
    let (n, s) = (sigma.shape()[0], sigma.shape()[1]);
    if t.len() != n * s {
        return Err(Error::shape(&[t.len()], &[n, s], "integrate t vs sigma"));
    }
    if values.rank() != 2 || values.shape()[0] != n * s {
        return Err(Error::shape(
            values.shape(),
            &[n * s, values.last_dim()],
            "integrate values",
        ));
    }
    let delta = Tensor::from_parts(vec![n, s], segment_lengths(t, s, far)?);
    let optical = sigma.mul(&delta)?;
    let weights = weights_from_optical_depth(&optical)?;
    composite(t, weights, values, opts)
}

fn composite(
    t: &[f64],
    weights: Tensor,
    values: &Tensor,
    opts: &RenderOptions,
) -> Result<RayOutput> {
    let (n, s) = (weights.shape()[0], weights.shape()[1]);
    let c = values.last_dim();
    let acc_alpha = weights.sum_axis(1)?;
    let values = values.reshape(&[n, s, c])?;
    let mut color = weights.reshape(&[n, s, 1])?.mul(&values)?.sum_axis(1)?;
    let residual = acc_alpha.neg().offset(1.0).reshape(&[n, 1])?;
    let background = match opts.background {
        Background::White => Tensor::full(&[c], 1.0),
        Background::Black => Tensor::full(&[c], -1.0),
        Background::LastSample => values
            .reshape(&[n, s * c])?
            .slice_last((s - 1) * c, s * c)?,
    };
    color = color.add(&residual.mul(&background)?)?;
    let tt = Tensor::from_parts(vec![n, s], t.to_vec());
    let mut depth = weights.mul(&tt)?.sum_axis(1)?;
    if opts.depth_mode == DepthMode::NormalizedExpected {
        depth = depth.div(&acc_alpha.clamp_min(1e-8))?;
    }
    Ok(RayOutput {
        color,
        depth,
        acc_alpha,
        weights,
        t_values: t.to_vec(),
    })
}

/// Front-to-back over-compositing of `K` layers (nearest first).
pub fn composite_mpi(layer_values: &[Vec<f64>], layer_alphas: &[f64]) -> Result<Vec<f64>> {
    if layer_values.len() != layer_alphas.len() {
        return Err(Error::shape(
            &[layer_values.len()],
            &[layer_alphas.len()],
            "composite_mpi layers",
        ));
    }
    let c = layer_values.first().map_or(0, Vec::len);
    let mut out = vec![0.0; c];
    let mut transmittance = 1.0;
    for (v, &a) in layer_values.iter().zip(layer_alphas) {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::Domain {
                op: "composite_mpi",
                detail: format!("alpha {} outside [0, 1]", a),
            });
        }
        if v.len() != c {
            return Err(Error::shape(&[v.len()], &[c], "composite_mpi channels"));
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o += transmittance * a * x;
        }
        transmittance *= 1.0 - a;
    }
    Ok(out)
}

/// Anything that yields raw decoder outputs for points in scene space.
pub trait Field: Sync {
    /// Raw values for `points`; `view_dirs` has one entry per point.
    fn query(&self, points: &[[f64; 3]], view_dirs: &[[f64; 3]]) -> Result<FieldSample>;

    fn geometry(&self) -> GeometryHead;

    /// Plane depths along the scene z axis when the field is a multiplane
    /// image; such fields are composited instead of ray-marched.
    fn mpi_depths(&self) -> Option<&[f64]> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_coarse: usize,
    #[serde(default)]
    pub n_fine: usize,
    #[serde(default = "yes")]
    pub jitter: bool,
}

fn yes() -> bool {
    true
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_coarse: 32,
            n_fine: 0,
            jitter: true,
        }
    }
}

/// Sample → query → clamp/convert → integrate for one batch of rays. With
/// `n_fine > 0` a gradient-free coarse pass drives importance sampling.
pub fn render_rays(
    field: &dyn Field,
    rays: &RayBatch,
    opts: &RenderOptions,
    sampling: &SamplingConfig,
    rng: &mut SeededRng,
) -> Result<RayOutput> {
    opts.validate()?;
    if let Some(depths) = field.mpi_depths() {
        return render_mpi(field, depths, rays, opts);
    }
    let coarse = stratified_sample(rays, sampling.n_coarse, sampling.jitter, rng)?;
    let points = if sampling.n_fine > 0 {
        let out = no_grad(|| shade(field, rays, &coarse, opts, None))?;
        importance_sample(
            rays,
            &coarse.t_values,
            out.weights.data(),
            sampling.n_fine,
            rng,
        )?
    } else {
        coarse
    };
    shade(field, rays, &points, opts, Some(rng))
}

fn per_point_dirs(points: &PointBatch) -> Vec<[f64; 3]> {
    points
        .view_dirs
        .iter()
        .flat_map(|d| std::iter::repeat_n(*d, points.n_samples))
        .collect()
}

fn shade(
    field: &dyn Field,
    rays: &RayBatch,
    points: &PointBatch,
    opts: &RenderOptions,
    noise_rng: Option<&mut SeededRng>,
) -> Result<RayOutput> {
    let sample = field.query(&points.positions, &per_point_dirs(points))?;
    let mut raw = sample
        .geometry
        .reshape(&[points.n_rays, points.n_samples])?;
    if let (Some(rng), true) = (noise_rng, opts.density_noise_std > 0.0) {
        let normal =
            Normal::new(0.0, opts.density_noise_std).map_err(|e| Error::config(e.to_string()))?;
        let noise: Vec<f64> = (0..raw.numel()).map(|_| normal.sample(rng)).collect();
        raw = raw.add(&Tensor::from_parts(raw.shape().to_vec(), noise))?;
    }
    let sigma = match field.geometry() {
        GeometryHead::Density => clamp_density(&raw, opts.clamp_mode),
        GeometryHead::Sdf => sdf_to_density(&raw, opts.sdf_alpha(), opts.sdf_beta),
    };
    let values = if opts.feature_output {
        sample.color
    } else {
        sample.color.tanh()
    };
    integrate(&points.t_values, rays.far, &sigma, &values, opts)
}

/// Ray/plane intersections with `z = z_k`, sorted nearest first; planes hit
/// outside `[near, far]` or parallel to the ray get zero opacity.
fn render_mpi(
    field: &dyn Field,
    depths: &[f64],
    rays: &RayBatch,
    opts: &RenderOptions,
) -> Result<RayOutput> {
    let k = depths.len();
    let n = rays.len();
    let mut t_values = Vec::with_capacity(n * k);
    let mut mask = Vec::with_capacity(n * k);
    let mut positions = Vec::with_capacity(n * k);
    let mut dirs = Vec::with_capacity(n * k);
    for (o, d) in rays.origins.iter().zip(&rays.directions) {
        let mut hits: Vec<(f64, bool)> = depths
            .iter()
            .map(|&z| {
                if d[2].abs() < 1e-12 {
                    return (f64::INFINITY, false);
                }
                let t = (z - o[2]) / d[2];
                (t, t >= rays.near && t <= rays.far)
            })
            .collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (t, valid) in hits {
            let tc = if t.is_finite() {
                t.clamp(rays.near, rays.far)
            } else {
                rays.far
            };
            t_values.push(tc);
            mask.push(if valid { 1.0 } else { 0.0 });
            positions.push([o[0] + tc * d[0], o[1] + tc * d[1], o[2] + tc * d[2]]);
            dirs.push(*d);
        }
    }
    let sample = field.query(&positions, &dirs)?;
    // 1 − sigmoid(x) = sigmoid(−x), so −ln(1 − α) = softplus(raw).
    let optical = sample
        .geometry
        .reshape(&[n, k])?
        .softplus()
        .mul(&Tensor::from_parts(vec![n, k], mask))?;
    let weights = weights_from_optical_depth(&optical)?;
    let values = if opts.feature_output {
        sample.color
    } else {
        sample.color.tanh()
    };
    composite(&t_values, weights, &values, opts)
}

/// Gradient-free rendering in parallel chunks; results are concatenated in
/// ray order and each chunk draws from its own stream of `seed`.
pub fn render_rays_chunked(
    field: &dyn Field,
    rays: &RayBatch,
    opts: &RenderOptions,
    sampling: &SamplingConfig,
    seed: u64,
    chunk: usize,
) -> Result<RayOutput> {
    let chunk = chunk.max(1);
    let starts: Vec<usize> = (0..rays.len()).step_by(chunk).collect();
    let parts = no_grad(|| -> Result<Vec<RayOutput>> {
        starts
            .par_iter()
            .map(|&start| {
                no_grad(|| {
                    let sub = rays.slice(start, (start + chunk).min(rays.len()));
                    let mut rng = split(seed, (start / chunk) as u64);
                    render_rays(field, &sub, opts, sampling, &mut rng)
                })
            })
            .collect()
    })?;
    concat_outputs(&parts)
}

/// The chunking and per-chunk random streams of [`render_rays_chunked`],
/// run serially under the current gradient mode so the result can be
/// differentiated.
pub fn render_rays_serial(
    field: &dyn Field,
    rays: &RayBatch,
    opts: &RenderOptions,
    sampling: &SamplingConfig,
    seed: u64,
    chunk: usize,
) -> Result<RayOutput> {
    let chunk = chunk.max(1);
    let parts = (0..rays.len())
        .step_by(chunk)
        .map(|start| {
            let sub = rays.slice(start, (start + chunk).min(rays.len()));
            let mut rng = split(seed, (start / chunk) as u64);
            render_rays(field, &sub, opts, sampling, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    if parts.len() == 1 {
        return Ok(parts.into_iter().next().unwrap());
    }
    let cat = |f: &dyn Fn(&RayOutput) -> &Tensor| {
        Tensor::concat_rows(&parts.iter().map(f).collect::<Vec<_>>())
    };
    Ok(RayOutput {
        color: cat(&|p| &p.color)?,
        depth: cat(&|p| &p.depth)?,
        acc_alpha: cat(&|p| &p.acc_alpha)?,
        weights: cat(&|p| &p.weights)?,
        t_values: parts
            .iter()
            .flat_map(|p| p.t_values.iter().copied())
            .collect(),
    })
}

fn concat_outputs(parts: &[RayOutput]) -> Result<RayOutput> {
    let first = parts
        .first()
        .ok_or_else(|| Error::config("no rays to render"))?;
    let (c, s) = (first.color.last_dim(), first.weights.last_dim());
    let n: usize = parts.iter().map(|p| p.acc_alpha.numel()).sum();
    let gather = |f: &dyn Fn(&RayOutput) -> &Tensor| {
        parts
            .iter()
            .flat_map(|p| f(p).data().iter().copied())
            .collect::<Vec<_>>()
    };
    Ok(RayOutput {
        color: Tensor::new(&[n, c], gather(&|p| &p.color))?,
        depth: Tensor::new(&[n], gather(&|p| &p.depth))?,
        acc_alpha: Tensor::new(&[n], gather(&|p| &p.acc_alpha))?,
        weights: Tensor::new(&[n, s], gather(&|p| &p.weights))?,
        t_values: parts
            .iter()
            .flat_map(|p| p.t_values.iter().copied())
            .collect(),
    })
}

/// An image-shaped rendering: `color` is `H × W × C`, `depth` and
/// `acc_alpha` are `h × w`, `weights` is `h·w × S`. With an upsampler, `H × W`
/// is the upsampled size, `h × w` the neural rendering size, and `features`
/// and `raw_rgb` hold the low-resolution feature map and its RGB channels.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: Tensor,
    pub depth: Tensor,
    pub acc_alpha: Tensor,
    pub weights: Tensor,
    pub features: Option<Tensor>,
    pub raw_rgb: Option<Tensor>,
}

impl RenderOutput {
    pub fn from_rays(out: RayOutput, height: usize, width: usize) -> Result<Self> {
        let c = out.color.last_dim();
        Ok(RenderOutput {
            color: out.color.reshape(&[height, width, c])?,
            depth: out.depth.reshape(&[height, width])?,
            acc_alpha: out.acc_alpha.reshape(&[height, width])?,
            weights: out.weights,
            features: None,
            raw_rgb: None,
        })
    }

    pub fn height(&self) -> usize {
        self.color.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.color.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.color.shape()[2]
    }
}
