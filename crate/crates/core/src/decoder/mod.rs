//! Feature decoder: point features → (color or feature vector, raw geometry).
//!
//! Weights are stored `[in, out]` so a layer is `h · W + b`. Depth `d` means
//! `d − 1` hidden layers followed by the output head(s).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{no_grad, Tape, Tensor};
use crate::embedder::{encode_positional, PositionalEncoding};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::params::Parameterized;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu {
        #[serde(default = "default_slope")]
        slope: f64,
    },
    /// `softplus(βx) / β`.
    Softplus {
        #[serde(default = "default_sharpness")]
        beta: f64,
    },
    Siren {
        #[serde(default = "default_omega0")]
        omega0: f64,
    },
}

fn default_slope() -> f64 {
    0.2
}

fn default_omega0() -> f64 {
    30.0
}

fn default_sharpness() -> f64 {
    100.0
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu {
            slope: default_slope(),
        }
    }

    pub fn softplus() -> Self {
        Activation::Softplus {
            beta: default_sharpness(),
        }
    }

    pub fn siren() -> Self {
        Activation::Siren {
            omega0: default_omega0(),
        }
    }

    pub fn apply(&self, pre: &Tensor) -> Tensor {
        match *self {
            Activation::Relu => pre.relu(),
            Activation::LeakyRelu { slope } => pre.leaky_relu(slope),
            Activation::Softplus { beta } => pre.scale(beta).softplus().scale(1.0 / beta),
            Activation::Siren { omega0 } => pre.scale(omega0).sin(),
        }
    }

    /// Half-width of the uniform weight init for a layer.
    pub fn init_bound(&self, fan_in: usize, first: bool) -> f64 {
        let he = (6.0 / fan_in as f64).sqrt();
        match *self {
            Activation::Relu | Activation::Softplus { .. } => he,
            Activation::LeakyRelu { .. } => he / 2f64.sqrt(),
            Activation::Siren { omega0 } => {
                if first {
                    1.0 / fan_in as f64
                } else {
                    he / omega0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryHead {
    Density,
    Sdf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    #[default]
    None,
    Film,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Input feature width; filled from the embedder when assembled.
    #[serde(default)]
    pub in_dim: usize,
    pub depth: usize,
    pub hidden_dim: usize,
    pub out_color_dim: usize,
    pub geometry_head: GeometryHead,
    pub activation: Activation,
    #[serde(default)]
    pub modulation: Modulation,
    /// Width of the modulating latent; filled from the mapper when assembled.
    #[serde(default)]
    pub latent_dim: usize,
    #[serde(default)]
    pub view_dependent: bool,
    #[serde(default = "default_view_freq")]
    pub view_freq: usize,
}

fn default_view_freq() -> usize {
    4
}

impl DecoderConfig {
    pub fn new(in_dim: usize, depth: usize, hidden_dim: usize, out_color_dim: usize) -> Self {
        DecoderConfig {
            in_dim,
            depth,
            hidden_dim,
            out_color_dim,
            geometry_head: GeometryHead::Density,
            activation: Activation::Relu,
            modulation: Modulation::None,
            latent_dim: 0,
            view_dependent: false,
            view_freq: default_view_freq(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.in_dim == 0 || self.hidden_dim == 0 || self.out_color_dim == 0 {
            return Err(Error::config(format!(
                "decoder needs depth, in_dim, hidden_dim, out_color_dim ≥ 1 (got {}, {}, {}, {})",
                self.depth, self.in_dim, self.hidden_dim, self.out_color_dim
            )));
        }
        if self.modulation == Modulation::Film && self.latent_dim == 0 {
            return Err(Error::config("FiLM modulation needs latent_dim ≥ 1"));
        }
        match self.activation {
            Activation::Siren { omega0 } if !(omega0 > 0.0) => {
                Err(Error::config("siren omega0 must be positive"))
            }
            Activation::LeakyRelu { slope } if !slope.is_finite() => {
                Err(Error::config("leaky relu slope must be finite"))
            }
            Activation::Softplus { beta } if !(beta > 0.0) => {
                Err(Error::config("softplus beta must be positive"))
            }
            _ => Ok(()),
        }
    }

    fn view_encoding(&self) -> PositionalEncoding {
        PositionalEncoding {
            n_freq: self.view_freq,
            include_input: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub(crate) fn uniform(
        rng: &mut SeededRng,
        fan_in: usize,
        fan_out: usize,
        bound: f64,
        bias_bound: f64,
    ) -> Result<Self> {
        let w = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let b = (0..fan_out)
            .map(|_| {
                if bias_bound > 0.0 {
                    rng.gen_range(-bias_bound..=bias_bound)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Linear {
            weight: Tensor::param(&[fan_in, fan_out], w)?,
            bias: Tensor::param(&[fan_out], b)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add(&self.bias)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Maps a latent to per-channel scale and shift. Each matrix is
/// `[latent + 1, H]`; the last row acts as the bias.
#[derive(Debug, Clone)]
pub struct FilmProjection {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl FilmProjection {
    /// Projection producing γ = 1, β = 0 for every latent.
    pub fn identity(latent: usize, width: usize) -> Self {
        let mut g = vec![0.0; (latent + 1) * width];
        g[latent * width..].fill(1.0);
        FilmProjection {
            gamma: Tensor::from_parts(vec![latent + 1, width], g).into_param(),
            beta: Tensor::zeros(&[latent + 1, width]).into_param(),
        }
    }

    fn random(rng: &mut SeededRng, latent: usize, width: usize) -> Result<Self> {
        let bound = 0.25 / (latent as f64).sqrt();
        let mut g: Vec<f64> = (0..(latent + 1) * width)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let mut b: Vec<f64> = (0..(latent + 1) * width)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        g[latent * width..].fill(1.0);
        b[latent * width..].fill(0.0);
        Ok(FilmProjection {
            gamma: Tensor::param(&[latent + 1, width], g)?,
            beta: Tensor::param(&[latent + 1, width], b)?,
        })
    }

    pub fn width(&self) -> usize {
        self.gamma.shape()[1]
    }

    /// (γ, β), each of shape `[H]`.
    pub fn project(&self, w: &Tensor) -> Result<(Tensor, Tensor)> {
        let latent = self.gamma.shape()[0] - 1;
        if w.numel() != latent {
            return Err(Error::shape(w.shape(), &[latent], "FiLM latent"));
        }
        let aug = Tensor::concat_last(&[&w.reshape(&[1, latent])?, &Tensor::ones(&[1, 1])])?;
        let h = self.width();
        Ok((
            aug.matmul(&self.gamma)?.reshape(&[h])?,
            aug.matmul(&self.beta)?.reshape(&[h])?,
        ))
    }
}

/// `γ ⊙ hidden + β` with (γ, β) projected from `w`.
pub fn film_modulate(hidden: &Tensor, w: &Tensor, proj: &FilmProjection) -> Result<Tensor> {
    if hidden.rank() != 2 || hidden.shape()[1] != proj.width() {
        return Err(Error::shape(
            hidden.shape(),
            &[hidden.rows(), proj.width()],
            "FiLM hidden width",
        ));
    }
    let (gamma, beta) = proj.project(w)?;
    hidden.mul(&gamma)?.add(&beta)
}

#[derive(Debug, Clone)]
pub struct FieldSample {
    /// `N × out_color_dim`, unactivated.
    pub color: Tensor,
    /// `N × 1`, unactivated density or signed distance.
    pub geometry: Tensor,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub hidden: Vec<Linear>,
    pub film: Vec<FilmProjection>,
    /// Fused `[color | geometry]` head, or the geometry head alone when view
    /// dependent.
    pub head: Linear,
    pub color_head: Option<Linear>,
}

impl Decoder {
    /// Random init; SDF heads are additionally sphere-initialized.
    pub fn init(cfg: &DecoderConfig, rng: &mut SeededRng) -> Result<Self> {
        let mut dec = Self::init_unshaped(cfg, rng)?;
        if cfg.geometry_head == GeometryHead::Sdf {
            dec.sphere_init(0.5, rng)?;
        }
        Ok(dec)
    }

    /// Random init without sphere initialization of SDF heads.
    pub fn init_unshaped(cfg: &DecoderConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let act = cfg.activation;
        let bias_bound = |fan_in: usize| match act {
            Activation::Siren { .. } => 1.0 / (fan_in as f64).sqrt(),
            _ => 0.0,
        };
        let mut hidden = Vec::with_capacity(cfg.depth - 1);
        let mut film = Vec::new();
        let mut width = cfg.in_dim;
        for i in 0..cfg.depth - 1 {
            let bound = act.init_bound(width, i == 0);
            hidden.push(Linear::uniform(
                rng,
                width,
                cfg.hidden_dim,
                bound,
                bias_bound(width),
            )?);
            if cfg.modulation == Modulation::Film {
                film.push(FilmProjection::random(rng, cfg.latent_dim, cfg.hidden_dim)?);
            }
            width = cfg.hidden_dim;
        }
        let first = cfg.depth == 1;
        let (head, color_head) = if cfg.view_dependent {
            let geo = Linear::uniform(rng, width, 1, act.init_bound(width, first), 0.0)?;
            let cin = width + cfg.view_encoding().out_channels();
            let col =
                Linear::uniform(rng, cin, cfg.out_color_dim, act.init_bound(cin, first), 0.0)?;
            (geo, Some(col))
        } else {
            let fused = Linear::uniform(
                rng,
                width,
                cfg.out_color_dim + 1,
                act.init_bound(width, first),
                0.0,
            )?;
            (fused, None)
        };
        Ok(Decoder {
            config: cfg.clone(),
            hidden,
            film,
            head,
            color_head,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.config.in_dim
    }

    /// Last hidden layer (the input features themselves when depth = 1).
    pub fn trunk(&self, features: &Tensor, w: Option<&Tensor>) -> Result<Tensor> {
        let cfg = &self.config;
        if features.rank() != 2 || features.shape()[1] != cfg.in_dim {
            return Err(Error::shape(
                features.shape(),
                &[features.rows(), cfg.in_dim],
                "decoder input",
            ));
        }
        let w = match (cfg.modulation, w) {
            (Modulation::Film, Some(w)) => Some(w),
            (Modulation::Film, None) => return Err(Error::config("FiLM decoder needs a latent")),
            (Modulation::None, Some(_)) => {
                return Err(Error::config("unmodulated decoder got a latent"))
            }
            (Modulation::None, None) => None,
        };
        let mut h = features.clone();
        for (i, layer) in self.hidden.iter().enumerate() {
            let mut pre = layer.forward(&h)?;
            if let Some(w) = w {
                pre = film_modulate(&pre, w, &self.film[i])?;
            }
            h = cfg.activation.apply(&pre);
        }
        Ok(h)
    }

    pub fn decode(
        &self,
        features: &Tensor,
        w: Option<&Tensor>,
        view_dirs: Option<&[[f64; 3]]>,
    ) -> Result<FieldSample> {
        let h = self.trunk(features, w)?;
        let c = self.config.out_color_dim;
        match &self.color_head {
            None => {
                let out = self.head.forward(&h)?;
                Ok(FieldSample {
                    color: out.slice_last(0, c)?,
                    geometry: out.slice_last(c, c + 1)?,
                })
            }
            Some(color_head) => {
                let dirs = view_dirs
                    .ok_or_else(|| Error::config("view-dependent decoder needs view directions"))?;
                if dirs.len() != h.rows() {
                    return Err(Error::shape(
                        &[dirs.len(), 3],
                        &[h.rows(), 3],
                        "view directions",
                    ));
                }
                let enc = encode_positional(dirs, &self.config.view_encoding());
                Ok(FieldSample {
                    color: color_head.forward(&Tensor::concat_last(&[&h, &enc])?)?,
                    geometry: self.head.forward(&h)?,
                })
            }
        }
    }

    /// Initializes the geometry output to approximate `|p| − radius` over
    /// the unit cube, feeding raw coordinates (zero padded to the input
    /// width) and an all-zero latent. A least-squares fit of the geometry
    /// head on the trunk features is followed, if needed, by a short Adam
    /// refinement of every parameter.
    pub fn sphere_init(&mut self, radius: f64, rng: &mut SeededRng) -> Result<()> {
        if self.config.in_dim < 3 {
            return Err(Error::config(
                "sphere initialization needs at least 3 input channels",
            ));
        }
        let (fit_in, fit_target) = self.sphere_samples(4096, radius, rng);
        self.fit_geometry_head(&fit_in, &fit_target)?;

        let (val_in, val_target) = self.sphere_samples(1024, radius, rng);
        let lr = match self.config.activation {
            Activation::Siren { .. } => 1e-4,
            _ => 1e-3,
        };
        let mut opt = Adam::new(lr);
        for step in 0..SPHERE_REFINE_STEPS {
            if step % 25 == 0 && self.sphere_converged(&val_in, &val_target, radius)? {
                return Ok(());
            }
            let (x, y) = self.sphere_samples(512, radius, rng);
            let tape = Tape::start();
            let d = self.sdf_of(&x)?.sub(&y)?;
            let loss = d.mul(&d)?.mean();
            let grads = tape.backward(&loss)?;
            opt.step(self.named_params_mut(), &grads)?;
        }
        if !self.sphere_converged(&val_in, &val_target, radius)? {
            log::warn!("sphere initialization did not reach its tolerance");
        }
        Ok(())
    }

    fn sphere_samples(&self, n: usize, radius: f64, rng: &mut SeededRng) -> (Tensor, Tensor) {
        let width = self.config.in_dim;
        let mut input = vec![0.0; n * width];
        let mut target = Vec::with_capacity(n);
        for i in 0..n {
            // A quarter of the points concentrate near the origin, where the
            // target has its kink.
            let span = if i % 4 == 0 { 0.25 } else { 1.0 };
            let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-span..=span));
            input[i * width..i * width + 3].copy_from_slice(&p);
            target.push((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - radius);
        }
        (
            Tensor::from_parts(vec![n, width], input),
            Tensor::from_parts(vec![n, 1], target),
        )
    }

    fn sdf_of(&self, input: &Tensor) -> Result<Tensor> {
        let latent = (self.config.modulation == Modulation::Film)
            .then(|| Tensor::zeros(&[self.config.latent_dim]));
        let dirs;
        let view = if self.config.view_dependent {
            dirs = vec![[0.0, 0.0, -1.0]; input.rows()];
            Some(dirs.as_slice())
        } else {
            None
        };
        Ok(self.decode(input, latent.as_ref(), view)?.geometry)
    }

    fn sphere_converged(&self, input: &Tensor, target: &Tensor, radius: f64) -> Result<bool> {
        no_grad(|| {
            let d = self.sdf_of(input)?;
            let mse = d
                .data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / d.numel() as f64;
            let origin = self
                .sdf_of(&Tensor::zeros(&[1, self.config.in_dim]))?
                .item();
            Ok(mse.sqrt() < 0.03 && (origin + radius).abs() < 0.05)
        })
    }

    fn fit_geometry_head(&mut self, input: &Tensor, target: &Tensor) -> Result<()> {
        let latent = (self.config.modulation == Modulation::Film)
            .then(|| Tensor::zeros(&[self.config.latent_dim]));
        let h = no_grad(|| self.trunk(input, latent.as_ref()))?;
        let (rows, width) = (h.shape()[0], h.shape()[1]);
        let design = DMatrix::from_fn(rows, width + 1, |r, c| {
            if c < width {
                h.data()[r * width + c]
            } else {
                1.0
            }
        });
        let mut normal = design.transpose() * &design;
        let ridge = 1e-8 * normal.trace() / (width + 1) as f64;
        for i in 0..=width {
            normal[(i, i)] += ridge;
        }
        let rhs = design.transpose() * DVector::from_column_slice(target.data());
        let theta = normal
            .cholesky()
            .ok_or_else(|| Error::NonFinite("sphere init normal equations".into()))?
            .solve(&rhs);

        let cols = self.head.out_dim();
        let geo_col = cols - 1;
        let mut wdata = self.head.weight.to_vec();
        for r in 0..width {
            wdata[r * cols + geo_col] = theta[r];
        }
        let mut bdata = self.head.bias.to_vec();
        bdata[geo_col] = theta[width];
        self.head.weight = self.head.weight.with_values(wdata)?;
        self.head.bias = self.head.bias.with_values(bdata)?;
        Ok(())
    }
}

const SPHERE_REFINE_STEPS: usize = 1500;

impl Parameterized for Decoder {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.hidden.iter().enumerate() {
            out.push((format!("decoder/layer{}/weight", i), &l.weight));
            out.push((format!("decoder/layer{}/bias", i), &l.bias));
        }
        let k = self.hidden.len();
        out.push((format!("decoder/layer{}/weight", k), &self.head.weight));
        out.push((format!("decoder/layer{}/bias", k), &self.head.bias));
        if let Some(c) = &self.color_head {
            out.push(("decoder/color_head/weight".into(), &c.weight));
            out.push(("decoder/color_head/bias".into(), &c.bias));
        }
        for (i, f) in self.film.iter().enumerate() {
            out.push((format!("decoder/film{}/gamma", i), &f.gamma));
            out.push((format!("decoder/film{}/beta", i), &f.beta));
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        let k = self.hidden.len();
        for (i, l) in self.hidden.iter_mut().enumerate() {
            out.push((format!("decoder/layer{}/weight", i), &mut l.weight));
            out.push((format!("decoder/layer{}/bias", i), &mut l.bias));
        }
        out.push((format!("decoder/layer{}/weight", k), &mut self.head.weight));
        out.push((format!("decoder/layer{}/bias", k), &mut self.head.bias));
        if let Some(c) = &mut self.color_head {
            out.push(("decoder/color_head/weight".into(), &mut c.weight));
            out.push(("decoder/color_head/bias".into(), &mut c.bias));
        }
        for (i, f) in self.film.iter_mut().enumerate() {
            out.push((format!("decoder/film{}/gamma", i), &mut f.gamma));
            out.push((format!("decoder/film{}/beta", i), &mut f.beta));
        }
        out
    }
}
