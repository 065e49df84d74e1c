//! Feature-map upsampling to image resolution. Feature maps are tensors of
//! shape `[H, W, C]`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GatherPlan, SourceLayout, Tensor};
use crate::decoder::{film_modulate, FilmProjection, Modulation};
use crate::error::{Error, Result};
use crate::params::Parameterized;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub kernel: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpsamplerConfig {
    /// Filled from the decoder's color width when assembled.
    #[serde(default)]
    pub in_channels: usize,
    #[serde(default)]
    pub stages: Vec<StageConfig>,
    #[serde(default)]
    pub modulation: Modulation,
    #[serde(default)]
    pub latent_dim: usize,
}

impl UpsamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::config("upsampler needs in_channels ≥ 1"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.kernel != 1 && s.kernel != 3 {
                return Err(Error::config(format!(
                    "upsampler stage {} kernel must be 1 or 3, got {}",
                    i, s.kernel
                )));
            }
            if s.out_channels == 0 {
                return Err(Error::config(format!(
                    "upsampler stage {} needs out_channels ≥ 1",
                    i
                )));
            }
        }
        if self.modulation == Modulation::Film && self.latent_dim == 0 {
            return Err(Error::config("FiLM upsampler needs latent_dim ≥ 1"));
        }
        Ok(())
    }

    pub fn scale(&self) -> usize {
        1 << self.stages.len()
    }

    pub fn feature_channels(&self) -> usize {
        self.stages
            .last()
            .map_or(self.in_channels, |s| s.out_channels)
    }
}

fn image_dims(img: &Tensor) -> Result<(usize, usize, usize)> {
    match img.shape() {
        [h, w, c] if *h > 0 && *w > 0 => Ok((*h, *w, *c)),
        s => Err(Error::shape(s, &[0, 0, 0], "feature map must be H × W × C")),
    }
}

fn channels_last_plan(
    rows: usize,
    taps: usize,
    index: Vec<usize>,
    weight: Vec<f64>,
    channels: usize,
) -> Arc<GatherPlan> {
    Arc::new(GatherPlan {
        rows,
        taps,
        index,
        weight,
        layout: SourceLayout::ChannelsLast { channels },
        out_shape: vec![rows, channels],
    })
}

/// Align-corners bilinear resize of an `H × W × C` map.
pub fn bilinear_resize(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = image_dims(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::config("bilinear resize to an empty image"));
    }
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0.0);
        }
        let u = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let i0 = (u.floor() as usize).min(n_in - 2);
        (i0, u - i0 as f64)
    };
    let mut index = Vec::with_capacity(out_h * out_w * 4);
    let mut weight = Vec::with_capacity(out_h * out_w * 4);
    for y in 0..out_h {
        let (y0, fy) = coord(y, out_h, h);
        let y1 = (y0 + 1).min(h - 1);
        for x in 0..out_w {
            let (x0, fx) = coord(x, out_w, w);
            let x1 = (x0 + 1).min(w - 1);
            for (yy, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                for (xx, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                    index.push(yy * w + xx);
                    weight.push(wy * wx);
                }
            }
        }
    }
    img.reshape(&[h * w, c])?
        .gather(channels_last_plan(out_h * out_w, 4, index, weight, c))?
        .reshape(&[out_h, out_w, c])
}

pub fn bilinear_upsample(img: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::config("upsampling factor must be ≥ 1"));
    }
    let (h, w, _) = image_dims(img)?;
    bilinear_resize(img, h * factor, w * factor)
}

pub fn nearest_upsample(img: &Tensor, factor: usize) -> Result<Tensor> {
    let (h, w, c) = image_dims(img)?;
    let (oh, ow) = (h * factor, w * factor);
    let index = (0..oh * ow)
        .map(|i| (i / ow / factor) * w + (i % ow) / factor)
        .collect();
    img.reshape(&[h * w, c])?
        .gather(channels_last_plan(oh * ow, 1, index, vec![1.0; oh * ow], c))?
        .reshape(&[oh, ow, c])
}

/// `k × k` convolution with zero padding, stride 1. `weight` is
/// `[k·k·C, C′]` with rows ordered (dy, dx, c); returns `[H, W, C′]`.
pub fn conv2d(img: &Tensor, weight: &Tensor, bias: &Tensor, kernel: usize) -> Result<Tensor> {
    let (h, w, c) = image_dims(img)?;
    if kernel.is_multiple_of(2) || weight.rank() != 2 || weight.shape()[0] != kernel * kernel * c {
        return Err(Error::shape(
            weight.shape(),
            &[kernel * kernel * c, bias.numel()],
            "conv2d weight",
        ));
    }
    let flat = img.reshape(&[h * w, c])?;
    let cols = if kernel == 1 {
        flat
    } else {
        let r = (kernel / 2) as isize;
        let mut parts = Vec::with_capacity(kernel * kernel);
        for dy in -r..=r {
            for dx in -r..=r {
                let mut index = Vec::with_capacity(h * w);
                let mut wts = Vec::with_capacity(h * w);
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        let (sy, sx) = (y + dy, x + dx);
                        if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            index.push(sy as usize * w + sx as usize);
                            wts.push(1.0);
                        } else {
                            index.push(0);
                            wts.push(0.0);
                        }
                    }
                }
                parts.push(flat.gather(channels_last_plan(h * w, 1, index, wts, c))?);
            }
        }
        Tensor::concat_last(&parts.iter().collect::<Vec<_>>())?
    };
    let out = cols.matmul(weight)?.add(bias)?;
    let co = out.last_dim();
    out.reshape(&[h, w, co])
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub kernel: usize,
    pub weight: Tensor,
    pub bias: Tensor,
    pub film: Option<FilmProjection>,
}

#[derive(Debug, Clone)]
pub struct Upsampler {
    pub config: UpsamplerConfig,
    pub stages: Vec<Stage>,
    pub to_rgb_weight: Tensor,
    pub to_rgb_bias: Tensor,
}

/// Upsampled RGB (`tanh`, in [−1, 1]) and the pre-RGB feature map.
#[derive(Debug, Clone)]
pub struct UpsampleOutput {
    pub image: Tensor,
    pub feature: Tensor,
}

fn uniform(rng: &mut SeededRng, shape: &[usize], bound: f64) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::param(
        shape,
        (0..n).map(|_| rng.gen_range(-bound..=bound)).collect(),
    )
}

impl Upsampler {
    pub fn init(cfg: &UpsamplerConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let mut stages = Vec::with_capacity(cfg.stages.len());
        let mut c = cfg.in_channels;
        for s in &cfg.stages {
            let fan_in = s.kernel * s.kernel * c;
            let bound = (6.0 / fan_in as f64).sqrt() / 2f64.sqrt();
            stages.push(Stage {
                kernel: s.kernel,
                weight: uniform(rng, &[fan_in, s.out_channels], bound)?,
                bias: Tensor::zeros(&[s.out_channels]).into_param(),
                film: (cfg.modulation == Modulation::Film)
                    .then(|| FilmProjection::identity(cfg.latent_dim, s.out_channels)),
            });
            c = s.out_channels;
        }
        let bound = (6.0 / c as f64).sqrt();
        Ok(Upsampler {
            config: cfg.clone(),
            stages,
            to_rgb_weight: uniform(rng, &[c, 3], bound)?,
            to_rgb_bias: Tensor::zeros(&[3]).into_param(),
        })
    }

    pub fn forward(&self, feat: &Tensor, w: Option<&Tensor>) -> Result<UpsampleOutput> {
        let (_, _, c) = image_dims(feat)?;
        if c != self.config.in_channels {
            return Err(Error::shape(
                feat.shape(),
                &[0, 0, self.config.in_channels],
                "upsampler input channels",
            ));
        }
        if (self.config.modulation == Modulation::Film) != w.is_some() {
            return Err(Error::config(
                "upsampler latent must be given iff FiLM modulation is enabled",
            ));
        }
        let mut x = feat.clone();
        for stage in &self.stages {
            let up = nearest_upsample(&x, 2)?;
            let mut pre = conv2d(&up, &stage.weight, &stage.bias, stage.kernel)?;
            if let (Some(film), Some(w)) = (&stage.film, w) {
                let (h, wd, co) = (pre.shape()[0], pre.shape()[1], pre.shape()[2]);
                pre =
                    film_modulate(&pre.reshape(&[h * wd, co])?, w, film)?.reshape(&[h, wd, co])?;
            }
            x = pre.leaky_relu(0.2);
        }
        let image = conv2d(&x, &self.to_rgb_weight, &self.to_rgb_bias, 1)?.tanh();
        Ok(UpsampleOutput { image, feature: x })
    }
}

impl Parameterized for Upsampler {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            out.push((format!("upsampler/stage{}/weight", i), &s.weight));
            out.push((format!("upsampler/stage{}/bias", i), &s.bias));
            if let Some(f) = &s.film {
                out.push((format!("upsampler/stage{}/film/gamma", i), &f.gamma));
                out.push((format!("upsampler/stage{}/film/beta", i), &f.beta));
            }
        }
        out.push(("upsampler/to_rgb/weight".into(), &self.to_rgb_weight));
        out.push(("upsampler/to_rgb/bias".into(), &self.to_rgb_bias));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter_mut().enumerate() {
            out.push((format!("upsampler/stage{}/weight", i), &mut s.weight));
            out.push((format!("upsampler/stage{}/bias", i), &mut s.bias));
            if let Some(f) = &mut s.film {
                out.push((format!("upsampler/stage{}/film/gamma", i), &mut f.gamma));
                out.push((format!("upsampler/stage{}/film/beta", i), &mut f.beta));
            }
        }
        out.push(("upsampler/to_rgb/weight".into(), &mut self.to_rgb_weight));
        out.push(("upsampler/to_rgb/bias".into(), &mut self.to_rgb_bias));
        out
    }
}

#[cfg(test)]
mod tests;
