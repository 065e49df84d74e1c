use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{no_grad, Tape, Tensor};
use crate::decoder::{Activation, GeometryHead};
use crate::error::{Error, Result};
use crate::geometry::{generate_rays, Intrinsics, RayBatch};
use crate::optim::Adam;
use crate::params::Parameterized;
use crate::pipeline::{save_checkpoint, Generator, GeneratorConfig};
use crate::renderer::RenderOutput;
use crate::rng::{split, SeededRng};

use super::views::{SceneViews, View, ViewSpec};
use super::{
    eikonal_loss, field_geometry, minimal_surface_loss, photometric_loss, psnr, FitConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub iteration: usize,
    pub loss: f64,
    pub photometric: f64,
    pub eikonal: f64,
    pub min_surface: f64,
    /// Held-out PSNR, on evaluation iterations.
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    pub records: Vec<FitRecord>,
}

impl FitReport {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn psnr_curve(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.psnr.map(|p| (r.iteration, p)))
            .collect()
    }

    pub fn final_psnr(&self) -> Option<f64> {
        self.psnr_curve().last().map(|p| p.1)
    }

    pub fn best_psnr(&self) -> Option<f64> {
        self.psnr_curve().into_iter().map(|p| p.1).reduce(f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,photometric,eikonal,min_surface,psnr\n");
        for r in &self.records {
            let psnr = r.psnr.map(|p| format!("{:?}", p)).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{}",
                r.iteration, r.loss, r.photometric, r.eikonal, r.min_surface, psnr
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_csv())?)
    }
}

impl ViewSpec {
    /// Cameras matching a generator's renderer: its output resolution, field
    /// of view, pose radius, depth range and background.
    pub fn for_generator(cfg: &GeneratorConfig) -> Self {
        let (near, far) = cfg.near_far();
        ViewSpec {
            count: cfg.fit.n_views,
            resolution: cfg.output_resolution(),
            fov_degrees: cfg.renderer.fov_degrees,
            radius: cfg.pose_prior.radius,
            pitch_spread: cfg.fit.pitch_spread,
            near,
            far,
            background: cfg.renderer.options.background,
            seed: cfg.fit.seed,
        }
    }
}

/// Adam with the configured groups: explicit prefixes first, then the
/// embedder rate, then the sine-decoder rate when applicable.
pub fn build_optimizer(gen: &Generator, cfg: &FitConfig) -> Adam {
    let mut opt = Adam::new(cfg.lr);
    for (prefix, lr) in &cfg.lr_groups {
        opt = opt.with_group(prefix.clone(), *lr);
    }
    opt = opt.with_group("embedder/", cfg.embedder_lr);
    if matches!(gen.decoder.config.activation, Activation::Siren { .. }) {
        opt = opt.with_group("decoder/", cfg.siren_lr);
    }
    opt
}

/// Optimizes `gen` to reproduce `views` (all but the last, which is held out
/// for PSNR). The scene latent is the `z` of `gen.sample_inputs(cfg.seed)`.
/// Without an upsampler each iteration draws `rays_per_batch` pixels across
/// the training views; with one, it renders a whole training view so the
/// convolutions see full feature maps.
pub fn fit_scene(gen: &mut Generator, views: &SceneViews, cfg: &FitConfig) -> Result<FitReport> {
    fit_scene_with(gen, views, cfg, None)
}

/// [`fit_scene`] that also writes a checkpoint to `autosave` every
/// `cfg.autosave_every` iterations.
pub fn fit_scene_with(
    gen: &mut Generator,
    views: &SceneViews,
    cfg: &FitConfig,
    autosave: Option<&Path>,
) -> Result<FitReport> {
    cfg.validate()?;
    views.validate()?;
    let (train, held) = views.split_holdout()?;
    let scale = gen.config.upsampler.as_ref().map_or(1, |u| u.scale());
    let (w_out, h_out) = (held.intrinsics.width, held.intrinsics.height);
    if w_out % scale != 0 || h_out % scale != 0 {
        return Err(Error::config(format!(
            "views of {}×{} do not divide by the upsampling factor {}",
            w_out, h_out, scale
        )));
    }
    let (near, far) = gen.config.near_far();
    let train_rays = train
        .iter()
        .map(|v| generate_rays(&low_res(&v.intrinsics, scale)?, &v.pose, near, far))
        .collect::<Result<Vec<_>>>()?;
    let z = gen.sample_inputs(cfg.seed)?.0;
    let sdf = gen.decoder.config.geometry_head == GeometryHead::Sdf;
    let mut opt = build_optimizer(gen, cfg);
    let mut rng = split(cfg.seed, 1);
    let mut report = FitReport::default();
    let beta_start = gen.config.renderer.options.sdf_beta;

    for it in 1..=cfg.iterations {
        if let (true, Some(end)) = (sdf, cfg.sdf_beta_final) {
            let f = if cfg.iterations > 1 {
                (it - 1) as f64 / (cfg.iterations - 1) as f64
            } else {
                1.0
            };
            gen.config.renderer.options.sdf_beta = beta_start * (end / beta_start).powf(f);
        }
        let render_seed: u64 = rng.gen();
        let tape = Tape::start();
        let mut terms: Vec<(&'static str, Tensor)> = Vec::new();
        let mut record = FitRecord {
            iteration: it,
            loss: 0.0,
            photometric: 0.0,
            eikonal: 0.0,
            min_surface: 0.0,
            psnr: None,
        };
        let mut loss: Option<Tensor> = None;
        let mut add = |weight: f64, value: &Tensor| -> Result<()> {
            let scaled = value.scale(weight);
            loss = Some(match loss.take() {
                None => scaled,
                Some(l) => l.add(&scaled)?,
            });
            Ok(())
        };

        if cfg.lambda_photo > 0.0 {
            let (pred, target) = if scale > 1 {
                let i = rng.gen_range(0..train.len());
                let out = render_view(gen, &z, &train[i], &train_rays[i], render_seed)?;
                (out.color, train[i].image.clone())
            } else {
                ray_batch(
                    gen,
                    &z,
                    train,
                    &train_rays,
                    cfg.rays_per_batch,
                    render_seed,
                    &mut rng,
                )?
            };
            let photo = photometric_loss(&pred, &target)?;
            record.photometric = photo.item();
            add(cfg.lambda_photo, &photo)?;
            terms.push(("prediction", pred));
            terms.push(("photometric loss", photo));
        }
        if sdf && (cfg.lambda_eikonal > 0.0 || cfg.lambda_min_surface > 0.0) {
            let probes: Vec<[f64; 3]> = (0..cfg.eikonal_probes)
                .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..=1.0)))
                .collect();
            let w = gen.latent(&z, &train[0].pose)?;
            let field = gen.field(&w);
            if cfg.lambda_eikonal > 0.0 {
                let eik = eikonal_loss(&field, &probes, cfg.fd_step)?;
                record.eikonal = eik.item();
                add(cfg.lambda_eikonal, &eik)?;
                terms.push(("eikonal loss", eik));
            }
            if cfg.lambda_min_surface > 0.0 {
                let d = field_geometry(&field, &probes)?;
                let ms = minimal_surface_loss(&d, cfg.min_surface_k)?;
                record.min_surface = ms.item();
                add(cfg.lambda_min_surface, &ms)?;
                terms.push(("probe distances", d));
                terms.push(("minimal surface loss", ms));
            }
        }

        if let Some(loss) = loss {
            record.loss = loss.item();
            if !record.loss.is_finite() {
                let culprit = first_non_finite(gen, &terms)
                    .unwrap_or_else(|| "none (overflow in the weighted sum)".into());
                return Err(Error::NonFinite(format!(
                    "loss at iteration {}; first non-finite tensor: {}",
                    it, culprit
                )));
            }
            let grads = tape.backward(&loss)?;
            let bad_grad = gen
                .named_params()
                .into_iter()
                .find(|(_, t)| grads.wrt(t).is_some_and(|g| !g.is_finite()))
                .map(|(name, _)| name);
            if let Some(name) = bad_grad {
                let culprit = first_non_finite(gen, &terms)
                    .unwrap_or_else(|| format!("gradient of {}", name));
                return Err(Error::NonFinite(format!(
                    "gradient at iteration {}; first non-finite tensor: {}",
                    it, culprit
                )));
            }
            drop(terms);
            opt.step(gen.named_params_mut(), &grads)?;
        }
        drop(tape);

        if it % cfg.eval_every.max(1) == 0 || it == cfg.iterations {
            record.psnr = Some(held_out_psnr(gen, &z, held, scale, cfg.seed)?);
        }
        if let Some(path) = autosave {
            if cfg.autosave_every > 0 && it % cfg.autosave_every == 0 {
                save_checkpoint(gen, path)?;
            }
        }
        let done = matches!((record.psnr, cfg.stop_psnr), (Some(p), Some(stop)) if p >= stop);
        report.records.push(record);
        if done {
            break;
        }
    }
    Ok(report)
}

fn low_res(k: &Intrinsics, scale: usize) -> Result<Intrinsics> {
    k.resized(k.width / scale, k.height / scale)
}

/// `rays_per_batch` random pixels over the training views, rendered view by
/// view (each under its own latent) and stacked.
fn ray_batch(
    gen: &Generator,
    z: &Tensor,
    train: &[View],
    rays: &[RayBatch],
    n: usize,
    seed: u64,
    rng: &mut SeededRng,
) -> Result<(Tensor, Tensor)> {
    let pixels = rays[0].len();
    let mut picks: Vec<(usize, usize)> = (0..n)
        .map(|_| (rng.gen_range(0..train.len()), rng.gen_range(0..pixels)))
        .collect();
    picks.sort_unstable();
    let mut preds = Vec::new();
    let mut target = Vec::with_capacity(3 * n);
    let mut start = 0;
    while start < picks.len() {
        let v = picks[start].0;
        let end = start + picks[start..].iter().take_while(|p| p.0 == v).count();
        let idx: Vec<usize> = picks[start..end].iter().map(|p| p.1).collect();
        let img = train[v].image.data();
        for &p in &idx {
            target.extend_from_slice(&img[3 * p..3 * p + 3]);
        }
        let w = gen.latent(z, &train[v].pose)?;
        preds.push(
            gen.render_rays(&w, &rays[v].select(&idx), split(seed, v as u64).gen())?
                .color,
        );
        start = end;
    }
    let pred = Tensor::concat_rows(&preds.iter().collect::<Vec<_>>())?;
    Ok((pred, Tensor::from_parts(vec![n, 3], target)))
}

fn render_view(
    gen: &Generator,
    z: &Tensor,
    view: &View,
    rays: &RayBatch,
    seed: u64,
) -> Result<RenderOutput> {
    let w = gen.latent(z, &view.pose)?;
    let (h, wd) = (view.intrinsics.height, view.intrinsics.width);
    let scale = gen.config.upsampler.as_ref().map_or(1, |u| u.scale());
    let out = RenderOutput::from_rays(gen.render_rays(&w, rays, seed)?, h / scale, wd / scale)?;
    gen.finish(out, &w)
}

/// PSNR of the rendering of `view` against its image, without gradients.
pub fn held_out_psnr(
    gen: &Generator,
    z: &Tensor,
    view: &View,
    scale: usize,
    seed: u64,
) -> Result<f64> {
    let (near, far) = gen.config.near_far();
    let rays = generate_rays(&low_res(&view.intrinsics, scale)?, &view.pose, near, far)?;
    let out = no_grad(|| render_view(gen, z, view, &rays, seed))?;
    psnr(out.color.data(), view.image.data())
}

/// Parameters are checked first since a corrupt value is the usual root
/// cause; then the loss terms in the order they were computed.
fn first_non_finite(gen: &Generator, terms: &[(&'static str, Tensor)]) -> Option<String> {
    if let Some((name, _)) = gen.named_params().into_iter().find(|(_, t)| !t.is_finite()) {
        return Some(format!("parameter {}", name));
    }
    terms
        .iter()
        .find(|(_, t)| !t.is_finite())
        .map(|(name, _)| name.to_string())
}
