//! The assembled generator: mapper → embedder → decoder → renderer →
//! upsampler, plus checkpoints and ablation configurations.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod mapper;

use rand::Rng;

use crate::autodiff::{is_recording, no_grad, Tape, Tensor};
use crate::decoder::{Decoder, FieldSample, GeometryHead, Modulation};
use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::fit::{eikonal_loss, field_geometry};
use crate::geometry::{generate_rays, pose_to_angles, Pose, PosePrior, RayBatch};
use crate::optim::Adam;
use crate::params::Parameterized;
use crate::renderer::{render_rays_chunked, render_rays_serial, Field, RayOutput, RenderOutput};
use crate::rng::{seeded, split, SeededRng};
use crate::upsampler::Upsampler;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint,
    CHECKPOINT_VERSION,
};
pub use config::{GeneratorConfig, MeshConfig, PosePriorConfig, PriorKind, RenderConfig};
pub use mapper::{sample_z, truncate, Mapper, MapperConfig};

#[derive(Debug, Clone)]
pub struct Generator {
    /// Resolved configuration (derived widths filled in).
    pub config: GeneratorConfig,
    pub mapper: Mapper,
    pub embedder: Embedder,
    pub decoder: Decoder,
    pub upsampler: Option<Upsampler>,
}

/// Embedder + decoder under one latent, seen by the renderer.
pub struct NeuralField<'a> {
    pub embedder: &'a Embedder,
    pub decoder: &'a Decoder,
    pub w: Option<&'a Tensor>,
}

impl Field for NeuralField<'_> {
    fn query(&self, points: &[[f64; 3]], view_dirs: &[[f64; 3]]) -> Result<FieldSample> {
        let features = self.embedder.embed(points)?.features;
        let view = self.decoder.config.view_dependent.then_some(view_dirs);
        self.decoder.decode(&features, self.w, view)
    }

    fn geometry(&self) -> GeometryHead {
        self.decoder.config.geometry_head
    }

    fn mpi_depths(&self) -> Option<&[f64]> {
        match self.embedder {
            Embedder::Mpi(m) => Some(&m.depths),
            _ => None,
        }
    }
}

/// Tolerances of the sphere initialization of SDF pipelines.
const SPHERE_RMS: f64 = 0.03;
const SPHERE_ORIGIN: f64 = 0.05;
const SPHERE_EIKONAL: f64 = 0.05;
const SPHERE_STEPS: usize = 2000;
pub const SPHERE_RADIUS: f64 = 0.5;

/// Outcome of [`Generator::sphere_init`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereFit {
    pub rms: f64,
    pub origin_error: f64,
    pub eikonal: f64,
    pub steps: usize,
}

impl SphereFit {
    pub fn converged(&self) -> bool {
        self.rms < SPHERE_RMS && self.origin_error < SPHERE_ORIGIN && self.eikonal < SPHERE_EIKONAL
    }
}

impl Generator {
    /// Random initialization from `seed`; SDF pipelines are then
    /// sphere-initialized.
    pub fn new(cfg: &GeneratorConfig, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let mut gen = Self::init_unshaped(cfg, &mut rng)?;
        if gen.decoder.config.geometry_head == GeometryHead::Sdf {
            let fit = gen.sphere_init(SPHERE_RADIUS, &mut rng)?;
            if !fit.converged() {
                log::warn!(
                    "sphere initialization stopped short of tolerance: {:?}",
                    fit
                );
            }
        }
        Ok(gen)
    }

    /// Random initialization without the SDF sphere fit; the architecture of
    /// a checkpoint is rebuilt with this before its values are loaded.
    pub fn init_unshaped(cfg: &GeneratorConfig, rng: &mut SeededRng) -> Result<Self> {
        let config = cfg.resolve()?;
        let mapper = Mapper::init(&config.mapper, rng)?;
        let embedder = config.embedder.build(rng)?;
        let decoder = Decoder::init_unshaped(&config.decoder, rng)?;
        let upsampler = config
            .upsampler
            .as_ref()
            .map(|u| Upsampler::init(u, rng))
            .transpose()?;
        Ok(Generator {
            config,
            mapper,
            embedder,
            decoder,
            upsampler,
        })
    }

    pub fn pose_prior(&self) -> Result<PosePrior> {
        self.config.pose_prior.to_prior(None)
    }

    /// `w` for `z`, conditioned on the angles of `pose` when configured.
    pub fn latent(&self, z: &Tensor, pose: &Pose) -> Result<Tensor> {
        let cond = if self.mapper.config.pose_conditioned {
            Some(pose_to_angles(pose, self.config.pose_prior.look_at)?)
        } else {
            None
        };
        self.mapper.map(z, cond)
    }

    pub fn field<'a>(&'a self, w: &'a Tensor) -> NeuralField<'a> {
        NeuralField {
            embedder: &self.embedder,
            decoder: &self.decoder,
            w: (self.decoder.config.modulation == Modulation::Film).then_some(w),
        }
    }

    /// Renders rays in fixed chunks, each with its own stream of `seed`:
    /// in parallel when no tape is recording, serially (and differentiably)
    /// otherwise. Both paths give identical values.
    pub fn render_rays(&self, w: &Tensor, rays: &RayBatch, seed: u64) -> Result<RayOutput> {
        let r = &self.config.renderer;
        let field = self.field(w);
        if is_recording() {
            render_rays_serial(&field, rays, &r.options, &r.sampling(), seed, r.chunk)
        } else {
            render_rays_chunked(&field, rays, &r.options, &r.sampling(), seed, r.chunk)
        }
    }

    /// Full image for latent `w` seen from `pose`.
    pub fn render(&self, w: &Tensor, pose: &Pose, seed: u64) -> Result<RenderOutput> {
        let k = self.config.intrinsics()?;
        let (near, far) = self.config.near_far();
        let rays = generate_rays(&k, pose, near, far)?;
        let out = RenderOutput::from_rays(self.render_rays(w, &rays, seed)?, k.height, k.width)?;
        self.finish(out, w)
    }

    /// Applies the upsampler (if any) to a neural rendering.
    pub fn finish(&self, mut out: RenderOutput, w: &Tensor) -> Result<RenderOutput> {
        let Some(up) = &self.upsampler else {
            return Ok(out);
        };
        let feature = out.color;
        let raw = feature.slice_last(0, 3)?.tanh();
        let w_up = (up.config.modulation == Modulation::Film).then_some(w);
        out.color = up.forward(&feature, w_up)?.image;
        out.features = Some(feature);
        out.raw_rgb = Some(raw);
        Ok(out)
    }

    /// Draws `(z, pose)` from the stream `seed`.
    pub fn sample_inputs(&self, seed: u64) -> Result<(Tensor, Pose)> {
        let mut rng = split(seed, u64::MAX);
        let z = sample_z(self.mapper.config.z_dim, &mut rng);
        let pose = crate::geometry::sample_pose(&self.pose_prior()?, &mut rng)?;
        Ok((z, pose))
    }

    /// Folds `n` mapped samples into the mapper's running mean of `w`.
    pub fn track_w_avg(&mut self, n: usize, rng: &mut SeededRng) -> Result<()> {
        let prior = self.pose_prior()?;
        for _ in 0..n {
            let z = sample_z(self.mapper.config.z_dim, rng);
            let cond = if self.mapper.config.pose_conditioned {
                Some(crate::geometry::sample_angles(&prior, rng)?)
            } else {
                None
            };
            let w = no_grad(|| self.mapper.map(&z, cond))?;
            self.mapper.update_w_avg(w.data())?;
        }
        Ok(())
    }

    /// Fits the geometry output to `|p| − radius` over the unit cube for
    /// random latents, until the RMS, origin and eikonal tolerances hold or
    /// the step budget runs out.
    pub fn sphere_init(&mut self, radius: f64, rng: &mut SeededRng) -> Result<SphereFit> {
        if self.decoder.config.geometry_head != GeometryHead::Sdf {
            return Err(Error::config("sphere initialization needs the SDF head"));
        }
        let decoder_lr = match self.decoder.config.activation {
            crate::decoder::Activation::Siren { .. } => 1e-4,
            _ => 1e-3,
        };
        let mut opt = Adam::new(decoder_lr).with_group("embedder/", 1e-2);
        let (val_points, val_target) = sphere_samples(1024, radius, rng);
        let probes: Vec<[f64; 3]> = (0..256).map(|_| away_from_origin(rng)).collect();
        let val_z = sample_z(self.mapper.config.z_dim, rng);
        let val_pose = crate::geometry::sample_pose(&self.pose_prior()?, rng)?;
        let mut steps = 0;
        loop {
            if steps % 25 == 0 {
                let report = no_grad(|| {
                    let w = self.latent(&val_z, &val_pose)?;
                    self.sphere_report(&w, &val_points, &val_target, &probes, radius, steps)
                })?;
                if report.converged() || steps >= SPHERE_STEPS {
                    return Ok(report);
                }
            }
            let z = sample_z(self.mapper.config.z_dim, rng);
            let pose = crate::geometry::sample_pose(&self.pose_prior()?, rng)?;
            let w = no_grad(|| self.latent(&z, &pose))?;
            let (points, target) = sphere_samples(512, radius, rng);
            let probe_batch: Vec<[f64; 3]> = (0..64).map(|_| away_from_origin(rng)).collect();
            let tape = Tape::start();
            let field = self.field(&w);
            let d = field_geometry(&field, &points)?.sub(&target)?;
            let loss = d
                .mul(&d)?
                .mean()
                .add(&eikonal_loss(&field, &probe_batch, 1e-3)?.scale(0.1))?;
            let grads = tape.backward(&loss)?;
            opt.step(self.named_params_mut(), &grads)?;
            steps += 1;
        }
    }

    fn sphere_report(
        &self,
        w: &Tensor,
        points: &[[f64; 3]],
        target: &Tensor,
        probes: &[[f64; 3]],
        radius: f64,
        steps: usize,
    ) -> Result<SphereFit> {
        let field = self.field(w);
        let d = field_geometry(&field, points)?;
        let mse = d
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / d.numel() as f64;
        let origin = field_geometry(&field, &[[0.0; 3]])?.item();
        Ok(SphereFit {
            rms: mse.sqrt(),
            origin_error: (origin + radius).abs(),
            eikonal: eikonal_loss(&field, probes, 1e-3)?.item(),
            steps,
        })
    }
}

/// Points in the unit cube (a quarter of them within 0.25 of the origin) and
/// their distance to the sphere of `radius`.
fn sphere_samples(n: usize, radius: f64, rng: &mut SeededRng) -> (Vec<[f64; 3]>, Tensor) {
    let points: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let span = if i % 4 == 0 { 0.25 } else { 1.0 };
            std::array::from_fn(|_| rng.gen_range(-span..=span))
        })
        .collect();
    let target = points
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - radius)
        .collect();
    (points, Tensor::from_parts(vec![n], target))
}

/// Uniform point in the unit cube at least 0.1 from the origin, where the
/// distance to a sphere is smooth.
fn away_from_origin(rng: &mut SeededRng) -> [f64; 3] {
    loop {
        let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
        if p.iter().map(|v| v * v).sum::<f64>() > 0.01 {
            return p;
        }
    }
}

/// `z` → `w` → rays from `pose` → rendering (→ upsampling). Deterministic
/// given the parameters, `z`, `pose` and `seed`.
pub fn synthesize(gen: &Generator, z: &Tensor, pose: &Pose, seed: u64) -> Result<RenderOutput> {
    let w = gen.latent(z, pose)?;
    gen.render(&w, pose, seed)
}

impl Parameterized for Generator {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.mapper.named_params();
        out.extend(self.embedder.named_params());
        out.extend(self.decoder.named_params());
        if let Some(u) = &self.upsampler {
            out.extend(u.named_params());
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.mapper.named_params_mut();
        out.extend(self.embedder.named_params_mut());
        out.extend(self.decoder.named_params_mut());
        if let Some(u) = &mut self.upsampler {
            out.extend(u.named_params_mut());
        }
        out
    }
}
