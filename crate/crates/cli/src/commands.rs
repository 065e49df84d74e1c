use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use carver_core::autodiff::no_grad;
use carver_core::fit::{fit_scene_with, recipe_kind, SceneViews, ViewSpec};
use carver_core::geometry::{
    generate_rays, pose_from_angles, pose_to_angles, Intrinsics, Pose, PoseLabel,
};
use carver_core::io::tensor_file::{write_tensor, DType};
use carver_core::io::{read_pose_labels, write_obj, write_png, write_pose_labels};
use carver_core::mesh::field_mesh;
use carver_core::metrics::{
    evaluate_manifest, reprojection_error, CameraSpec, DepthMap, EvalManifest, Metric,
    MetricReport, SampleEntry, WarpView,
};
use carver_core::pipeline::{
    load_checkpoint, save_checkpoint, truncate, Generator, GeneratorConfig,
};
use carver_core::renderer::RenderOutput;
use carver_core::rng::{seeded, split};
use carver_core::scene::Scene;
use carver_core::Tensor;

use crate::cli::{Cli, Command, EvalArgs, FitArgs, MeshArgs, RenderArgs, SamplePosesArgs};
use crate::CliError;

type CmdResult = Result<(), CliError>;

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Fit(a) => fit(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::ExtractMesh(a) => extract_mesh(a),
        Command::SamplePoses(a) => sample_poses(a),
    }
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(e.into()))
}

fn fit(a: FitArgs) -> CmdResult {
    let mut cfg = GeneratorConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.fit.seed = seed;
    }
    if let Some(n) = a.iterations {
        cfg.fit.iterations = n;
    }
    let cfg = cfg.resolve()?;
    let views = match recipe_kind(&a.scene) {
        Some(kind) => SceneViews::synthetic(
            &Scene::new(kind).scaled(cfg.fit.scene_scale),
            &ViewSpec::for_generator(&cfg),
        )?,
        None if Path::new(&a.scene).is_file() => SceneViews::load(&a.scene)?,
        None => {
            return Err(CliError::Usage(format!(
                "scene {:?} is neither a recipe (sphere, two_boxes, noise_blob) nor a view archive",
                a.scene
            )))
        }
    };
    create_dir(&a.out)?;
    let ckpt = a.out.join("checkpoint.crvt");
    let mut gen = Generator::new(&cfg, cfg.fit.seed)?;
    let report = fit_scene_with(&mut gen, &views, &cfg.fit, Some(&ckpt))?;
    save_checkpoint(&gen, &ckpt)?;
    report.write_csv(a.out.join("fit.csv"))?;
    let last = report.records.last().map_or(0, |r| r.iteration);
    match report.final_psnr() {
        Some(p) => println!("fitted {} iterations; held-out PSNR {:.2} dB", last, p),
        None => println!("fitted {} iterations", last),
    }
    println!("wrote {}", ckpt.display());
    Ok(())
}

/// Renders `pose` with the checkpoint's resolution and `k` at that size.
fn render_view(
    gen: &Generator,
    w: &Tensor,
    pose: &Pose,
    k: &Intrinsics,
    seed: u64,
) -> Result<RenderOutput, CliError> {
    let (near, far) = gen.config.near_far();
    let rays = generate_rays(k, pose, near, far)?;
    let out = RenderOutput::from_rays(gen.render_rays(w, &rays, seed)?, k.height, k.width)?;
    Ok(gen.finish(out, w)?)
}

fn latent(
    gen: &Generator,
    z: &Tensor,
    pose: &Pose,
    truncation: Option<f64>,
) -> Result<Tensor, CliError> {
    let w = gen.latent(z, pose)?;
    Ok(match truncation {
        Some(psi) => truncate(&w, &gen.mapper.w_avg_tensor(), psi)?,
        None => w,
    })
}

fn render(a: RenderArgs) -> CmdResult {
    let gen = load_checkpoint(&a.checkpoint)?;
    let (z, _) = gen.sample_inputs(a.seed)?;
    let res = gen.config.renderer.resolution;
    let look_at = gen.config.pose_prior.look_at;
    let radius = gen.config.pose_prior.radius;
    let cameras: Vec<(Pose, Intrinsics)> = match (&a.pose, a.orbit) {
        (Some(path), _) => read_pose_labels(path)?
            .into_iter()
            .map(|l| Ok((l.pose, Intrinsics::from_normalized(l.intrinsics, res, res)?)))
            .collect::<Result<_, carver_core::Error>>()?,
        (None, Some(n)) if n >= 1 => {
            let k = gen.config.intrinsics()?;
            (0..n)
                .map(|i| {
                    Ok((
                        pose_from_angles(a.pitch, TAU * i as f64 / n as f64, radius, look_at)?,
                        k,
                    ))
                })
                .collect::<Result<_, carver_core::Error>>()?
        }
        _ => return Err(CliError::Usage("--orbit needs at least 1 frame".into())),
    };
    if cameras.is_empty() {
        return Err(CliError::Usage("pose file lists no cameras".into()));
    }
    create_dir(&a.out)?;
    let scale = gen.config.output_resolution() / res;
    let mut labels = Vec::new();
    let mut samples = Vec::new();
    for (i, (pose, k)) in cameras.iter().enumerate() {
        let w = latent(&gen, &z, pose, a.truncation)?;
        let out = no_grad(|| render_view(&gen, &w, pose, k, a.seed))?;
        let name = format!("frame_{:03}", i);
        write_png(a.out.join(format!("{}.png", name)), &out.color)?;
        let depth = DepthMap::from_render(&out.depth, &out.acc_alpha)?;
        write_tensor(
            a.out.join(format!("{}_depth.crvt", name)),
            &depth.to_tensor(),
            DType::F64,
        )?;
        labels.push(PoseLabel {
            pose: *pose,
            intrinsics: k.normalized(),
        });
        let angles = pose_to_angles(pose, look_at).ok();
        samples.push(SampleEntry {
            id: name.clone(),
            image: Some(PathBuf::from(format!("{}.png", name))),
            depth: Some(PathBuf::from(format!("{}_depth.crvt", name))),
            pose: angles.map(|(p, y)| [p, y]),
            estimated_pose: None,
            predicted_depth: None,
            embedding: None,
            neighbor: None,
        });
    }
    write_pose_labels(a.out.join("poses.txt"), &labels)?;
    if a.orbit.is_some() {
        // Adjacent orbit frames pair up for the reprojection metric.
        let n = samples.len();
        if n >= 2 {
            for (i, s) in samples.iter_mut().enumerate() {
                s.neighbor = Some(format!("frame_{:03}", (i + 1) % n));
            }
            if n == 2 {
                samples[1].neighbor = None;
            }
        }
        let manifest = EvalManifest {
            camera: Some(CameraSpec {
                fov_degrees: gen.config.renderer.fov_degrees,
                radius,
                look_at,
            }),
            features: None,
            samples,
        };
        fs::write(a.out.join("manifest.toml"), manifest.to_toml()?)
            .map_err(|e| CliError::Runtime(e.into()))?;
    }
    println!(
        "wrote {} frames at {}×{} to {}",
        cameras.len(),
        res * scale,
        res * scale,
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    let metrics = Metric::parse_list(&a.metrics).map_err(|e| CliError::Usage(e.to_string()))?;
    let report = if a.input.extension().is_some_and(|e| e == "toml") {
        let manifest = EvalManifest::load(&a.input)?;
        let base = a.input.parent().unwrap_or(Path::new("."));
        evaluate_manifest(&manifest, base, &metrics)?
    } else {
        if let Some(m) = metrics.iter().find(|m| **m != Metric::Re) {
            return Err(CliError::Usage(format!(
                "{} needs externally computed features or estimates; pass an eval manifest",
                m
            )));
        }
        checkpoint_reprojection(&a)?
    };
    print!("{}", report.to_table());
    if let Some(path) = &a.csv {
        fs::write(path, report.to_csv()).map_err(|e| CliError::Runtime(e.into()))?;
    }
    Ok(())
}

/// Mean reprojection error over `samples` generated scenes, each rendered
/// from its sampled pose and from a camera `baseline` degrees further in yaw.
fn checkpoint_reprojection(a: &EvalArgs) -> Result<MetricReport, CliError> {
    if a.samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let gen = load_checkpoint(&a.input)?;
    let look_at = gen.config.pose_prior.look_at;
    let k_out = Intrinsics::from_fov(
        gen.config.renderer.fov_degrees,
        gen.config.output_resolution(),
        gen.config.output_resolution(),
    )?;
    let k = gen.config.intrinsics()?;
    let mut streams = seeded(a.seed);
    let mut total = 0.0;
    for _ in 0..a.samples {
        let seed: u64 = streams.gen();
        let (z, pose) = gen.sample_inputs(seed)?;
        let (pitch, yaw) = pose_to_angles(&pose, look_at)?;
        let other = pose_from_angles(
            pitch,
            yaw + a.baseline.to_radians(),
            gen.config.pose_prior.radius,
            look_at,
        )?;
        let mut views = Vec::new();
        for p in [pose, other] {
            let w = gen.latent(&z, &p)?;
            let out = no_grad(|| render_view(&gen, &w, &p, &k, seed))?;
            let depth = DepthMap::from_render(&out.depth, &out.acc_alpha)?
                .resized(k_out.width, k_out.height);
            views.push((out.color, depth, p));
        }
        let [a_view, b_view] = [&views[0], &views[1]].map(|v| WarpView {
            image: &v.0,
            depth: &v.1,
            pose: &v.2,
            intrinsics: &k_out,
        });
        total += reprojection_error(&a_view, &b_view)?;
    }
    let mut report = MetricReport::default();
    report.push(Metric::Re, total / a.samples as f64, a.samples);
    Ok(report)
}

fn extract_mesh(a: MeshArgs) -> CmdResult {
    let gen = load_checkpoint(&a.checkpoint)?;
    let (z, pose) = gen.sample_inputs(a.seed)?;
    let w = gen.latent(&z, &pose)?;
    let res = a.res.unwrap_or(gen.config.mesh.resolution);
    if res < 8 {
        return Err(CliError::Usage("--res must be at least 8".into()));
    }
    let iso = a
        .iso
        .unwrap_or_else(|| gen.config.mesh.iso_for(gen.decoder.config.geometry_head));
    let mesh = field_mesh(&gen.field(&w), res, iso)?;
    if mesh.is_empty() {
        log::warn!(
            "no surface crossed iso level {}; writing an empty mesh",
            iso
        );
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_obj(&a.out, &mesh)?;
    println!(
        "wrote {} vertices and {} triangles to {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        a.out.display()
    );
    Ok(())
}

fn sample_poses(a: SamplePosesArgs) -> CmdResult {
    let cfg = GeneratorConfig::load(&a.config)?.resolve()?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let prior = cfg.pose_prior.to_prior(Some(base))?;
    let intrinsics = cfg.intrinsics()?.normalized();
    let mut rng = split(a.seed, 0);
    let labels = (0..a.n)
        .map(|_| {
            Ok(PoseLabel {
                pose: carver_core::geometry::sample_pose(&prior, &mut rng)?,
                intrinsics,
            })
        })
        .collect::<Result<Vec<_>, carver_core::Error>>()?;
    match &a.out {
        Some(path) => write_pose_labels(path, &labels)?,
        None => print!("{}", carver_core::io::format_pose_labels(&labels)),
    }
    Ok(())
}
