//! Acceptance criteria 1–9. Runs as a plain binary so each criterion prints
//! one PASS/FAIL line with its runtime; exits non-zero if any fails.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use carver_core::autodiff::{
    apply_primitive, gradcheck, gradcheck_many, GatherPlan, Primitive, SourceLayout, DEFAULT_EPS,
};
use carver_core::decoder::{Activation, Decoder, DecoderConfig, GeometryHead, Modulation};
use carver_core::embedder::{
    query_mpi, query_planes, query_voxel, Aggregation, AxisPair, EmbedderSpec, MpiPlanes, Plane,
    PlaneSet, VoxelGrid,
};
use carver_core::fit::{cast_view, eikonal_loss, fit_scene, FitConfig, SceneViews, ViewSpec};
use carver_core::geometry::{
    generate_rays, pose_from_angles, pose_to_angles, project, sample_angles, Intrinsics, PosePrior,
};
use carver_core::io::png::encode_png;
use carver_core::io::tensor_file::{write_tensor, Archive, DType, FormatError, StoredTensor};
use carver_core::mesh::field_mesh;
use carver_core::metrics::{
    depth_error, frechet_distance, identity_consistency, reprojection_error, DepthMap,
    FeatureStats, WarpView,
};
use carver_core::pipeline::ablation::ablation_rows;
use carver_core::pipeline::{
    checkpoint_from_bytes, checkpoint_to_bytes, synthesize, Generator, GeneratorConfig,
    MapperConfig, PosePriorConfig, RenderConfig, SPHERE_RADIUS,
};
use carver_core::renderer::{integrate, RenderOptions};
use carver_core::rng::{seeded, SeededRng};
use carver_core::scene::{Scene, SdfScene};
use carver_core::upsampler::{bilinear_resize, conv2d, StageConfig, Upsampler, UpsamplerConfig};
use carver_core::{Error, Parameterized, Tensor};

type ScalarCheck<'a> = Box<dyn Fn(&Tensor) -> carver_core::Result<Tensor> + 'a>;
type CorruptionCase = (
    &'static str,
    Result<Archive, FormatError>,
    fn(&FormatError) -> bool,
);
type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e<T>(r: carver_core::Result<T>) -> Result<T, String> {
    r.map_err(|err| err.to_string())
}

fn random_tensor(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Distance fields of the sphere scenes.
fn unit_ball_probes(rng: &mut SeededRng, n: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
        if p.iter().map(|v| v * v).sum::<f64>() > 0.01 {
            out.push(p);
        }
    }
    out
}

// 1. Quadrature exactness.

fn single_ray(t: &[f64], sigma: &[f64], far: f64) -> carver_core::Result<(f64, f64, Vec<f64>)> {
    let s = t.len();
    let values = Tensor::new(
        &[s, 3],
        (0..s * 3).map(|i| (i as f64 * 0.37).sin()).collect(),
    )?;
    let out = integrate(
        t,
        far,
        &Tensor::new(&[1, s], sigma.to_vec())?,
        &values,
        &RenderOptions::default(),
    )?;
    Ok((out.acc_alpha.item(), out.depth.item(), out.color.to_vec()))
}

fn quadrature() -> Outcome {
    let mut rng = seeded(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = rng.gen_range(1..=128);
        let near = rng.gen_range(0.05..2.0);
        let far = near + rng.gen_range(0.01..5.0);
        let sigma = rng.gen_range(0.0..40.0);
        let mut t: Vec<f64> = (0..s).map(|_| rng.gen_range(near..far)).collect();
        t.sort_by(f64::total_cmp);
        let len = far - t[0];
        let (acc, _, _) = e(single_ray(&t, &vec![sigma; s], far))?;
        worst = worst.max((acc - (1.0 - (-sigma * len).exp())).abs());
    }
    ensure(
        worst < 1e-12,
        format!("homogeneous alpha error {:e}", worst),
    )?;

    // Splitting a segment leaves a piecewise-constant medium unchanged: the
    // inserted sample carries the segment's density, which is zero inside
    // empty segments.
    let mut split_worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = rng.gen_range(2..40);
        let mut t = vec![rng.gen_range(0.5..1.5)];
        for _ in 1..s {
            t.push(t.last().unwrap() + rng.gen_range(0.01..0.4));
        }
        let far = t[s - 1] + rng.gen_range(0.01..0.4);
        let sigma: Vec<f64> = (0..s)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen_range(0.0..30.0)
                }
            })
            .collect();
        let (acc, depth, _) = e(single_ray(&t, &sigma, far))?;
        let i = rng.gen_range(0..s);
        let next = if i + 1 < s { t[i + 1] } else { far };
        let mut t2 = t.clone();
        let mut s2 = sigma.clone();
        t2.insert(i + 1, t[i] + rng.gen_range(0.05..0.95) * (next - t[i]));
        s2.insert(i + 1, sigma[i]);
        let (acc2, depth2, _) = e(single_ray(&t2, &s2, far))?;
        split_worst = split_worst.max((acc2 - acc).abs());
        if sigma[i] == 0.0 {
            split_worst = split_worst.max((depth2 - depth).abs());
        }
    }
    ensure(
        split_worst < 1e-9,
        format!("refinement drift {:e}", split_worst),
    )?;
    Ok(format!(
        "max alpha error {:.1e}, refinement drift {:.1e}",
        worst, split_worst
    ))
}

// 2. Interpolation oracles.

fn hat_weights(coord: f64, r: usize) -> Vec<f64> {
    let u = (coord.clamp(-1.0, 1.0) + 1.0) * 0.5 * (r - 1) as f64;
    (0..r)
        .map(|i| (1.0 - (u - i as f64).abs()).max(0.0))
        .collect()
}

fn naive_plane(data: &[f64], offset: usize, r: usize, a: f64, b: f64) -> f64 {
    let (wa, wb) = (hat_weights(a, r), hat_weights(b, r));
    let mut acc = 0.0;
    for i in 0..r {
        for j in 0..r {
            acc += wa[i] * wb[j] * data[offset + i * r + j];
        }
    }
    acc
}

fn interpolation() -> Outcome {
    let mut rng = seeded(202);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (c, r) = (rng.gen_range(1..=4), rng.gen_range(2..=7));
        let pts: Vec<[f64; 3]> = (0..10_000)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1.2..1.2)))
            .collect();

        let grid = e(VoxelGrid::new(random_tensor(
            &mut rng,
            &[c, r, r, r],
            -1.0,
            1.0,
        )))?;
        let got = e(query_voxel(&grid, &pts))?;
        let d = grid.features.data();
        for (n, p) in pts.iter().enumerate() {
            let (wx, wy, wz) = (
                hat_weights(p[0], r),
                hat_weights(p[1], r),
                hat_weights(p[2], r),
            );
            for ch in 0..c {
                let mut want = 0.0;
                for i in 0..r {
                    for j in 0..r {
                        for k in 0..r {
                            want += wx[i] * wy[j] * wz[k] * d[((ch * r + i) * r + j) * r + k];
                        }
                    }
                }
                worst = worst.max((got.data()[n * c + ch] - want).abs());
            }
        }

        let axes = [AxisPair::Xy, AxisPair::Xz, AxisPair::Zy];
        let planes: Vec<Plane> = axes
            .iter()
            .map(|&axes| Plane {
                axes,
                features: random_tensor(&mut rng, &[c, r, r], -1.0, 1.0),
            })
            .collect();
        let agg =
            [Aggregation::Sum, Aggregation::Concat, Aggregation::Product][rng.gen_range(0..3)];
        let set = e(PlaneSet::new(planes.clone(), agg))?;
        let got = e(query_planes(&set, &pts))?;
        let width = if agg == Aggregation::Concat { 3 * c } else { c };
        for (n, p) in pts.iter().enumerate() {
            let per: Vec<Vec<f64>> = planes
                .iter()
                .map(|pl| {
                    let (a, b) = match pl.axes {
                        AxisPair::Xy => (p[0], p[1]),
                        AxisPair::Xz => (p[0], p[2]),
                        AxisPair::Zy => (p[2], p[1]),
                    };
                    (0..c)
                        .map(|ch| naive_plane(pl.features.data(), ch * r * r, r, a, b))
                        .collect()
                })
                .collect();
            let want: Vec<f64> = match agg {
                Aggregation::Concat => per.concat(),
                Aggregation::Sum => (0..c).map(|ch| per.iter().map(|v| v[ch]).sum()).collect(),
                Aggregation::Product => (0..c)
                    .map(|ch| per.iter().map(|v| v[ch]).product())
                    .collect(),
            };
            for (k, w) in want.iter().enumerate() {
                worst = worst.max((got.data()[n * width + k] - w).abs());
            }
        }

        let k = rng.gen_range(2..=5);
        let mut depths: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        depths.sort_by(f64::total_cmp);
        let mpi = e(MpiPlanes::new(
            depths.clone(),
            random_tensor(&mut rng, &[c, k, r, r], -1.0, 1.0),
        ))?;
        let (got, index) = e(query_mpi(&mpi, &pts))?;
        for (n, p) in pts.iter().enumerate() {
            // Nearest plane by |z − depth|, ties to the lower index.
            let mut best = 0;
            for (j, z) in depths.iter().enumerate() {
                if (p[2] - z).abs() < (p[2] - depths[best]).abs() {
                    best = j;
                }
            }
            ensure(
                index[n] == best,
                format!("point {} assigned to plane {} not {}", n, index[n], best),
            )?;
            for ch in 0..c {
                let want = naive_plane(mpi.features.data(), (ch * k + best) * r * r, r, p[0], p[1]);
                worst = worst.max((got.data()[n * c + ch] - want).abs());
            }
        }
    }
    ensure(worst < 1e-12, format!("max deviation {:e}", worst))?;
    Ok(format!(
        "voxel/plane/MPI max deviation {:.1e} over 20 grids × 10⁴ points",
        worst
    ))
}

// 3. Gradient suite.

fn away_from_kink(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(1e-3..2.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn small_generator_config(embedder: EmbedderSpec, resolution: usize) -> GeneratorConfig {
    let mut decoder = DecoderConfig::new(0, 2, 8, 3);
    decoder.modulation = Modulation::Film;
    GeneratorConfig {
        pose_prior: PosePriorConfig::default(),
        embedder,
        decoder,
        renderer: RenderConfig {
            resolution,
            n_coarse: 8,
            n_fine: 0,
            ..Default::default()
        },
        upsampler: None,
        mapper: MapperConfig {
            z_dim: 8,
            w_dim: 8,
            depth: 2,
            pose_conditioned: false,
        },
        fit: Default::default(),
        mesh: Default::default(),
    }
}

/// Gradcheck of a probe readout of the synthesized image and depth with
/// respect to the latent code and every embedder tensor.
fn synthesize_gradcheck(cfg: &GeneratorConfig, seed: u64) -> carver_core::Result<f64> {
    let gen = Generator::init_unshaped(cfg, &mut seeded(seed))?;
    let (z, pose) = gen.sample_inputs(seed)?;
    let mut inputs = vec![z];
    inputs.extend(gen.embedder.params());
    let first = synthesize(&gen, &inputs[0], &pose, 0)?;
    let probe = random_tensor(&mut seeded(seed + 100), first.color.shape(), -1.0, 1.0);
    gradcheck_many(
        |p| {
            let mut g = gen.clone();
            g.embedder.set_params(&p[1..])?;
            let out = synthesize(&g, &p[0], &pose, 0)?;
            out.color
                .mul(&probe)?
                .sum()
                .add(&out.depth.sum().scale(0.1))
        },
        &inputs,
        1e-6,
    )
}

fn gradients() -> Outcome {
    let mut rng = seeded(303);
    let mut worst: f64 = 0.0;
    let mut track = |name: &str, err: f64, bound: f64| -> Result<(), String> {
        worst = worst.max(err);
        ensure(err < bound, format!("{}: {:e}", name, err))
    };

    let unary: Vec<(Primitive, bool, bool)> = vec![
        (Primitive::Sin, false, false),
        (Primitive::Cos, false, false),
        (Primitive::Exp, false, false),
        (Primitive::Log, true, false),
        (Primitive::Sigmoid, false, false),
        (Primitive::Relu, false, true),
        (Primitive::LeakyRelu(0.2), false, true),
        (Primitive::Softplus, false, false),
        (Primitive::Sqrt, true, false),
        (Primitive::Pow(3.0), false, false),
        (Primitive::Pow(1.5), true, false),
        (Primitive::ClampMin(0.0), false, true),
        (Primitive::Tanh, false, false),
        (Primitive::Sum, false, false),
        (Primitive::Mean, false, false),
    ];
    for (prim, positive, kink) in &unary {
        for _ in 0..20 {
            let vals: Vec<f64> = if *positive {
                (0..4).map(|_| rng.gen_range(0.1..3.0)).collect()
            } else if *kink {
                away_from_kink(&mut rng, 4)
            } else {
                (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()
            };
            let x = Tensor::vector(&vals);
            let w = random_tensor(&mut rng, &[4], -1.0, 1.0);
            let err = e(gradcheck(
                |x| apply_primitive(prim, &[x])?.mul(&w).map(|t| t.sum()),
                &x,
                DEFAULT_EPS,
            ))?;
            track(&format!("{:?}", prim), err, 1e-5)?;
        }
    }
    for prim in [
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Div,
        Primitive::MatMul,
    ] {
        for _ in 0..20 {
            let (a, b) = match prim {
                Primitive::MatMul => (
                    random_tensor(&mut rng, &[3, 2], -1.0, 1.0),
                    random_tensor(&mut rng, &[2, 4], -1.0, 1.0),
                ),
                Primitive::Div => (
                    random_tensor(&mut rng, &[2, 3], -1.0, 1.0),
                    random_tensor(&mut rng, &[3], 0.5, 2.0),
                ),
                _ => (
                    random_tensor(&mut rng, &[2, 3], -1.0, 1.0),
                    random_tensor(&mut rng, &[3], -1.0, 1.0),
                ),
            };
            let ea = e(gradcheck(
                |a| Ok(apply_primitive(&prim, &[a, &b])?.sin().sum()),
                &a,
                DEFAULT_EPS,
            ))?;
            let eb = e(gradcheck(
                |b| Ok(apply_primitive(&prim, &[&a, b])?.sin().sum()),
                &b,
                DEFAULT_EPS,
            ))?;
            track(&format!("{:?}", prim), ea.max(eb), 1e-5)?;
        }
    }
    let x = random_tensor(&mut rng, &[2, 3], -1.0, 1.0);
    let other = random_tensor(&mut rng, &[2, 2], -1.0, 1.0);
    let w6 = random_tensor(&mut rng, &[3, 2, 3], -1.0, 1.0);
    let shape_checks: Vec<(&str, ScalarCheck)> = vec![
        (
            "broadcast",
            Box::new(|x: &Tensor| {
                Ok(apply_primitive(&Primitive::Broadcast(vec![3, 2, 3]), &[x])?
                    .mul(&w6)?
                    .sum())
            }),
        ),
        (
            "reshape",
            Box::new(|x: &Tensor| {
                Ok(apply_primitive(&Primitive::Reshape(vec![3, 2]), &[x])?
                    .exp()
                    .matmul(&other)?
                    .sum())
            }),
        ),
        (
            "concat",
            Box::new(|x: &Tensor| {
                Ok(apply_primitive(&Primitive::ConcatChannels, &[x, &other])?
                    .pow(2.0)?
                    .sum())
            }),
        ),
        (
            "cumsum",
            Box::new(|x: &Tensor| Ok(x.cumsum_exclusive().sin().sum())),
        ),
        (
            "sum_axis",
            Box::new(|x: &Tensor| Ok(x.sum_axis(1)?.sin().sum())),
        ),
        (
            "slice",
            Box::new(|x: &Tensor| Ok(x.slice_last(1, 3)?.exp().sum())),
        ),
        (
            "laplace",
            Box::new(|x: &Tensor| Ok(x.laplace_cdf(0.3).sin().sum())),
        ),
        ("abs", Box::new(|x: &Tensor| Ok(x.abs().sin().sum()))),
    ];
    for (name, f) in &shape_checks {
        track(name, e(gradcheck(f, &x, DEFAULT_EPS))?, 1e-5)?;
    }
    let plan = Arc::new(GatherPlan {
        rows: 2,
        taps: 2,
        index: vec![0, 1, 1, 0],
        weight: vec![0.25, 0.75, 1.0, -0.5],
        layout: SourceLayout::ChannelsLast { channels: 3 },
        out_shape: vec![2, 3],
    });
    track(
        "gather",
        e(gradcheck(
            |x| Ok(x.gather(Arc::clone(&plan))?.sin().sum()),
            &x,
            DEFAULT_EPS,
        ))?,
        1e-5,
    )?;

    for act in [
        Activation::Relu,
        Activation::leaky(),
        Activation::Softplus { beta: 3.0 },
        Activation::Siren { omega0: 2.0 },
    ] {
        for modulation in [Modulation::None, Modulation::Film] {
            let film = modulation == Modulation::Film;
            let cfg = DecoderConfig {
                activation: act,
                modulation,
                latent_dim: if film { 3 } else { 0 },
                view_dependent: film,
                view_freq: 1,
                ..DecoderConfig::new(4, 3, 6, 3)
            };
            let mut dec = e(Decoder::init(&cfg, &mut rng))?;
            dec.config.activation = act;
            let x = random_tensor(&mut rng, &[5, 4], -1.0, 1.0);
            let dirs: Vec<[f64; 3]> = (0..5)
                .map(|_| [rng.gen_range(-1.0..1.0), 0.3, -0.8])
                .collect();
            let mut params = dec.params();
            let n = params.len();
            if film {
                params.push(random_tensor(&mut rng, &[3], -1.0, 1.0));
            }
            let err = e(gradcheck_many(
                |p| {
                    let mut d = dec.clone();
                    d.set_params(&p[..n])?;
                    let out = d.decode(&x, film.then(|| &p[n]), Some(&dirs))?;
                    out.color
                        .tanh()
                        .sum()
                        .add(&out.geometry.mul(&out.geometry)?.sum())
                },
                &params,
                1e-6,
            ))?;
            track(&format!("decoder {:?} {:?}", act, modulation), err, 1e-5)?;
        }
    }

    let pts: Vec<[f64; 3]> = (0..12)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-1.1..1.1)))
        .collect();
    let vox = random_tensor(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
    let err = e(gradcheck(
        |f| Ok(query_voxel(&VoxelGrid::new(f.clone())?, &pts)?.tanh().sum()),
        &vox,
        1e-6,
    ))?;
    track("voxel features", err, 1e-5)?;
    let plane = random_tensor(&mut rng, &[2, 4, 4], -1.0, 1.0);
    let err = e(gradcheck(
        |f| {
            let set = PlaneSet::new(
                vec![
                    Plane {
                        axes: AxisPair::Xy,
                        features: f.clone(),
                    },
                    Plane {
                        axes: AxisPair::Zy,
                        features: f.scale(0.5),
                    },
                ],
                Aggregation::Product,
            )?;
            Ok(query_planes(&set, &pts)?.sum())
        },
        &plane,
        1e-6,
    ))?;
    track("plane features", err, 1e-5)?;
    let stack = random_tensor(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    let err = e(gradcheck(
        |f| {
            Ok(
                query_mpi(&MpiPlanes::new(vec![-0.5, 0.0, 0.5], f.clone())?, &pts)?
                    .0
                    .tanh()
                    .sum(),
            )
        },
        &stack,
        1e-6,
    ))?;
    track("mpi features", err, 1e-5)?;

    let img = random_tensor(&mut rng, &[4, 4, 2], -1.0, 1.0);
    let weight = random_tensor(&mut rng, &[18, 3], -1.0, 1.0);
    let bias = random_tensor(&mut rng, &[3], -1.0, 1.0);
    track(
        "conv weight",
        e(gradcheck(
            |wt| Ok(conv2d(&img, wt, &bias, 3)?.tanh().sum()),
            &weight,
            1e-6,
        ))?,
        1e-5,
    )?;
    track(
        "conv input",
        e(gradcheck(
            |x| Ok(conv2d(x, &weight, &bias, 3)?.tanh().sum()),
            &img,
            1e-6,
        ))?,
        1e-5,
    )?;
    track(
        "bilinear",
        e(gradcheck(
            |x| Ok(bilinear_resize(x, 7, 5)?.tanh().sum()),
            &img,
            1e-6,
        ))?,
        1e-5,
    )?;
    let up_cfg = UpsamplerConfig {
        in_channels: 2,
        stages: vec![
            StageConfig {
                kernel: 3,
                out_channels: 3,
            },
            StageConfig {
                kernel: 1,
                out_channels: 2,
            },
        ],
        modulation: Modulation::Film,
        latent_dim: 2,
    };
    let mut up = e(Upsampler::init(&up_cfg, &mut rng))?;
    let perturbed: Vec<Tensor> = up
        .params()
        .iter()
        .map(|t| {
            t.with_values(
                t.data()
                    .iter()
                    .map(|v| v + rng.gen_range(-0.3..0.3))
                    .collect(),
            )
            .unwrap()
        })
        .collect();
    e(up.set_params(&perturbed))?;
    let small = random_tensor(&mut rng, &[2, 2, 2], -1.0, 1.0);
    let mut params = up.params();
    params.push(random_tensor(&mut rng, &[2], -1.0, 1.0));
    let err = e(gradcheck_many(
        |p| {
            let mut u = up.clone();
            let n = p.len() - 1;
            u.set_params(&p[..n])?;
            Ok(u.forward(&small, Some(&p[n]))?.image.sum())
        },
        &params,
        1e-6,
    ))?;
    track("modulated upsampler", err, 1e-5)?;

    let mut density = small_generator_config(EmbedderSpec::voxel(3, 2), 4);
    density.decoder.activation = Activation::softplus();
    let pipeline_a = e(synthesize_gradcheck(&density, 1))?;
    let mut sdf = small_generator_config(EmbedderSpec::triplane(3, 2), 4);
    sdf.decoder.out_color_dim = 4;
    sdf.decoder.geometry_head = GeometryHead::Sdf;
    sdf.decoder.activation = Activation::Siren { omega0: 2.0 };
    sdf.mapper.pose_conditioned = true;
    sdf.upsampler = Some(UpsamplerConfig {
        in_channels: 0,
        stages: vec![StageConfig {
            kernel: 3,
            out_channels: 3,
        }],
        modulation: Modulation::Film,
        latent_dim: 0,
    });
    let pipeline_b = e(synthesize_gradcheck(&sdf, 2))?;
    let primitives = worst;
    ensure(
        pipeline_a < 1e-4,
        format!("density pipeline at 4×4: {:e}", pipeline_a),
    )?;
    ensure(
        pipeline_b < 1e-4,
        format!("sdf + upsampler pipeline at 4×4: {:e}", pipeline_b),
    )?;
    Ok(format!(
        "components ≤ {:.1e}; 4×4 pipelines {:.1e} (density), {:.1e} (sdf + upsampler)",
        primitives, pipeline_a, pipeline_b
    ))
}

// 4. Geometry round trips.

fn geometry_round_trips() -> Outcome {
    let mut rng = seeded(404);
    let mut pixel_worst: f64 = 0.0;
    for _ in 0..50 {
        let (w, h) = (rng.gen_range(4..40), rng.gen_range(4..40));
        let k = e(Intrinsics::new(
            rng.gen_range(10.0..80.0),
            rng.gen_range(10.0..80.0),
            rng.gen_range(0.3..0.7) * w as f64,
            rng.gen_range(0.3..0.7) * h as f64,
            w,
            h,
        ))?;
        let look_at = [
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        ];
        let pose = e(pose_from_angles(
            rng.gen_range(0.2..2.9),
            rng.gen_range(-PI..PI),
            rng.gen_range(1.0..5.0),
            look_at,
        ))?;
        let rays = e(generate_rays(&k, &pose, 0.1, 10.0))?;
        for (i, (o, d)) in rays.origins.iter().zip(&rays.directions).enumerate() {
            let t = rng.gen_range(0.1..10.0);
            let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
            let (u, v, _) = project(&k, &pose, p).ok_or("ray point projected behind the camera")?;
            let (pu, pv) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            pixel_worst = pixel_worst.max((u - pu).abs()).max((v - pv).abs());
        }
    }
    ensure(
        pixel_worst < 1e-6,
        format!("pixel round trip {:e} px", pixel_worst),
    )?;

    let mut angle_worst: f64 = 0.0;
    for _ in 0..10_000 {
        let pitch = rng.gen_range(0.01..PI - 0.01);
        let yaw = rng.gen_range(-PI + 1e-6..PI);
        let look_at = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let pose = e(pose_from_angles(
            pitch,
            yaw,
            rng.gen_range(0.5..5.0),
            look_at,
        ))?;
        let (p, y) = e(pose_to_angles(&pose, look_at))?;
        let dy = (y - yaw + PI).rem_euclid(2.0 * PI) - PI;
        angle_worst = angle_worst.max((p - pitch).abs()).max(dy.abs());
    }
    ensure(
        angle_worst < 1e-9,
        format!("angle round trip {:e}", angle_worst),
    )?;

    let n = 100_000;
    let prior = PosePrior::accurate(2.7);
    let mut sums = (0.0, 0.0);
    let mut prior_rng = seeded(405);
    for _ in 0..n {
        let (p, y) = e(sample_angles(&prior, &mut prior_rng))?;
        sums.0 += p;
        sums.1 += y;
    }
    let (mp, my) = (sums.0 / n as f64, sums.1 / n as f64);
    let (bp, by) = (
        4.0 * 0.155 / (n as f64).sqrt(),
        4.0 * 0.3 / (n as f64).sqrt(),
    );
    ensure(
        (mp - FRAC_PI_2).abs() < bp,
        format!("pitch mean {} off by more than {}", mp, bp),
    )?;
    ensure(
        (my - FRAC_PI_2).abs() < by,
        format!("yaw mean {} off by more than {}", my, by),
    )?;
    Ok(format!(
        "pixel {:.1e} px, angles {:.1e}, prior means within {:.2}σ/{:.2}σ of the bound",
        pixel_worst,
        angle_worst,
        (mp - FRAC_PI_2).abs() / bp * 4.0,
        (my - FRAC_PI_2).abs() / by * 4.0
    ))
}

// 5. Inverse rendering.

fn sphere_fit_config(embedder: EmbedderSpec, stop_psnr: f64) -> GeneratorConfig {
    let mut decoder = DecoderConfig::new(0, 2, 32, 3);
    decoder.modulation = Modulation::Film;
    GeneratorConfig {
        pose_prior: PosePriorConfig::default(),
        embedder,
        decoder,
        renderer: RenderConfig {
            resolution: 64,
            n_coarse: 32,
            n_fine: 0,
            ..Default::default()
        },
        upsampler: None,
        mapper: MapperConfig {
            z_dim: 8,
            w_dim: 8,
            depth: 2,
            pose_conditioned: false,
        },
        fit: FitConfig {
            iterations: 3000,
            rays_per_batch: 512,
            eval_every: 50,
            n_views: 20,
            stop_psnr: Some(stop_psnr),
            ..Default::default()
        },
        mesh: Default::default(),
    }
}

fn fit_sphere(cfg: &GeneratorConfig) -> Result<(f64, usize), String> {
    let cfg = e(cfg.resolve())?;
    let views = e(SceneViews::synthetic(
        &Scene::sphere(cfg.fit.scene_scale),
        &ViewSpec::for_generator(&cfg),
    ))?;
    ensure(
        views.views.len() == 20 && views.views[0].intrinsics.width == 64,
        "capture is not 20 views at 64×64",
    )?;
    let mut gen = e(Generator::new(&cfg, 0))?;
    let report = e(fit_scene(&mut gen, &views, &cfg.fit))?;
    let psnr = report.final_psnr().ok_or("no held-out PSNR recorded")?;
    Ok((psnr, report.records.len()))
}

fn inverse_rendering() -> Outcome {
    let (voxel, voxel_its) = fit_sphere(&sphere_fit_config(EmbedderSpec::voxel(32, 8), 25.0))?;
    ensure(
        voxel >= 25.0,
        format!("voxel reached {:.2} dB in {} iterations", voxel, voxel_its),
    )?;
    let (tri, tri_its) = fit_sphere(&sphere_fit_config(EmbedderSpec::triplane(32, 8), 22.0))?;
    ensure(
        tri >= 22.0,
        format!("tri-plane reached {:.2} dB in {} iterations", tri, tri_its),
    )?;
    Ok(format!(
        "voxel {:.2} dB after {} iterations, tri-plane {:.2} dB after {}",
        voxel, voxel_its, tri, tri_its
    ))
}

// 6. SDF path.

fn sdf_path() -> Outcome {
    let row = e(ablation_rows(16, 0))?
        .into_iter()
        .find(|r| r.label == "triplane/sdf")
        .ok_or("no triplane/sdf ablation row")?;
    let mut gen = e(Generator::init_unshaped(
        &e(row.config.resolve())?,
        &mut seeded(0),
    ))?;
    let init = e(gen.sphere_init(SPHERE_RADIUS, &mut seeded(1)))?;
    ensure(
        init.eikonal < 0.05,
        format!("initial eikonal loss {}", init.eikonal),
    )?;

    let mut rng = seeded(606);
    let probes = unit_ball_probes(&mut rng, 4096);
    let exact = e(eikonal_loss(&SdfScene(Scene::sphere(0.6)), &probes, 1e-3))?.item();
    ensure(exact < 1e-6, format!("analytic eikonal loss {:e}", exact))?;

    let mut cfg = sphere_fit_config(EmbedderSpec::triplane(32, 8), f64::INFINITY);
    cfg.decoder.geometry_head = GeometryHead::Sdf;
    cfg.renderer.options.sdf_beta = 0.1;
    cfg.fit.stop_psnr = None;
    cfg.fit.iterations = 1500;
    cfg.fit.eval_every = 500;
    cfg.fit.sdf_beta_final = Some(0.005);
    cfg.fit.pitch_spread = 1.2;
    cfg.fit.lambda_eikonal = 0.1;
    cfg.fit.embedder_lr = 1e-3;
    cfg.fit.scene_scale = 0.6;
    let cfg = e(cfg.resolve())?;
    let views = e(SceneViews::synthetic(
        &Scene::sphere(cfg.fit.scene_scale),
        &ViewSpec::for_generator(&cfg),
    ))?;
    let mut gen = e(Generator::new(&cfg, 0))?;
    let report = e(fit_scene(&mut gen, &views, &cfg.fit))?;
    let z = e(gen.sample_inputs(cfg.fit.seed))?.0;
    let w = e(gen.latent(&z, &views.views[0].pose))?;
    let res = 64;
    let mesh = e(field_mesh(&gen.field(&w), res, 0.0))?;
    ensure(
        !mesh.is_empty(),
        "fitted field has no zero level set in the cube",
    )?;
    let cell = 2.0 / (res - 1) as f64;
    let worst = mesh
        .vertices
        .iter()
        .map(|v| ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 0.6).abs())
        .fold(0.0, f64::max);
    ensure(
        worst <= 2.0 * cell,
        format!(
            "vertex {:.4} from the radius (bound {:.4})",
            worst,
            2.0 * cell
        ),
    )?;
    Ok(format!(
        "init eikonal {:.4}, analytic eikonal {:.1e}, {} vertices within {:.2} cells (PSNR {:.1} dB)",
        init.eikonal,
        exact,
        mesh.vertices.len(),
        worst / cell,
        report.final_psnr().unwrap_or(f64::NAN)
    ))
}

// 7. Metric closed forms.

fn random_spd(rng: &mut SeededRng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

fn metric_closed_forms() -> Outcome {
    let mut rng = seeded(707);
    let mut frechet_worst: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.gen_range(1..12);
        let cov = random_spd(&mut rng, d);
        let (ma, mb) = (
            DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0)),
            DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0)),
        );
        let fd = e(frechet_distance(
            &e(FeatureStats::new(ma.clone(), cov.clone(), 100))?,
            &e(FeatureStats::new(mb.clone(), cov, 100))?,
        ))?;
        frechet_worst = frechet_worst.max((fd - (ma - mb).norm_squared()).abs());

        let (m1, m2, s1, s2) = (
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(0.1..3.0),
            rng.gen_range(0.1..3.0),
        );
        let one = |m: f64, s: f64| {
            FeatureStats::new(
                DVector::from_element(1, m),
                DMatrix::from_element(1, 1, s * s),
                100,
            )
        };
        let fd = e(frechet_distance(&e(one(m1, s1))?, &e(one(m2, s2))?))?;
        frechet_worst = frechet_worst.max((fd - ((m1 - m2).powi(2) + (s1 - s2).powi(2))).abs());
    }
    ensure(
        frechet_worst < 1e-8,
        format!("Fréchet closed forms off by {:e}", frechet_worst),
    )?;

    let mut affine_worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(5..200);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..5.0)).collect();
        let p: Vec<f64> = r.iter().map(|d| d + rng.gen_range(-0.3..0.3)).collect();
        let map =
            |v: &[f64]| DepthMap::from_tensor(&Tensor::new(&[1, v.len()], v.to_vec()).unwrap());
        let base = e(depth_error(&e(map(&r))?, &e(map(&p))?))?;
        let (a, b, c) = (
            rng.gen_range(0.01..100.0),
            rng.gen_range(0.0..50.0),
            rng.gen_range(0.01..10.0),
        );
        let pa: Vec<f64> = p.iter().map(|d| a * d + b).collect();
        let ra: Vec<f64> = r.iter().map(|d| c * d + b).collect();
        affine_worst = affine_worst
            .max((e(depth_error(&e(map(&r))?, &e(map(&pa))?))? - base).abs())
            .max((e(depth_error(&e(map(&ra))?, &e(map(&p))?))? - base).abs());
    }
    ensure(
        affine_worst < 1e-12,
        format!("depth error affine drift {:e}", affine_worst),
    )?;

    let same = vec![
        (vec![1.0, 2.0], vec![1.0, 2.0]),
        (vec![-3.0, 0.5], vec![-3.0, 0.5]),
    ];
    ensure(
        e(identity_consistency(&same))? == 1.0,
        "identical embeddings must score 1",
    )?;
    ensure(
        e(identity_consistency(&[(vec![1.0, 0.0], vec![0.0, 1.0])]))? == 0.0,
        "orthogonal embeddings must score 0",
    )?;
    ensure(
        (e(identity_consistency(&[(vec![1.0, 0.0], vec![1.0, 1.0])]))? - FRAC_1_SQRT_2).abs()
            < 1e-15,
        "45° embeddings must score 1/√2",
    )?;
    ensure(
        matches!(
            identity_consistency(&[(vec![0.0, 0.0], vec![1.0, 0.0])]),
            Err(Error::Domain { .. })
        ),
        "zero embedding must be a domain error",
    )?;

    let view = |yaw: f64| -> Result<_, String> {
        let k = e(Intrinsics::from_fov(40.0, 64, 64))?;
        let pose = e(pose_from_angles(
            FRAC_PI_2 - 0.2,
            yaw.to_radians(),
            3.0,
            [0.0; 3],
        ))?;
        let v = e(cast_view(&Scene::sphere(0.5), &k, pose, 1.5, 4.5, 1.0))?;
        let hits = v.depth.clone().ok_or("cast view has no depth")?;
        let depth = e(DepthMap::new(
            64,
            64,
            hits.iter().map(|d| d.unwrap_or(0.0)).collect(),
            hits.iter().map(Option::is_some).collect(),
        ))?;
        Ok((v, depth))
    };
    let (a, da) = view(0.0)?;
    let (b, db) = view(5.0)?;
    let wa = WarpView {
        image: &a.image,
        depth: &da,
        pose: &a.pose,
        intrinsics: &a.intrinsics,
    };
    let wb = WarpView {
        image: &b.image,
        depth: &db,
        pose: &b.pose,
        intrinsics: &b.intrinsics,
    };
    let ab = e(reprojection_error(&wa, &wb))?;
    let ba = e(reprojection_error(&wb, &wa))?;
    ensure(ab < 0.01, format!("reprojection error {} at 5°", ab))?;
    ensure(
        ab.to_bits() == ba.to_bits(),
        format!("asymmetric reprojection error {} vs {}", ab, ba),
    )?;
    Ok(format!(
        "Fréchet {:.1e}, depth affine {:.1e}, RE at 5° {:.2e} (symmetric)",
        frechet_worst, affine_worst, ab
    ))
}

// 8. Ablation matrix.

fn ablation_matrix() -> Outcome {
    let rows = e(ablation_rows(16, 0))?;
    let groups = [
        "embedder-combination",
        "plane-count",
        "decoder-depth",
        "activation",
        "geometry",
        "upsampler",
        "pose-prior",
    ];
    for g in groups {
        ensure(
            rows.iter().any(|r| r.group == g),
            format!("no rows for {}", g),
        )?;
    }
    for row in &rows {
        let label = format!("{}/{}", row.group, row.label);
        let cfg = row
            .config
            .resolve()
            .map_err(|err| format!("{}: {}", label, err))?;
        let gen = Generator::new(&cfg, 0).map_err(|err| format!("{}: {}", label, err))?;
        let (z, pose) = gen
            .sample_inputs(1)
            .map_err(|err| format!("{}: {}", label, err))?;
        let out = synthesize(&gen, &z, &pose, 2).map_err(|err| format!("{}: {}", label, err))?;
        ensure(
            out.color.shape() == [16, 16, 3],
            format!("{}: output {:?}", label, out.color.shape()),
        )?;
        ensure(
            out.color.is_finite() && out.depth.is_finite(),
            format!("{}: non-finite output", label),
        )?;
    }
    Ok(format!(
        "{} rows across {} ablation axes synthesize 16×16",
        rows.len(),
        groups.len()
    ))
}

// 9. Determinism and persistence.

fn fit_and_render(seed: u64) -> carver_core::Result<(Vec<Vec<u8>>, Vec<u8>)> {
    let mut cfg = small_generator_config(EmbedderSpec::voxel(8, 4), 16);
    cfg.renderer.n_fine = 4;
    cfg.fit = FitConfig {
        iterations: 20,
        rays_per_batch: 64,
        eval_every: 10,
        n_views: 4,
        seed,
        ..Default::default()
    };
    let cfg = cfg.resolve()?;
    let views = SceneViews::synthetic(&Scene::sphere(0.6), &ViewSpec::for_generator(&cfg))?;
    let mut gen = Generator::new(&cfg, seed)?;
    fit_scene(&mut gen, &views, &cfg.fit)?;
    let z = gen.sample_inputs(seed)?.0;
    let mut frames = Vec::new();
    for i in 0..4 {
        let pose = pose_from_angles(1.3, i as f64 * 1.5, 3.0, [0.0; 3])?;
        let out = synthesize(&gen, &z, &pose, seed)?;
        frames.push(encode_png(&out.color)?);
    }
    Ok((frames, checkpoint_to_bytes(&gen)?))
}

fn determinism() -> Outcome {
    let (frames_a, ckpt_a) = e(fit_and_render(5))?;
    let (frames_b, ckpt_b) = e(fit_and_render(5))?;
    ensure(frames_a == frames_b, "PNG bytes differ between runs")?;
    ensure(ckpt_a == ckpt_b, "checkpoints differ between runs")?;

    let loaded = e(checkpoint_from_bytes(&ckpt_a))?;
    ensure(
        e(checkpoint_to_bytes(&loaded))? == ckpt_a,
        "checkpoint re-encoding differs",
    )?;

    let dir = tempfile::tempdir().map_err(|err| err.to_string())?;
    let path = dir.path().join("depth.crvt");
    e(write_tensor(
        &path,
        &Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        DType::F32,
    ))?;
    let bytes = std::fs::read(&path).map_err(|err| err.to_string())?;
    let decode = |b: &[u8]| Archive::from_bytes(b);
    let mut bad_magic = bytes.clone();
    bad_magic[..4].copy_from_slice(b"CRVX");
    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    let mut bad_dtype = bytes.clone();
    bad_dtype[8] = 7;
    let cases: Vec<CorruptionCase> = vec![
        ("bad magic", decode(&bad_magic), |f| {
            matches!(f, FormatError::BadMagic)
        }),
        ("version", decode(&bad_version), |f| {
            matches!(f, FormatError::UnsupportedVersion(9))
        }),
        ("dtype", decode(&bad_dtype), |f| {
            matches!(f, FormatError::UnknownDtype(7))
        }),
        ("short header", decode(&bytes[..6]), |f| {
            matches!(f, FormatError::TruncatedHeader)
        }),
        ("short payload", decode(&bytes[..bytes.len() - 3]), |f| {
            matches!(f, FormatError::TruncatedPayload { .. })
        }),
    ];
    for (name, result, expected) in &cases {
        match result {
            Err(f) if expected(f) => {}
            other => return Err(format!("{}: {:?}", name, other)),
        }
    }
    let dup = Archive {
        tensors: vec![
            StoredTensor::from_tensor("a", &Tensor::zeros(&[1])),
            StoredTensor::from_tensor("a", &Tensor::zeros(&[1])),
        ],
        metadata: None,
    };
    ensure(
        matches!(dup.to_bytes(), Err(FormatError::DuplicateName(_))),
        "duplicate names must be rejected",
    )?;
    let mut stale = e(Archive::from_bytes(&ckpt_a).map_err(Error::from))?;
    stale.metadata = stale
        .metadata
        .map(|m| m.replacen("checkpoint_version = 1", "checkpoint_version = 2", 1));
    ensure(
        matches!(
            checkpoint_from_bytes(&stale.to_bytes().unwrap()),
            Err(Error::CheckpointVersion { found: 2, .. })
        ),
        "checkpoint version mismatch must be named",
    )?;
    Ok(format!(
        "{} PNGs and a {}-byte checkpoint identical across runs; {} corruption cases named",
        frames_a.len(),
        ckpt_a.len(),
        cases.len() + 2
    ))
}

struct Criterion {
    number: usize,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            number: 1,
            name: "quadrature exactness",
            budget: Duration::from_secs(5),
            run: quadrature,
        },
        Criterion {
            number: 2,
            name: "interpolation oracles",
            budget: Duration::from_secs(30),
            run: interpolation,
        },
        Criterion {
            number: 3,
            name: "gradient suite",
            budget: Duration::from_secs(300),
            run: gradients,
        },
        Criterion {
            number: 4,
            name: "geometry round trips",
            budget: Duration::from_secs(30),
            run: geometry_round_trips,
        },
        Criterion {
            number: 5,
            name: "inverse rendering",
            budget: Duration::from_secs(900),
            run: inverse_rendering,
        },
        Criterion {
            number: 6,
            name: "SDF path",
            budget: Duration::from_secs(1200),
            run: sdf_path,
        },
        Criterion {
            number: 7,
            name: "metric closed forms",
            budget: Duration::from_secs(60),
            run: metric_closed_forms,
        },
        Criterion {
            number: 8,
            name: "ablation matrix",
            budget: Duration::from_secs(300),
            run: ablation_matrix,
        },
        Criterion {
            number: 9,
            name: "determinism and persistence",
            budget: Duration::from_secs(1200),
            run: determinism,
        },
    ];
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| only.is_empty() || only.contains(&c.number))
    {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {}", msg))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= c.budget {
                Ok(detail)
            } else {
                Err(format!(
                    "{} but took {:.1}s of {}s",
                    detail,
                    elapsed.as_secs_f64(),
                    c.budget.as_secs()
                ))
            }
        });
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {} {:<28} {} {:>7.1}s  {}",
            c.number,
            c.name,
            status,
            elapsed.as_secs_f64(),
            detail
        );
    }
    if failed > 0 {
        println!("{} acceptance criteria failed", failed);
        std::process::exit(1);
    }
}
