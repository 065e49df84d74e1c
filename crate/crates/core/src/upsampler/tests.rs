use rand::Rng;

use super::*;
use crate::autodiff::{gradcheck, gradcheck_many};
use crate::rng::seeded;

fn random_tensor(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_conv(img: &Tensor, weight: &Tensor, bias: &Tensor, k: usize) -> Vec<f64> {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let co = bias.numel();
    let r = (k / 2) as isize;
    let mut out = vec![0.0; h * w * co];
    for y in 0..h as isize {
        for x in 0..w as isize {
            for o in 0..co {
                let mut acc = bias.data()[o];
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (sy, sx) = (y + dy, x + dx);
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        let tap = ((dy + r) * k as isize + (dx + r)) as usize;
                        for ci in 0..c {
                            acc += img.at(&[sy as usize, sx as usize, ci])
                                * weight.data()[(tap * c + ci) * co + o];
                        }
                    }
                }
                out[((y as usize) * w + x as usize) * co + o] = acc;
            }
        }
    }
    out
}

#[test]
fn bilinear_examples() {
    let mut rng = seeded(1);
    let img = random_tensor(&mut rng, &[3, 4, 2]);
    assert_eq!(bilinear_upsample(&img, 1).unwrap().data(), img.data());

    let flat = Tensor::full(&[2, 3, 2], 0.4);
    assert!(bilinear_upsample(&flat, 3)
        .unwrap()
        .data()
        .iter()
        .all(|&v| (v - 0.4).abs() < 1e-15));

    let ramp = Tensor::new(&[2, 2, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let up = bilinear_resize(&ramp, 3, 3).unwrap();
    assert_eq!(up.at(&[1, 1, 0]), 1.5);
    assert_eq!(up.at(&[0, 2, 0]), 1.0);
    assert_eq!(up.at(&[2, 0, 0]), 2.0);
}

#[test]
fn conv_matches_naive_loops() {
    let mut rng = seeded(2);
    for k in [1, 3] {
        let img = random_tensor(&mut rng, &[5, 4, 3]);
        let weight = random_tensor(&mut rng, &[k * k * 3, 2]);
        let bias = random_tensor(&mut rng, &[2]);
        let got = conv2d(&img, &weight, &bias, k).unwrap();
        assert_eq!(got.shape(), &[5, 4, 2]);
        for (a, b) in got.data().iter().zip(naive_conv(&img, &weight, &bias, k)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_weights_give_zero_rgb() {
    let mut rng = seeded(3);
    let cfg = UpsamplerConfig {
        in_channels: 4,
        stages: vec![StageConfig {
            kernel: 3,
            out_channels: 5,
        }],
        modulation: Modulation::None,
        latent_dim: 0,
    };
    let mut up = Upsampler::init(&cfg, &mut rng).unwrap();
    let zeros: Vec<Tensor> = up
        .params()
        .iter()
        .map(|t| Tensor::zeros(t.shape()))
        .collect();
    up.set_params(&zeros).unwrap();
    let out = up
        .forward(&random_tensor(&mut rng, &[3, 3, 4]), None)
        .unwrap();
    assert_eq!(out.image.shape(), &[6, 6, 3]);
    assert!(out.image.data().iter().all(|&v| v == 0.0));
}

#[test]
fn identity_stage_is_nearest_upsampling() {
    let mut rng = seeded(4);
    let cfg = UpsamplerConfig {
        in_channels: 3,
        stages: vec![StageConfig {
            kernel: 1,
            out_channels: 3,
        }],
        modulation: Modulation::None,
        latent_dim: 0,
    };
    let mut up = Upsampler::init(&cfg, &mut rng).unwrap();
    up.stages[0].weight =
        Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let img = Tensor::new(
        &[2, 3, 3],
        (0..18).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let out = up.forward(&img, None).unwrap();
    let nn = nearest_upsample(&img, 2).unwrap();
    assert_eq!(out.feature.data(), nn.data());
    for y in 0..4 {
        for x in 0..6 {
            for c in 0..3 {
                assert_eq!(nn.at(&[y, x, c]), img.at(&[y / 2, x / 2, c]));
            }
        }
    }
}

#[test]
fn output_dims_scale_with_stages() {
    let mut rng = seeded(5);
    for n in 0..4 {
        let cfg = UpsamplerConfig {
            in_channels: 2,
            stages: vec![
                StageConfig {
                    kernel: 3,
                    out_channels: 2
                };
                n
            ],
            modulation: Modulation::None,
            latent_dim: 0,
        };
        let up = Upsampler::init(&cfg, &mut rng).unwrap();
        let out = up
            .forward(&random_tensor(&mut rng, &[3, 5, 2]), None)
            .unwrap();
        assert_eq!(out.image.shape(), &[3 << n, 5 << n, 3]);
        assert_eq!(cfg.scale(), 1 << n);
    }
}

#[test]
fn conv_is_translation_equivariant_inside() {
    let mut rng = seeded(6);
    let (h, w) = (8, 8);
    let img = random_tensor(&mut rng, &[h, w, 2]);
    let shifted = Tensor::new(
        &[h, w, 2],
        (0..h * w * 2)
            .map(|i| {
                let (y, x, c) = (i / (w * 2), (i / 2) % w, i % 2);
                if x == 0 {
                    0.0
                } else {
                    img.at(&[y, x - 1, c])
                }
            })
            .collect(),
    )
    .unwrap();
    let cfg = UpsamplerConfig {
        in_channels: 2,
        stages: vec![StageConfig {
            kernel: 3,
            out_channels: 3,
        }],
        modulation: Modulation::None,
        latent_dim: 0,
    };
    let up = Upsampler::init(&cfg, &mut rng).unwrap();
    let a = up.forward(&img, None).unwrap().feature;
    let b = up.forward(&shifted, None).unwrap().feature;
    // One input pixel = two output pixels; skip the borders the 3×3 kernel
    // and the shift-in column can reach.
    for y in 1..2 * h - 1 {
        for x in 3..2 * w - 3 {
            for c in 0..3 {
                assert!((b.at(&[y, x + 2, c]) - a.at(&[y, x, c])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn conv_gradients_pass_gradcheck() {
    let mut rng = seeded(7);
    let img = random_tensor(&mut rng, &[4, 4, 2]);
    let weight = random_tensor(&mut rng, &[18, 3]);
    let bias = random_tensor(&mut rng, &[3]);
    let err = gradcheck(
        |wt| Ok(conv2d(&img, wt, &bias, 3)?.tanh().sum()),
        &weight,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "weight {}", err);
    let err = gradcheck(
        |x| Ok(conv2d(x, &weight, &bias, 3)?.tanh().sum()),
        &img,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "input {}", err);
    let err = gradcheck(|x| Ok(bilinear_resize(x, 7, 5)?.tanh().sum()), &img, 1e-6).unwrap();
    assert!(err < 1e-5, "bilinear {}", err);
}

#[test]
fn modulated_upsampler_passes_gradcheck() {
    let mut rng = seeded(8);
    let cfg = UpsamplerConfig {
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
    let mut up = Upsampler::init(&cfg, &mut rng).unwrap();
    // Move FiLM away from identity so its gradients are exercised.
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
    up.set_params(&perturbed).unwrap();
    let img = random_tensor(&mut rng, &[2, 2, 2]);
    let mut params = up.params();
    params.push(random_tensor(&mut rng, &[2]));
    let err = gradcheck_many(
        |p| {
            let mut u = up.clone();
            let n = p.len() - 1;
            u.set_params(&p[..n])?;
            Ok(u.forward(&img, Some(&p[n]))?.image.sum())
        },
        &params,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "{}", err);
}

#[test]
fn rejects_bad_configs_and_inputs() {
    let mut rng = seeded(9);
    let bad = UpsamplerConfig {
        in_channels: 2,
        stages: vec![StageConfig {
            kernel: 2,
            out_channels: 3,
        }],
        modulation: Modulation::None,
        latent_dim: 0,
    };
    assert!(bad.validate().is_err());
    let ok = UpsamplerConfig {
        stages: vec![],
        ..bad
    };
    let up = Upsampler::init(&ok, &mut rng).unwrap();
    assert!(up.forward(&Tensor::zeros(&[2, 2, 3]), None).is_err());
    assert!(up
        .forward(&Tensor::zeros(&[2, 2, 2]), Some(&Tensor::zeros(&[1])))
        .is_err());
    let names: Vec<String> = up.named_params().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["upsampler/to_rgb/weight", "upsampler/to_rgb/bias"]);
}
