use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use carver_core::io::parse_obj;
use carver_core::io::tensor_file::{write_tensor, DType};
use carver_core::Tensor;

const CONFIG: &str = r#"
[pose_prior]
kind = "gaussian"
radius = 3.0

[embedder]
kind = "voxel"
resolution = 8
channels = 4

[decoder]
depth = 2
hidden_dim = 8
out_color_dim = 3
geometry_head = "density"
activation = { kind = "relu" }
modulation = "film"

[renderer]
resolution = 16
n_coarse = 12

[mapper]
z_dim = 8
w_dim = 8
depth = 2

[fit]
iterations = 12
rays_per_batch = 64
eval_every = 6
n_views = 4
"#;

fn carver(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_carver"));
    cmd.args(args).env_remove("CARVER_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, CONFIG).unwrap();
    path
}

/// fit → render --orbit 8 into `dir`; returns the render directory.
fn fit_and_render(dir: &Path, envs: &[(&str, &str)]) -> PathBuf {
    let cfg = write_config(dir);
    let fit_out = dir.join("fit");
    let stdout = ok(&carver(
        &[
            "fit",
            s(&cfg),
            "sphere",
            "--out",
            s(&fit_out),
            "--seed",
            "3",
        ],
        envs,
    ));
    assert!(stdout.contains("held-out PSNR"), "{}", stdout);
    let frames = dir.join("frames");
    let ckpt = fit_out.join("checkpoint.crvt");
    ok(&carver(
        &[
            "render",
            s(&ckpt),
            "--orbit",
            "8",
            "--seed",
            "3",
            "--out",
            s(&frames),
        ],
        envs,
    ));
    frames
}

fn sorted_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn help_and_usage_errors_use_the_documented_exit_codes() {
    assert_eq!(carver(&["--help"], &[]).status.code(), Some(0));
    assert_eq!(carver(&["render", "--help"], &[]).status.code(), Some(0));
    assert_eq!(carver(&[], &[]).status.code(), Some(1));
    assert_eq!(carver(&["paint"], &[]).status.code(), Some(1));
    assert_eq!(
        carver(&["render", "x.crvt", "--orbit", "2", "--bogus"], &[])
            .status
            .code(),
        Some(1)
    );
    // Neither --pose nor --orbit.
    assert_eq!(carver(&["render", "x.crvt"], &[]).status.code(), Some(1));
    assert_eq!(
        carver(&["eval", "x.crvt", "--metrics", "kid"], &[])
            .status
            .code(),
        Some(1)
    );
    let bad_threads = carver(
        &["sample-poses", "missing.toml", "-n", "1"],
        &[("CARVER_THREADS", "zero")],
    );
    assert_eq!(bad_threads.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.crvt");
    let out = carver(&["render", s(&missing), "--orbit", "2"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let garbage = dir.path().join("garbage.crvt");
    fs::write(&garbage, b"CRVT\x01\x00").unwrap();
    let out = carver(&["extract-mesh", s(&garbage)], &[]);
    assert_eq!(out.status.code(), Some(2));
    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "[decoder]\ndepth = 1\n").unwrap();
    assert_eq!(
        carver(&["sample-poses", s(&bad_cfg), "-n", "2"], &[])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn fit_then_render_orbit_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let frames_a = fit_and_render(a.path(), &[]);
    let frames_b = fit_and_render(b.path(), &[("CARVER_THREADS", "1")]);

    let names = sorted_files(&frames_a);
    let pngs: Vec<&String> = names.iter().filter(|n| n.ends_with(".png")).collect();
    let expected: Vec<String> = (0..8).map(|i| format!("frame_{:03}.png", i)).collect();
    assert_eq!(pngs, expected.iter().collect::<Vec<_>>());
    assert_eq!(
        names.iter().filter(|n| n.ends_with("_depth.crvt")).count(),
        8
    );
    assert_eq!(names, sorted_files(&frames_b));
    for name in &names {
        assert_eq!(
            fs::read(frames_a.join(name)).unwrap(),
            fs::read(frames_b.join(name)).unwrap(),
            "{} differs",
            name
        );
    }
    for name in ["checkpoint.crvt", "fit.csv"] {
        assert_eq!(
            fs::read(a.path().join("fit").join(name)).unwrap(),
            fs::read(b.path().join("fit").join(name)).unwrap()
        );
    }

    // The orbit's manifest scores adjacent frames.
    let manifest = frames_a.join("manifest.toml");
    let stdout = ok(&carver(&["eval", s(&manifest), "--metrics", "re"], &[]));
    assert!(stdout.starts_with("metric"), "{}", stdout);
    assert!(stdout.contains("RE"), "{}", stdout);
}

#[test]
fn eval_of_identical_feature_files_reports_zero_fid() {
    let dir = tempfile::tempdir().unwrap();
    let features = Tensor::new(
        &[5, 3],
        (0..15).map(|i| ((i * 7) % 11) as f64 / 5.0).collect(),
    )
    .unwrap();
    write_tensor(dir.path().join("real.crvt"), &features, DType::F32).unwrap();
    write_tensor(dir.path().join("fake.crvt"), &features, DType::F32).unwrap();
    let manifest = dir.path().join("eval.toml");
    fs::write(
        &manifest,
        "[features]\nreference = \"real.crvt\"\ngenerated = \"fake.crvt\"\n",
    )
    .unwrap();
    let csv = dir.path().join("report.csv");
    let stdout = ok(&carver(
        &[
            "eval",
            s(&manifest),
            "--metrics",
            "fid",
            "--csv",
            s(&csv),
            "--seed",
            "1",
        ],
        &[],
    ));
    assert!(
        stdout
            .lines()
            .any(|l| l.split_whitespace().collect::<Vec<_>>() == ["FID", "0.000000", "5"]),
        "{}",
        stdout
    );
    assert_eq!(
        fs::read_to_string(&csv).unwrap(),
        "metric,value,count\nfid,0.0,5\n"
    );
}

#[test]
fn eval_of_a_checkpoint_renders_reprojection_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let fit_out = dir.path().join("fit");
    ok(&carver(
        &[
            "fit",
            s(&cfg),
            "two_boxes",
            "--out",
            s(&fit_out),
            "--iterations",
            "2",
        ],
        &[],
    ));
    let ckpt = fit_out.join("checkpoint.crvt");
    let run = || {
        ok(&carver(
            &[
                "eval",
                s(&ckpt),
                "--metrics",
                "re",
                "--samples",
                "2",
                "--seed",
                "4",
            ],
            &[],
        ))
    };
    let first = run();
    assert!(first.contains("RE"));
    assert_eq!(first, run());
    let out = carver(&["eval", s(&ckpt), "--metrics", "re,fid"], &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn extract_mesh_writes_a_parseable_obj() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let fit_out = dir.path().join("fit");
    ok(&carver(
        &[
            "fit",
            s(&cfg),
            "sphere",
            "--out",
            s(&fit_out),
            "--iterations",
            "2",
        ],
        &[],
    ));
    let ckpt = fit_out.join("checkpoint.crvt");
    let obj = dir.path().join("mesh/shape.obj");
    // The untrained head output changes sign, so level 0 crosses it.
    let stdout = ok(&carver(
        &[
            "extract-mesh",
            s(&ckpt),
            "--res",
            "16",
            "--iso",
            "0",
            "--out",
            s(&obj),
        ],
        &[],
    ));
    let mesh = parse_obj(&fs::read_to_string(&obj).unwrap()).unwrap();
    assert!(
        stdout.contains(&format!(
            "{} vertices and {} triangles",
            mesh.vertices.len(),
            mesh.triangles.len()
        )),
        "{}",
        stdout
    );
    assert!(!mesh.is_empty());
    mesh.validate().unwrap();
    let again = dir.path().join("again.obj");
    ok(&carver(
        &[
            "extract-mesh",
            s(&ckpt),
            "--res",
            "16",
            "--iso",
            "0",
            "--out",
            s(&again),
        ],
        &[],
    ));
    assert_eq!(fs::read(&obj).unwrap(), fs::read(&again).unwrap());
    assert_eq!(
        carver(&["extract-mesh", s(&ckpt), "--res", "4"], &[])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn sample_poses_is_seeded_and_feeds_render() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = ok(&carver(
        &["sample-poses", s(&cfg), "-n", "5", "--seed", "9"],
        &[],
    ));
    let b = ok(&carver(
        &["sample-poses", s(&cfg), "-n", "5", "--seed", "9"],
        &[],
    ));
    let c = ok(&carver(
        &["sample-poses", s(&cfg), "-n", "5", "--seed", "10"],
        &[],
    ));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.lines().count(), 5);
    assert!(a.lines().all(|l| l.split_whitespace().count() == 20));

    let poses = dir.path().join("poses.txt");
    ok(&carver(
        &["sample-poses", s(&cfg), "-n", "3", "--out", s(&poses)],
        &[],
    ));
    let fit_out = dir.path().join("fit");
    ok(&carver(
        &[
            "fit",
            s(&cfg),
            "sphere",
            "--out",
            s(&fit_out),
            "--iterations",
            "1",
        ],
        &[],
    ));
    let frames = dir.path().join("frames");
    ok(&carver(
        &[
            "render",
            s(&fit_out.join("checkpoint.crvt")),
            "--pose",
            s(&poses),
            "--out",
            s(&frames),
        ],
        &[],
    ));
    assert_eq!(
        sorted_files(&frames)
            .iter()
            .filter(|n| n.ends_with(".png"))
            .count(),
        3
    );
    assert_eq!(
        fs::read_to_string(frames.join("poses.txt")).unwrap(),
        fs::read_to_string(&poses).unwrap()
    );
}
