use std::f64::consts::PI;

use log::warn;
use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal_x: f64,
    pub focal_y: f64,
    pub principal_x: f64,
    pub principal_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        focal_x: f64,
        focal_y: f64,
        principal_x: f64,
        principal_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let k = Intrinsics {
            focal_x,
            focal_y,
            principal_x,
            principal_y,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, principal point at the image center, horizontal field
    /// of view in degrees.
    pub fn from_fov(fov_degrees: f64, width: usize, height: usize) -> Result<Self> {
        if !(fov_degrees > 0.0 && fov_degrees < 180.0) {
            return Err(Error::config(format!(
                "field of view {} out of (0, 180)",
                fov_degrees
            )));
        }
        let f = 0.5 * width as f64 / (0.5 * fov_degrees.to_radians()).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    /// Focal lengths and principal point divided by the image size.
    pub fn from_normalized(n: [f64; 4], width: usize, height: usize) -> Result<Self> {
        let (w, h) = (width as f64, height as f64);
        Self::new(n[0] * w, n[1] * h, n[2] * w, n[3] * h, width, height)
    }

    pub fn normalized(&self) -> [f64; 4] {
        let (w, h) = (self.width as f64, self.height as f64);
        [
            self.focal_x / w,
            self.focal_y / h,
            self.principal_x / w,
            self.principal_y / h,
        ]
    }

    /// Same field of view at a different resolution.
    pub fn resized(&self, width: usize, height: usize) -> Result<Self> {
        Self::from_normalized(self.normalized(), width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_x > 0.0 && self.focal_y > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::config(format!("invalid intrinsics {:?}", self)));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    cam2world: Matrix4<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            cam2world: Matrix4::identity(),
        }
    }

    /// Validates orthonormality of the rotation block (1e-9).
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let gram = r.transpose() * r - Matrix3::identity();
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)] - 1.0];
        if m.iter().any(|v| !v.is_finite())
            || gram.abs().max() > 1e-9
            || (r.determinant() - 1.0).abs() > 1e-9
            || bottom.iter().any(|v| v.abs() > 1e-9)
        {
            return Err(Error::config(
                "cam2world rotation block is not a proper rotation",
            ));
        }
        Ok(Pose { cam2world: m })
    }

    pub fn from_row_major(values: &[f64; 16]) -> Result<Self> {
        Self::from_matrix(Matrix4::from_row_slice(values))
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.cam2world[(r, c)];
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.cam2world
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.cam2world.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            self.cam2world[(0, 3)],
            self.cam2world[(1, 3)],
            self.cam2world[(2, 3)],
        )
    }

    /// World point to camera coordinates.
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().transpose() * (p - self.center())
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.center()
    }

    /// Camera at `eye` looking at `target`, world +y up, camera looking
    /// along its own −z.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Result<Self> {
        let back = eye - target;
        if back.norm() < 1e-12 {
            return Err(Error::Domain {
                op: "look_at",
                detail: "camera coincides with target".into(),
            });
        }
        let z = back.normalize();
        let x = Vector3::y().cross(&z);
        if x.norm() < 1e-9 {
            return Err(Error::Domain {
                op: "look_at",
                detail: "view direction parallel to the up vector".into(),
            });
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let mut m = Matrix4::identity();
        for i in 0..3 {
            m[(i, 0)] = x[i];
            m[(i, 1)] = y[i];
            m[(i, 2)] = z[i];
            m[(i, 3)] = eye[i];
        }
        Ok(Pose { cam2world: m })
    }
}

/// Offset of a camera on the sphere: pitch measured from +y, yaw in the
/// xz-plane from +x toward +z.
pub fn spherical_offset(pitch: f64, yaw: f64, radius: f64) -> Vector3<f64> {
    Vector3::new(
        radius * pitch.sin() * yaw.cos(),
        radius * pitch.cos(),
        radius * pitch.sin() * yaw.sin(),
    )
}

/// Places a camera on the sphere of `radius` around `look_at`, facing it.
pub fn pose_from_angles(pitch: f64, yaw: f64, radius: f64, look_at: [f64; 3]) -> Result<Pose> {
    let mut pitch = pitch;
    if pitch.sin().abs() < 1e-9 {
        let nudged = if pitch.cos() > 0.0 { 1e-6 } else { PI - 1e-6 };
        warn!(
            "camera at a pole (pitch {}); nudging pitch to {}",
            pitch, nudged
        );
        pitch = nudged;
    }
    let target = Vector3::from(look_at);
    Pose::look_at(target + spherical_offset(pitch, yaw, radius), target)
}

/// Inverse of [`pose_from_angles`]: `(pitch, yaw)` with yaw in (−π, π].
pub fn pose_to_angles(pose: &Pose, look_at: [f64; 3]) -> Result<(f64, f64)> {
    let offset = pose.center() - Vector3::from(look_at);
    let r = offset.norm();
    if r < 1e-12 {
        return Err(Error::Domain {
            op: "pose_to_angles",
            detail: "camera coincides with the look-at point".into(),
        });
    }
    let pitch = (offset.y / r).clamp(-1.0, 1.0).acos();
    let yaw = offset.z.atan2(offset.x);
    Ok((pitch, yaw))
}

/// A camera from a pose label file: extrinsics plus intrinsics normalized by
/// image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseLabel {
    pub pose: Pose,
    pub intrinsics: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub enum PoseDistribution {
    Gaussian {
        pitch_mean: f64,
        pitch_std: f64,
        yaw_mean: f64,
        yaw_std: f64,
    },
    Uniform {
        pitch: (f64, f64),
        yaw: (f64, f64),
    },
    Deterministic {
        labels: Vec<PoseLabel>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosePrior {
    pub distribution: PoseDistribution,
    pub radius: f64,
    pub look_at: [f64; 3],
}

/// Pitch bounds applied to stochastic draws so cameras stay off the poles.
const PITCH_MARGIN: f64 = 1e-5;

impl PosePrior {
    pub fn gaussian(
        pitch_mean: f64,
        pitch_std: f64,
        yaw_mean: f64,
        yaw_std: f64,
        radius: f64,
    ) -> Self {
        PosePrior {
            distribution: PoseDistribution::Gaussian {
                pitch_mean,
                pitch_std,
                yaw_mean,
                yaw_std,
            },
            radius,
            look_at: [0.0; 3],
        }
    }

    /// The Gaussian face-pose prior: pitch and yaw means π/2, standard
    /// deviations 0.155 and 0.3 radians.
    pub fn accurate(radius: f64) -> Self {
        Self::gaussian(PI / 2.0, 0.155, PI / 2.0, 0.3, radius)
    }

    /// Gaussian prior with means drawn from (π/4, 3π/4) and deviations from
    /// (0.1, 0.5), frozen at construction.
    pub fn random(radius: f64, rng: &mut SeededRng) -> Self {
        let lo = PI / 4.0;
        let hi = 3.0 * PI / 4.0;
        Self::gaussian(
            rng.gen_range(lo..hi),
            rng.gen_range(0.1..0.5),
            rng.gen_range(lo..hi),
            rng.gen_range(0.1..0.5),
            radius,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::config("pose prior radius must be positive"));
        }
        match &self.distribution {
            PoseDistribution::Gaussian {
                pitch_std, yaw_std, ..
            } => {
                if *pitch_std < 0.0 || *yaw_std < 0.0 {
                    return Err(Error::config(
                        "pose prior standard deviations must be non-negative",
                    ));
                }
            }
            PoseDistribution::Uniform { pitch, yaw } => {
                if !(pitch.0 <= pitch.1 && yaw.0 <= yaw.1) {
                    return Err(Error::config("pose prior ranges must be non-empty"));
                }
            }
            PoseDistribution::Deterministic { labels } => {
                if labels.is_empty() {
                    return Err(Error::config("deterministic pose table is empty"));
                }
            }
        }
        Ok(())
    }

    /// Entry `index` of a deterministic table (wrapping).
    pub fn label_at(&self, index: usize) -> Option<&PoseLabel> {
        match &self.distribution {
            PoseDistribution::Deterministic { labels } if !labels.is_empty() => {
                Some(&labels[index % labels.len()])
            }
            _ => None,
        }
    }
}

fn draw_normal(rng: &mut SeededRng, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        mean
    } else {
        Normal::new(mean, std)
            .expect("std validated non-negative")
            .sample(rng)
    }
}

fn draw_uniform(rng: &mut SeededRng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

/// Draws `(pitch, yaw)` from a stochastic prior.
pub fn sample_angles(prior: &PosePrior, rng: &mut SeededRng) -> Result<(f64, f64)> {
    prior.validate()?;
    let (pitch, yaw) = match &prior.distribution {
        PoseDistribution::Gaussian {
            pitch_mean,
            pitch_std,
            yaw_mean,
            yaw_std,
        } => (
            draw_normal(rng, *pitch_mean, *pitch_std),
            draw_normal(rng, *yaw_mean, *yaw_std),
        ),
        PoseDistribution::Uniform { pitch, yaw } => {
            (draw_uniform(rng, *pitch), draw_uniform(rng, *yaw))
        }
        PoseDistribution::Deterministic { labels } => {
            let label = &labels[rng.gen_range(0..labels.len())];
            return pose_to_angles(&label.pose, prior.look_at);
        }
    };
    Ok((pitch.clamp(PITCH_MARGIN, PI - PITCH_MARGIN), yaw))
}

pub fn sample_pose(prior: &PosePrior, rng: &mut SeededRng) -> Result<Pose> {
    prior.validate()?;
    if let PoseDistribution::Deterministic { labels } = &prior.distribution {
        return Ok(labels[rng.gen_range(0..labels.len())].pose);
    }
    let (pitch, yaw) = sample_angles(prior, rng)?;
    pose_from_angles(pitch, yaw, prior.radius, prior.look_at)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn canonical_frontal_pose_is_identity_rotation_on_plus_z() {
        let prior = PosePrior::gaussian(FRAC_PI_2, 0.0, FRAC_PI_2, 0.0, 1.0);
        let pose = sample_pose(&prior, &mut seeded(0)).unwrap();
        let c = pose.center();
        assert!((c - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        // camera forward is −z in camera space
        let forward = pose.rotation() * Vector3::new(0.0, 0.0, -1.0);
        assert!((forward + c.normalize()).norm() < 1e-15);
        assert!((pose.rotation() - Matrix3::identity()).abs().max() < 1e-15);
        let (p, y) = pose_to_angles(&pose, [0.0; 3]).unwrap();
        assert!((p - FRAC_PI_2).abs() < 1e-15 && (y - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn accurate_prior_draws_valid_poses() {
        let prior = PosePrior::accurate(2.7);
        let mut rng = seeded(4);
        for _ in 0..100 {
            let pose = sample_pose(&prior, &mut rng).unwrap();
            Pose::from_matrix(*pose.matrix()).unwrap();
            assert!((pose.center().norm() - 2.7).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_singleton_always_returns_its_pose() {
        let pose = pose_from_angles(1.0, 0.3, 2.0, [0.0; 3]).unwrap();
        let prior = PosePrior {
            distribution: PoseDistribution::Deterministic {
                labels: vec![PoseLabel {
                    pose,
                    intrinsics: [1.0, 1.0, 0.5, 0.5],
                }],
            },
            radius: 2.0,
            look_at: [0.0; 3],
        };
        let mut rng = seeded(1);
        for _ in 0..10 {
            assert_eq!(sample_pose(&prior, &mut rng).unwrap(), pose);
        }
    }

    #[test]
    fn angles_round_trip() {
        let pose = pose_from_angles(1.0, 2.0, 1.7, [0.1, -0.2, 0.3]).unwrap();
        let (p, y) = pose_to_angles(&pose, [0.1, -0.2, 0.3]).unwrap();
        assert!((p - 1.0).abs() < 1e-9 && (y - 2.0).abs() < 1e-9);
    }

    #[test]
    fn plus_z_camera_has_yaw_half_pi() {
        let pose = Pose::look_at(Vector3::new(0.0, 0.0, 3.0), Vector3::zeros()).unwrap();
        let (_, yaw) = pose_to_angles(&pose, [0.0; 3]).unwrap();
        assert!((yaw - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn pole_is_nudged_not_fatal() {
        let pose = pose_from_angles(0.0, 0.0, 1.0, [0.0; 3]).unwrap();
        let (p, _) = pose_to_angles(&pose, [0.0; 3]).unwrap();
        assert!(p > 0.0 && p < 1e-5);
    }

    #[test]
    fn pose_to_angles_rejects_zero_offset() {
        let pose = Pose::identity();
        assert!(pose_to_angles(&pose, [0.0; 3]).is_err());
    }

    #[test]
    fn invalid_priors_are_rejected() {
        assert!(PosePrior::gaussian(1.0, -0.1, 1.0, 0.1, 1.0)
            .validate()
            .is_err());
        let empty = PosePrior {
            distribution: PoseDistribution::Deterministic { labels: vec![] },
            radius: 1.0,
            look_at: [0.0; 3],
        };
        assert!(empty.validate().is_err());
        let mut m = Matrix4::identity();
        m[(0, 0)] = 2.0;
        assert!(Pose::from_matrix(m).is_err());
    }

    #[test]
    fn random_prior_parameters_are_in_range() {
        let mut rng = seeded(7);
        for _ in 0..50 {
            match PosePrior::random(2.0, &mut rng).distribution {
                PoseDistribution::Gaussian {
                    pitch_mean,
                    pitch_std,
                    yaw_mean,
                    yaw_std,
                } => {
                    for m in [pitch_mean, yaw_mean] {
                        assert!(m > PI / 4.0 && m < 3.0 * PI / 4.0);
                    }
                    for s in [pitch_std, yaw_std] {
                        assert!((0.1..0.5).contains(&s));
                    }
                }
                _ => unreachable!(),
            }
        }
    }
}
