//! Analytic scenes with closed-form geometry, used as ground truth for
//! fitting and as oracles for the renderer.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::decoder::{FieldSample, GeometryHead};
use crate::error::Result;
use crate::renderer::Field;

/// Raw density magnitude: `+DENSITY` inside, `−DENSITY` outside, so both
/// relu and softplus clamping give an (almost) binary medium.
pub const DENSITY: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Sphere,
    TwoBoxes,
    NoiseBlob,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub kind: SceneKind,
    pub density: f64,
    /// Uniform size factor; the sphere's radius.
    pub scale: f64,
}

impl Scene {
    pub fn new(kind: SceneKind) -> Self {
        Scene {
            kind,
            density: DENSITY,
            scale: 1.0,
        }
    }

    pub fn unit_sphere() -> Self {
        Self::new(SceneKind::Sphere)
    }

    pub fn sphere(radius: f64) -> Self {
        Self::new(SceneKind::Sphere).scaled(radius)
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// Signed distance (exact for the sphere and boxes, a bounded-gradient
    /// approximation for the blob).
    pub fn sdf(&self, p: [f64; 3]) -> f64 {
        let p = p.map(|v| v / self.scale);
        self.scale
            * match self.kind {
                SceneKind::Sphere => norm(p) - 1.0,
                SceneKind::TwoBoxes => box_sdf(p, [-0.4, -0.2, 0.0], [0.35, 0.5, 0.35])
                    .min(box_sdf(p, [0.45, 0.1, -0.1], [0.3, 0.3, 0.5])),
                SceneKind::NoiseBlob => (norm(p) - blob_radius(p)) / 1.5,
            }
    }

    pub fn inside(&self, p: [f64; 3]) -> bool {
        self.sdf(p) < 0.0
    }

    /// Smooth color in (−1, 1).
    pub fn color(&self, p: [f64; 3]) -> [f64; 3] {
        let base = match self.kind {
            SceneKind::Sphere => [0.8, 0.2, -0.3],
            SceneKind::TwoBoxes => {
                if p[0] < 0.0 {
                    [0.7, -0.5, -0.2]
                } else {
                    [-0.4, 0.3, 0.8]
                }
            }
            SceneKind::NoiseBlob => [0.1, 0.7, 0.2],
        };
        std::array::from_fn(|i| (base[i] + 0.25 * (2.0 * p[(i + 1) % 3]).sin()).clamp(-0.95, 0.95))
    }

    /// Distance along a unit-direction ray to the first surface hit within
    /// `[near, far]`.
    pub fn ray_depth(&self, origin: [f64; 3], dir: [f64; 3], near: f64, far: f64) -> Option<f64> {
        let at = |t: f64| {
            [
                origin[0] + t * dir[0],
                origin[1] + t * dir[1],
                origin[2] + t * dir[2],
            ]
        };
        if self.kind == SceneKind::Sphere {
            let b = dot(origin, dir);
            let disc = b * b - (dot(origin, origin) - self.scale * self.scale);
            if disc < 0.0 {
                return None;
            }
            let t = -b - disc.sqrt();
            return (t >= near && t <= far).then_some(t);
        }
        // Sphere tracing on a conservative distance, then bisection.
        let mut t = near;
        while t <= far {
            let d = self.sdf(at(t));
            if d < 1e-9 {
                let (mut lo, mut hi) = ((t - 1e-3).max(near), t);
                if self.inside(at(lo)) {
                    return Some(lo);
                }
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if self.inside(at(mid)) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(hi);
            }
            t += d.max(1e-4);
        }
        None
    }
}

fn blob_radius(p: [f64; 3]) -> f64 {
    0.75 + 0.12 * (3.0 * p[0]).sin() * (2.0 * p[1]).sin() * (3.0 * p[2] + 0.5).cos()
}

fn box_sdf(p: [f64; 3], center: [f64; 3], half: [f64; 3]) -> f64 {
    let q: [f64; 3] = std::array::from_fn(|i| (p[i] - center[i]).abs() - half[i]);
    let outside = norm([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
    outside + q[0].max(q[1]).max(q[2]).min(0.0)
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(p: [f64; 3]) -> f64 {
    dot(p, p).sqrt()
}

impl Field for Scene {
    fn query(&self, points: &[[f64; 3]], _view_dirs: &[[f64; 3]]) -> Result<FieldSample> {
        let mut color = Vec::with_capacity(points.len() * 3);
        let mut geometry = Vec::with_capacity(points.len());
        for &p in points {
            color.extend(self.color(p).iter().map(|c| c.atanh()));
            geometry.push(if self.inside(p) {
                self.density
            } else {
                -self.density
            });
        }
        Ok(FieldSample {
            color: Tensor::from_parts(vec![points.len(), 3], color),
            geometry: Tensor::from_parts(vec![points.len(), 1], geometry),
        })
    }

    fn geometry(&self) -> GeometryHead {
        GeometryHead::Density
    }
}

/// The same scene reported as a signed distance field.
#[derive(Debug, Clone)]
pub struct SdfScene(pub Scene);

impl Field for SdfScene {
    fn query(&self, points: &[[f64; 3]], view_dirs: &[[f64; 3]]) -> Result<FieldSample> {
        let color = self.0.query(points, view_dirs)?.color;
        let d = points.iter().map(|&p| self.0.sdf(p)).collect();
        Ok(FieldSample {
            color,
            geometry: Tensor::from_parts(vec![points.len(), 1], d),
        })
    }

    fn geometry(&self) -> GeometryHead {
        GeometryHead::Sdf
    }
}
