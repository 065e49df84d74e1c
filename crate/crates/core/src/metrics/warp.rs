use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{project, Intrinsics, Pose};

/// Ray distances per pixel (row-major) with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if depth.len() != width * height || valid.len() != depth.len() {
            return Err(Error::shape(
                &[depth.len(), valid.len()],
                &[width * height],
                "depth map",
            ));
        }
        if let Some(i) =
            (0..depth.len()).find(|&i| valid[i] && !(depth[i].is_finite() && depth[i] > 0.0))
        {
            return Err(Error::Domain {
                op: "depth map",
                detail: format!("valid pixel {} has depth {}", i, depth[i]),
            });
        }
        Ok(DepthMap {
            width,
            height,
            depth,
            valid,
        })
    }

    /// From an [H, W] tensor in which zero, negative or non-finite entries
    /// mark pixels without geometry.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [h, w] = t.shape()[..] else {
            return Err(Error::shape(t.shape(), &[0, 0], "depth map"));
        };
        let valid: Vec<bool> = t.data().iter().map(|d| d.is_finite() && *d > 0.0).collect();
        let depth = t
            .data()
            .iter()
            .zip(&valid)
            .map(|(d, ok)| if *ok { *d } else { 0.0 })
            .collect();
        DepthMap::new(w, h, depth, valid)
    }

    /// Inverse of [`DepthMap::from_tensor`]: invalid pixels become 0.
    pub fn to_tensor(&self) -> Tensor {
        let data = self
            .depth
            .iter()
            .zip(&self.valid)
            .map(|(d, ok)| if *ok { *d } else { 0.0 })
            .collect();
        Tensor::from_parts(vec![self.height, self.width], data)
    }

    /// Pixels with `coverage` above one half take the rendered depth.
    pub fn from_render(depth: &Tensor, coverage: &Tensor) -> Result<Self> {
        if depth.shape() != coverage.shape() {
            return Err(Error::shape(
                depth.shape(),
                coverage.shape(),
                "depth and coverage",
            ));
        }
        let masked = depth
            .data()
            .iter()
            .zip(coverage.data())
            .map(|(d, a)| if *a > 0.5 { *d } else { 0.0 })
            .collect();
        DepthMap::from_tensor(&Tensor::from_parts(depth.shape().to_vec(), masked))
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Nearest-neighbour resampling to another size.
    pub fn resized(&self, width: usize, height: usize) -> DepthMap {
        let mut depth = Vec::with_capacity(width * height);
        let mut valid = Vec::with_capacity(width * height);
        for v in 0..height {
            let sv = ((v as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            for u in 0..width {
                let su = ((u as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                let i = sv.min(self.height - 1) * self.width + su.min(self.width - 1);
                depth.push(self.depth[i]);
                valid.push(self.valid[i]);
            }
        }
        DepthMap {
            width,
            height,
            depth,
            valid,
        }
    }
}

/// A rendered view as seen by the reprojection metric.
#[derive(Debug, Clone, Copy)]
pub struct WarpView<'a> {
    /// [H, W, 3] in [−1, 1].
    pub image: &'a Tensor,
    pub depth: &'a DepthMap,
    pub pose: &'a Pose,
    pub intrinsics: &'a Intrinsics,
}

impl WarpView<'_> {
    fn check(&self) -> Result<()> {
        let k = self.intrinsics;
        if self.image.shape() != [k.height, k.width, 3] {
            return Err(Error::shape(
                self.image.shape(),
                &[k.height, k.width, 3],
                "warp view image",
            ));
        }
        if (self.depth.width, self.depth.height) != (k.width, k.height) {
            return Err(Error::shape(
                &[self.depth.height, self.depth.width],
                &[k.height, k.width],
                "warp view depth",
            ));
        }
        Ok(())
    }

    /// World point seen at pixel `(u, v)` (integer pixel, center ray).
    pub(crate) fn unproject(&self, u: usize, v: usize, t: f64) -> [f64; 3] {
        let k = self.intrinsics;
        let cam = nalgebra::Vector3::new(
            (u as f64 + 0.5 - k.principal_x) / k.focal_x,
            -(v as f64 + 0.5 - k.principal_y) / k.focal_y,
            -1.0,
        )
        .normalize();
        let p = self.pose.camera_to_world(&(cam * t));
        [p.x, p.y, p.z]
    }

    /// Bilinear sample at continuous pixel coordinates; `None` outside the
    /// span of pixel centers. Taps without geometry are left out of the
    /// blend unless none has any, so silhouettes do not bleed background
    /// into surface samples.
    pub(crate) fn sample(&self, u: f64, v: f64) -> Option<[f64; 3]> {
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        let (x, y) = (u - 0.5, v - 0.5);
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            return None;
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ];
        let surface =
            |(xx, yy, wt): &(usize, usize, f64)| *wt > 0.0 && self.depth.valid[yy * w + xx];
        let use_mask = taps.iter().any(surface);
        let img = self.image.data();
        let mut out = [0.0; 3];
        let mut total = 0.0;
        for tap in &taps {
            if use_mask && !surface(tap) {
                continue;
            }
            let (xx, yy, wt) = *tap;
            for (c, o) in out.iter_mut().enumerate() {
                *o += wt * img[(yy * w + xx) * 3 + c];
            }
            total += wt;
        }
        Some(out.map(|o| o / total))
    }
}

/// Mean per-pixel L1 (averaged over channels) of `a` warped into `b`, and
/// the number of pixels that landed inside `b`.
fn directed_error(a: &WarpView, b: &WarpView) -> (f64, usize) {
    let w = a.intrinsics.width;
    let img = a.image.data();
    let per_row: Vec<(f64, usize)> = (0..a.intrinsics.height)
        .into_par_iter()
        .map(|v| {
            let mut sum = 0.0;
            let mut n = 0;
            for u in 0..w {
                let i = v * w + u;
                if !a.depth.valid[i] {
                    continue;
                }
                let p = a.unproject(u, v, a.depth.depth[i]);
                let Some((pu, pv, _)) = project(b.intrinsics, b.pose, p) else {
                    continue;
                };
                let Some(c) = b.sample(pu, pv) else {
                    continue;
                };
                sum += (0..3).map(|k| (img[i * 3 + k] - c[k]).abs()).sum::<f64>() / 3.0;
                n += 1;
            }
            (sum, n)
        })
        .collect();
    // Rows are reduced in order so the result does not depend on scheduling.
    per_row
        .iter()
        .fold((0.0, 0), |(s, n), (rs, rn)| (s + rs, n + rn))
}

/// Photometric disagreement between two views after warping each into the
/// other through its depth: the average of both directions' mean L1 error.
pub fn reprojection_error(a: &WarpView, b: &WarpView) -> Result<f64> {
    a.check()?;
    b.check()?;
    let mut errors = [0.0; 2];
    for (slot, (from, to)) in [(a, b), (b, a)].into_iter().enumerate() {
        let (sum, n) = directed_error(from, to);
        let total = from.intrinsics.pixel_count();
        if n == 0 || (n as f64) < 0.01 * total as f64 {
            return Err(Error::InsufficientOverlap { valid: n, total });
        }
        errors[slot] = sum / n as f64;
    }
    Ok(0.5 * (errors[0] + errors[1]))
}
