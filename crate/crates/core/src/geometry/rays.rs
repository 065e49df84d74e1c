use nalgebra::Vector3;
use rand::Rng;

use super::pose::{Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Rays in world space. Directions are unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBatch {
    pub origins: Vec<[f64; 3]>,
    pub directions: Vec<[f64; 3]>,
    pub near: f64,
    pub far: f64,
}

impl RayBatch {
    pub fn new(
        origins: Vec<[f64; 3]>,
        directions: Vec<[f64; 3]>,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        if origins.len() != directions.len() {
            return Err(Error::shape(
                &[origins.len(), 3],
                &[directions.len(), 3],
                "ray batch",
            ));
        }
        if !(near > 0.0 && near < far) {
            return Err(Error::config(format!(
                "need 0 < near < far, got {} and {}",
                near, far
            )));
        }
        let mut directions = directions;
        for d in &mut directions {
            let n = Vector3::from(*d).norm();
            if !(n > 0.0) {
                return Err(Error::config("zero-length ray direction"));
            }
            *d = [d[0] / n, d[1] / n, d[2] / n];
        }
        Ok(RayBatch {
            origins,
            directions,
            near,
            far,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Rays `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> RayBatch {
        RayBatch {
            origins: self.origins[start..end].to_vec(),
            directions: self.directions[start..end].to_vec(),
            near: self.near,
            far: self.far,
        }
    }

    pub fn select(&self, indices: &[usize]) -> RayBatch {
        RayBatch {
            origins: indices.iter().map(|&i| self.origins[i]).collect(),
            directions: indices.iter().map(|&i| self.directions[i]).collect(),
            near: self.near,
            far: self.far,
        }
    }

    pub fn concat(parts: &[RayBatch]) -> Result<RayBatch> {
        let first = parts
            .first()
            .ok_or_else(|| Error::config("no ray batches to concatenate"))?;
        let mut out = RayBatch {
            origins: Vec::new(),
            directions: Vec::new(),
            near: first.near,
            far: first.far,
        };
        for p in parts {
            if p.near != first.near || p.far != first.far {
                return Err(Error::config("ray batches disagree on near/far bounds"));
            }
            out.origins.extend_from_slice(&p.origins);
            out.directions.extend_from_slice(&p.directions);
        }
        Ok(out)
    }
}

/// Points along rays, `n_rays × n_samples`, row-major by ray.
#[derive(Debug, Clone, PartialEq)]
pub struct PointBatch {
    pub positions: Vec<[f64; 3]>,
    pub t_values: Vec<f64>,
    pub view_dirs: Vec<[f64; 3]>,
    pub n_rays: usize,
    pub n_samples: usize,
}

impl PointBatch {
    fn from_t(rays: &RayBatch, t_values: Vec<f64>, n_samples: usize) -> PointBatch {
        let positions = t_values
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let (o, d) = (rays.origins[k / n_samples], rays.directions[k / n_samples]);
                [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]
            })
            .collect();
        PointBatch {
            positions,
            t_values,
            view_dirs: rays.directions.clone(),
            n_rays: rays.len(),
            n_samples,
        }
    }

    pub fn ray_t(&self, ray: usize) -> &[f64] {
        &self.t_values[ray * self.n_samples..(ray + 1) * self.n_samples]
    }
}

/// One ray per pixel center in row-major order.
pub fn generate_rays(k: &Intrinsics, pose: &Pose, near: f64, far: f64) -> Result<RayBatch> {
    k.validate()?;
    let r = pose.rotation();
    let c = pose.center();
    let mut origins = Vec::with_capacity(k.pixel_count());
    let mut directions = Vec::with_capacity(k.pixel_count());
    for v in 0..k.height {
        for u in 0..k.width {
            let cam = Vector3::new(
                (u as f64 + 0.5 - k.principal_x) / k.focal_x,
                -(v as f64 + 0.5 - k.principal_y) / k.focal_y,
                -1.0,
            )
            .normalize();
            let d = r * cam;
            origins.push([c.x, c.y, c.z]);
            directions.push([d.x, d.y, d.z]);
        }
    }
    RayBatch::new(origins, directions, near, far)
}

/// Projects a world point to continuous pixel coordinates (pixel centers at
/// half-integers). `None` for points at or behind the camera plane.
pub fn project(k: &Intrinsics, pose: &Pose, p: [f64; 3]) -> Option<(f64, f64, f64)> {
    let cam = pose.world_to_camera(&Vector3::from(p));
    let depth = -cam.z;
    if depth <= 1e-12 {
        return None;
    }
    let u = k.focal_x * cam.x / depth + k.principal_x;
    let v = -k.focal_y * cam.y / depth + k.principal_y;
    Some((u, v, depth))
}

/// `n_samples` equal bins over `[near, far]`: bin centers, or one uniform
/// draw per bin when jittered.
pub fn stratified_sample(
    rays: &RayBatch,
    n_samples: usize,
    jitter: bool,
    rng: &mut SeededRng,
) -> Result<PointBatch> {
    if n_samples < 2 {
        return Err(Error::config(
            "stratified sampling needs at least 2 samples",
        ));
    }
    let width = (rays.far - rays.near) / n_samples as f64;
    let mut t_values = Vec::with_capacity(rays.len() * n_samples);
    for _ in 0..rays.len() {
        for i in 0..n_samples {
            let offset = if jitter { rng.gen::<f64>() } else { 0.5 };
            t_values.push(rays.near + (i as f64 + offset) * width);
        }
    }
    Ok(PointBatch::from_t(rays, t_values, n_samples))
}

/// Inverse-CDF sampling from the piecewise-constant PDF whose mass on coarse
/// bin `i` is `weights[i]`; bins span midpoints between coarse samples and
/// the outer bins extend to near/far. The fine samples are merged with the
/// coarse ones and sorted; near-duplicates are dropped and replaced by
/// midpoints of the widest gaps so every ray keeps the same sample count.
pub fn importance_sample(
    rays: &RayBatch,
    coarse_t: &[f64],
    weights: &[f64],
    n_fine: usize,
    rng: &mut SeededRng,
) -> Result<PointBatch> {
    let n = rays.len();
    if n == 0 {
        return Ok(PointBatch::from_t(rays, Vec::new(), n_fine));
    }
    if coarse_t.len() != weights.len() || !coarse_t.len().is_multiple_of(n) {
        return Err(Error::shape(
            &[coarse_t.len()],
            &[weights.len()],
            "importance_sample",
        ));
    }
    let s = coarse_t.len() / n;
    let total = s + n_fine;
    let mut merged = Vec::with_capacity(n * total);
    for ray in 0..n {
        let t = &coarse_t[ray * s..(ray + 1) * s];
        let w = &weights[ray * s..(ray + 1) * s];
        if let Some(bad) = w.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Domain {
                op: "importance_sample",
                detail: format!("negative or NaN weight {}", bad),
            });
        }
        let fine = sample_pdf(t, w, rays.near, rays.far, n_fine, rng);
        let mut all: Vec<f64> = t.iter().copied().chain(fine).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.dedup_by(|b, a| (*b - *a).abs() <= 1e-12);
        while all.len() < total {
            let (gap, _) = all
                .windows(2)
                .enumerate()
                .map(|(i, w)| (i, w[1] - w[0]))
                .fold(
                    (0, f64::MIN),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            let mid = 0.5 * (all[gap] + all[gap + 1]);
            all.insert(gap + 1, mid);
        }
        merged.extend(all);
    }
    Ok(PointBatch::from_t(rays, merged, total))
}

/// Bin edges for coarse samples `t`: midpoints, with near/far at the ends.
pub fn bin_edges(t: &[f64], near: f64, far: f64) -> Vec<f64> {
    let mut edges = Vec::with_capacity(t.len() + 1);
    edges.push(near);
    for w in t.windows(2) {
        edges.push(0.5 * (w[0] + w[1]));
    }
    edges.push(far);
    edges
}

fn sample_pdf(
    t: &[f64],
    weights: &[f64],
    near: f64,
    far: f64,
    n: usize,
    rng: &mut SeededRng,
) -> Vec<f64> {
    let edges = bin_edges(t, near, far);
    let total: f64 = weights.iter().sum();
    let uniform;
    let w: &[f64] = if total > 0.0 {
        weights
    } else {
        uniform = vec![1.0; weights.len()];
        &uniform
    };
    let total: f64 = w.iter().sum();
    let mut cdf = Vec::with_capacity(w.len() + 1);
    let mut acc = 0.0;
    cdf.push(0.0);
    for &wi in w {
        acc += wi / total;
        cdf.push(acc);
    }

    (0..n)
        .map(|j| {
            // stratified u in [0, 1)
            let u = (j as f64 + rng.gen::<f64>()) / n as f64;
            let u = u * cdf[w.len()];
            // first bin with positive mass whose upper CDF exceeds u
            let mut bin = cdf[1..].partition_point(|&c| c <= u).min(w.len() - 1);
            while w[bin] == 0.0 && bin > 0 {
                bin -= 1;
            }
            while w[bin] == 0.0 && bin + 1 < w.len() {
                bin += 1;
            }
            let frac = ((u - cdf[bin]) / (cdf[bin + 1] - cdf[bin])).clamp(0.0, 1.0);
            edges[bin] + frac * (edges[bin + 1] - edges[bin])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose::pose_from_angles;
    use crate::rng::seeded;

    fn single_ray(near: f64, far: f64) -> RayBatch {
        RayBatch::new(vec![[0.0; 3]], vec![[0.0, 0.0, -1.0]], near, far).unwrap()
    }

    #[test]
    fn on_axis_and_offset_pixels() {
        let k = Intrinsics::new(10.0, 10.0, 2.5, 2.5, 5, 5).unwrap();
        let rays = generate_rays(&k, &Pose::identity(), 0.5, 2.0).unwrap();
        // pixel (2, 2) has its center on the principal point
        let d = rays.directions[2 * 5 + 2];
        assert!((d[0]).abs() < 1e-15 && (d[1]).abs() < 1e-15 && (d[2] + 1.0).abs() < 1e-15);
        // one pixel right: ∝ (1/f, 0, −1)
        let d = rays.directions[2 * 5 + 3];
        let expected = Vector3::new(0.1, 0.0, -1.0).normalize();
        assert!((Vector3::from(d) - expected).norm() < 1e-15);
    }

    #[test]
    fn origins_equal_camera_center() {
        let pose = pose_from_angles(1.1, -0.4, 2.5, [0.0; 3]).unwrap();
        let k = Intrinsics::from_fov(40.0, 7, 4).unwrap();
        let rays = generate_rays(&k, &pose, 1.0, 4.0).unwrap();
        let c = pose.center();
        assert_eq!(rays.len(), 28);
        for o in &rays.origins {
            assert_eq!(*o, [c.x, c.y, c.z]);
        }
    }

    #[test]
    fn bin_centers_without_jitter() {
        let rays = RayBatch {
            origins: vec![[0.0; 3]],
            directions: vec![[0.0, 0.0, -1.0]],
            near: 0.0,
            far: 1.0,
        };
        let pts = stratified_sample(&rays, 2, false, &mut seeded(0)).unwrap();
        assert_eq!(pts.t_values, vec![0.25, 0.75]);
        assert_eq!(pts.positions[1], [0.0, 0.0, -0.75]);
    }

    #[test]
    fn jittered_samples_stay_in_their_bins() {
        let rays = single_ray(0.5, 3.5);
        let pts = stratified_sample(&rays, 12, true, &mut seeded(3)).unwrap();
        let width = 3.0 / 12.0;
        for (i, &t) in pts.t_values.iter().enumerate() {
            assert!(t >= 0.5 + i as f64 * width && t <= 0.5 + (i + 1) as f64 * width);
        }
        assert!(pts.t_values.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn point_on_line() {
        let rays = single_ray(0.1, 1.0);
        let pts = PointBatch::from_t(&rays, vec![0.5], 1);
        assert_eq!(pts.positions[0], [0.0, 0.0, -0.5]);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(stratified_sample(&single_ray(0.1, 1.0), 1, false, &mut seeded(0)).is_err());
    }

    #[test]
    fn mass_in_one_bin_keeps_fine_samples_inside_it() {
        let rays = single_ray(1.0, 2.0);
        let coarse = stratified_sample(&rays, 8, false, &mut seeded(0)).unwrap();
        let mut w = vec![0.0; 8];
        w[5] = 0.9;
        let pts = importance_sample(&rays, &coarse.t_values, &w, 64, &mut seeded(1)).unwrap();
        let edges = bin_edges(&coarse.t_values, 1.0, 2.0);
        let fine: Vec<f64> = pts
            .t_values
            .iter()
            .copied()
            .filter(|t| !coarse.t_values.iter().any(|c| (c - t).abs() < 1e-15))
            .collect();
        assert_eq!(fine.len(), 64);
        assert!(fine.iter().all(|&t| t >= edges[5] && t <= edges[6]));
        assert_eq!(pts.n_samples, 72);
    }

    /// Kolmogorov–Smirnov statistic against the uniform CDF on [a, b].
    fn ks_uniform(samples: &mut [f64], a: f64, b: f64) -> f64 {
        samples.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let n = samples.len() as f64;
        samples
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = (x - a) / (b - a);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn uniform_and_zero_weights_give_uniform_fine_samples() {
        let rays = single_ray(0.5, 1.5);
        let coarse = stratified_sample(&rays, 16, false, &mut seeded(0)).unwrap();
        for w in [vec![0.3; 16], vec![0.0; 16]] {
            let fine = sample_pdf(&coarse.t_values, &w, 0.5, 1.5, 10_000, &mut seeded(2));
            let mut fine = fine;
            let ks = ks_uniform(&mut fine, 0.5, 1.5);
            assert!(ks < 0.05, "KS = {}", ks);
        }
    }

    #[test]
    fn merged_samples_strictly_increase_with_duplicates_removed() {
        let rays = single_ray(0.5, 1.5);
        let coarse = stratified_sample(&rays, 4, false, &mut seeded(0)).unwrap();
        // all mass on a single bin of zero width forces duplicate-free padding
        let t = vec![0.625, 0.875, 0.875 + 1e-13, 1.375];
        let pts = importance_sample(&rays, &t, &[0.0, 1.0, 0.0, 0.0], 3, &mut seeded(5)).unwrap();
        assert_eq!(pts.n_samples, 7);
        assert!(pts.t_values.windows(2).all(|w| w[1] - w[0] > 1e-12));
        assert!(pts.t_values.iter().all(|&t| (0.5..=1.5).contains(&t)));
        let _ = coarse;
    }
}
