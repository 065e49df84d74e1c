use crate::autodiff::Tensor;
use crate::decoder::GeometryHead;
use crate::error::{Error, Result};
use crate::renderer::Field;

/// Mean squared error over rays and channels.
pub fn photometric_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            pred.shape(),
            target.shape(),
            "photometric loss",
        ));
    }
    let d = pred.sub(target)?;
    Ok(d.mul(&d)?.mean())
}

/// Raw geometry of `field` at `points` as an `N`-vector.
pub fn field_geometry(field: &dyn Field, points: &[[f64; 3]]) -> Result<Tensor> {
    let dirs = vec![[0.0, 0.0, -1.0]; points.len()];
    field
        .query(points, &dirs)?
        .geometry
        .reshape(&[points.len()])
}

/// Mean of `(‖∇d‖ − 1)²` over the probes, with the gradient taken by central
/// differences of step `h`.
pub fn eikonal_loss(field: &dyn Field, probes: &[[f64; 3]], h: f64) -> Result<Tensor> {
    if field.geometry() != GeometryHead::Sdf {
        return Err(Error::config("eikonal loss needs a signed distance field"));
    }
    if probes.is_empty() || !(h > 0.0) {
        return Err(Error::config(
            "eikonal loss needs probes and a positive step",
        ));
    }
    let m = probes.len();
    // One query for all 6 offsets: rows [axis0+, axis0−, axis1+, …] × probes.
    let mut shifted = Vec::with_capacity(6 * m);
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            shifted.extend(probes.iter().map(|p| {
                let mut q = *p;
                q[axis] += sign * h;
                q
            }));
        }
    }
    let d = field_geometry(field, &shifted)?.reshape(&[1, 6 * m])?;
    let row = |i: usize| d.slice_last(i * m, (i + 1) * m);
    let mut sq: Option<Tensor> = None;
    for axis in 0..3 {
        let plus = row(2 * axis)?;
        let minus = row(2 * axis + 1)?;
        let g = plus.sub(&minus)?.scale(0.5 / h);
        let g2 = g.mul(&g)?;
        sq = Some(match sq {
            None => g2,
            Some(acc) => acc.add(&g2)?,
        });
    }
    // The offset keeps the square root differentiable at a zero gradient.
    let norm = sq.expect("three axes").offset(1e-12).sqrt()?;
    let dev = norm.offset(-1.0);
    Ok(dev.mul(&dev)?.mean())
}

/// Mean of `exp(−k |d|)`.
pub fn minimal_surface_loss(sdf: &Tensor, k: f64) -> Result<Tensor> {
    if sdf.numel() == 0 {
        return Err(Error::config("minimal surface loss of an empty set"));
    }
    Ok(sdf.abs().scale(-k).exp().mean())
}

/// PSNR in dB of images in [−1, 1], computed after mapping to [0, 1].
pub fn psnr(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(&[pred.len()], &[target.len()], "psnr"));
    }
    let mse = pred
        .iter()
        .zip(target)
        .map(|(a, b)| (0.5 * (a - b)).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(-10.0 * mse.log10())
}
