use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::metrics::DepthMap;

/// Mean squared difference of the two maps after standardizing each to zero
/// mean and unit variance over the pixels valid in both.
pub fn depth_error(rendered: &DepthMap, predicted: &DepthMap) -> Result<f64> {
    if (rendered.width, rendered.height) != (predicted.width, predicted.height) {
        return Err(Error::shape(
            &[rendered.height, rendered.width],
            &[predicted.height, predicted.width],
            "depth maps",
        ));
    }
    let pairs: Vec<(f64, f64)> = (0..rendered.depth.len())
        .filter(|&i| rendered.valid[i] && predicted.valid[i])
        .map(|i| (rendered.depth[i], predicted.depth[i]))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Domain {
            op: "depth_error",
            detail: "no pixel is valid in both maps".into(),
        });
    }
    let a = standardize(pairs.iter().map(|p| p.0))?;
    let b = standardize(pairs.iter().map(|p| p.1))?;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

fn standardize(values: impl Iterator<Item = f64>) -> Result<Vec<f64>> {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    // Spread at rounding level of the mean counts as constant.
    if !(std > 1e-12 * mean.abs().max(1e-300)) {
        return Err(Error::Domain {
            op: "depth_error",
            detail: "depth map is constant over the shared mask".into(),
        });
    }
    Ok(v.iter().map(|x| (x - mean) / std).collect())
}

/// `d` wrapped into (−π, π].
pub fn wrap_angle(d: f64) -> f64 {
    let r = d.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Mean of the squared pitch and wrapped yaw differences, in radians².
pub fn pose_error(given: (f64, f64), estimated: (f64, f64)) -> f64 {
    let dp = estimated.0 - given.0;
    let dy = wrap_angle(estimated.1 - given.1);
    0.5 * (dp * dp + dy * dy)
}

/// (pitch, yaw) in radians.
pub type Angles = (f64, f64);

/// [`pose_error`] averaged over (given, estimated) samples.
pub fn mean_pose_error(pairs: &[(Angles, Angles)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::config("pose error needs at least one sample"));
    }
    Ok(pairs.iter().map(|(g, e)| pose_error(*g, *e)).sum::<f64>() / pairs.len() as f64)
}

/// Mean cosine similarity over embedding pairs.
pub fn identity_consistency(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::config(
            "identity consistency needs at least one pair",
        ));
    }
    let mut total = 0.0;
    for (i, (u, v)) in pairs.iter().enumerate() {
        if u.len() != v.len() {
            return Err(Error::shape(&[u.len()], &[v.len()], "embedding pair"));
        }
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(nu > 0.0 && nv > 0.0) {
            return Err(Error::Domain {
                op: "identity_consistency",
                detail: format!("pair {} has a zero or non-finite embedding", i),
            });
        }
        total += u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv);
    }
    Ok(total / pairs.len() as f64)
}
