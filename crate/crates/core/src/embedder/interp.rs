//! Align-corners interpolation plans with border clamping. Node `i` of an
//! axis with `r` nodes sits at `−1 + 2i/(r−1)`.

use std::sync::Arc;

use crate::autodiff::{GatherPlan, SourceLayout};

/// Lower node index and fractional offset along one axis.
#[inline]
pub(crate) fn locate(coord: f64, r: usize) -> (usize, f64) {
    let c = coord.clamp(-1.0, 1.0);
    let u = (c + 1.0) * 0.5 * (r - 1) as f64;
    let i = (u.floor() as usize).min(r - 2);
    (i, u - i as f64)
}

/// Trilinear plan over a `[channels, r, r, r]` grid (axis order x, y, z).
pub(crate) fn trilinear_plan(points: &[[f64; 3]], r: usize, channels: usize) -> Arc<GatherPlan> {
    let mut index = Vec::with_capacity(points.len() * 8);
    let mut weight = Vec::with_capacity(points.len() * 8);
    for p in points {
        let (ix, fx) = locate(p[0], r);
        let (iy, fy) = locate(p[1], r);
        let (iz, fz) = locate(p[2], r);
        for corner in 0..8 {
            let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let wx = if dx == 1 { fx } else { 1.0 - fx };
            let wy = if dy == 1 { fy } else { 1.0 - fy };
            let wz = if dz == 1 { fz } else { 1.0 - fz };
            index.push(((ix + dx) * r + iy + dy) * r + iz + dz);
            weight.push(wx * wy * wz);
        }
    }
    Arc::new(GatherPlan {
        rows: points.len(),
        taps: 8,
        index,
        weight,
        layout: SourceLayout::ChannelsFirst { channels },
        out_shape: vec![points.len(), channels],
    })
}

/// Bilinear taps over a `[channels, r, r]` plane, given 2-D coordinates
/// `(a, b)` where `a` indexes the first spatial axis.
pub(crate) fn bilinear_taps(
    coords: &[(f64, f64)],
    r: usize,
    site_offset: usize,
) -> Vec<(usize, f64)> {
    let mut taps = Vec::with_capacity(coords.len() * 4);
    for &(a, b) in coords {
        let (ia, fa) = locate(a, r);
        let (ib, fb) = locate(b, r);
        for corner in 0..4 {
            let (da, db) = (corner & 1, corner >> 1);
            let wa = if da == 1 { fa } else { 1.0 - fa };
            let wb = if db == 1 { fb } else { 1.0 - fb };
            taps.push((site_offset + (ia + da) * r + ib + db, wa * wb));
        }
    }
    taps
}

pub(crate) fn plan_from_taps(
    taps: Vec<(usize, f64)>,
    rows: usize,
    per_row: usize,
    channels: usize,
) -> Arc<GatherPlan> {
    let (index, weight) = taps.into_iter().unzip();
    Arc::new(GatherPlan {
        rows,
        taps: per_row,
        index,
        weight,
        layout: SourceLayout::ChannelsFirst { channels },
        out_shape: vec![rows, channels],
    })
}
