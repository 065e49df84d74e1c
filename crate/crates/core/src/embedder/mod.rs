//! Point embedders: raw coordinates → per-point features.
//!
//! Every query takes points in normalized scene coordinates (the cube
//! [−1, 1]³). Grid-based lookups clamp outside the cube to the border and
//! are differentiable with respect to the stored features.

mod interp;

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::Parameterized;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisPair {
    Xy,
    Xz,
    Zy,
}

impl AxisPair {
    /// Projection of `p` onto the plane, as (first axis, second axis).
    pub fn project(self, p: &[f64; 3]) -> (f64, f64) {
        match self {
            AxisPair::Xy => (p[0], p[1]),
            AxisPair::Xz => (p[0], p[2]),
            AxisPair::Zy => (p[2], p[1]),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            AxisPair::Xy => "xy",
            AxisPair::Xz => "xz",
            AxisPair::Zy => "zy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Sum,
    Concat,
    Product,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionalEncoding {
    pub n_freq: usize,
    pub include_input: bool,
}

impl PositionalEncoding {
    pub fn out_channels(&self) -> usize {
        3 * 2 * self.n_freq + if self.include_input { 3 } else { 0 }
    }
}

/// Raw coordinates followed by, per coordinate, `sin(2ʲπp), cos(2ʲπp)` for
/// each level `j`.
pub fn encode_positional(points: &[[f64; 3]], enc: &PositionalEncoding) -> Tensor {
    let width = enc.out_channels();
    let mut data = Vec::with_capacity(points.len() * width);
    for p in points {
        if enc.include_input {
            data.extend_from_slice(p);
        }
        for &x in p {
            for j in 0..enc.n_freq {
                let arg = (1u64 << j) as f64 * PI * x;
                data.push(arg.sin());
                data.push(arg.cos());
            }
        }
    }
    Tensor::from_parts(vec![points.len(), width], data)
}

/// Dense feature volume, shape `[C, R, R, R]` with spatial axes x, y, z.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub features: Tensor,
}

impl VoxelGrid {
    pub fn new(features: Tensor) -> Result<Self> {
        let s = features.shape();
        if s.len() != 4 || s[1] < 2 || s[1] != s[2] || s[2] != s[3] {
            return Err(Error::config(format!(
                "voxel grid must be [C, R, R, R] with R ≥ 2, got {:?}",
                s
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("voxel grid features".into()));
        }
        Ok(VoxelGrid { features })
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn resolution(&self) -> usize {
        self.features.shape()[1]
    }
}

/// Trilinear lookup, `N × C`.
pub fn query_voxel(grid: &VoxelGrid, points: &[[f64; 3]]) -> Result<Tensor> {
    let plan = interp::trilinear_plan(points, grid.resolution(), grid.channels());
    grid.features.gather(plan)
}

#[derive(Debug, Clone)]
pub struct Plane {
    pub axes: AxisPair,
    /// `[C, R, R]`, first spatial axis = first axis of the pair.
    pub features: Tensor,
}

#[derive(Debug, Clone)]
pub struct PlaneSet {
    pub planes: Vec<Plane>,
    pub aggregation: Aggregation,
}

impl PlaneSet {
    pub fn new(planes: Vec<Plane>, aggregation: Aggregation) -> Result<Self> {
        if planes.is_empty() || planes.len() > 3 {
            return Err(Error::config(format!(
                "plane set needs 1 to 3 planes, got {}",
                planes.len()
            )));
        }
        for (i, p) in planes.iter().enumerate() {
            let s = p.features.shape();
            if s.len() != 3 || s[1] < 2 || s[1] != s[2] {
                return Err(Error::config(format!(
                    "plane features must be [C, R, R], got {:?}",
                    s
                )));
            }
            if planes[..i].iter().any(|q| q.axes == p.axes) {
                return Err(Error::config(format!("duplicate plane {:?}", p.axes)));
            }
        }
        let set = PlaneSet {
            planes,
            aggregation,
        };
        set.out_channels()?;
        Ok(set)
    }

    pub fn out_channels(&self) -> Result<usize> {
        let chans: Vec<usize> = self.planes.iter().map(|p| p.features.shape()[0]).collect();
        match self.aggregation {
            Aggregation::Concat => Ok(chans.iter().sum()),
            Aggregation::Sum | Aggregation::Product => {
                if chans.iter().any(|&c| c != chans[0]) {
                    return Err(Error::config(format!(
                        "{:?} aggregation needs equal channel counts, got {:?}",
                        self.aggregation, chans
                    )));
                }
                Ok(chans[0])
            }
        }
    }
}

fn query_plane(plane: &Plane, points: &[[f64; 3]]) -> Result<Tensor> {
    let s = plane.features.shape();
    let coords: Vec<(f64, f64)> = points.iter().map(|p| plane.axes.project(p)).collect();
    let taps = interp::bilinear_taps(&coords, s[1], 0);
    plane
        .features
        .gather(interp::plan_from_taps(taps, points.len(), 4, s[0]))
}

/// Per-plane bilinear lookups combined by the set's aggregation.
pub fn query_planes(ps: &PlaneSet, points: &[[f64; 3]]) -> Result<Tensor> {
    ps.out_channels()?;
    let feats = ps
        .planes
        .iter()
        .map(|p| query_plane(p, points))
        .collect::<Result<Vec<_>>>()?;
    match ps.aggregation {
        Aggregation::Concat => Tensor::concat_last(&feats.iter().collect::<Vec<_>>()),
        Aggregation::Sum => feats[1..]
            .iter()
            .try_fold(feats[0].clone(), |acc, f| acc.add(f)),
        Aggregation::Product => feats[1..]
            .iter()
            .try_fold(feats[0].clone(), |acc, f| acc.mul(f)),
    }
}

/// Fronto-parallel feature planes at fixed depths, stored as one
/// `[C, K, R, R]` tensor (spatial axes x, y).
#[derive(Debug, Clone)]
pub struct MpiPlanes {
    pub depths: Vec<f64>,
    pub features: Tensor,
}

impl MpiPlanes {
    pub fn new(depths: Vec<f64>, features: Tensor) -> Result<Self> {
        let s = features.shape();
        if depths.len() < 2 || !depths.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config(
                "MPI needs at least 2 strictly increasing depths",
            ));
        }
        if depths.iter().any(|z| !(-1.0..=1.0).contains(z)) {
            return Err(Error::config("MPI depths must lie in [-1, 1]"));
        }
        if s.len() != 4 || s[1] != depths.len() || s[2] < 2 || s[2] != s[3] {
            return Err(Error::config(format!(
                "MPI features must be [C, K, R, R], got {:?}",
                s
            )));
        }
        Ok(MpiPlanes { depths, features })
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn resolution(&self) -> usize {
        self.features.shape()[2]
    }

    /// Index of the nearest plane to depth `z`; ties go to the lower index.
    pub fn nearest_plane(&self, z: f64) -> usize {
        let mut best = 0;
        for k in 1..self.depths.len() {
            if (z - self.depths[k]).abs() < (z - self.depths[best]).abs() {
                best = k;
            }
        }
        best
    }
}

/// Features from the nearest plane of each point, plus that plane's index.
pub fn query_mpi(mpi: &MpiPlanes, points: &[[f64; 3]]) -> Result<(Tensor, Vec<usize>)> {
    let r = mpi.resolution();
    let plane_index: Vec<usize> = points.iter().map(|p| mpi.nearest_plane(p[2])).collect();
    let mut taps = Vec::with_capacity(points.len() * 4);
    for (p, &k) in points.iter().zip(&plane_index) {
        taps.extend(interp::bilinear_taps(&[(p[0], p[1])], r, k * r * r));
    }
    let feats = mpi.features.gather(interp::plan_from_taps(
        taps,
        points.len(),
        4,
        mpi.channels(),
    ))?;
    Ok((feats, plane_index))
}

/// Serializable description of an embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedderSpec {
    Positional {
        n_freq: usize,
        #[serde(default = "yes")]
        include_input: bool,
    },
    Voxel {
        resolution: usize,
        channels: usize,
        #[serde(default = "default_init_std")]
        init_std: f64,
    },
    Planes {
        axes: Vec<AxisPair>,
        resolution: usize,
        channels: usize,
        #[serde(default)]
        aggregation: Aggregation,
        #[serde(default = "default_init_std")]
        init_std: f64,
    },
    Mpi {
        planes: usize,
        resolution: usize,
        channels: usize,
        #[serde(default = "default_init_std")]
        init_std: f64,
    },
    Composite {
        children: Vec<EmbedderSpec>,
    },
}

fn yes() -> bool {
    true
}

fn default_init_std() -> f64 {
    0.1
}

impl EmbedderSpec {
    /// Raw coordinates as features.
    pub fn identity() -> Self {
        EmbedderSpec::Positional {
            n_freq: 0,
            include_input: true,
        }
    }

    pub fn voxel(resolution: usize, channels: usize) -> Self {
        EmbedderSpec::Voxel {
            resolution,
            channels,
            init_std: default_init_std(),
        }
    }

    pub fn planes(axes: &[AxisPair], resolution: usize, channels: usize) -> Self {
        EmbedderSpec::Planes {
            axes: axes.to_vec(),
            resolution,
            channels,
            aggregation: Aggregation::Sum,
            init_std: default_init_std(),
        }
    }

    pub fn triplane(resolution: usize, channels: usize) -> Self {
        Self::planes(
            &[AxisPair::Xy, AxisPair::Xz, AxisPair::Zy],
            resolution,
            channels,
        )
    }

    pub fn mpi(planes: usize, resolution: usize, channels: usize) -> Self {
        EmbedderSpec::Mpi {
            planes,
            resolution,
            channels,
            init_std: default_init_std(),
        }
    }

    pub fn out_channels(&self) -> Result<usize> {
        Ok(match self {
            EmbedderSpec::Positional {
                n_freq,
                include_input,
            } => PositionalEncoding {
                n_freq: *n_freq,
                include_input: *include_input,
            }
            .out_channels(),
            EmbedderSpec::Voxel { channels, .. } | EmbedderSpec::Mpi { channels, .. } => *channels,
            EmbedderSpec::Planes {
                axes,
                channels,
                aggregation,
                ..
            } => match aggregation {
                Aggregation::Concat => channels * axes.len(),
                _ => *channels,
            },
            EmbedderSpec::Composite { children } => children
                .iter()
                .map(|c| c.out_channels())
                .sum::<Result<usize>>()?,
        })
    }

    pub fn is_mpi(&self) -> bool {
        matches!(self, EmbedderSpec::Mpi { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EmbedderSpec::Positional {
                n_freq,
                include_input,
            } => {
                if *n_freq == 0 && !include_input {
                    return Err(Error::config("positional encoding with no outputs"));
                }
            }
            EmbedderSpec::Voxel {
                resolution,
                channels,
                ..
            } => {
                if *resolution < 2 || *channels == 0 {
                    return Err(Error::config(
                        "voxel grid needs resolution ≥ 2 and channels ≥ 1",
                    ));
                }
            }
            EmbedderSpec::Planes {
                axes,
                resolution,
                channels,
                ..
            } => {
                if axes.is_empty() || axes.len() > 3 || *resolution < 2 || *channels == 0 {
                    return Err(Error::config(
                        "plane set needs 1-3 planes, resolution ≥ 2, channels ≥ 1",
                    ));
                }
                for (i, a) in axes.iter().enumerate() {
                    if axes[..i].contains(a) {
                        return Err(Error::config(format!("duplicate plane {:?}", a)));
                    }
                }
            }
            EmbedderSpec::Mpi {
                planes,
                resolution,
                channels,
                ..
            } => {
                if *planes < 2 || *resolution < 2 || *channels == 0 {
                    return Err(Error::config(
                        "MPI needs ≥ 2 planes, resolution ≥ 2, channels ≥ 1",
                    ));
                }
            }
            EmbedderSpec::Composite { children } => {
                if children.len() < 2 {
                    return Err(Error::config(
                        "composite embedder needs at least 2 children",
                    ));
                }
                if children.iter().any(|c| c.is_mpi()) {
                    return Err(Error::config(
                        "MPI embedders cannot be nested in a composite",
                    ));
                }
                for c in children {
                    c.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn build(&self, rng: &mut SeededRng) -> Result<Embedder> {
        self.validate()?;
        let init = |shape: &[usize], std: f64, rng: &mut SeededRng| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if std > 0.0 {
                let normal = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
                (0..n).map(|_| normal.sample(rng)).collect()
            } else {
                vec![0.0; n]
            };
            Tensor::param(shape, data)
        };
        Ok(match self {
            EmbedderSpec::Positional {
                n_freq,
                include_input,
            } => Embedder::Positional(PositionalEncoding {
                n_freq: *n_freq,
                include_input: *include_input,
            }),
            EmbedderSpec::Voxel {
                resolution: r,
                channels: c,
                init_std,
            } => Embedder::Voxel(VoxelGrid::new(init(&[*c, *r, *r, *r], *init_std, rng)?)?),
            EmbedderSpec::Planes {
                axes,
                resolution: r,
                channels: c,
                aggregation,
                init_std,
            } => {
                let planes = axes
                    .iter()
                    .map(|&a| {
                        Ok(Plane {
                            axes: a,
                            features: init(&[*c, *r, *r], *init_std, rng)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Embedder::Planes(PlaneSet::new(planes, *aggregation)?)
            }
            EmbedderSpec::Mpi {
                planes: k,
                resolution: r,
                channels: c,
                init_std,
            } => {
                let depths = (0..*k)
                    .map(|i| -1.0 + 2.0 * i as f64 / (*k - 1) as f64)
                    .collect();
                Embedder::Mpi(MpiPlanes::new(
                    depths,
                    init(&[*c, *k, *r, *r], *init_std, rng)?,
                )?)
            }
            EmbedderSpec::Composite { children } => Embedder::Composite(CompositeEmbedder {
                children: children
                    .iter()
                    .map(|c| c.build(rng))
                    .collect::<Result<_>>()?,
            }),
        })
    }
}

#[derive(Debug, Clone)]
pub struct CompositeEmbedder {
    pub children: Vec<Embedder>,
}

#[derive(Debug, Clone)]
pub enum Embedder {
    Positional(PositionalEncoding),
    Voxel(VoxelGrid),
    Planes(PlaneSet),
    Mpi(MpiPlanes),
    Composite(CompositeEmbedder),
}

/// Embedder output; `plane_index` is set only for MPI.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub features: Tensor,
    pub plane_index: Option<Vec<usize>>,
}

/// Child features concatenated in declaration order.
pub fn embed_composite(c: &CompositeEmbedder, points: &[[f64; 3]]) -> Result<Tensor> {
    if c.children.len() < 2 {
        return Err(Error::config(
            "composite embedder needs at least 2 children",
        ));
    }
    let parts = c
        .children
        .iter()
        .map(|child| Ok(child.embed(points)?.features))
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat_last(&parts.iter().collect::<Vec<_>>())
}

impl Embedder {
    pub fn kind(&self) -> &'static str {
        match self {
            Embedder::Positional(_) => "positional",
            Embedder::Voxel(_) => "voxel",
            Embedder::Planes(_) => "planes",
            Embedder::Mpi(_) => "mpi",
            Embedder::Composite(_) => "composite",
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Embedder::Positional(p) => p.out_channels(),
            Embedder::Voxel(v) => v.channels(),
            Embedder::Planes(p) => p.out_channels().unwrap_or(0),
            Embedder::Mpi(m) => m.channels(),
            Embedder::Composite(c) => c.children.iter().map(Embedder::out_channels).sum(),
        }
    }

    pub fn embed(&self, points: &[[f64; 3]]) -> Result<Embedding> {
        let (features, plane_index) = match self {
            Embedder::Positional(p) => (encode_positional(points, p), None),
            Embedder::Voxel(v) => (query_voxel(v, points)?, None),
            Embedder::Planes(p) => (query_planes(p, points)?, None),
            Embedder::Mpi(m) => {
                let (f, idx) = query_mpi(m, points)?;
                (f, Some(idx))
            }
            Embedder::Composite(c) => (embed_composite(c, points)?, None),
        };
        Ok(Embedding {
            features,
            plane_index,
        })
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        match self {
            Embedder::Positional(_) => {}
            Embedder::Voxel(v) => out.push((format!("{}/voxel/grid", prefix), &v.features)),
            Embedder::Planes(p) => {
                for plane in &p.planes {
                    out.push((
                        format!("{}/planes/{}", prefix, plane.axes.id()),
                        &plane.features,
                    ));
                }
            }
            Embedder::Mpi(m) => out.push((format!("{}/mpi/stack", prefix), &m.features)),
            Embedder::Composite(c) => {
                for (i, child) in c.children.iter().enumerate() {
                    child.collect(&format!("{}/composite/{}", prefix, i), out);
                }
            }
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        match self {
            Embedder::Positional(_) => {}
            Embedder::Voxel(v) => out.push((format!("{}/voxel/grid", prefix), &mut v.features)),
            Embedder::Planes(p) => {
                for plane in &mut p.planes {
                    out.push((
                        format!("{}/planes/{}", prefix, plane.axes.id()),
                        &mut plane.features,
                    ));
                }
            }
            Embedder::Mpi(m) => out.push((format!("{}/mpi/stack", prefix), &mut m.features)),
            Embedder::Composite(c) => {
                for (i, child) in c.children.iter_mut().enumerate() {
                    child.collect_mut(&format!("{}/composite/{}", prefix, i), out);
                }
            }
        }
    }
}

/// Learnable tensors are named `embedder/<kind>/<id>`.
impl Parameterized for Embedder {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.collect("embedder", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.collect_mut("embedder", &mut out);
        out
    }
}
