//! Triangle meshes and iso-surface extraction over the [−1, 1]³ cube.

mod tables;

use std::collections::{HashMap, HashSet};

use crate::autodiff::no_grad;
use crate::decoder::GeometryHead;
use crate::error::{Error, Result};
use crate::renderer::Field;

/// Smallest triangle area kept by extraction.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Crossings this close to a grid corner (as a fraction of the edge) are
/// snapped onto it, so a surface through a corner yields one vertex.
const SNAP: f64 = 1e-7;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: [usize; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i]);
        let u = sub(b, a);
        let v = sub(c, a);
        let n = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    /// Checks index bounds, finiteness and triangle areas.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self
            .vertices
            .iter()
            .position(|v| v.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::NonFinite(format!("mesh vertex {}", i)));
        }
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&k| k >= self.vertices.len()) {
                return Err(Error::config(format!(
                    "triangle {} indexes past {} vertices",
                    i,
                    self.vertices.len()
                )));
            }
            if self.triangle_area(*t) <= MIN_TRIANGLE_AREA {
                return Err(Error::config(format!("triangle {} is degenerate", i)));
            }
        }
        Ok(())
    }

    /// Undirected edges, each once.
    pub fn edges(&self) -> HashSet<(usize, usize)> {
        let mut out = HashSet::with_capacity(self.triangles.len() * 3 / 2);
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                out.insert((a.min(b), a.max(b)));
            }
        }
        out
    }

    /// V − E + F; 2 for a closed genus-0 surface.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.triangles.len() as i64
    }

    /// True when every directed edge is matched by its reverse exactly once:
    /// the surface has no boundary and consistent winding.
    pub fn is_closed(&self) -> bool {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Signed enclosed volume; positive when normals face outward.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                    + a[2] * (b[0] * c[1] - b[1] * c[0])
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn flip_winding(&mut self) {
        for t in &mut self.triangles {
            t.swap(1, 2);
        }
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Coordinate of grid index `i` along one axis of a `res`-point lattice.
pub fn grid_coord(res: usize, i: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (res - 1) as f64
}

/// Samples a `res³` lattice over [−1, 1]³ one z-slice at a time; values are
/// ordered with x fastest, then y, then z.
pub fn sample_grid(
    res: usize,
    mut sampler: impl FnMut(&[[f64; 3]]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    check_res(res)?;
    let mut values = Vec::with_capacity(res * res * res);
    let mut slice = Vec::with_capacity(res * res);
    for iz in 0..res {
        slice.clear();
        for iy in 0..res {
            for ix in 0..res {
                slice.push([
                    grid_coord(res, ix),
                    grid_coord(res, iy),
                    grid_coord(res, iz),
                ]);
            }
        }
        let v = sampler(&slice)?;
        if v.len() != slice.len() {
            return Err(Error::shape(
                &[v.len()],
                &[slice.len()],
                "grid sampler output",
            ));
        }
        values.extend(v);
    }
    Ok(values)
}

fn check_res(res: usize) -> Result<()> {
    if res < 8 {
        return Err(Error::config(format!("grid resolution {} is below 8", res)));
    }
    Ok(())
}

/// Extracts the `iso` level set of a pointwise field.
pub fn marching_cubes(field: impl Fn([f64; 3]) -> f64, res: usize, iso: f64) -> Result<Mesh> {
    let values = sample_grid(res, |pts| Ok(pts.iter().map(|&p| field(p)).collect()))?;
    extract(&values, res, iso)
}

/// Geometry head of `field` on a `res³` lattice, meshed at `iso`. Density
/// meshes are wound so normals face out of the dense region, like SDF ones.
pub fn field_mesh(field: &dyn Field, res: usize, iso: f64) -> Result<Mesh> {
    let values = no_grad(|| {
        sample_grid(res, |pts| {
            let dirs = vec![[0.0, 0.0, -1.0]; pts.len()];
            Ok(field.query(pts, &dirs)?.geometry.data().to_vec())
        })
    })?;
    let mut mesh = extract(&values, res, iso)?;
    if field.geometry() == GeometryHead::Density {
        mesh.flip_winding();
    }
    Ok(mesh)
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGE_CORNERS: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [3, 2],
    [0, 3],
    [4, 5],
    [5, 6],
    [7, 6],
    [4, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum VertexKey {
    /// Crossing on the lattice edge from a point along an axis.
    Edge(usize, u8),
    Point(usize),
}

/// Marching cubes over lattice values laid out as by [`sample_grid`].
/// Triangles are wound so normals point toward increasing values; shared
/// crossings are welded, and collapsed or sub-[`MIN_TRIANGLE_AREA`]
/// triangles are dropped.
pub fn extract(values: &[f64], res: usize, iso: f64) -> Result<Mesh> {
    check_res(res)?;
    if values.len() != res * res * res {
        return Err(Error::shape(
            &[values.len()],
            &[res * res * res],
            "lattice values",
        ));
    }
    if !iso.is_finite() {
        return Err(Error::NonFinite("iso level".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "field value at lattice index {}",
            i
        )));
    }
    let index = |p: [usize; 3]| p[0] + res * (p[1] + res * p[2]);
    let point = |i: usize| {
        [
            grid_coord(res, i % res),
            grid_coord(res, (i / res) % res),
            grid_coord(res, i / (res * res)),
        ]
    };

    let mut mesh = Mesh::default();
    let mut welded: HashMap<VertexKey, usize> = HashMap::new();
    let mut vertex = |a: usize, b: usize, mesh: &mut Mesh| -> usize {
        let (va, vb) = (values[a], values[b]);
        let t = (iso - va) / (vb - va);
        let key = if t <= SNAP {
            VertexKey::Point(a)
        } else if t >= 1.0 - SNAP {
            VertexKey::Point(b)
        } else {
            let (lo, hi) = (a.min(b), a.max(b));
            let axis = match hi - lo {
                1 => 0,
                d if d == res => 1,
                _ => 2,
            };
            VertexKey::Edge(lo, axis)
        };
        *welded.entry(key).or_insert_with(|| {
            let p = match key {
                VertexKey::Point(i) => point(i),
                VertexKey::Edge(..) => {
                    let (pa, pb) = (point(a), point(b));
                    [0, 1, 2].map(|k| pa[k] + t * (pb[k] - pa[k]))
                }
            };
            mesh.vertices.push(p);
            mesh.vertices.len() - 1
        })
    };

    for z in 0..res - 1 {
        for y in 0..res - 1 {
            for x in 0..res - 1 {
                let ids = CORNERS.map(|c| index([x + c[0], y + c[1], z + c[2]]));
                let mut case = 0usize;
                for (bit, &i) in ids.iter().enumerate() {
                    if values[i] < iso {
                        case |= 1 << bit;
                    }
                }
                let mask = tables::EDGES[case];
                if mask == 0 {
                    continue;
                }
                let mut on_edge = [usize::MAX; 12];
                for (e, corners) in EDGE_CORNERS.iter().enumerate() {
                    if mask & (1 << e) != 0 {
                        on_edge[e] = vertex(ids[corners[0]], ids[corners[1]], &mut mesh);
                    }
                }
                for tri in tables::TRIANGLES[case].chunks(3).take_while(|t| t[0] >= 0) {
                    // The tables wind toward decreasing values; swap to face up the gradient.
                    let t = [
                        on_edge[tri[0] as usize],
                        on_edge[tri[2] as usize],
                        on_edge[tri[1] as usize],
                    ];
                    if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                        mesh.triangles.push(t);
                    }
                }
            }
        }
    }
    let kept = mesh
        .triangles
        .iter()
        .copied()
        .filter(|&t| mesh.triangle_area(t) > MIN_TRIANGLE_AREA)
        .collect();
    mesh.triangles = kept;
    Ok(compact(mesh))
}

/// Drops vertices no triangle uses and renumbers the rest in order.
fn compact(mesh: Mesh) -> Mesh {
    let mut remap = vec![usize::MAX; mesh.vertices.len()];
    let mut vertices = Vec::new();
    let triangles = mesh
        .triangles
        .iter()
        .map(|t| {
            t.map(|i| {
                if remap[i] == usize::MAX {
                    remap[i] = vertices.len();
                    vertices.push(mesh.vertices[i]);
                }
                remap[i]
            })
        })
        .collect();
    Mesh {
        vertices,
        triangles,
    }
}
