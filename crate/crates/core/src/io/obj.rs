//! ASCII OBJ meshes. Writing emits only `v` and `f` records with 1-based
//! indices; reading also accepts `i/j/k` face references, negative
//! (relative) indices and polygons, which are fan-triangulated. Other record
//! types are skipped.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Coordinates are written in shortest round-trip form, so parsing the
/// output reproduces the mesh exactly.
pub fn format_obj(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(32 * (mesh.vertices.len() + mesh.triangles.len()));
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut mesh = Mesh::default();
    for (i, line) in text.lines().enumerate() {
        let err = |detail: String| Error::Parse {
            line: i + 1,
            detail,
        };
        let line = line.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords = tokens
                    .map(|t| t.parse::<f64>().map_err(|e| err(format!("{:?}: {}", t, e))))
                    .collect::<Result<Vec<_>>>()?;
                // An optional fourth (w) component is ignored.
                if !(3..=4).contains(&coords.len()) {
                    return Err(err(format!(
                        "vertex needs 3 coordinates, found {}",
                        coords.len()
                    )));
                }
                if coords.iter().any(|c| !c.is_finite()) {
                    return Err(err("non-finite vertex coordinate".into()));
                }
                mesh.vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let count = mesh.vertices.len();
                let corners = tokens
                    .map(|t| face_index(t, count).map_err(err))
                    .collect::<Result<Vec<_>>>()?;
                if corners.len() < 3 {
                    return Err(err(format!(
                        "face needs 3 vertices, found {}",
                        corners.len()
                    )));
                }
                for k in 1..corners.len() - 1 {
                    mesh.triangles
                        .push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

/// Zero-based vertex index of a face reference such as `7`, `7/2/3` or `-1`.
fn face_index(token: &str, count: usize) -> std::result::Result<usize, String> {
    let head = token.split('/').next().unwrap_or("");
    let raw: i64 = head
        .parse()
        .map_err(|e| format!("face index {:?}: {}", token, e))?;
    let index = match raw {
        0 => None,
        r if r > 0 => usize::try_from(r - 1).ok(),
        r => (count as i64)
            .checked_add(r)
            .and_then(|v| usize::try_from(v).ok()),
    };
    match index {
        Some(v) if v < count => Ok(v),
        _ => Err(format!(
            "face index {} out of range for {} vertices",
            raw, count
        )),
    }
}

pub fn write_obj(path: impl AsRef<Path>, mesh: &Mesh) -> Result<()> {
    std::fs::write(path, format_obj(mesh))?;
    Ok(())
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    parse_obj(&std::fs::read_to_string(path)?)
}
