//! Minimal ASCII mesh format.
//!
//! ```text
//! # comment
//! verts N tris M
//! v x y z        (N lines)
//! t i j k        (M lines, 0-based, counter-clockwise seen from outside)
//! ```
//!
//! Floats are written in shortest round-trip form, so save → load is exact.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::{SurfaceMesh, Vec3};
use crate::error::{Error, Result};

pub fn load_mesh(path: impl AsRef<Path>) -> Result<SurfaceMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&text)
}

pub fn parse_mesh(text: &str) -> Result<SurfaceMesh> {
    let mut header: Option<(usize, usize)> = None;
    let mut positions = Vec::new();
    let mut triangles = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line, message };
        let tokens: Vec<&str> = content.split_whitespace().collect();
        match (header, tokens[0]) {
            (None, "verts") => {
                if tokens.len() != 4 || tokens[2] != "tris" {
                    return Err(err("expected header \"verts N tris M\"".into()));
                }
                let n = tokens[1].parse().map_err(|_| err(format!("bad vertex count {:?}", tokens[1])))?;
                let m = tokens[3].parse().map_err(|_| err(format!("bad triangle count {:?}", tokens[3])))?;
                positions.reserve(n);
                triangles.reserve(m);
                header = Some((n, m));
            }
            (None, other) => return Err(err(format!("expected header, found {other:?}"))),
            (Some(_), "v") => {
                if tokens.len() != 4 {
                    return Err(err("vertex line needs 3 coordinates".into()));
                }
                if !triangles.is_empty() {
                    return Err(err("vertex line after triangle lines".into()));
                }
                let mut xyz = [0.0; 3];
                for (k, tok) in tokens[1..].iter().enumerate() {
                    xyz[k] = tok.parse().map_err(|_| err(format!("bad coordinate {tok:?}")))?;
                }
                positions.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            (Some(_), "t") => {
                if tokens.len() != 4 {
                    return Err(err("triangle line needs 3 indices".into()));
                }
                let mut ijk = [0usize; 3];
                for (k, tok) in tokens[1..].iter().enumerate() {
                    ijk[k] = tok.parse().map_err(|_| err(format!("bad index {tok:?}")))?;
                }
                triangles.push(ijk);
            }
            (Some(_), other) => return Err(err(format!("unknown record {other:?}"))),
        }
    }

    let (n, m) = header.ok_or(Error::Parse {
        line: 0,
        message: "missing header".into(),
    })?;
    if positions.len() != n || triangles.len() != m {
        return Err(Error::Parse {
            line: 0,
            message: format!(
                "header declares {n} vertices and {m} triangles, found {} and {}",
                positions.len(),
                triangles.len()
            ),
        });
    }
    SurfaceMesh::new(positions, triangles)
}

/// Serializes the mesh into the ASCII format.
pub fn write_mesh(mesh: &SurfaceMesh) -> String {
    let mut out = String::with_capacity(40 * (mesh.vertex_count() + mesh.triangle_count()));
    let _ = writeln!(out, "verts {} tris {}", mesh.vertex_count(), mesh.triangle_count());
    for p in mesh.positions() {
        let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "t {} {} {}", t[0], t[1], t[2]);
    }
    out
}

pub fn save_mesh(mesh: &SurfaceMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(write_mesh(mesh).as_bytes()).map_err(|e| Error::io(path, e))
}
