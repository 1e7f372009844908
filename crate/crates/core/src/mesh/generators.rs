use std::collections::HashMap;
use std::f64::consts::PI;

use super::{SurfaceMesh, Vec3};
use crate::error::{Error, Result};

/// Memory guard: level 8 already has 1.3M triangles.
pub const MAX_ICOSPHERE_LEVEL: u32 = 8;

/// Unit icosphere obtained by `level` rounds of 1-to-4 subdivision of the
/// icosahedron, with new vertices projected to the sphere.
pub fn build_icosphere(level: u32) -> Result<SurfaceMesh> {
    if level > MAX_ICOSPHERE_LEVEL {
        return Err(Error::InvalidParameter(format!(
            "icosphere level {level} exceeds the memory guard of {MAX_ICOSPHERE_LEVEL} \
             ({} triangles requested)",
            20u64 * 4u64.pow(level)
        )));
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut positions: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::with_capacity(triangles.len() * 3 / 2);
        let mut next = Vec::with_capacity(triangles.len() * 4);
        let mut mid = |a: usize, b: usize, positions: &mut Vec<Vec3>| -> usize {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                positions.push(((positions[a] + positions[b]) * 0.5).normalize());
                positions.len() - 1
            })
        };
        for &[a, b, c] in &triangles {
            let ab = mid(a, b, &mut positions);
            let bc = mid(b, c, &mut positions);
            let ca = mid(c, a, &mut positions);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    SurfaceMesh::new(positions, triangles)
}

/// Torus of revolution about the z axis, sampled on a regular
/// `major_count × minor_count` parameter grid.
pub fn build_torus(
    major_radius: f64,
    minor_radius: f64,
    major_count: usize,
    minor_count: usize,
) -> Result<SurfaceMesh> {
    if !(minor_radius > 0.0 && major_radius > minor_radius) || !major_radius.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "torus radii must satisfy major > minor > 0, got R = {major_radius}, r = {minor_radius}"
        )));
    }
    if major_count < 3 || minor_count < 3 {
        return Err(Error::InvalidParameter(format!(
            "torus counts must be at least 3, got {major_count} × {minor_count}"
        )));
    }
    let idx = |i: usize, j: usize| (i % major_count) * minor_count + (j % minor_count);
    let mut positions = Vec::with_capacity(major_count * minor_count);
    for i in 0..major_count {
        let theta = 2.0 * PI * i as f64 / major_count as f64;
        for j in 0..minor_count {
            let phi = 2.0 * PI * j as f64 / minor_count as f64;
            let rho = major_radius + minor_radius * phi.cos();
            positions.push(Vec3::new(rho * theta.cos(), rho * theta.sin(), minor_radius * phi.sin()));
        }
    }
    let mut triangles = Vec::with_capacity(2 * major_count * minor_count);
    for i in 0..major_count {
        for j in 0..minor_count {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            // (a, d, c) winds outward for increasing theta and phi.
            triangles.push([a, c, b]);
            triangles.push([a, d, c]);
        }
    }
    // Orient outward: at phi = 0 the outward normal is the radial direction.
    let m = SurfaceMesh::new(positions.clone(), triangles.clone())?;
    let t0 = 0;
    let p = m.position(m.triangles()[t0][0]);
    let radial = Vec3::new(p.x, p.y, 0.0).normalize();
    if m.triangle_normals()[t0].dot(&radial) < 0.0 {
        for t in &mut triangles {
            t.swap(1, 2);
        }
        return SurfaceMesh::new(positions, triangles);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_zero_is_the_icosahedron() {
        let m = build_icosphere(0).unwrap();
        assert_eq!((m.vertex_count(), m.triangle_count(), m.edge_count()), (12, 20, 30));
    }

    #[test]
    fn quadrisection_counts() {
        for s in 0..4 {
            let m = build_icosphere(s).unwrap();
            assert_eq!(m.triangle_count(), 20 * 4usize.pow(s));
            assert_eq!(m.euler_characteristic(), 2);
        }
    }

    #[test]
    fn icosphere_is_outward_and_on_the_unit_sphere() {
        let m = build_icosphere(2).unwrap();
        for p in m.positions() {
            assert!((p.norm() - 1.0).abs() < 1e-14);
        }
        for (tri, n) in m.triangles().iter().zip(m.triangle_normals()) {
            let c = (m.position(tri[0]) + m.position(tri[1]) + m.position(tri[2])) / 3.0;
            assert!(n.dot(&c) > 0.0);
        }
    }

    #[test]
    fn level_four_area_close_to_four_pi() {
        let m = build_icosphere(4).unwrap();
        let rel = (m.total_area() - 4.0 * PI).abs() / (4.0 * PI);
        assert!(rel < 5e-3, "relative area error {rel}");
    }

    #[test]
    fn level_guard() {
        let err = build_icosphere(MAX_ICOSPHERE_LEVEL + 1).unwrap_err();
        assert!(err.to_string().contains("memory guard"));
    }

    #[test]
    fn torus_topology_and_area() {
        let m = build_torus(2.0, 0.5, 128, 64).unwrap();
        assert_eq!(m.euler_characteristic(), 0);
        let exact = 4.0 * PI * PI * 2.0 * 0.5;
        assert!((m.total_area() - exact).abs() / exact < 5e-3);
        // outward: the outermost vertex has a normal pointing away from the axis
        let p = m.position(0);
        assert!(m.vertex_normal(0).dot(&Vec3::new(p.x, p.y, 0.0)) > 0.0);
    }

    #[test]
    fn torus_rejects_bad_parameters() {
        assert!(build_torus(2.0, 0.5, 8, 2).is_err());
        assert!(build_torus(0.5, 0.5, 8, 8).is_err());
        assert!(build_torus(2.0, 0.0, 8, 8).is_err());
        assert_eq!(build_torus(1.0, 0.3, 3, 3).unwrap().euler_characteristic(), 0);
    }
}
