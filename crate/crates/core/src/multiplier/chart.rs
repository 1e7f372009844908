use crate::error::{Error, Result};
use crate::mesh::{geodesic_distance_within, ScalarField, SurfaceMesh, Vec3};

use super::hessian::{fit_quadratic_in_frame, Form2};

/// Approximate normal coordinates around `origin`.
///
/// A vertex at chord `c` from the origin, whose tangent projection points
/// along the unit vector `ŷ`, gets coordinates `ρ ŷ` with
/// `ρ = (2/|k|) asin(|k| c / 2)` and `k` the origin's normal curvature along
/// `ŷ`. This is exact on planes and spheres. The chart domain is the
/// graph-distance ball of radius `radius`.
#[derive(Clone, Debug)]
pub struct NormalChart {
    pub origin: usize,
    pub basis: (Vec3, Vec3),
    pub radius: f64,
    /// Shape form at the origin (second derivatives of the height over the
    /// tangent plane), in `basis`.
    pub shape: Form2,
    coords: Vec<Option<[f64; 2]>>,
    graph_distance: Vec<f64>,
}

impl NormalChart {
    pub fn coords(&self, v: usize) -> Option<[f64; 2]> {
        self.coords[v]
    }

    pub fn contains(&self, v: usize) -> bool {
        self.coords[v].is_some()
    }

    /// Chart vertices in increasing index order.
    pub fn vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.coords.len()).filter(|&v| self.coords[v].is_some())
    }

    /// Graph distance from the origin (infinite outside the chart).
    pub fn graph_distance(&self, v: usize) -> f64 {
        self.graph_distance[v]
    }

    /// Same chart with the frame rotated by `angle` (counter-clockwise).
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let (e1, e2) = self.basis;
        let shape = {
            let r = |u: [f64; 2]| [c * u[0] - s * u[1], s * u[0] + c * u[1]];
            let a = r([1.0, 0.0]);
            let b = r([0.0, 1.0]);
            let q = |x: [f64; 2], y: [f64; 2]| {
                self.shape.xx * x[0] * y[0]
                    + self.shape.xy * (x[0] * y[1] + x[1] * y[0])
                    + self.shape.yy * x[1] * y[1]
            };
            Form2 {
                xx: q(a, a),
                xy: q(a, b),
                yy: q(b, b),
            }
        };
        Self {
            origin: self.origin,
            basis: (e1 * c + e2 * s, e2 * c - e1 * s),
            radius: self.radius,
            shape,
            coords: self
                .coords
                .iter()
                .map(|x| x.map(|x| [c * x[0] + s * x[1], -s * x[0] + c * x[1]]))
                .collect(),
            graph_distance: self.graph_distance.clone(),
        }
    }
}

pub fn build_chart(mesh: &SurfaceMesh, origin: usize, radius: f64) -> Result<NormalChart> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("chart radius must be positive, got {radius}")));
    }
    if origin >= mesh.vertex_count() {
        return Err(Error::InvalidParameter(format!("chart origin {origin} out of range")));
    }
    if mesh.neighbors(origin).len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "chart origin {origin} has an irregular one-ring (valence {})",
            mesh.neighbors(origin).len()
        )));
    }
    let basis = mesh.tangent_basis(origin);
    let normal = basis.0.cross(&basis.1);
    let po = mesh.position(origin);

    let heights: Vec<f64> = mesh.positions().iter().map(|p| (p - po).dot(&normal)).collect();
    let fit = fit_quadratic_in_frame(mesh, origin, basis, &heights, &mesh.two_ring(origin));
    let shape = if fit.reliable { fit.hessian } else { Form2::ZERO };

    let dist = geodesic_distance_within(mesh, &[origin], radius)?;
    let coords = dist
        .iter()
        .enumerate()
        .map(|(v, d)| {
            if !d.is_finite() {
                return None;
            }
            let chord = mesh.position(v) - po;
            let y = [chord.dot(&basis.0), chord.dot(&basis.1)];
            let ny = y[0].hypot(y[1]);
            if ny == 0.0 {
                return Some([0.0, 0.0]);
            }
            let u = [y[0] / ny, y[1] / ny];
            let k = shape.quadratic(u).abs();
            let c = chord.norm();
            let rho = if k * c < 1e-12 {
                c
            } else {
                2.0 / k * (0.5 * k * c).min(1.0).asin()
            };
            Some([rho * u[0], rho * u[1]])
        })
        .collect();
    Ok(NormalChart {
        origin,
        basis,
        radius,
        shape,
        coords,
        graph_distance: dist.0,
    })
}

/// The local multiplier `ℓ x₁ + ½|x|²` on the chart, 0 outside.
///
/// With `ℓ = 1` this is the classical `x₁ + ½|x|²`; for general `ℓ` it is
/// `ℓ²` times the same function in coordinates measured in units of `ℓ`, so
/// Hessian and Laplacian are unchanged while the critical point moves to
/// `x = −ℓ e₁`.
pub fn build_local_f(chart: &NormalChart, length_scale: f64) -> ScalarField {
    ScalarField(
        chart
            .coords
            .iter()
            .map(|x| match x {
                Some(x) => length_scale * x[0] + 0.5 * (x[0] * x[0] + x[1] * x[1]),
                None => 0.0,
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_icosphere, geodesic_distance};
    use crate::testing::flat_pillow;

    #[test]
    fn origin_maps_to_zero() {
        let m = build_icosphere(3).unwrap();
        let c = build_chart(&m, 17, 0.5).unwrap();
        assert_eq!(c.coords(17), Some([0.0, 0.0]));
        assert_eq!(build_local_f(&c, 1.0)[17], 0.0);
        assert!(build_chart(&m, 17, 0.0).is_err());
    }

    #[test]
    fn flat_patch_coordinates_are_euclidean_offsets() {
        let k = 16;
        let m = flat_pillow(k, 1.0);
        let o = 8 * (k + 1) + 8;
        let c = build_chart(&m, o, 0.3).unwrap();
        let po = m.position(o);
        let mut count = 0;
        for v in c.vertices() {
            let x = c.coords(v).unwrap();
            let d = m.position(v) - po;
            let expected = [d.dot(&c.basis.0), d.dot(&c.basis.1)];
            assert!((x[0] - expected[0]).abs() < 1e-8 && (x[1] - expected[1]).abs() < 1e-8);
            assert!((x[0].hypot(x[1]) - d.norm()).abs() < 1e-12);
            count += 1;
        }
        assert!(count > 20);
    }

    #[test]
    fn sphere_radial_coordinate_tracks_geodesic_distance() {
        let m = build_icosphere(4).unwrap();
        let c = build_chart(&m, 123, 0.5).unwrap();
        let d = geodesic_distance(&m, &[123]).unwrap();
        let h = m.mean_edge_length();
        for v in c.vertices().filter(|&v| v != 123) {
            let x = c.coords(v).unwrap();
            let rho = x[0].hypot(x[1]);
            // exact great-circle distance on the unit sphere
            let exact = m.position(v).dot(&m.position(123)).clamp(-1.0, 1.0).acos();
            assert!((rho - exact).abs() <= 0.02 * exact, "{rho} vs {exact}");
            // the edge-graph field zigzags over the first few rings
            if d[v] >= 4.0 * h {
                assert!((rho - d[v]).abs() <= 0.15 * d[v], "{rho} vs {}", d[v]);
            }
        }
    }

    #[test]
    fn rotation_preserves_norms() {
        let m = build_icosphere(3).unwrap();
        let c = build_chart(&m, 5, 0.6).unwrap();
        let r = c.rotated(0.7);
        for v in c.vertices() {
            let (a, b) = (c.coords(v).unwrap(), r.coords(v).unwrap());
            assert!((a[0].hypot(a[1]) - b[0].hypot(b[1])).abs() < 1e-14);
            let p = m.position(v) - m.position(5);
            // coordinates stay aligned with the rotated frame
            let dir = p.dot(&r.basis.0).atan2(p.dot(&r.basis.1));
            let dir_x = b[0].atan2(b[1]);
            if p.norm() > 0.0 {
                assert!((dir - dir_x).abs() < 1e-9 || ((dir - dir_x).abs() - 2.0 * std::f64::consts::PI).abs() < 1e-9);
            }
        }
        assert!((r.shape.trace() - c.shape.trace()).abs() < 1e-12);
    }
}
