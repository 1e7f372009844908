//! Triangulated closed surfaces and their discrete tangential calculus.
//!
//! A [`SurfaceMesh`] is validated on construction: every undirected edge is
//! shared by exactly two consistently oriented triangles and every triangle
//! has positive area. Fields live on vertices ([`ScalarField`]) or on
//! triangles ([`TangentField`]).

mod generators;
mod geodesic;
mod io;
mod operators;
mod sparse;

use std::ops::{Index, IndexMut};

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub use generators::{build_icosphere, build_torus, MAX_ICOSPHERE_LEVEL};
pub use geodesic::{geodesic_distance, geodesic_distance_within, graph_diameter};
pub use io::{load_mesh, parse_mesh, save_mesh, write_mesh};
pub use operators::{
    assemble_operators, divergence, gradient, integrate, mass_inner, stiffness_pairing,
    OperatorRole, SparseOperator,
};
pub use sparse::CsrMatrix;

pub type Vec3 = Vector3<f64>;

/// Undirected edge with its two incident triangles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    /// Endpoints, `vertices[0] < vertices[1]`.
    pub vertices: [usize; 2],
    pub triangles: [usize; 2],
}

/// Closed, orientable, manifold triangle mesh embedded in R³.
#[derive(Clone, Debug)]
pub struct SurfaceMesh {
    positions: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    vertex_areas: Vec<f64>,
    triangle_areas: Vec<f64>,
    triangle_normals: Vec<Vec3>,
    edges: Vec<Edge>,
    neighbors: Vec<Vec<usize>>,
    vertex_triangles: Vec<Vec<usize>>,
}

impl SurfaceMesh {
    /// Validates the connectivity and precomputes areas and adjacency.
    pub fn new(positions: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = positions.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i >= n {
                    return Err(Error::IndexOutOfRange {
                        triangle: t,
                        index: i,
                        count: n,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::DegenerateTriangle(t, 0.0));
            }
        }

        // (min, max, triangle, forward?) sorted so equal edges are adjacent.
        let mut half_edges: Vec<(usize, usize, usize, bool)> = Vec::with_capacity(3 * triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                half_edges.push((a.min(b), a.max(b), t, a < b));
            }
        }
        half_edges.sort_unstable();

        let mut edges = Vec::with_capacity(half_edges.len() / 2);
        let mut i = 0;
        while i < half_edges.len() {
            let (a, b, _, _) = half_edges[i];
            let mut j = i;
            while j < half_edges.len() && half_edges[j].0 == a && half_edges[j].1 == b {
                j += 1;
            }
            match j - i {
                1 => return Err(Error::BoundaryEdge(a, b)),
                2 => {
                    let (h0, h1) = (half_edges[i], half_edges[i + 1]);
                    if h0.3 == h1.3 {
                        return Err(Error::Orientation(a, b));
                    }
                    edges.push(Edge {
                        vertices: [a, b],
                        triangles: [h0.2, h1.2],
                    });
                }
                k => return Err(Error::NonManifoldEdge(a, b, k)),
            }
            i = j;
        }

        let mut triangle_areas = Vec::with_capacity(triangles.len());
        let mut triangle_normals = Vec::with_capacity(triangles.len());
        let mut vertex_areas = vec![0.0; n];
        let mut vertex_triangles = vec![Vec::new(); n];
        for (t, tri) in triangles.iter().enumerate() {
            let [p0, p1, p2] = tri.map(|i| positions[i]);
            let cross = (p1 - p0).cross(&(p2 - p0));
            let area = 0.5 * cross.norm();
            if !(area > 0.0) || !area.is_finite() {
                return Err(Error::DegenerateTriangle(t, area));
            }
            triangle_areas.push(area);
            triangle_normals.push(cross / (2.0 * area));
            for &i in tri {
                vertex_areas[i] += area / 3.0;
                vertex_triangles[i].push(t);
            }
        }

        let mut neighbors = vec![Vec::new(); n];
        for e in &edges {
            neighbors[e.vertices[0]].push(e.vertices[1]);
            neighbors[e.vertices[1]].push(e.vertices[0]);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        if let Some(v) = neighbors.iter().position(|nb| nb.is_empty()) {
            return Err(Error::InvalidParameter(format!(
                "vertex {v} is not referenced by any triangle"
            )));
        }

        Ok(Self {
            positions,
            triangles,
            vertex_areas,
            triangle_areas,
            triangle_normals,
            edges,
            neighbors,
            vertex_triangles,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn position(&self, v: usize) -> Vec3 {
        self.positions[v]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex_areas(&self) -> &[f64] {
        &self.vertex_areas
    }

    pub fn triangle_areas(&self) -> &[f64] {
        &self.triangle_areas
    }

    /// Unit outward normal of each triangle (right-hand rule on the winding).
    pub fn triangle_normals(&self) -> &[Vec3] {
        &self.triangle_normals
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Sorted one-ring of `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn vertex_triangles(&self, v: usize) -> &[usize] {
        &self.vertex_triangles[v]
    }

    /// Looks up the undirected edge `{a, b}`.
    pub fn edge(&self, a: usize, b: usize) -> Option<&Edge> {
        let key = [a.min(b), a.max(b)];
        self.edges
            .binary_search_by(|e| e.vertices.cmp(&key))
            .ok()
            .map(|i| &self.edges[i])
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edge_count() as i64 + self.triangle_count() as i64
    }

    pub fn total_area(&self) -> f64 {
        self.triangle_areas.iter().sum()
    }

    pub fn edge_length(&self, e: &Edge) -> f64 {
        (self.positions[e.vertices[0]] - self.positions[e.vertices[1]]).norm()
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edges.iter().map(|e| self.edge_length(e)).fold(0.0, f64::max)
    }

    pub fn mean_edge_length(&self) -> f64 {
        self.edges.iter().map(|e| self.edge_length(e)).sum::<f64>() / self.edges.len() as f64
    }

    /// Area-weighted vertex normal.
    pub fn vertex_normal(&self, v: usize) -> Vec3 {
        let n: Vec3 = self.vertex_triangles[v]
            .iter()
            .map(|&t| self.triangle_normals[t] * self.triangle_areas[t])
            .sum();
        n.normalize()
    }

    /// Deterministic orthonormal tangent frame `(t1, t2)` at `v` with
    /// `t1 × t2 = n`.
    pub fn tangent_basis(&self, v: usize) -> (Vec3, Vec3) {
        frame_from_normal(&self.vertex_normal(v))
    }

    /// Vertices at hop distance 1 or 2 from `v` (excluding `v`), sorted.
    pub fn two_ring(&self, v: usize) -> Vec<usize> {
        let mut ring: Vec<usize> = self.neighbors[v].clone();
        for &w in &self.neighbors[v] {
            ring.extend_from_slice(&self.neighbors[w]);
        }
        ring.sort_unstable();
        ring.dedup();
        ring.retain(|&w| w != v);
        ring
    }

    /// Number of triangles with an obtuse angle (negative cotangent weight).
    pub fn obtuse_triangle_count(&self) -> usize {
        self.triangles
            .iter()
            .filter(|tri| {
                (0..3).any(|k| {
                    let p = self.positions[tri[k]];
                    let a = self.positions[tri[(k + 1) % 3]] - p;
                    let b = self.positions[tri[(k + 2) % 3]] - p;
                    a.dot(&b) < 0.0
                })
            })
            .count()
    }

    /// Copy of the mesh uniformly scaled about the origin.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        Self::new(
            self.positions.iter().map(|p| p * factor).collect(),
            self.triangles.clone(),
        )
    }

    /// Samples a function of the ambient position at every vertex.
    pub fn sample(&self, f: impl Fn(&Vec3) -> f64) -> ScalarField {
        ScalarField(self.positions.iter().map(f).collect())
    }

    pub(crate) fn check_field(&self, field: &ScalarField) -> Result<()> {
        if field.len() != self.vertex_count() {
            return Err(Error::LengthMismatch {
                expected: self.vertex_count(),
                got: field.len(),
            });
        }
        Ok(())
    }
}

pub(crate) fn frame_from_normal(n: &Vec3) -> (Vec3, Vec3) {
    // Pick the coordinate axis least aligned with n.
    let axis = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Vec3::x()
    } else if n.y.abs() <= n.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let t1 = (axis - n * n.dot(&axis)).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Subset of a mesh's vertices, stored as a membership mask.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VertexSet {
    mask: Vec<bool>,
}

impl VertexSet {
    pub fn empty(n: usize) -> Self {
        Self { mask: vec![false; n] }
    }

    pub fn full(n: usize) -> Self {
        Self { mask: vec![true; n] }
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self { mask }
    }

    pub fn from_indices(n: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = vec![false; n];
        for i in indices {
            mask[i] = true;
        }
        Self { mask }
    }

    pub fn universe(&self) -> usize {
        self.mask.len()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.mask[v]
    }

    pub fn insert(&mut self, v: usize) {
        self.mask[v] = true;
    }

    pub fn remove(&mut self, v: usize) {
        self.mask[v] = false;
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Member indices in increasing order.
    pub fn indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn complement(&self) -> Self {
        Self {
            mask: self.mask.iter().map(|b| !b).collect(),
        }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    /// Lumped area `Σ_{v ∈ S} m_v`, i.e. the integral of the indicator.
    pub fn area(&self, mesh: &SurfaceMesh) -> f64 {
        self.mask
            .iter()
            .zip(mesh.vertex_areas())
            .filter(|(&b, _)| b)
            .map(|(_, a)| a)
            .sum()
    }

    pub fn indicator(&self) -> ScalarField {
        ScalarField(self.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }
}

/// Per-vertex scalar values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScalarField(pub Vec<f64>);

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.iter().map(|&x| f(x)).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl From<Vec<f64>> for ScalarField {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Index<usize> for ScalarField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ScalarField {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Per-triangle tangent vectors (each lies in its triangle's plane).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TangentField(pub Vec<Vec3>);

impl TangentField {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.0
    }

    /// Largest `|v·n| / |v|` over all triangles.
    pub fn max_normal_component(&self, mesh: &SurfaceMesh) -> f64 {
        self.0
            .iter()
            .zip(mesh.triangle_normals())
            .filter(|(v, _)| v.norm() > 0.0)
            .map(|(v, n)| v.dot(n).abs() / v.norm())
            .fold(0.0, f64::max)
    }
}

impl Index<usize> for TangentField {
    type Output = Vec3;
    fn index(&self, i: usize) -> &Vec3 {
        &self.0[i]
    }
}
