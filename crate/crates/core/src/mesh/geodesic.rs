use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{ScalarField, SurfaceMesh};
use crate::error::{Error, Result};

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties by vertex index for determinism
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest-path distance along mesh edges from the nearest seed.
pub fn geodesic_distance(mesh: &SurfaceMesh, seeds: &[usize]) -> Result<ScalarField> {
    geodesic_distance_within(mesh, seeds, f64::INFINITY)
}

/// As [`geodesic_distance`], but stops expanding beyond `cutoff`; vertices
/// farther away get `f64::INFINITY`.
pub fn geodesic_distance_within(mesh: &SurfaceMesh, seeds: &[usize], cutoff: f64) -> Result<ScalarField> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("geodesic distance needs at least one seed".into()));
    }
    let n = mesh.vertex_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for &s in seeds {
        if s >= n {
            return Err(Error::InvalidParameter(format!("seed {s} out of range ({n} vertices)")));
        }
        dist[s] = 0.0;
        heap.push(Entry(0.0, s));
    }
    while let Some(Entry(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        let pv = mesh.position(v);
        for &w in mesh.neighbors(v) {
            let nd = d + (mesh.position(w) - pv).norm();
            if nd < dist[w] && nd <= cutoff {
                dist[w] = nd;
                heap.push(Entry(nd, w));
            }
        }
    }
    Ok(ScalarField(dist))
}

/// Double-sweep estimate of the graph diameter (exact on trees, a tight
/// lower bound in practice).
pub fn graph_diameter(mesh: &SurfaceMesh) -> f64 {
    let far = |src: usize| {
        let d = geodesic_distance(mesh, &[src]).expect("valid seed");
        d.iter()
            .enumerate()
            .fold((src, 0.0), |(bi, bd), (i, &x)| if x > bd { (i, x) } else { (bi, bd) })
    };
    let (a, _) = far(0);
    far(a).1
}
