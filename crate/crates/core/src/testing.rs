//! Test-only mesh fixtures.

use crate::mesh::{SurfaceMesh, Vec3};

/// Closed surface whose top is a flat `side × side` square split into a
/// `k × k` grid of right triangles; the bottom is a pyramid to one apex.
/// Top vertex `(i, j)` has index `i * (k + 1) + j` and sits at
/// `(side·i/k, side·j/k, 0)`.
pub(crate) fn flat_pillow(k: usize, side: f64) -> SurfaceMesh {
    let idx = |i: usize, j: usize| i * (k + 1) + j;
    let mut pos = Vec::new();
    for i in 0..=k {
        for j in 0..=k {
            pos.push(Vec3::new(side * i as f64 / k as f64, side * j as f64 / k as f64, 0.0));
        }
    }
    let mut tris = Vec::new();
    for i in 0..k {
        for j in 0..k {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            tris.push([a, b, c]);
            tris.push([a, c, d]);
        }
    }
    let apex = pos.len();
    pos.push(Vec3::new(0.5 * side, 0.5 * side, -side));
    // boundary ring, counter-clockwise seen from above
    let mut ring = Vec::new();
    ring.extend((0..k).map(|i| idx(i, 0)));
    ring.extend((0..k).map(|j| idx(k, j)));
    ring.extend((0..k).map(|i| idx(k - i, k)));
    ring.extend((0..k).map(|j| idx(0, k - j)));
    for w in 0..ring.len() {
        let (u, v) = (ring[w], ring[(w + 1) % ring.len()]);
        tris.push([v, u, apex]);
    }
    SurfaceMesh::new(pos, tris).expect("valid pillow")
}
