//! Discrete Hessians from local quadratic least-squares fits.
//!
//! At a vertex `v` with tangent frame `(e₁, e₂)` every stencil vertex `w`
//! gets tangent-plane coordinates `(s, t)` of `p_w − p_v`, and the model
//! `f(w) − f(v) ≈ g·(s, t) + ½ (s, t) H (s, t)ᵀ` is fitted. Tangent-plane
//! graph coordinates have vanishing Christoffel symbols at `v`, so `H`
//! approximates the covariant Hessian there.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::Result;
use crate::mesh::{ScalarField, SurfaceMesh, Vec3};

/// Symmetric 2×2 form `[[xx, xy], [xy, yy]]` in a vertex tangent frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Form2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Form2 {
    pub const ZERO: Form2 = Form2 {
        xx: 0.0,
        xy: 0.0,
        yy: 0.0,
    };

    pub fn identity() -> Self {
        Self {
            xx: 1.0,
            xy: 0.0,
            yy: 1.0,
        }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// `(λ_min, λ_max)`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.xx + self.yy);
        let half_gap = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (mean - half_gap, mean + half_gap)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().0
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            xx: c * self.xx,
            xy: c * self.xy,
            yy: c * self.yy,
        }
    }

    pub fn add_identity(&self, c: f64) -> Self {
        Self {
            xx: self.xx + c,
            xy: self.xy,
            yy: self.yy + c,
        }
    }

    /// `wᵀ F w`.
    pub fn quadratic(&self, w: [f64; 2]) -> f64 {
        self.xx * w[0] * w[0] + 2.0 * self.xy * w[0] * w[1] + self.yy * w[1] * w[1]
    }

    /// Largest entrywise distance to `other`.
    pub fn max_abs_diff(&self, other: &Form2) -> f64 {
        (self.xx - other.xx)
            .abs()
            .max((self.xy - other.xy).abs())
            .max((self.yy - other.yy).abs())
    }
}

/// Result of one local fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalFit {
    /// Tangential gradient in the vertex frame.
    pub gradient: [f64; 2],
    pub hessian: Form2,
    /// False when the stencil has fewer than 5 points or is rank deficient.
    pub reliable: bool,
}

impl LocalFit {
    pub const UNRELIABLE: LocalFit = LocalFit {
        gradient: [0.0, 0.0],
        hessian: Form2::ZERO,
        reliable: false,
    };

    pub fn gradient_norm(&self) -> f64 {
        self.gradient[0].hypot(self.gradient[1])
    }
}

const MIN_STENCIL: usize = 5;
const RANK_TOLERANCE: f64 = 1e-6;

/// Fits the quadratic model of `values` at `v` over `stencil` using the
/// tangent frame `(e1, e2)`.
pub fn fit_quadratic_in_frame(
    mesh: &SurfaceMesh,
    v: usize,
    frame: (Vec3, Vec3),
    values: &[f64],
    stencil: &[usize],
) -> LocalFit {
    let k = stencil.len();
    if k < MIN_STENCIL {
        return LocalFit::UNRELIABLE;
    }
    let pv = mesh.position(v);
    let st: Vec<(f64, f64)> = stencil
        .iter()
        .map(|&w| {
            let d = mesh.position(w) - pv;
            (d.dot(&frame.0), d.dot(&frame.1))
        })
        .collect();
    let h = (st.iter().map(|(s, t)| s * s + t * t).sum::<f64>() / k as f64).sqrt();
    if !(h > 0.0) {
        return LocalFit::UNRELIABLE;
    }
    let mut a = DMatrix::zeros(k, 5);
    let mut b = DVector::zeros(k);
    for (row, (&w, &(s, t))) in stencil.iter().zip(&st).enumerate() {
        let (s, t) = (s / h, t / h);
        a[(row, 0)] = s;
        a[(row, 1)] = t;
        a[(row, 2)] = 0.5 * s * s;
        a[(row, 3)] = s * t;
        a[(row, 4)] = 0.5 * t * t;
        b[row] = values[w] - values[v];
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > RANK_TOLERANCE * smax) {
        return LocalFit::UNRELIABLE;
    }
    let x = match svd.solve(&b, 0.0) {
        Ok(x) => x,
        Err(_) => return LocalFit::UNRELIABLE,
    };
    let h2 = h * h;
    LocalFit {
        gradient: [x[0] / h, x[1] / h],
        hessian: Form2 {
            xx: x[2] / h2,
            xy: x[3] / h2,
            yy: x[4] / h2,
        },
        reliable: true,
    }
}

/// [`fit_quadratic_in_frame`] in the mesh's vertex tangent frame.
pub fn fit_quadratic(mesh: &SurfaceMesh, v: usize, values: &[f64], stencil: &[usize]) -> LocalFit {
    fit_quadratic_in_frame(mesh, v, mesh.tangent_basis(v), values, stencil)
}

/// Per-vertex fits of a field.
#[derive(Clone, Debug)]
pub struct HessianField {
    pub fits: Vec<LocalFit>,
}

impl HessianField {
    pub fn forms(&self) -> Vec<Form2> {
        self.fits.iter().map(|f| f.hessian).collect()
    }

    pub fn reliable(&self) -> Vec<bool> {
        self.fits.iter().map(|f| f.reliable).collect()
    }

    /// `tr H` at each vertex.
    pub fn laplacian(&self) -> ScalarField {
        ScalarField(self.fits.iter().map(|f| f.hessian.trace()).collect())
    }

    pub fn unreliable_count(&self) -> usize {
        self.fits.iter().filter(|f| !f.reliable).count()
    }
}

/// Two-ring quadratic fit at every vertex.
pub fn hessian(mesh: &SurfaceMesh, field: &ScalarField) -> Result<HessianField> {
    hessian_masked(mesh, field, |_, _| true)
}

/// As [`hessian`], with the stencil of `v` restricted to two-ring vertices
/// `w` for which `allowed(v, w)` holds.
pub fn hessian_masked(
    mesh: &SurfaceMesh,
    field: &ScalarField,
    allowed: impl Fn(usize, usize) -> bool + Sync,
) -> Result<HessianField> {
    mesh.check_field(field)?;
    let values = field.values();
    let fits = (0..mesh.vertex_count())
        .into_par_iter()
        .map(|v| {
            let mut stencil = mesh.two_ring(v);
            stencil.retain(|&w| allowed(v, w));
            fit_quadratic(mesh, v, values, &stencil)
        })
        .collect();
    Ok(HessianField { fits })
}
