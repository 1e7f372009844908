//! The intrinsic multiplier `f`: normal charts, the local function
//! `x₁ + ½|x|²`, discrete Hessians, the form θ₁, and the certified region
//! `V` on which the pointwise sufficient conditions hold.
//!
//! Charts use a length scale `ℓ` proportional to `sqrt(area / 4π)`: the
//! stored `f` is `ℓ x₁ + ½|x|²`, whose Hessian and Laplacian are
//! dimensionless, and the stored gradient norm is `|∇f| / ℓ`. All three
//! admissibility quantities are then invariant under uniform scaling of
//! the surface.

mod chart;
mod global;
mod hessian;

pub use chart::{build_chart, build_local_f, NormalChart};
pub use global::{
    build_global_multiplier, build_global_multiplier_with, BuilderOptions, CertificationReport, ChartDiagnostics,
};
pub use hessian::{fit_quadratic, fit_quadratic_in_frame, hessian, hessian_masked, Form2, HessianField, LocalFit};

use crate::error::{Error, Result};
use crate::mesh::{gradient, ScalarField, SurfaceMesh, TangentField, VertexSet};

/// Default `ℓ / sqrt(area / 4π)`.
pub const DEFAULT_KAPPA: f64 = 0.1;

/// Positivity margins `(δ₁, δ₂, δ₃)` for `λ_min(θ₁)`, `Δf/2 − 3/4` and
/// `|∇f|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Margins {
    pub theta: f64,
    pub scalar: f64,
    pub gradient: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Self {
            theta: 0.05,
            scalar: 0.05,
            gradient: 0.05,
        }
    }
}

impl Margins {
    pub fn new(theta: f64, scalar: f64, gradient: f64) -> Self {
        Self {
            theta,
            scalar,
            gradient,
        }
    }
}

/// Length scale used for a surface of the given area.
pub fn length_scale_for_area(area: f64, kappa: f64) -> f64 {
    kappa * (area / (4.0 * std::f64::consts::PI)).sqrt()
}

#[derive(Clone, Debug)]
pub struct MultiplierField {
    pub f: ScalarField,
    pub grad_f: TangentField,
    /// `|∇f| / ℓ` at each vertex, from the local fit.
    pub grad_norm: ScalarField,
    pub hess_f: Vec<Form2>,
    pub hess_reliable: Vec<bool>,
    /// `tr Hess f`.
    pub laplacian_f: ScalarField,
    pub region_v: VertexSet,
    /// Chart index of each vertex of `V` (`None` off `V`).
    pub cells: Vec<Option<usize>>,
    pub epsilon_budget: f64,
    pub certified: bool,
    pub length_scale: f64,
    pub margins: Margins,
    pub report: Option<CertificationReport>,
}

impl MultiplierField {
    /// Wraps an arbitrary field: gradients and Hessians from two-ring fits,
    /// empty region, not certified.
    pub fn from_field(mesh: &SurfaceMesh, f: ScalarField, length_scale: f64) -> Result<Self> {
        let h = hessian(mesh, &f)?;
        Self::from_fits(mesh, f, &h, length_scale)
    }

    pub(crate) fn from_fits(mesh: &SurfaceMesh, f: ScalarField, h: &HessianField, length_scale: f64) -> Result<Self> {
        if !(length_scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "length scale must be positive, got {length_scale}"
            )));
        }
        let grad_f = gradient(mesh, &f)?;
        let grad_norm = ScalarField(h.fits.iter().map(|fit| fit.gradient_norm() / length_scale).collect());
        Ok(Self {
            grad_f,
            grad_norm,
            hess_f: h.forms(),
            hess_reliable: h.reliable(),
            laplacian_f: h.laplacian(),
            region_v: VertexSet::empty(mesh.vertex_count()),
            cells: vec![None; mesh.vertex_count()],
            epsilon_budget: 0.0,
            certified: false,
            length_scale,
            margins: Margins::default(),
            report: None,
            f,
        })
    }

    /// Raw `f` of a single chart with the default length scale.
    pub fn local(mesh: &SurfaceMesh, chart: &NormalChart) -> Result<Self> {
        let ell = length_scale_for_area(mesh.total_area(), DEFAULT_KAPPA);
        Self::from_field(mesh, build_local_f(chart, ell), ell)
    }
}

/// Pointwise quantities checked against the margins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VertexMargins {
    pub theta_min: f64,
    /// `Δf/2 − 3/4`.
    pub scalar: f64,
    pub gradient: f64,
}

impl VertexMargins {
    pub fn evaluate(hess: &Form2, laplacian: f64, grad_norm: f64) -> Self {
        Self {
            theta_min: theta1_form(hess, laplacian).min_eigenvalue(),
            scalar: 0.5 * laplacian - 0.75,
            gradient: grad_norm,
        }
    }

    pub fn passes(&self, m: &Margins) -> bool {
        self.theta_min >= m.theta && self.scalar >= m.scalar && self.gradient >= m.gradient
    }
}

/// `θ₁ = Hess f + (n/2 − 3/4 − Δf/2) I` with `n = 2`.
pub fn theta1_form(hess: &Form2, laplacian: f64) -> Form2 {
    hess.add_identity(0.25 - 0.5 * laplacian)
}

pub fn theta1(mesh: &SurfaceMesh, mf: &MultiplierField) -> Result<Vec<Form2>> {
    if mf.hess_f.len() != mesh.vertex_count() || mf.laplacian_f.len() != mesh.vertex_count() {
        return Err(Error::LengthMismatch {
            expected: mesh.vertex_count(),
            got: mf.hess_f.len(),
        });
    }
    Ok(mf
        .hess_f
        .iter()
        .zip(mf.laplacian_f.iter())
        .map(|(h, &l)| theta1_form(h, l))
        .collect())
}

/// Largest vertex set on which every margin holds (unreliable Hessians
/// excluded).
pub fn admissible_region(mesh: &SurfaceMesh, mf: &MultiplierField, margins: &Margins) -> Result<VertexSet> {
    let th = theta1(mesh, mf)?;
    Ok(VertexSet::from_mask(
        (0..mesh.vertex_count())
            .map(|v| {
                mf.hess_reliable[v]
                    && th[v].min_eigenvalue() >= margins.theta
                    && 0.5 * mf.laplacian_f[v] - 0.75 >= margins.scalar
                    && mf.grad_norm[v] >= margins.gradient
            })
            .collect(),
    ))
}
