//! Audits of the integral identities and inequalities on discrete
//! trajectories.
//!
//! Space integrals use the lumped mass at vertices and triangle areas for
//! gradient terms. Time integrals use the trapezoid rule on snapshots, and
//! boundary terms use the first and last snapshot.

use std::fmt::Write as _;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::damping::{DampingField, FeedbackLaw};
use crate::echo::ConfigEcho;
use crate::error::{Error, Result};
use crate::linalg::{lanczos_extremes, smallest_eigenpairs, weighted_dot};
use crate::mesh::{assemble_operators, divergence, gradient, ScalarField, SurfaceMesh, TangentField, Vec3};
use crate::multiplier::{theta1_form, Form2, MultiplierField};
use crate::solver::{project_mean_zero, random_initial_data, simulate, SimulationTrace, WaveState};

/// Largest snapshot stride accepted by the identity audits.
pub const MAX_SNAPSHOT_STRIDE: usize = 10;

/// Named terms of an identity whose sum should vanish.
#[derive(Clone, Debug)]
pub struct ResidualReport {
    pub identity: &'static str,
    pub terms: Vec<(&'static str, f64)>,
    /// Signed sum of the terms.
    pub residual: f64,
    /// `|residual| / max |term|` (0 when every term vanishes).
    pub normalized: f64,
    pub snapshots: usize,
    pub config_echo: ConfigEcho,
}

impl ResidualReport {
    fn new(identity: &'static str, terms: Vec<(&'static str, f64)>, residual: f64, snapshots: usize) -> Self {
        let scale = terms.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
        Self {
            identity,
            normalized: if scale > 0.0 { residual.abs() / scale } else { 0.0 },
            residual,
            terms,
            snapshots,
            config_echo: ConfigEcho::default(),
        }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.config_echo.comment_block();
        out.push_str("key,value\n");
        let _ = writeln!(out, "identity,{}", self.identity);
        for (name, v) in &self.terms {
            let _ = writeln!(out, "term_{name},{v:.16e}");
        }
        let _ = writeln!(out, "residual,{:.16e}", self.residual);
        let _ = writeln!(out, "normalized,{:.16e}", self.normalized);
        let _ = writeln!(out, "snapshots,{}", self.snapshots);
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "{} identity: residual {:.3e} (normalized {:.3e}) over {} snapshots",
            self.identity, self.residual, self.normalized, self.snapshots
        )
    }
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

fn checked_snapshots(mesh: &SurfaceMesh, trace: &SimulationTrace) -> Result<Vec<f64>> {
    if trace.snapshots.len() < 2 {
        return Err(Error::InvalidParameter(
            "trace has no snapshots; rerun with a snapshot stride".into(),
        ));
    }
    if trace.snapshot_stride == 0 || trace.snapshot_stride > MAX_SNAPSHOT_STRIDE {
        return Err(Error::InvalidParameter(format!(
            "snapshot stride {} exceeds {MAX_SNAPSHOT_STRIDE} steps",
            trace.snapshot_stride
        )));
    }
    for s in &trace.snapshots {
        mesh.check_field(&s.u)?;
        mesh.check_field(&s.v)?;
    }
    Ok(trace.snapshots.iter().map(|s| s.t).collect())
}

fn triangle_mean(mesh: &SurfaceMesh, t: usize, values: &[f64]) -> f64 {
    let tri = mesh.triangles()[t];
    (values[tri[0]] + values[tri[1]] + values[tri[2]]) / 3.0
}

/// A vertex form `F` in the vertex frame as the ambient tensor
/// `F_xx e₁e₁ᵀ + F_xy (e₁e₂ᵀ + e₂e₁ᵀ) + F_yy e₂e₂ᵀ`.
fn ambient_tensor(frame: (Vec3, Vec3), f: &Form2) -> Matrix3<f64> {
    let (e1, e2) = frame;
    e1 * e1.transpose() * f.xx + (e1 * e2.transpose() + e2 * e1.transpose()) * f.xy + e2 * e2.transpose() * f.yy
}

/// Per-triangle mean of the vertex Hessians of `f`, as ambient tensors.
fn triangle_hessians(mesh: &SurfaceMesh, forms: &[Form2]) -> Vec<Matrix3<f64>> {
    let vertex: Vec<Matrix3<f64>> = (0..mesh.vertex_count())
        .map(|v| ambient_tensor(mesh.tangent_basis(v), &forms[v]))
        .collect();
    mesh.triangles()
        .iter()
        .map(|tri| (vertex[tri[0]] + vertex[tri[1]] + vertex[tri[2]]) / 3.0)
        .collect()
}

/// Residual of the multiplier identity with `q = ∇f`:
///
/// ```text
/// [∫ u_t q·∇u]₀ᵀ + ½∫∫ div q (u_t² − |∇u|²) + ∫∫ Hess f(∇u, ∇u) + ∫∫ a g(u_t) q·∇u = 0
/// ```
pub fn multiplier_identity_residual(
    mesh: &SurfaceMesh,
    trace: &SimulationTrace,
    mf: &MultiplierField,
    damping: &DampingField,
    law: &FeedbackLaw,
) -> Result<ResidualReport> {
    let times = checked_snapshots(mesh, trace)?;
    mesh.check_field(&mf.f)?;
    mesh.check_field(&damping.a)?;
    let q = &mf.grad_f;
    let div_q = divergence(mesh, q);
    let hess = triangle_hessians(mesh, &mf.hess_f);
    let areas = mesh.triangle_areas();
    let masses = mesh.vertex_areas();

    let per_snapshot: Vec<[f64; 4]> = trace
        .snapshots
        .par_iter()
        .map(|s| -> Result<[f64; 4]> {
            let gu = gradient(mesh, &s.u)?;
            let ag: Vec<f64> = (0..mesh.vertex_count()).map(|v| damping.a[v] * law.eval(s.v[v])).collect();
            let mut boundary = 0.0;
            let mut div_term = 0.0;
            let mut hess_term = 0.0;
            let mut damp_term = 0.0;
            for t in 0..mesh.triangle_count() {
                let g = gu[t];
                let qg = q[t].dot(&g);
                let a = areas[t];
                boundary += a * triangle_mean(mesh, t, &s.v.0) * qg;
                div_term -= 0.5 * a * triangle_mean(mesh, t, &div_q.0) * g.norm_squared();
                hess_term += a * g.dot(&(hess[t] * g));
                damp_term += a * triangle_mean(mesh, t, &ag) * qg;
            }
            for v in 0..mesh.vertex_count() {
                div_term += 0.5 * masses[v] * div_q[v] * s.v[v] * s.v[v];
            }
            Ok([boundary, div_term, hess_term, damp_term])
        })
        .collect::<Result<_>>()?;

    let column = |k: usize| -> Vec<f64> { per_snapshot.iter().map(|r| r[k]).collect() };
    let boundary = column(0);
    let terms = vec![
        ("boundary", boundary[boundary.len() - 1] - boundary[0]),
        ("divergence", trapezoid(&times, &column(1))),
        ("hessian", trapezoid(&times, &column(2))),
        ("damping", trapezoid(&times, &column(3))),
    ];
    let residual = terms.iter().map(|(_, v)| v).sum();
    let mut report = ResidualReport::new("multiplier", terms, residual, times.len());
    report.config_echo = trace.config_echo.clone();
    Ok(report)
}

/// Residual of
///
/// ```text
/// [∫ u_t ξ u]₀ᵀ − ∫∫ ξ u_t² + ∫∫ ξ |∇u|² + ∫∫ (∇u·∇ξ) u + ∫∫ a g(u_t) ξ u = 0
/// ```
///
/// with terms reported as `boundary`, `kinetic` (`∫∫ ξ u_t²`), `gradient`,
/// `cross` and `damping`; the residual is
/// `boundary − kinetic + gradient + cross + damping`.
pub fn xi_identity_residual(
    mesh: &SurfaceMesh,
    trace: &SimulationTrace,
    xi: &ScalarField,
    damping: &DampingField,
    law: &FeedbackLaw,
) -> Result<ResidualReport> {
    let times = checked_snapshots(mesh, trace)?;
    mesh.check_field(xi)?;
    mesh.check_field(&damping.a)?;
    let gxi = gradient(mesh, xi)?;
    let areas = mesh.triangle_areas();
    let masses = mesh.vertex_areas();

    let per_snapshot: Vec<[f64; 5]> = trace
        .snapshots
        .par_iter()
        .map(|s| -> Result<[f64; 5]> {
            let gu = gradient(mesh, &s.u)?;
            let mut r = [0.0; 5];
            for v in 0..mesh.vertex_count() {
                let m = masses[v];
                r[0] += m * s.v[v] * xi[v] * s.u[v];
                r[1] += m * xi[v] * s.v[v] * s.v[v];
                r[4] += m * damping.a[v] * law.eval(s.v[v]) * xi[v] * s.u[v];
            }
            for t in 0..mesh.triangle_count() {
                let a = areas[t];
                r[2] += a * triangle_mean(mesh, t, &xi.0) * gu[t].norm_squared();
                r[3] += a * gu[t].dot(&gxi[t]) * triangle_mean(mesh, t, &s.u.0);
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;

    let column = |k: usize| -> Vec<f64> { per_snapshot.iter().map(|r| r[k]).collect() };
    let boundary = column(0);
    let terms = vec![
        ("boundary", boundary[boundary.len() - 1] - boundary[0]),
        ("kinetic", trapezoid(&times, &column(1))),
        ("gradient", trapezoid(&times, &column(2))),
        ("cross", trapezoid(&times, &column(3))),
        ("damping", trapezoid(&times, &column(4))),
    ];
    let residual = terms[0].1 - terms[1].1 + terms[2].1 + terms[3].1 + terms[4].1;
    let mut report = ResidualReport::new("xi", terms, residual, times.len());
    report.config_echo = trace.config_echo.clone();
    Ok(report)
}

/// Area-weighted mean of the incident triangle gradients at each vertex, in
/// the vertex tangent frame.
pub fn vertex_gradients(mesh: &SurfaceMesh, grad: &TangentField) -> Vec<[f64; 2]> {
    (0..mesh.vertex_count())
        .map(|v| {
            let mut acc = Vec3::zeros();
            let mut area = 0.0;
            for &t in mesh.vertex_triangles(v) {
                acc += grad[t] * mesh.triangle_areas()[t];
                area += mesh.triangle_areas()[t];
            }
            let g = acc / area;
            let (e1, e2) = mesh.tangent_basis(v);
            [g.dot(&e1), g.dot(&e2)]
        })
        .collect()
}

/// Both sides of the main inequality on `V` with `α = ½`, `C = ¼`:
///
/// ```text
/// C ∫∫_V (u_t² + |∇u|²) ≤ ∫∫_V (Δf/2 − α) u_t² + ∫∫_V [Hess f(∇u, ∇u) + (α − Δf/2)|∇u|²]
/// ```
#[derive(Clone, Debug)]
pub struct MainInequalityReport {
    pub left: f64,
    pub right: f64,
    /// `right / left` (infinite when `left = 0 < right`, 1 when both vanish).
    pub ratio: f64,
    /// Snapshots at which the pointwise-in-time inequality fails beyond
    /// `1e-8` of the term scale.
    pub violations: usize,
    pub snapshots: usize,
    /// Smallest `λ_min(θ₁)` and `Δf/2 − 3/4` over `V`.
    pub min_theta: f64,
    pub min_scalar: f64,
    pub warning: Option<String>,
    pub config_echo: ConfigEcho,
}

impl MainInequalityReport {
    pub fn to_csv(&self) -> String {
        let mut out = self.config_echo.comment_block();
        out.push_str("key,value\n");
        let _ = writeln!(out, "left,{:.16e}", self.left);
        let _ = writeln!(out, "right,{:.16e}", self.right);
        let _ = writeln!(out, "ratio,{:.16e}", self.ratio);
        let _ = writeln!(out, "violations,{}", self.violations);
        let _ = writeln!(out, "snapshots,{}", self.snapshots);
        let _ = writeln!(out, "min_theta,{:.16e}", self.min_theta);
        let _ = writeln!(out, "min_scalar,{:.16e}", self.min_scalar);
        if let Some(w) = &self.warning {
            let _ = writeln!(out, "warning,{}", w.replace(',', ";"));
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "main inequality on V: left {:.6e}, right {:.6e}, ratio {:.4}, {} violating snapshots{}",
            self.left,
            self.right,
            self.ratio,
            self.violations,
            self.warning.as_deref().map(|w| format!(" [{w}]")).unwrap_or_default()
        )
    }
}

/// Smallest `λ_min(θ₁)` and `Δf/2 − 3/4` over the certified region (both
/// infinite when `V` is empty).
pub fn pointwise_sufficiency(mf: &MultiplierField) -> (f64, f64) {
    mf.region_v
        .indices()
        .into_iter()
        .map(|v| {
            (
                theta1_form(&mf.hess_f[v], mf.laplacian_f[v]).min_eigenvalue(),
                0.5 * mf.laplacian_f[v] - 0.75,
            )
        })
        .fold((f64::INFINITY, f64::INFINITY), |a, b| (a.0.min(b.0), a.1.min(b.1)))
}

pub fn main_inequality_check(
    mesh: &SurfaceMesh,
    trace: &SimulationTrace,
    mf: &MultiplierField,
) -> Result<MainInequalityReport> {
    let times = checked_snapshots(mesh, trace)?;
    let warning = (!mf.certified).then(|| "multiplier is not certified".to_string());
    if let Some(w) = &warning {
        log::warn!("main inequality check: {w}");
    }
    let region = mf.region_v.indices();
    let masses = mesh.vertex_areas();
    let sides: Vec<(f64, f64)> = trace
        .snapshots
        .par_iter()
        .map(|s| -> Result<(f64, f64)> {
            let g = vertex_gradients(mesh, &gradient(mesh, &s.u)?);
            let mut left = 0.0;
            let mut right = 0.0;
            for &v in &region {
                let m = masses[v];
                let ut2 = s.v[v] * s.v[v];
                let gg = g[v][0] * g[v][0] + g[v][1] * g[v][1];
                let half_lap = 0.5 * mf.laplacian_f[v];
                left += 0.25 * m * (ut2 + gg);
                right += m * ((half_lap - 0.5) * ut2 + mf.hess_f[v].quadratic(g[v]) + (0.5 - half_lap) * gg);
            }
            Ok((left, right))
        })
        .collect::<Result<_>>()?;
    let violations = sides
        .iter()
        .filter(|(l, r)| *r < *l - 1e-8 * l.abs().max(r.abs()))
        .count();
    let left = trapezoid(&times, &sides.iter().map(|s| s.0).collect::<Vec<_>>());
    let right = trapezoid(&times, &sides.iter().map(|s| s.1).collect::<Vec<_>>());
    let ratio = if left > 0.0 {
        right / left
    } else if right > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    let (min_theta, min_scalar) = pointwise_sufficiency(mf);
    Ok(MainInequalityReport {
        left,
        right,
        ratio,
        violations,
        snapshots: times.len(),
        min_theta,
        min_scalar,
        warning,
        config_echo: trace.config_echo.clone(),
    })
}

#[derive(Clone, Debug)]
pub struct PoincareReport {
    pub lambda1: f64,
    pub eigen_residual: f64,
    /// `uᵀLu / (λ₁ ‖u‖²_M)` for the first eigenfunction.
    pub first_mode_ratio: f64,
    pub fields: usize,
    /// Smallest `uᵀLu / (λ₁ ‖u‖²_M)` over the random fields.
    pub min_ratio: f64,
    /// Fields with `‖u‖² > λ₁⁻¹ ‖∇u‖² (1 + 1e-10)`.
    pub violations: usize,
    pub config_echo: ConfigEcho,
}

impl PoincareReport {
    pub fn to_csv(&self) -> String {
        let mut out = self.config_echo.comment_block();
        out.push_str("key,value\n");
        let _ = writeln!(out, "lambda1,{:.16e}", self.lambda1);
        let _ = writeln!(out, "eigen_residual,{:.16e}", self.eigen_residual);
        let _ = writeln!(out, "first_mode_ratio,{:.16e}", self.first_mode_ratio);
        let _ = writeln!(out, "fields,{}", self.fields);
        let _ = writeln!(out, "min_ratio,{:.16e}", self.min_ratio);
        let _ = writeln!(out, "violations,{}", self.violations);
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "Poincare: lambda1 = {:.8}, {} fields, min ratio {:.6}, {} violations",
            self.lambda1, self.fields, self.min_ratio, self.violations
        )
    }
}

/// Number of random fields tested by [`poincare_check`].
pub const POINCARE_FIELDS: usize = 100;

/// `λ₁` of `(stiffness, mass)` and the inequality `‖u‖² ≤ λ₁⁻¹ ‖∇u‖²` on
/// [`POINCARE_FIELDS`] random mean-zero fields (half raw vertex noise, half
/// smoothed).
pub fn poincare_check(mesh: &SurfaceMesh) -> Result<PoincareReport> {
    let (l, _) = assemble_operators(mesh);
    let mass = mesh.vertex_areas();
    let eig = smallest_eigenpairs(&l.matrix, mass, 1, 1e-10)?;
    let lambda1 = eig.values[0];
    let ratio = |u: &[f64]| l.matrix.bilinear(u, u) / (lambda1 * weighted_dot(mass, u, u));
    let first_mode_ratio = ratio(&eig.vectors[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0x9011);
    let ratios: Vec<f64> = (0..POINCARE_FIELDS)
        .map(|k| -> Result<f64> {
            let u = if k % 2 == 0 {
                let raw = ScalarField((0..mesh.vertex_count()).map(|_| rng.random_range(-1.0..1.0)).collect());
                project_mean_zero(mesh, &raw)
            } else {
                crate::solver::random_smooth_field(mesh, 1000 + k as u64)?
            };
            Ok(ratio(&u.0))
        })
        .collect::<Result<_>>()?;
    Ok(PoincareReport {
        lambda1,
        eigen_residual: eig.residuals[0],
        first_mode_ratio,
        fields: ratios.len(),
        min_ratio: ratios.iter().cloned().fold(f64::INFINITY, f64::min),
        violations: ratios.iter().filter(|&&r| r < 1.0 - 1e-10).count(),
        config_echo: ConfigEcho::default(),
    })
}

/// Spectral bounds of the assembled operators.
#[derive(Clone, Debug)]
pub struct OperatorReport {
    /// Extreme eigenvalues of `M⁻¹L` (Lanczos).
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub asymmetry: f64,
    pub min_mass: f64,
    /// Largest `|Σ_j L_ij|` (constants in the kernel).
    pub max_row_sum: f64,
}

impl OperatorReport {
    /// PSD within `tol · λ_max`, symmetric, and positive lumped mass.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue >= -tol * self.max_eigenvalue && self.asymmetry <= tol * self.max_eigenvalue && self.min_mass > 0.0
    }
}

pub fn operator_check(mesh: &SurfaceMesh) -> OperatorReport {
    let (l, _) = assemble_operators(mesh);
    let mass = mesh.vertex_areas();
    let (min_eigenvalue, max_eigenvalue) = lanczos_extremes(&l.matrix, mass, 200.min(mesh.vertex_count()));
    OperatorReport {
        min_eigenvalue,
        max_eigenvalue,
        asymmetry: l.matrix.asymmetry(),
        min_mass: mass.iter().cloned().fold(f64::INFINITY, f64::min),
        max_row_sum: l.matrix.row_sums().iter().map(|r| r.abs()).fold(0.0, f64::max),
    }
}

/// One ensemble member's initial data.
#[derive(Clone, Debug)]
pub struct EnsembleMember {
    pub label: String,
    pub u0: ScalarField,
    pub v0: ScalarField,
}

/// Number of frozen-seed random members and eigenmode members.
pub const ENSEMBLE_RANDOM: usize = 16;
pub const ENSEMBLE_MODES: usize = 4;

/// `ENSEMBLE_RANDOM` seeded smooth members and the first `ENSEMBLE_MODES`
/// eigenmodes (at rest), each scaled to `E(0) = energy`.
pub fn observability_ensemble(mesh: &SurfaceMesh, energy: f64) -> Result<Vec<EnsembleMember>> {
    let mut members = (0..ENSEMBLE_RANDOM as u64)
        .into_par_iter()
        .map(|seed| -> Result<EnsembleMember> {
            let (u0, v0) = random_initial_data(mesh, seed, energy)?;
            Ok(EnsembleMember {
                label: format!("seed{seed}"),
                u0,
                v0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (l, _) = assemble_operators(mesh);
    let eig = smallest_eigenpairs(&l.matrix, mesh.vertex_areas(), ENSEMBLE_MODES, 1e-9)?;
    for (k, (lambda, phi)) in eig.values.iter().zip(&eig.vectors).enumerate() {
        // ½ λ ‖φ‖² = energy with ‖φ‖_M = 1
        let s = (2.0 * energy / lambda).sqrt();
        members.push(EnsembleMember {
            label: format!("mode{}", k + 1),
            u0: ScalarField(phi.iter().map(|x| s * x).collect()),
            v0: ScalarField::zeros(mesh.vertex_count()),
        });
    }
    Ok(members)
}

/// Runs every member concurrently.
pub fn run_ensemble(
    mesh: &SurfaceMesh,
    damping: &DampingField,
    law: &FeedbackLaw,
    members: &[EnsembleMember],
    dt: f64,
    horizon: f64,
    snapshot_stride: usize,
) -> Result<Vec<SimulationTrace>> {
    members
        .par_iter()
        .map(|m| {
            let mut tr = simulate(mesh, damping, law, &m.u0, &m.v0, dt, horizon, snapshot_stride)?;
            tr.config_echo.push("member", &m.label);
            Ok(tr)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ObservabilityReport {
    pub c_obs: f64,
    pub t: f64,
    /// Per member `E(T) / ∫₀ᵀ∫ a(u_t² + g(u_t)²)`; `None` for skipped
    /// zero-energy members.
    pub ratios: Vec<Option<f64>>,
    pub skipped: usize,
    pub config_echo: ConfigEcho,
}

impl ObservabilityReport {
    pub fn to_csv(&self) -> String {
        let mut out = self.config_echo.comment_block();
        out.push_str("key,value\n");
        let _ = writeln!(out, "c_obs,{:.16e}", self.c_obs);
        let _ = writeln!(out, "T,{:.16e}", self.t);
        let _ = writeln!(out, "members,{}", self.ratios.len());
        let _ = writeln!(out, "skipped,{}", self.skipped);
        out.push_str("\nmember,ratio\n");
        for (k, r) in self.ratios.iter().enumerate() {
            match r {
                Some(r) => {
                    let _ = writeln!(out, "{k},{r:.16e}");
                }
                None => {
                    let _ = writeln!(out, "{k},skipped");
                }
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "observability: C_obs = {:.6e} at T = {} over {} members ({} skipped)",
            self.c_obs,
            self.t,
            self.ratios.len() - self.skipped,
            self.skipped
        )
    }
}

/// `E(T)` by linear interpolation of the sampled energies.
fn energy_at(trace: &SimulationTrace, t: f64) -> Option<f64> {
    let k = trace.times.partition_point(|&x| x < t);
    if k >= trace.times.len() {
        return None;
    }
    if k == 0 || trace.times[k] == t {
        return Some(trace.energies[k]);
    }
    let (t0, t1) = (trace.times[k - 1], trace.times[k]);
    let w = (t - t0) / (t1 - t0);
    Some((1.0 - w) * trace.energies[k - 1] + w * trace.energies[k])
}

/// `∫₀ᵀ∫ a(u_t² + g(u_t)²)` by the trapezoid rule on snapshots up to `T`.
fn observed_dissipation(mesh: &SurfaceMesh, snapshots: &[WaveState], damping: &DampingField, law: &FeedbackLaw, t: f64) -> f64 {
    let masses = mesh.vertex_areas();
    let density = |s: &WaveState| -> f64 {
        (0..mesh.vertex_count())
            .map(|v| {
                let g = law.eval(s.v[v]);
                masses[v] * damping.a[v] * (s.v[v] * s.v[v] + g * g)
            })
            .sum()
    };
    let used: Vec<&WaveState> = snapshots.iter().filter(|s| s.t <= t * (1.0 + 1e-12)).collect();
    let times: Vec<f64> = used.iter().map(|s| s.t).collect();
    let values: Vec<f64> = used.iter().map(|s| density(s)).collect();
    trapezoid(&times, &values)
}

/// `C_obs = max E(T) / ∫₀ᵀ∫ a(u_t² + g(u_t)²)` over the ensemble.
pub fn observability_ratio(
    mesh: &SurfaceMesh,
    traces: &[SimulationTrace],
    damping: &DampingField,
    law: &FeedbackLaw,
    t: f64,
) -> Result<ObservabilityReport> {
    if traces.is_empty() {
        return Err(Error::InvalidParameter("empty ensemble".into()));
    }
    mesh.check_field(&damping.a)?;
    if damping.a_norm() <= 0.0 {
        return Err(Error::InvalidParameter(
            "denominator vanishes: the damping coefficient is identically zero".into(),
        ));
    }
    let ratios: Vec<Option<f64>> = traces
        .par_iter()
        .enumerate()
        .map(|(k, tr)| -> Result<Option<f64>> {
            if !(t > 0.0) || tr.final_time() < t * (1.0 - 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "T = {t} outside the horizon {} of member {k}",
                    tr.final_time()
                )));
            }
            if tr.initial_energy() == 0.0 {
                log::info!("observability: member {k} has zero initial data, skipped");
                return Ok(None);
            }
            checked_snapshots(mesh, tr)?;
            let et = energy_at(tr, t).unwrap_or(0.0);
            let denom = observed_dissipation(mesh, &tr.snapshots, damping, law, t);
            if !(denom > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "denominator vanishes for member {k}: no energy observed through the damping"
                )));
            }
            Ok(Some(et / denom))
        })
        .collect::<Result<_>>()?;
    let skipped = ratios.iter().filter(|r| r.is_none()).count();
    let c_obs = ratios.iter().flatten().cloned().fold(0.0, f64::max);
    Ok(ObservabilityReport {
        c_obs,
        t,
        ratios,
        skipped,
        config_echo: traces[0].config_echo.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::damping::build_global_damping;
    use crate::mesh::{build_icosphere, build_torus};
    use proptest::prelude::*;
    use rand::Rng;

    fn linear() -> FeedbackLaw {
        FeedbackLaw::linear(1.0).unwrap()
    }

    fn smooth_f(m: &SurfaceMesh) -> MultiplierField {
        let f = m.sample(|p| 0.5 * ((p.x - 0.3).powi(2) + p.y * p.y + p.z * p.z) + 0.2 * p.y * p.z);
        MultiplierField::from_field(m, f, 1.0).unwrap()
    }

    fn mode_run(level: u32, dt_per_h: f64, horizon: f64, a0: f64) -> (SurfaceMesh, SimulationTrace, DampingField, f64) {
        let m = build_icosphere(level).unwrap();
        let (l, _) = assemble_operators(&m);
        let eig = smallest_eigenpairs(&l.matrix, m.vertex_areas(), 1, 1e-10).unwrap();
        let d = if a0 > 0.0 {
            build_global_damping(&m, a0).unwrap()
        } else {
            DampingField::undamped(&m)
        };
        let dt = dt_per_h * m.mean_edge_length();
        let n = m.vertex_count();
        let tr = simulate(&m, &d, &linear(), &ScalarField(eig.vectors[0].clone()), &ScalarField::zeros(n), dt, horizon, 1)
            .unwrap();
        (m, tr, d, eig.values[0])
    }

    #[test]
    fn zero_trajectory_has_exactly_zero_residuals() {
        let m = build_icosphere(2).unwrap();
        let d = build_global_damping(&m, 1.0).unwrap();
        let z = ScalarField::zeros(m.vertex_count());
        let tr = simulate(&m, &d, &linear(), &z, &z, 0.05, 1.0, 2).unwrap();
        let mf = smooth_f(&m);
        let r = multiplier_identity_residual(&m, &tr, &mf, &d, &linear()).unwrap();
        assert_eq!(r.residual, 0.0);
        assert_eq!(r.normalized, 0.0);
        let xi = m.sample(|p| p.z);
        let r = xi_identity_residual(&m, &tr, &xi, &d, &linear()).unwrap();
        assert_eq!(r.residual, 0.0);
        let main = main_inequality_check(&m, &tr, &mf).unwrap();
        assert_eq!((main.left, main.right), (0.0, 0.0));
        assert_eq!(main.violations, 0);
    }

    #[test]
    fn zero_xi_gives_zero_residual() {
        let (m, tr, d, _) = mode_run(2, 0.2, 1.0, 1.0);
        let r = xi_identity_residual(&m, &tr, &ScalarField::zeros(m.vertex_count()), &d, &linear()).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn missing_snapshots_rejected() {
        let m = build_icosphere(2).unwrap();
        let d = DampingField::undamped(&m);
        let (u, v) = random_initial_data(&m, 0, 1.0).unwrap();
        let tr = simulate(&m, &d, &linear(), &u, &v, 0.05, 1.0, 0).unwrap();
        assert!(multiplier_identity_residual(&m, &tr, &smooth_f(&m), &d, &linear()).is_err());
        let tr = simulate(&m, &d, &linear(), &u, &v, 0.05, 1.0, 11).unwrap();
        assert!(xi_identity_residual(&m, &tr, &m.sample(|p| p.x), &d, &linear()).is_err());
    }

    #[test]
    fn xi_one_matches_modal_closed_form() {
        // u = cos(ωt)φ with ‖φ‖ = 1, ω² = λ: both sides equal −ω sin(ωT)cos(ωT)
        let horizon = 1.7;
        let (m, tr, d, lambda) = mode_run(3, 0.05, horizon, 0.0);
        let r = xi_identity_residual(&m, &tr, &ScalarField::constant(m.vertex_count(), 1.0), &d, &linear()).unwrap();
        let w = lambda.sqrt();
        let exact = -w * (w * horizon).sin() * (w * horizon).cos();
        assert!((r.term("boundary").unwrap() - exact).abs() < 1e-4, "{r:?} vs {exact}");
        let rhs = r.term("kinetic").unwrap() - r.term("gradient").unwrap();
        assert!((rhs - exact).abs() < 1e-4, "{rhs} vs {exact}");
        assert!(r.term("cross").unwrap().abs() < 1e-12);
        assert!(r.normalized < 1e-4);
    }

    #[test]
    fn xi_terms_shift_linearly_with_constants() {
        let m = build_icosphere(3).unwrap();
        let d = build_global_damping(&m, 0.7).unwrap();
        let (u, v) = random_initial_data(&m, 5, 1.0).unwrap();
        let tr = simulate(&m, &d, &linear(), &u, &v, 0.02, 1.0, 2).unwrap();
        let xi = m.sample(|p| p.x * p.y + p.z);
        let xi1 = xi.map(|x| x + 1.0);
        let one = ScalarField::constant(m.vertex_count(), 1.0);
        let a = xi_identity_residual(&m, &tr, &xi, &d, &linear()).unwrap();
        let b = xi_identity_residual(&m, &tr, &xi1, &d, &linear()).unwrap();
        let c = xi_identity_residual(&m, &tr, &one, &d, &linear()).unwrap();
        for name in ["boundary", "kinetic", "gradient", "damping"] {
            let lhs = b.term(name).unwrap() - a.term(name).unwrap();
            let rhs = c.term(name).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0), "{name}");
        }
        assert!((b.term("cross").unwrap() - a.term("cross").unwrap()).abs() <= 1e-14);
    }

    #[test]
    fn multiplier_residual_shrinks_under_refinement() {
        let res = |level| {
            let (m, tr, d, _) = mode_run(level, 0.3, 2.0, 0.0);
            multiplier_identity_residual(&m, &tr, &smooth_f(&m), &d, &linear()).unwrap().normalized
        };
        let (r2, r3, r4) = (res(2), res(3), res(4));
        assert!(r3 < r2 && r4 < r3, "{r2} {r3} {r4}");
    }

    #[test]
    fn main_inequality_holds_on_a_certified_region() {
        let m = build_icosphere(3).unwrap();
        let mf = crate::multiplier::build_global_multiplier(&m, 0.3 * m.total_area(), &Default::default()).unwrap();
        let d = build_global_damping(&m, 1.0).unwrap();
        let (u, v) = random_initial_data(&m, 1, 1.0).unwrap();
        let tr = simulate(&m, &d, &linear(), &u, &v, 0.02, 2.0, 5).unwrap();
        let rep = main_inequality_check(&m, &tr, &mf).unwrap();
        assert_eq!(rep.violations, 0);
        assert!(rep.ratio >= 1.0, "{}", rep.ratio);
        assert!(rep.min_theta >= mf.margins.theta && rep.min_scalar >= mf.margins.scalar);
        assert_eq!(rep.warning.is_some(), !mf.certified);
    }

    #[test]
    fn uncertified_multiplier_carries_warning() {
        let m = build_icosphere(2).unwrap();
        let d = DampingField::undamped(&m);
        let (u, v) = random_initial_data(&m, 1, 1.0).unwrap();
        let tr = simulate(&m, &d, &linear(), &u, &v, 0.05, 0.5, 2).unwrap();
        let rep = main_inequality_check(&m, &tr, &smooth_f(&m)).unwrap();
        assert!(rep.warning.is_some());
        assert!(rep.to_csv().contains("warning"));
    }

    #[test]
    fn poincare_on_level_three() {
        let m = build_icosphere(3).unwrap();
        let rep = poincare_check(&m).unwrap();
        assert!((rep.lambda1 - 2.0).abs() < 0.05, "{}", rep.lambda1);
        assert!((rep.first_mode_ratio - 1.0).abs() < 1e-8);
        assert_eq!(rep.violations, 0);
        assert_eq!(rep.fields, POINCARE_FIELDS);
    }

    #[test]
    fn torus_operators_are_psd() {
        let t = build_torus(1.0, 0.4, 24, 12).unwrap();
        let rep = operator_check(&t);
        assert!(rep.is_psd(1e-10), "{rep:?}");
        assert!(rep.max_row_sum < 1e-12);
    }

    #[test]
    fn observability_examples() {
        let m = build_icosphere(2).unwrap();
        let d = build_global_damping(&m, 1.0).unwrap();
        let law = linear();
        let (u, v) = random_initial_data(&m, 3, 1.0).unwrap();
        let z = ScalarField::zeros(m.vertex_count());
        let traces = vec![
            simulate(&m, &d, &law, &u, &v, 0.05, 3.0, 2).unwrap(),
            simulate(&m, &d, &law, &z, &z, 0.05, 3.0, 2).unwrap(),
            simulate(&m, &d, &law, &u.map(|x| 2.0 * x), &v.map(|x| 2.0 * x), 0.05, 3.0, 2).unwrap(),
        ];
        let rep = observability_ratio(&m, &traces, &d, &law, 3.0).unwrap();
        assert_eq!(rep.skipped, 1);
        assert!(rep.c_obs.is_finite() && rep.c_obs > 0.0);
        let (r0, r2) = (rep.ratios[0].unwrap(), rep.ratios[2].unwrap());
        assert!((r0 - r2).abs() <= 1e-10 * r0);
        let none = DampingField::undamped(&m);
        let err = observability_ratio(&m, &traces, &none, &law, 3.0).unwrap_err();
        assert!(err.to_string().contains("denominator vanishes"));
        assert!(observability_ratio(&m, &traces, &d, &law, 4.0).is_err());
    }

    #[test]
    fn ensemble_has_twenty_members_with_unit_energy() {
        let m = build_icosphere(2).unwrap();
        let members = observability_ensemble(&m, 1.0).unwrap();
        assert_eq!(members.len(), ENSEMBLE_RANDOM + ENSEMBLE_MODES);
        for mem in &members {
            let e = crate::solver::energy(&m, &WaveState::new(mem.u0.clone(), mem.v0.clone())).unwrap();
            assert!((e - 1.0).abs() < 1e-8, "{}: {e}", mem.label);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn poincare_quotient_at_least_one(seed in 0u64..10_000) {
            let m = build_icosphere(2).unwrap();
            let (l, _) = assemble_operators(&m);
            let eig = smallest_eigenpairs(&l.matrix, m.vertex_areas(), 1, 1e-10).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = project_mean_zero(&m, &ScalarField((0..m.vertex_count()).map(|_| rng.random_range(-1.0..1.0)).collect()));
            let q = l.matrix.bilinear(&u.0, &u.0) / (eig.values[0] * weighted_dot(m.vertex_areas(), &u.0, &u.0));
            prop_assert!(q >= 1.0 - 1e-9);
        }

        #[test]
        fn main_inequality_pointwise_margin(seed in 0u64..500) {
            // on V, right − left ≥ δ₂ ∫ u_t² + δ₁ ∫ |∇u|² at every snapshot
            let m = build_icosphere(3).unwrap();
            let mf = crate::multiplier::build_global_multiplier(&m, 0.3 * m.total_area(), &Default::default()).unwrap();
            let d = DampingField::undamped(&m);
            let (u, v) = random_initial_data(&m, seed, 1.0).unwrap();
            let tr = simulate(&m, &d, &linear(), &u, &v, 0.02, 0.1, 5).unwrap();
            let rep = main_inequality_check(&m, &tr, &mf).unwrap();
            prop_assert_eq!(rep.violations, 0);
            prop_assert!(rep.right >= rep.left);
        }
    }
}
