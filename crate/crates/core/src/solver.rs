//! Semi-discrete damped wave equation `M ü + L u + M_a g(u̇) = 0`,
//! integrated by the implicit midpoint rule.
//!
//! With `w = v_{n+½}` the step is
//!
//! ```text
//! w       = v_n + dt/2 · M⁻¹(−L(u_n + dt/2 · w) − M_a g(w))
//! u_{n+1} = u_n + dt · w
//! v_{n+1} = 2w − v_n
//! ```
//!
//! and satisfies `E_{n+1} − E_n = −dt ⟨a g(w), w⟩_M` exactly, where
//! `E = ½ vᵀMv + ½ uᵀLu`. The midpoint equation is solved by fixed-point
//! iteration.

use std::fmt;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::damping::{DampingField, FeedbackLaw};
use crate::echo::ConfigEcho;
use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, power_max_eigenvalue, remove_weighted_mean, weighted_dot};
use crate::mesh::{assemble_operators, CsrMatrix, ScalarField, SurfaceMesh};

/// Relative fixed-point increment at which a midpoint solve is accepted.
pub const FIXED_POINT_TOLERANCE: f64 = 1e-12;
pub const MAX_FIXED_POINT_ITERATIONS: usize = 50;
/// Per-step tolerance of the energy identity, relative to `E(0)`.
pub const IDENTITY_TOLERANCE: f64 = 1e-8;
const POWER_ITERATIONS: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct WaveState {
    pub u: ScalarField,
    pub v: ScalarField,
    pub t: f64,
}

impl WaveState {
    pub fn new(u: ScalarField, v: ScalarField) -> Self {
        Self { u, v, t: 0.0 }
    }

    pub fn zero(n: usize) -> Self {
        Self::new(ScalarField::zeros(n), ScalarField::zeros(n))
    }
}

/// Field minus its area-weighted mean.
pub fn project_mean_zero(mesh: &SurfaceMesh, field: &ScalarField) -> ScalarField {
    let mut out = field.0.clone();
    remove_weighted_mean(mesh.vertex_areas(), &mut out);
    ScalarField(out)
}

/// `½ vᵀMv + ½ uᵀLu`.
pub fn energy(mesh: &SurfaceMesh, state: &WaveState) -> Result<f64> {
    mesh.check_field(&state.u)?;
    mesh.check_field(&state.v)?;
    let (l, _) = assemble_operators(mesh);
    Ok(0.5 * weighted_dot(mesh.vertex_areas(), &state.v.0, &state.v.0) + 0.5 * l.matrix.bilinear(&state.u.0, &state.u.0))
}

/// Largest admissible step `2/√λ_max`, with `λ_max` from the power method.
pub fn stability_budget(mesh: &SurfaceMesh) -> f64 {
    let (l, _) = assemble_operators(mesh);
    budget_from(&l.matrix, mesh.vertex_areas())
}

fn budget_from(l: &CsrMatrix, mass: &[f64]) -> f64 {
    2.0 / power_max_eigenvalue(l, mass, POWER_ITERATIONS).sqrt()
}

/// Operators, damping weights and feedback law bound together for repeated
/// stepping.
pub struct Integrator<'a> {
    stiffness: CsrMatrix,
    mass: Vec<f64>,
    damping_mass: Vec<f64>,
    law: &'a FeedbackLaw,
    budget: f64,
}

/// Result of one accepted step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: WaveState,
    /// `dt ⟨a g(w), w⟩_M` for the midpoint velocity `w`.
    pub dissipated: f64,
    pub iterations: usize,
}

impl<'a> Integrator<'a> {
    pub fn new(mesh: &SurfaceMesh, damping: &DampingField, law: &'a FeedbackLaw) -> Result<Self> {
        mesh.check_field(&damping.a)?;
        if damping.a.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(Error::InvalidParameter("damping coefficient must be finite and nonnegative".into()));
        }
        let (l, _) = assemble_operators(mesh);
        let mass = mesh.vertex_areas().to_vec();
        let budget = budget_from(&l.matrix, &mass);
        log::debug!("stability budget dt ≤ {budget:.6e}");
        Ok(Self {
            stiffness: l.matrix,
            damping_mass: damping.mass_weights(mesh),
            mass,
            law,
            budget,
        })
    }

    /// `2/√λ_max`.
    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn energy(&self, state: &WaveState) -> f64 {
        0.5 * weighted_dot(&self.mass, &state.v.0, &state.v.0) + 0.5 * self.stiffness.bilinear(&state.u.0, &state.u.0)
    }

    pub fn step(&self, state: &WaveState, dt: f64) -> Result<StepOutcome> {
        let n = self.mass.len();
        if state.u.len() != n || state.v.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: state.u.len().min(state.v.len()),
            });
        }
        if !(dt > 0.0) || dt > self.budget {
            return Err(Error::InvalidParameter(format!(
                "dt = {dt:e} outside (0, {:e}] (stability budget)",
                self.budget
            )));
        }
        let h = 0.5 * dt;
        let (u, v) = (&state.u.0, &state.v.0);
        let mut w = v.clone();
        let mut next = vec![0.0; n];
        let mut umid = vec![0.0; n];
        let mut lu = vec![0.0; n];
        // increments are measured against the velocity scale √(2E) of the
        // state; ‖w‖ alone vanishes at turning points of standing modes
        let scale = (2.0 * self.energy(state)).sqrt();
        let mut converged = false;
        let mut increment = f64::INFINITY;
        let mut iterations = 0;
        while iterations < MAX_FIXED_POINT_ITERATIONS {
            iterations += 1;
            for i in 0..n {
                umid[i] = u[i] + h * w[i];
            }
            self.stiffness.mul_vec_into(&umid, &mut lu);
            let mut diff = 0.0;
            let mut norm = 0.0;
            for i in 0..n {
                let force = -lu[i] - self.damping_mass[i] * self.law.eval(w[i]);
                next[i] = v[i] + h * force / self.mass[i];
                diff += self.mass[i] * (next[i] - w[i]).powi(2);
                norm += self.mass[i] * next[i] * next[i];
            }
            std::mem::swap(&mut w, &mut next);
            let denom = norm.sqrt().max(scale);
            increment = if denom > 0.0 { diff.sqrt() / denom } else { diff.sqrt() };
            if !increment.is_finite() {
                break;
            }
            if increment <= FIXED_POINT_TOLERANCE {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::StepRejected {
                t: state.t,
                residual: increment,
                iterations,
                suggested_dt: 0.5 * dt,
            });
        }
        let mut dissipated = 0.0;
        let mut un = vec![0.0; n];
        let mut vn = vec![0.0; n];
        for i in 0..n {
            dissipated += self.damping_mass[i] * self.law.eval(w[i]) * w[i];
            un[i] = u[i] + dt * w[i];
            vn[i] = 2.0 * w[i] - v[i];
        }
        Ok(StepOutcome {
            state: WaveState {
                u: ScalarField(un),
                v: ScalarField(vn),
                t: state.t + dt,
            },
            dissipated: dt * dissipated,
            iterations,
        })
    }
}

/// One step with freshly assembled operators. Repeated stepping should go
/// through [`Integrator`].
pub fn step(mesh: &SurfaceMesh, damping: &DampingField, law: &FeedbackLaw, state: &WaveState, dt: f64) -> Result<WaveState> {
    Ok(Integrator::new(mesh, damping, law)?.step(state, dt)?.state)
}

/// Energy-annotated trajectory.
#[derive(Clone, Debug, Default)]
pub struct SimulationTrace {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    /// Cumulative `∫₀ᵗ∫ a g(u_t) u_t`.
    pub dissipation: Vec<f64>,
    /// Sampled states; the first is `t = 0` and the last is the final state.
    pub snapshots: Vec<WaveState>,
    pub dt: f64,
    pub snapshot_stride: usize,
    /// Largest `|E_{n+1} − E_n + ΔD_n|` over the run.
    pub max_identity_residual: f64,
    /// Steps whose identity residual exceeded `IDENTITY_TOLERANCE · E(0)`.
    pub identity_violations: usize,
    /// Largest `|∫v(t) dM − ∫v(0) dM|`.
    pub mean_drift: f64,
    pub config_echo: ConfigEcho,
}

impl SimulationTrace {
    pub fn initial_energy(&self) -> f64 {
        self.energies.first().copied().unwrap_or(0.0)
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Every energy is at most its predecessor plus `tol · E(0)`.
    pub fn is_monotone(&self, tol: f64) -> bool {
        let e0 = self.initial_energy();
        self.energies.windows(2).all(|w| w[1] <= w[0] + tol * e0)
    }

    /// `max_t |E(t) − E(0)| / E(0)` (0 for a zero trace).
    pub fn max_relative_drift(&self) -> f64 {
        let e0 = self.initial_energy();
        if e0 == 0.0 {
            return 0.0;
        }
        self.energies.iter().map(|e| (e - e0).abs() / e0).fold(0.0, f64::max)
    }

    /// Per-interval `|E_{n+1} − E_n + D_{n+1} − D_n|`.
    pub fn identity_residuals(&self) -> Vec<f64> {
        (1..self.energies.len())
            .map(|k| (self.energies[k] - self.energies[k - 1] + self.dissipation[k] - self.dissipation[k - 1]).abs())
            .collect()
    }

    /// Trace CSV: config echo comment lines, header `t,E,D`, then one row
    /// per step with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.config_echo.comment_block();
        out.push_str("t,E,D\n");
        for k in 0..self.times.len() {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e}",
                self.times[k], self.energies[k], self.dissipation[k]
            );
        }
        out
    }

    /// Reads the `t,E,D` columns of a trace CSV (snapshots are not stored
    /// in the CSV). Comment lines become the config echo.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut trace = SimulationTrace::default();
        let mut header_seen = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            if let Some(comment) = raw.strip_prefix('#') {
                if let Some((k, v)) = comment.split_once('=') {
                    trace.config_echo.push(k.trim(), v.trim());
                }
                continue;
            }
            if !header_seen {
                if raw.replace(' ', "") != "t,E,D" {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected header \"t,E,D\", found {raw:?}"),
                    });
                }
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = raw.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 3 columns, found {}", cols.len()),
                });
            }
            let mut vals = [0.0; 3];
            for (k, c) in cols.iter().enumerate() {
                vals[k] = c.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad number {c:?}"),
                })?;
            }
            if let Some(&last) = trace.times.last() {
                if vals[0] <= last {
                    return Err(Error::Parse {
                        line,
                        message: format!("times must increase ({} after {last})", vals[0]),
                    });
                }
            }
            trace.times.push(vals[0]);
            trace.energies.push(vals[1]);
            trace.dissipation.push(vals[2]);
        }
        if !header_seen {
            return Err(Error::Parse {
                line: 0,
                message: "missing header \"t,E,D\"".into(),
            });
        }
        if trace.times.len() >= 2 {
            trace.dt = trace.times[1] - trace.times[0];
        }
        Ok(trace)
    }
}

/// Snapshot companion file: `snapshot verts N t T` then one `s u v` line per
/// vertex, floats in shortest round-trip form.
pub fn write_snapshot(state: &WaveState) -> String {
    let mut out = String::with_capacity(48 * state.u.len());
    let _ = writeln!(out, "snapshot verts {} t {}", state.u.len(), state.t);
    for (u, v) in state.u.iter().zip(state.v.iter()) {
        let _ = writeln!(out, "s {u} {v}");
    }
    out
}

pub fn parse_snapshot(text: &str) -> Result<WaveState> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (line, head) = lines.next().ok_or(Error::Parse {
        line: 0,
        message: "empty snapshot".into(),
    })?;
    let tok: Vec<&str> = head.split_whitespace().collect();
    let bad = |line, message: String| Error::Parse { line, message };
    if tok.len() != 5 || tok[0] != "snapshot" || tok[1] != "verts" || tok[3] != "t" {
        return Err(bad(line, "expected header \"snapshot verts N t T\"".into()));
    }
    let n: usize = tok[2].parse().map_err(|_| bad(line, format!("bad vertex count {:?}", tok[2])))?;
    let t: f64 = tok[4].parse().map_err(|_| bad(line, format!("bad time {:?}", tok[4])))?;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for (line, l) in lines {
        let tok: Vec<&str> = l.split_whitespace().collect();
        if tok.len() != 3 || tok[0] != "s" {
            return Err(bad(line, "expected \"s u v\"".into()));
        }
        u.push(tok[1].parse().map_err(|_| bad(line, format!("bad value {:?}", tok[1])))?);
        v.push(tok[2].parse().map_err(|_| bad(line, format!("bad value {:?}", tok[2])))?);
    }
    if u.len() != n {
        return Err(bad(0, format!("header declares {n} vertices, found {}", u.len())));
    }
    Ok(WaveState {
        u: ScalarField(u),
        v: ScalarField(v),
        t,
    })
}

/// A failed run: the error and everything computed before it.
#[derive(Debug)]
pub struct SimulationError {
    pub trace: SimulationTrace,
    pub source: Error,
}

impl fmt::Display for SimulationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "simulation stopped at t = {}: {}", self.trace.final_time(), self.source)
    }
}

impl std::error::Error for SimulationError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<SimulationError> for Error {
    fn from(e: SimulationError) -> Self {
        e.source
    }
}

/// Integrates from `(u0, v0)` (projected mean-zero on entry) until
/// `horizon`, recording `E` and the cumulative dissipation every step and a
/// snapshot every `snapshot_stride` steps (0 disables snapshots).
///
/// The last step is shortened to land on `horizon` exactly.
#[allow(clippy::too_many_arguments, clippy::result_large_err)]
pub fn simulate(
    mesh: &SurfaceMesh,
    damping: &DampingField,
    law: &FeedbackLaw,
    u0: &ScalarField,
    v0: &ScalarField,
    dt: f64,
    horizon: f64,
    snapshot_stride: usize,
) -> std::result::Result<SimulationTrace, SimulationError> {
    let early = |source| SimulationError {
        trace: SimulationTrace::default(),
        source,
    };
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(early(Error::InvalidParameter(format!("horizon must be positive, got {horizon}"))));
    }
    mesh.check_field(u0).map_err(early)?;
    mesh.check_field(v0).map_err(early)?;
    let integrator = Integrator::new(mesh, damping, law).map_err(early)?;
    if !(dt > 0.0) || dt > integrator.budget() {
        return Err(early(Error::InvalidParameter(format!(
            "dt = {dt:e} outside (0, {:e}] (stability budget)",
            integrator.budget()
        ))));
    }

    let mut state = WaveState::new(project_mean_zero(mesh, u0), project_mean_zero(mesh, v0));
    let areas = mesh.vertex_areas();
    let mean_v0: f64 = state.v.iter().zip(areas).map(|(v, m)| v * m).sum();
    let e0 = integrator.energy(&state);
    let mut trace = SimulationTrace {
        times: vec![0.0],
        energies: vec![e0],
        dissipation: vec![0.0],
        snapshots: Vec::new(),
        dt,
        snapshot_stride,
        max_identity_residual: 0.0,
        identity_violations: 0,
        mean_drift: 0.0,
        config_echo: ConfigEcho::default(),
    };
    if snapshot_stride > 0 {
        trace.snapshots.push(state.clone());
    }

    let steps = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
    for n in 1..=steps {
        let h = if n == steps { horizon - state.t } else { dt };
        let out = match integrator.step(&state, h) {
            Ok(o) => o,
            Err(source) => return Err(SimulationError { trace, source }),
        };
        state = out.state;
        if n == steps {
            state.t = horizon;
        }
        let e = integrator.energy(&state);
        let prev_e = *trace.energies.last().unwrap();
        let d = trace.dissipation.last().unwrap() + out.dissipated;
        let residual = (e - prev_e + out.dissipated).abs();
        trace.max_identity_residual = trace.max_identity_residual.max(residual);
        if residual > IDENTITY_TOLERANCE * e0 {
            trace.identity_violations += 1;
            log::warn!("energy identity residual {residual:e} at t = {}", state.t);
        }
        let mean_v: f64 = state.v.iter().zip(areas).map(|(v, m)| v * m).sum();
        trace.mean_drift = trace.mean_drift.max((mean_v - mean_v0).abs());
        trace.times.push(state.t);
        trace.energies.push(e);
        trace.dissipation.push(d);
        if snapshot_stride > 0 && (n % snapshot_stride == 0 || n == steps) {
            trace.snapshots.push(state.clone());
        }
    }
    if trace.mean_drift > 1e-10 * mesh.total_area() {
        log::info!("mean of the velocity drifted by {:e} (not re-projected)", trace.mean_drift);
    }
    Ok(trace)
}

/// Smooth random mean-zero field: uniform vertex noise from `seed`, 10
/// implicit smoothing steps `(M + τL) x_{k+1} = M x_k` with
/// `τ = 0.01 · area / 4π`, then mean removal and unit `M`-norm.
pub fn random_smooth_field(mesh: &SurfaceMesh, seed: u64) -> Result<ScalarField> {
    let n = mesh.vertex_count();
    let (l, _) = assemble_operators(mesh);
    let mass = mesh.vertex_areas();
    let tau = 0.01 * mesh.total_area() / (4.0 * std::f64::consts::PI);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let diag: Vec<f64> = l.diagonal().iter().zip(mass).map(|(d, m)| m + tau * d).collect();
    let apply = |p: &[f64], out: &mut [f64]| {
        l.apply_into(p, out);
        for i in 0..p.len() {
            out[i] = mass[i] * p[i] + tau * out[i];
        }
    };
    for _ in 0..10 {
        let rhs: Vec<f64> = x.iter().zip(mass).map(|(x, m)| x * m).collect();
        conjugate_gradient(apply, &diag, &rhs, &mut x, 1e-12, 10 * n)?;
    }
    remove_weighted_mean(mass, &mut x);
    let norm = weighted_dot(mass, &x, &x).sqrt();
    if !(norm > 0.0) {
        return Err(Error::Analysis("smoothed noise vanished".into()));
    }
    x.iter_mut().for_each(|v| *v /= norm);
    Ok(ScalarField(x))
}

/// Frozen-seed smooth initial data `(u0, v0)` with `E(0) = energy`, split
/// evenly between potential and kinetic parts.
pub fn random_initial_data(mesh: &SurfaceMesh, seed: u64, energy: f64) -> Result<(ScalarField, ScalarField)> {
    if !(energy >= 0.0 && energy.is_finite()) {
        return Err(Error::InvalidParameter(format!("initial energy must be nonnegative, got {energy}")));
    }
    let u = random_smooth_field(mesh, seed.wrapping_mul(2))?;
    let v = random_smooth_field(mesh, seed.wrapping_mul(2).wrapping_add(1))?;
    let (l, _) = assemble_operators(mesh);
    let pu = 0.5 * l.matrix.bilinear(&u.0, &u.0);
    let pv = 0.5 * weighted_dot(mesh.vertex_areas(), &v.0, &v.0);
    let su = (0.5 * energy / pu).sqrt();
    let sv = (0.5 * energy / pv).sqrt();
    Ok((u.map(|x| su * x), v.map(|x| sv * x)))
}
