//! mesh → multiplier → damping → simulate → envelope → audits, with every
//! artifact collected in a [`Bundle`] before it is written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dampwave_core::damping::{build_cutoff_field, build_damping, build_global_damping, DampingField, FeedbackLaw, FeedbackTable};
use dampwave_core::envelope::{build_rate_functions, envelope_compare, solve_envelope};
use dampwave_core::fit::{default_window, fit_decay, FitModel, FitResult};
use dampwave_core::harness::{
    main_inequality_check, multiplier_identity_residual, observability_ensemble, observability_ratio, poincare_check,
    run_ensemble, xi_identity_residual,
};
use dampwave_core::linalg::smallest_eigenpairs;
use dampwave_core::mesh::{assemble_operators, build_icosphere, build_torus, load_mesh};
use dampwave_core::multiplier::{build_global_multiplier, Margins, MultiplierField};
use dampwave_core::solver::{parse_snapshot, random_initial_data, simulate, stability_budget, write_snapshot, SimulationTrace};
use dampwave_core::{ConfigEcho, ScalarField, SurfaceMesh};

use crate::config::{DampingKind, FeedbackSpec, FitChoice, InitialSpec, RunConfig, SurfaceSpec};
use crate::output::write_atomic;

/// Roundoff allowance for energy monotonicity, relative to `E(0)`.
const MONOTONE_SLACK: f64 = 1e-12;
/// Snapshot stride of observability ensemble runs.
const ENSEMBLE_STRIDE: usize = 10;

#[derive(Clone, Debug)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Artifacts, assertion outcomes and notes of one command.
#[derive(Debug, Default)]
pub struct Bundle {
    pub name: String,
    pub echo: ConfigEcho,
    pub artifacts: Vec<(String, String)>,
    pub assertions: Vec<Assertion>,
    pub summary: Vec<String>,
    pub warnings: Vec<String>,
    pub failure: Option<String>,
    pub fit: Option<FitResult>,
    pub certified: Option<bool>,
}

impl Bundle {
    fn new(name: &str, echo: ConfigEcho) -> Self {
        Self {
            name: name.to_string(),
            echo,
            ..Default::default()
        }
    }

    /// Adds `body` under `file`, prefixed by the config echo unless it
    /// already carries one.
    fn artifact(&mut self, file: &str, body: String, has_echo: bool) {
        let text = if has_echo { body } else { format!("{}{body}", self.echo.comment_block()) };
        self.artifacts.push((file.to_string(), text));
    }

    fn assert(&mut self, name: &str, passed: bool, detail: String) {
        self.assertions.push(Assertion {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    fn warn(&mut self, message: String) {
        log::warn!("{}: {message}", self.name);
        self.warnings.push(message);
    }

    pub fn assertions_failed(&self) -> bool {
        self.assertions.iter().any(|a| !a.passed)
    }

    pub fn report(&self) -> String {
        let mut out = self.echo.comment_block();
        let _ = writeln!(out, "report {}", self.name);
        for line in &self.summary {
            let _ = writeln!(out, "{line}");
        }
        for a in &self.assertions {
            let _ = writeln!(out, "assertion {}: {} ({})", a.name, if a.passed { "PASS" } else { "FAIL" }, a.detail);
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        if let Some(f) = &self.failure {
            let _ = writeln!(out, "failure: {f}");
        }
        out
    }

    /// Writes every artifact and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for (file, text) in &self.artifacts {
            let p = dir.join(file);
            write_atomic(&p, text)?;
            written.push(p);
        }
        let p = dir.join("report.txt");
        write_atomic(&p, &self.report())?;
        written.push(p);
        Ok(written)
    }
}

pub fn build_surface(cfg: &RunConfig) -> Result<SurfaceMesh> {
    Ok(match &cfg.surface {
        SurfaceSpec::Icosphere { level, radius } => {
            let m = build_icosphere(*level)?;
            if *radius == 1.0 {
                m
            } else {
                m.scaled(*radius)?
            }
        }
        SurfaceSpec::Torus {
            major_radius,
            minor_radius,
            major_count,
            minor_count,
        } => build_torus(*major_radius, *minor_radius, *major_count, *minor_count)?,
        SurfaceSpec::File { path } => {
            let p = cfg.resolve(path);
            load_mesh(&p).with_context(|| format!("loading mesh {}", p.display()))?
        }
    })
}

pub fn build_law(cfg: &RunConfig) -> Result<FeedbackLaw> {
    Ok(match &cfg.feedback {
        FeedbackSpec::Linear { slope } => FeedbackLaw::linear(*slope)?,
        FeedbackSpec::Power { exponent } => FeedbackLaw::power(*exponent)?,
        FeedbackSpec::Table { path } => FeedbackLaw::Table(FeedbackTable::load(cfg.resolve(path))?),
    })
}

fn certify_into(cfg: &RunConfig, mesh: &SurfaceMesh, bundle: &mut Bundle) -> Result<MultiplierField> {
    let [theta, scalar, gradient] = cfg.multiplier.margins;
    let mf = build_global_multiplier(
        mesh,
        cfg.multiplier.epsilon * mesh.total_area(),
        &Margins::new(theta, scalar, gradient),
    )?;
    if let Some(rep) = &mf.report {
        bundle.artifact("certification.csv", rep.to_csv(), false);
        bundle.summary.push(rep.summary());
    }
    bundle.certified = Some(mf.certified);
    Ok(mf)
}

fn collar_width(cfg: &RunConfig, mesh: &SurfaceMesh) -> f64 {
    cfg.damping
        .collar
        .unwrap_or_else(|| cfg.damping.collar_edges.unwrap_or(3.0) * mesh.max_edge_length())
}

fn build_damping_field(cfg: &RunConfig, mesh: &SurfaceMesh, mf: Option<&MultiplierField>) -> Result<DampingField> {
    Ok(match cfg.damping.mode {
        DampingKind::None => DampingField::undamped(mesh),
        DampingKind::Global => build_global_damping(mesh, cfg.damping.a0)?,
        DampingKind::Local => {
            let mf = mf.ok_or_else(|| anyhow!("local damping needs the multiplier region"))?;
            build_damping(mesh, &mf.region_v, collar_width(cfg, mesh), cfg.damping.a0, cfg.damping.smooth)?
        }
    })
}

fn initial_data(cfg: &RunConfig, mesh: &SurfaceMesh) -> Result<(ScalarField, ScalarField)> {
    Ok(match &cfg.initial {
        InitialSpec::Random { seed, energy } => random_initial_data(mesh, *seed, *energy)?,
        InitialSpec::Eigenmode { index, energy } => {
            let (l, _) = assemble_operators(mesh);
            let eig = smallest_eigenpairs(&l.matrix, mesh.vertex_areas(), *index, 1e-10)?;
            let (lambda, phi) = (eig.values[index - 1], &eig.vectors[index - 1]);
            let s = (2.0 * energy / lambda).sqrt();
            (
                ScalarField(phi.iter().map(|x| s * x).collect()),
                ScalarField::zeros(mesh.vertex_count()),
            )
        }
        InitialSpec::File { path } => {
            let p = cfg.resolve(path);
            let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            let state = parse_snapshot(&text).with_context(|| format!("parsing {}", p.display()))?;
            if state.u.len() != mesh.vertex_count() {
                bail!(
                    "initial state {} has {} vertices, the mesh has {}",
                    p.display(),
                    state.u.len(),
                    mesh.vertex_count()
                );
            }
            (state.u, state.v)
        }
    })
}

fn fit_model(choice: FitChoice) -> Option<FitModel> {
    match choice {
        FitChoice::Exponential => Some(FitModel::Exponential),
        FitChoice::Polynomial => Some(FitModel::Polynomial),
        FitChoice::None => None,
    }
}

/// `certify <config>`: the multiplier alone. Certification is always asserted.
pub fn certify(cfg: &RunConfig) -> Bundle {
    let mut bundle = Bundle::new(cfg.name(), cfg.echo());
    let result = (|| -> Result<()> {
        let mesh = build_surface(cfg)?;
        let mf = certify_into(cfg, &mesh, &mut bundle)?;
        let deficit = mf.report.as_ref().map_or(f64::NAN, |r| r.deficit / r.area_m);
        bundle.assert(
            "certified",
            mf.certified,
            format!("deficit {:.4}% of area, budget {:.4}%", 100.0 * deficit, 100.0 * cfg.multiplier.epsilon),
        );
        Ok(())
    })();
    if let Err(e) = result {
        bundle.failure = Some(format!("{e:#}"));
    }
    bundle
}

/// `run <config>`: the full pipeline. Errors leave the artifacts produced so
/// far in the bundle, with a failure note.
pub fn run_experiment(cfg: &RunConfig) -> Bundle {
    let mut bundle = Bundle::new(cfg.name(), cfg.echo());
    if let Err(e) = execute(cfg, &mut bundle) {
        bundle.failure = Some(format!("{e:#}"));
    }
    bundle
}

fn execute(cfg: &RunConfig, bundle: &mut Bundle) -> Result<()> {
    let mesh = build_surface(cfg)?;
    let law = build_law(cfg)?;
    bundle.summary.push(format!(
        "surface: {} vertices, {} triangles, area {:.6}",
        mesh.vertex_count(),
        mesh.triangle_count(),
        mesh.total_area()
    ));

    let mf = if cfg.needs_multiplier() {
        Some(certify_into(cfg, &mesh, bundle)?)
    } else {
        None
    };
    if let Some(mf) = &mf {
        if !mf.certified {
            bundle.warn("multiplier is not certified; V does not meet the area budget or the margins".into());
        }
        if cfg.assertions.certified {
            bundle.assert("certified", mf.certified, format!("area(V) = {:.6}", mf.region_v.area(&mesh)));
        }
    } else if cfg.assertions.certified {
        bundle.assert("certified", false, "no multiplier was built (global damping without audits)".into());
    }

    let damping = build_damping_field(cfg, &mesh, mf.as_ref())?;
    bundle.summary.push(format!(
        "damping: {:?}, sup a = {}, feedback {law}",
        damping.mode,
        damping.a_norm()
    ));
    let (u0, v0) = initial_data(cfg, &mesh)?;
    let budget = stability_budget(&mesh);
    let dt = cfg.time.dt.unwrap_or(cfg.time.dt_fraction.unwrap_or(0.5) * budget);
    let horizon = cfg.time.horizon;

    let trace = match simulate(&mesh, &damping, &law, &u0, &v0, dt, horizon, cfg.time.snapshot_stride) {
        Ok(mut t) => {
            t.config_echo = bundle.echo.clone();
            t
        }
        Err(e) => {
            let mut partial = e.trace;
            if !partial.times.is_empty() {
                partial.config_echo = bundle.echo.clone();
                bundle.artifact("trace.csv", partial.to_csv(), true);
            }
            return Err(e.source).context("simulation failed");
        }
    };
    bundle.artifact("trace.csv", trace.to_csv(), true);
    bundle.summary.push(format!(
        "simulation: dt = {dt:.6e} (budget {budget:.6e}), {} steps, E(0) = {:.6e}, E(T) = {:.6e}, max identity residual {:.3e}",
        trace.times.len() - 1,
        trace.initial_energy(),
        trace.energies.last().copied().unwrap_or(0.0),
        trace.max_identity_residual
    ));
    if cfg.analyses.write_final_state {
        if let Some(last) = trace.snapshots.last().filter(|s| s.t == trace.final_time()) {
            bundle.artifact("final_state.txt", write_snapshot(last), false);
        } else {
            bundle.warn("write_final_state needs a snapshot stride; final state not written".into());
        }
    }
    if cfg.assertions.energy_identity {
        let monotone = trace.is_monotone(MONOTONE_SLACK);
        bundle.assert(
            "energy_identity",
            trace.identity_violations == 0 && monotone,
            format!(
                "{} intervals above tolerance, max residual {:.3e}, monotone {monotone}",
                trace.identity_violations, trace.max_identity_residual
            ),
        );
    }

    fit_into(cfg, &trace, bundle)?;

    let needs_c_obs = cfg.analyses.envelope && cfg.analyses.c_obs.is_none();
    let t_obs = cfg.analyses.observability_time.unwrap_or(horizon.min(10.0));
    let measured = if cfg.analyses.observability || needs_c_obs {
        let members = observability_ensemble(&mesh, 1.0)?;
        let traces = run_ensemble(&mesh, &damping, &law, &members, dt, t_obs, ENSEMBLE_STRIDE)?;
        let mut rep = observability_ratio(&mesh, &traces, &damping, &law, t_obs)?;
        rep.config_echo = bundle.echo.clone();
        bundle.summary.push(rep.summary());
        bundle.artifact("observability.csv", rep.to_csv(), true);
        Some(rep.c_obs)
    } else {
        None
    };

    if cfg.analyses.envelope {
        let c_obs = cfg.analyses.c_obs.or(measured).context("no observability constant")?;
        let rf = build_rate_functions(&law, mesh.total_area() * t_obs, damping.a_norm(), c_obs)?;
        let mut env = solve_envelope(&rf, trace.initial_energy(), horizon, dt)?;
        env.config_echo = bundle.echo.clone().with("c_obs", format!("{c_obs:.17e}"));
        bundle.artifact("envelope.csv", env.to_csv(), true);
        let mut cmp = envelope_compare(&trace, &env)?;
        cmp.config_echo = env.config_echo.clone();
        bundle.summary.push(cmp.summary());
        bundle.artifact("envelope_comparison.csv", cmp.to_csv(), true);
        if cfg.assertions.envelope {
            bundle.assert("envelope", cmp.found() && cmp.violations == 0, cmp.summary());
        }
    }

    if cfg.analyses.identities {
        let mf = mf.as_ref().context("identities need the multiplier")?;
        let xi = if mf.region_v.is_empty() {
            ScalarField::constant(mesh.vertex_count(), 1.0)
        } else {
            build_cutoff_field(&mesh, &mf.region_v, collar_width(cfg, &mesh))?
        };
        let mut body = bundle.echo.comment_block();
        let mut worst = 0.0f64;
        for rep in [
            multiplier_identity_residual(&mesh, &trace, mf, &damping, &law)?,
            xi_identity_residual(&mesh, &trace, &xi, &damping, &law)?,
        ] {
            bundle.summary.push(rep.summary());
            body.push_str(&rep.to_csv());
            body.push('\n');
            worst = worst.max(rep.normalized);
        }
        bundle.artifact("identities.csv", body, true);
        if let Some(tol) = cfg.assertions.max_identity_residual {
            bundle.assert("identities", worst <= tol, format!("largest normalized residual {worst:.3e} (limit {tol:e})"));
        }
    }

    if cfg.analyses.main_inequality {
        let mf = mf.as_ref().context("the main inequality needs the multiplier")?;
        let mut rep = main_inequality_check(&mesh, &trace, mf)?;
        rep.config_echo = bundle.echo.clone();
        bundle.summary.push(rep.summary());
        bundle.artifact("main_inequality.csv", rep.to_csv(), true);
        if cfg.assertions.main_inequality {
            bundle.assert(
                "main_inequality",
                rep.violations == 0 && rep.right >= rep.left,
                rep.summary(),
            );
        }
    }

    if cfg.analyses.poincare {
        let mut rep = poincare_check(&mesh)?;
        rep.config_echo = bundle.echo.clone();
        bundle.summary.push(rep.summary());
        bundle.artifact("poincare.csv", rep.to_csv(), true);
        if cfg.assertions.poincare {
            bundle.assert("poincare", rep.violations == 0, rep.summary());
        }
    }
    Ok(())
}

fn fit_into(cfg: &RunConfig, trace: &SimulationTrace, bundle: &mut Bundle) -> Result<()> {
    let Some(model) = fit_model(cfg.fit_choice()) else {
        return Ok(());
    };
    let window = cfg
        .analyses
        .fit_window
        .map(|[a, b]| (a, b))
        .unwrap_or_else(|| default_window(cfg.time.horizon));
    let fit = fit_decay(trace, model, window)?;
    bundle.summary.push(fit.summary());
    bundle.artifact("fit.csv", fit.to_csv(), false);
    if let Some(min) = cfg.assertions.min_r_squared {
        bundle.assert("min_r_squared", fit.r_squared >= min, format!("R^2 = {:.12} (minimum {min})", fit.r_squared));
    }
    if cfg.assertions.positive_rate {
        bundle.assert(
            "positive_rate",
            fit.decay_rate() > 0.0 && !fit.no_decay,
            format!("decay rate {:.10e}", fit.decay_rate()),
        );
    }
    bundle.fit = Some(fit);
    Ok(())
}

/// Fit of a trace file, for `fit <trace.csv>`.
pub fn fit_trace_file(path: &Path, model: FitModel, window: Option<(f64, f64)>) -> Result<(FitResult, ConfigEcho)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let trace = SimulationTrace::parse_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
    let window = window.unwrap_or_else(|| default_window(trace.final_time()));
    let fit = fit_decay(&trace, model, window)?;
    let mut echo = trace.config_echo.clone();
    echo.push("fit.trace", path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    echo.push("fit.model", model);
    echo.push("fit.window", format!("{}:{}", window.0, window.1));
    Ok((fit, echo))
}

/// Side-by-side fitted rates of two configs differing only in damping.
pub struct Comparison {
    pub bundles: [Bundle; 2],
    pub report: Bundle,
}

pub fn check_comparable(a: &RunConfig, b: &RunConfig) -> Result<()> {
    let diff = a.same_setup(b);
    if !diff.is_empty() {
        bail!(
            "configs {} and {} differ outside the damping section: {}",
            a.name(),
            b.name(),
            diff.join(", ")
        );
    }
    if a.fit_choice() == FitChoice::None {
        bail!("compare needs a decay fit; analyses.fit is none");
    }
    Ok(())
}

pub fn compare(a: &RunConfig, b: &RunConfig) -> Result<Comparison> {
    check_comparable(a, b)?;
    let (ba, bb) = std::thread::scope(|s| {
        let ha = s.spawn(|| run_experiment(a));
        let hb = s.spawn(|| run_experiment(b));
        (ha.join(), hb.join())
    });
    let bundles = [
        ba.map_err(|_| anyhow!("run of {} panicked", a.name()))?,
        bb.map_err(|_| anyhow!("run of {} panicked", b.name()))?,
    ];

    let mut echo = ConfigEcho::new();
    for (tag, cfg) in [("a", a), ("b", b)] {
        for (k, v) in cfg.echo().entries() {
            echo.push(format!("{tag}.{k}"), v);
        }
    }
    let mut report = Bundle::new(&format!("{} vs {}", a.name(), b.name()), echo);
    let mut csv = String::from("config,damping,model,rate,r_squared,certified\n");
    for (cfg, bundle) in [a, b].into_iter().zip(&bundles) {
        let mode = format!("{:?}", cfg.damping.mode).to_lowercase();
        let certified = bundle.certified.map_or("n/a".to_string(), |c| c.to_string());
        for w in &bundle.warnings {
            report.warn(format!("{}: {w}", cfg.name()));
        }
        if let Some(f) = &bundle.failure {
            report.failure = Some(format!("{}: {f}", cfg.name()));
        }
        let Some(fit) = &bundle.fit else {
            let _ = writeln!(csv, "{},{mode},,,,{certified}", cfg.name());
            continue;
        };
        let _ = writeln!(
            csv,
            "{},{mode},{},{:.16e},{:.16e},{certified}",
            cfg.name(),
            fit.model,
            fit.decay_rate(),
            fit.r_squared
        );
        report.summary.push(format!("{} ({mode}): {}", cfg.name(), fit.summary()));
        if cfg.damping.mode == DampingKind::Local {
            report.assert(
                &format!("{}: local rate positive", cfg.name()),
                fit.decay_rate() > 0.0 && !fit.no_decay,
                format!("decay rate {:.10e}", fit.decay_rate()),
            );
        }
    }
    report.artifact("compare.csv", csv, false);
    Ok(Comparison { bundles, report })
}
