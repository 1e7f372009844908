//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dampwave_core::damping::{
    build_cutoff_field, build_damping, build_global_damping, cutoff_gradient_ratio, verify_profile_bound, DampingField,
    FeedbackLaw,
};
use dampwave_core::envelope::{
    build_rate_functions, envelope_compare, sequence_domination, saturated_sequence, solve_envelope,
    solve_envelope_with,
};
use dampwave_core::fit::{default_window, fit_decay, FitModel};
use dampwave_core::harness::{
    multiplier_identity_residual, observability_ensemble, observability_ratio, operator_check, poincare_check,
    run_ensemble, xi_identity_residual,
};
use dampwave_core::mesh::{build_icosphere, build_torus};
use dampwave_core::multiplier::{build_global_multiplier, Margins, MultiplierField};
use dampwave_core::solver::{random_initial_data, simulate, stability_budget, SimulationTrace};
use dampwave_core::{ScalarField, SurfaceMesh};

struct Outcome {
    id: usize,
    pass: bool,
    detail: String,
    elapsed: Duration,
    limit: Duration,
}

/// Energy bookkeeping of one damped run, kept for the dissipation check.
struct DampedRun {
    label: String,
    e0: f64,
    max_residual: f64,
    violations: usize,
    monotone: bool,
}

#[derive(Default)]
struct Shared {
    damped: Vec<DampedRun>,
    decay_trace: Option<SimulationTrace>,
    global_c_obs: Option<f64>,
}

impl Shared {
    fn record(&mut self, label: impl Into<String>, tr: &SimulationTrace) {
        self.damped.push(DampedRun {
            label: label.into(),
            e0: tr.initial_energy(),
            max_residual: tr.max_identity_residual,
            violations: tr.identity_violations,
            monotone: tr.is_monotone(0.0),
        });
    }
}

type Check = Result<(bool, String), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn linear() -> FeedbackLaw {
    FeedbackLaw::linear(1.0).unwrap()
}

fn energy_conservation(_: &mut Shared) -> Check {
    let m = build_icosphere(4).map_err(err)?;
    let dt = 0.5 * stability_budget(&m);
    let (u, v) = random_initial_data(&m, 0, 1.0).map_err(err)?;
    let tr = simulate(&m, &DampingField::undamped(&m), &linear(), &u, &v, dt, 1e4 * dt, 0).map_err(err)?;
    let steps = tr.times.len() - 1;
    let drift = tr.max_relative_drift();
    Ok((
        drift <= 1e-8 && steps == 10_000,
        format!("{steps} steps at dt = {dt:.6}, max relative drift {drift:.3e} (<= 1e-8)"),
    ))
}

fn dissipation_identity(shared: &mut Shared) -> Check {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for r in &shared.damped {
        let rel = if r.e0 > 0.0 { r.max_residual / r.e0 } else { r.max_residual };
        worst = worst.max(rel);
        if rel > 1e-8 || r.violations > 0 || !r.monotone {
            failures.push(r.label.clone());
        }
    }
    Ok((
        failures.is_empty() && !shared.damped.is_empty(),
        format!(
            "{} damped runs, worst per-interval residual {worst:.3e} E(0) (<= 1e-8), non-monotone or violating: {:?}",
            shared.damped.len(),
            failures
        ),
    ))
}

fn exponential_decay(shared: &mut Shared) -> Check {
    let m = build_icosphere(4).map_err(err)?;
    let d = build_global_damping(&m, 1.0).map_err(err)?;
    let (u, v) = random_initial_data(&m, 0, 1.0).map_err(err)?;
    let tr = simulate(&m, &d, &linear(), &u, &v, 0.5 * stability_budget(&m), 20.0, 0).map_err(err)?;
    shared.record("global linear decay", &tr);
    let fit = fit_decay(&tr, FitModel::Exponential, (7.0, 20.0)).map_err(err)?;
    let pass = fit.r_squared >= 0.999 && fit.parameter > 0.0;
    shared.decay_trace = Some(tr);
    Ok((pass, fit.summary()))
}

fn polynomial_envelope(shared: &mut Shared) -> Check {
    let env = solve_envelope_with(|s| Ok(s * s), 1.0, 100.0, 0.01).map_err(err)?;
    let worst = env
        .times
        .iter()
        .zip(&env.values)
        .map(|(t, s)| (s * (1.0 + t) - 1.0).abs())
        .fold(0.0, f64::max);

    let m = build_icosphere(4).map_err(err)?;
    let mf = build_global_multiplier(&m, 0.1 * m.total_area(), &Margins::default()).map_err(err)?;
    let d = build_damping(&m, &mf.region_v, 3.0 * m.max_edge_length(), 1.0, false).map_err(err)?;
    let (u, v) = random_initial_data(&m, 0, 1.0).map_err(err)?;
    let law = FeedbackLaw::power(3.0).map_err(err)?;
    let horizon = 200.0;
    let tr = simulate(&m, &d, &law, &u, &v, 0.5 * stability_budget(&m), horizon, 0).map_err(err)?;
    shared.record("local cubic decay", &tr);
    let fit = fit_decay(&tr, FitModel::Polynomial, default_window(horizon)).map_err(err)?;
    let pass = worst <= 1e-8 && mf.certified && (-1.4..=-0.6).contains(&fit.parameter);
    Ok((
        pass,
        format!(
            "envelope vs (1+t)^-1 max relative error {worst:.3e} (<= 1e-8); local run: {}",
            fit.summary()
        ),
    ))
}

fn certification(_: &mut Shared) -> Check {
    let m = build_icosphere(4).map_err(err)?;
    let eps = 0.1 * m.total_area();
    let margins = Margins::new(0.05, 0.05, 0.05);
    let mf = build_global_multiplier(&m, eps, &margins).map_err(err)?;
    let rep = mf.report.as_ref().ok_or("no certification report")?;
    let area_v = mf.region_v.area(&m);
    let origins_ok = rep
        .charts
        .iter()
        .all(|c| [c.origin_theta.0, c.origin_theta.1].iter().all(|l| (l - 0.25).abs() <= 0.025));
    let pass = mf.certified
        && area_v >= m.total_area() - eps
        && rep.min_theta >= 0.05
        && rep.min_gradient >= 0.05
        && origins_ok;
    Ok((
        pass,
        format!(
            "certified {}, deficit {:.2}% of area, min theta {:.4}, min |grad f| {:.4}, {} chart origins within 10% of 1/4: {}",
            mf.certified,
            100.0 * rep.deficit / m.total_area(),
            rep.min_theta,
            rep.min_gradient,
            rep.charts.len(),
            origins_ok
        ),
    ))
}

fn cutoff_bound(_: &mut Shared) -> Check {
    let m = build_icosphere(5).map_err(err)?;
    let mf = build_global_multiplier(&m, 0.1 * m.total_area(), &Margins::default()).map_err(err)?;
    let outside = mf.region_v.complement();
    // the damping collar width, in mesh units
    let eps = 3.0 * m.max_edge_length();
    let bound = verify_profile_bound(eps).map_err(err)?;
    let ratio = cutoff_gradient_ratio(&m, &build_cutoff_field(&m, &outside, eps).map_err(err)?).map_err(err)?;
    let limit = 1.5 * bound.scaled_bound;
    let wide = verify_profile_bound(0.5).map_err(err)?;
    let wide_ratio = cutoff_gradient_ratio(&m, &build_cutoff_field(&m, &outside, 0.5).map_err(err)?).map_err(err)?;
    let pass = bound.m_bound.is_finite() && (bound.upper_branch - 4.0).abs() < 1e-12 && ratio <= limit;
    Ok((
        pass,
        format!(
            "M = {:.6}, upper branch {:.12}, level 5 collar ratio {ratio:.2} <= {limit:.2} at eps = {eps:.4} ({:.3} x M/eps^2; width 0.5 gives {:.3} x)",
            bound.m_bound,
            bound.upper_branch,
            ratio / bound.scaled_bound,
            wide_ratio / wide.scaled_bound
        ),
    ))
}

fn smooth_multiplier(m: &SurfaceMesh) -> Result<MultiplierField, String> {
    let f = m.sample(|p| 0.5 * ((p.x - 0.3).powi(2) + p.y * p.y + p.z * p.z) + 0.2 * p.y * p.z);
    MultiplierField::from_field(m, f, 1.0).map_err(err)
}

/// `η` of the great-circle distance to the cap `z ≥ 0.3`, width 0.6.
fn cap_cutoff(m: &SurfaceMesh) -> ScalarField {
    let edge = 0.3f64.acos();
    m.sample(|p| dampwave_core::damping::profile_eta((p.z.clamp(-1.0, 1.0).acos() - edge).max(0.0), 0.6))
}

fn identity_audits(shared: &mut Shared) -> Check {
    let law = linear();
    let m = build_icosphere(3).map_err(err)?;
    let d = build_global_damping(&m, 0.5).map_err(err)?;
    let z = ScalarField::zeros(m.vertex_count());
    let tr = simulate(&m, &d, &law, &z, &z, 0.05, 1.0, 1).map_err(err)?;
    let zero_mult = multiplier_identity_residual(&m, &tr, &smooth_multiplier(&m)?, &d, &law).map_err(err)?;
    let zero_xi = xi_identity_residual(&m, &tr, &cap_cutoff(&m), &d, &law).map_err(err)?;
    let zero_ok = zero_mult.residual == 0.0 && zero_xi.residual == 0.0;

    let mut mult = Vec::new();
    let mut xi = Vec::new();
    for level in [3, 4, 5] {
        let m = build_icosphere(level).map_err(err)?;
        let d = build_global_damping(&m, 0.5).map_err(err)?;
        let u = m.sample(|p| p.x * p.y + 0.5 * p.z + 0.3 * p.x);
        let v = m.sample(|p| p.y - p.z * p.x);
        let tr = simulate(&m, &d, &law, &u, &v, 0.3 * m.mean_edge_length(), 1.0, 1).map_err(err)?;
        shared.record(format!("identity audit level {level}"), &tr);
        mult.push(multiplier_identity_residual(&m, &tr, &smooth_multiplier(&m)?, &d, &law).map_err(err)?.normalized);
        xi.push(xi_identity_residual(&m, &tr, &cap_cutoff(&m), &d, &law).map_err(err)?.normalized);
    }
    let decreasing = |r: &[f64]| r.windows(2).all(|w| w[1] < w[0]);
    Ok((
        zero_ok && decreasing(&mult) && decreasing(&xi),
        format!(
            "zero-trajectory residuals ({:e}, {:e}); normalized multiplier residuals {:.3e} > {:.3e} > {:.3e}; xi residuals {:.3e} > {:.3e} > {:.3e}",
            zero_mult.residual, zero_xi.residual, mult[0], mult[1], mult[2], xi[0], xi[1], xi[2]
        ),
    ))
}

fn observability(shared: &mut Shared) -> Check {
    let law = linear();
    let horizon = 10.0;
    let mut global = Vec::new();
    let mut local = Vec::new();
    for level in [4, 5] {
        let m = build_icosphere(level).map_err(err)?;
        let dt = 0.5 * stability_budget(&m);
        let members = observability_ensemble(&m, 1.0).map_err(err)?;
        let mf = build_global_multiplier(&m, 0.1 * m.total_area(), &Margins::default()).map_err(err)?;
        if !mf.certified {
            return Ok((false, format!("level {level} multiplier not certified")));
        }
        let dampings = [
            build_global_damping(&m, 1.0).map_err(err)?,
            build_damping(&m, &mf.region_v, 0.3, 1.0, true).map_err(err)?,
        ];
        for (k, d) in dampings.iter().enumerate() {
            let traces = run_ensemble(&m, d, &law, &members, dt, horizon, 10).map_err(err)?;
            for tr in &traces {
                shared.record(format!("observability level {level} member {}", tr.config_echo.get("member").unwrap_or("?")), tr);
            }
            let c = observability_ratio(&m, &traces, d, &law, horizon).map_err(err)?.c_obs;
            if k == 0 { &mut global } else { &mut local }.push(c);
            if k == 0 && level == 4 {
                shared.global_c_obs = Some(c);
            }
        }
    }

    let m = build_icosphere(4).map_err(err)?;
    let d = build_global_damping(&m, 1.0).map_err(err)?;
    let (u, v) = random_initial_data(&m, 7, 1.0).map_err(err)?;
    let dt = 0.5 * stability_budget(&m);
    let pair = [
        simulate(&m, &d, &law, &u, &v, dt, horizon, 10).map_err(err)?,
        simulate(&m, &d, &law, &u.map(|x| 2.0 * x), &v.map(|x| 2.0 * x), dt, horizon, 10).map_err(err)?,
    ];
    let rep = observability_ratio(&m, &pair, &d, &law, horizon).map_err(err)?;
    let (r1, r2) = (rep.ratios[0].unwrap_or(f64::NAN), rep.ratios[1].unwrap_or(f64::NAN));
    let invariance = (r1 - r2).abs() / r1;

    let finite = global.iter().chain(&local).all(|c| c.is_finite() && *c > 0.0);
    let drift = |c: &[f64]| (c[1] - c[0]).abs() / c[0];
    let pass = finite && drift(&global) <= 0.25 && drift(&local) <= 0.25 && invariance <= 1e-10;
    Ok((
        pass,
        format!(
            "global C_obs {:.4e} -> {:.4e} ({:.1}%), local C_obs {:.4e} -> {:.4e} ({:.1}%), amplitude invariance {invariance:.1e}",
            global[0],
            global[1],
            100.0 * drift(&global),
            local[0],
            local[1],
            100.0 * drift(&local)
        ),
    ))
}

fn saturated_sequences(_: &mut Shared) -> Check {
    let seq = saturated_sequence(Ok, 1.0, 100).map_err(err)?;
    let closed = seq.iter().enumerate().all(|(m, s)| (s - 0.5f64.powi(m as i32)).abs() <= 1e-10 * s);
    let env = solve_envelope_with(|x| Ok(0.5 * x), 1.0, 100.0, 0.01).map_err(err)?;
    let linear_rep = sequence_domination(&seq, &env, 1e-12).map_err(err)?;

    let law = FeedbackLaw::power(3.0).map_err(err)?;
    let rf = build_rate_functions(&law, 4.0 * std::f64::consts::PI * 10.0, 1.0, 0.01).map_err(err)?;
    let seq = saturated_sequence(|x| rf.p(x), 1.0, 100).map_err(err)?;
    let env = solve_envelope(&rf, 1.0, 100.0, 0.05).map_err(err)?;
    let cubic_rep = sequence_domination(&seq, &env, 1e-10).map_err(err)?;
    Ok((
        closed && linear_rep.violations.is_empty() && cubic_rep.violations.is_empty(),
        format!(
            "linear chain closed form {closed}, max s_m/S(m) {:.6}; cubic chain max s_m/S(m) {:.6}",
            linear_rep.max_ratio, cubic_rep.max_ratio
        ),
    ))
}

fn envelope_comparison(shared: &mut Shared) -> Check {
    let tr = shared.decay_trace.as_ref().ok_or("decay run unavailable")?;
    let c_obs = shared.global_c_obs.ok_or("observability constant unavailable")?;
    let m = build_icosphere(4).map_err(err)?;
    let d = build_global_damping(&m, 1.0).map_err(err)?;
    let rf = build_rate_functions(&linear(), m.total_area() * 10.0, d.a_norm(), c_obs).map_err(err)?;
    let env = solve_envelope(&rf, tr.initial_energy(), tr.final_time(), tr.dt).map_err(err)?;
    let cmp = envelope_compare(tr, &env).map_err(err)?;
    Ok((cmp.t0.is_some_and(f64::is_finite) && cmp.violations == 0, cmp.summary()))
}

fn spectral_sanity(_: &mut Shared) -> Check {
    let m = build_icosphere(4).map_err(err)?;
    let p = poincare_check(&m).map_err(err)?;
    let torus = build_torus(1.0, 0.4, 48, 24).map_err(err)?;
    let op = operator_check(&torus);
    let pass = (p.lambda1 - 2.0).abs() <= 0.04
        && p.fields == 100
        && p.violations == 0
        && (p.first_mode_ratio - 1.0).abs() <= 1e-8
        && op.is_psd(1e-10)
        && op.max_row_sum <= 1e-10;
    Ok((
        pass,
        format!(
            "{}; torus spectrum [{:.3e}, {:.3e}], asymmetry {:.1e}",
            p.summary(),
            op.min_eigenvalue,
            op.max_eigenvalue,
            op.asymmetry
        ),
    ))
}

/// Number, title, runtime budget in seconds, check.
type Criterion = (usize, &'static str, u64, fn(&mut Shared) -> Check);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        (1, "energy conservation", 60, energy_conservation),
        (3, "exponential decay", 120, exponential_decay),
        (4, "polynomial envelope", 600, polynomial_envelope),
        (5, "multiplier certification", 120, certification),
        (6, "cut-off bound", 60, cutoff_bound),
        (7, "identity audits", 600, identity_audits),
        (8, "observability", 900, observability),
        (9, "saturated sequences", 1, saturated_sequences),
        (10, "envelope comparison", 120, envelope_comparison),
        (11, "spectral sanity", 120, spectral_sanity),
        (2, "dissipation identity", 60, dissipation_identity),
    ];
    let mut shared = Shared::default();
    let mut outcomes = Vec::new();
    for (id, name, limit, check) in criteria {
        let start = Instant::now();
        let result = check(&mut shared);
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok((pass, detail)) => (pass, format!("{name}: {detail}")),
            Err(e) => (false, format!("{name}: error: {e}")),
        };
        eprintln!("criterion {id} finished in {:.1} s", elapsed.as_secs_f64());
        outcomes.push(Outcome {
            id,
            pass,
            detail,
            elapsed,
            limit: Duration::from_secs(limit),
        });
    }
    outcomes.sort_by_key(|o| o.id);
    let mut failed = 0;
    for o in &outcomes {
        let in_time = o.elapsed <= o.limit;
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2}: {} ({:.1} s{}) {}",
            o.id,
            if pass { "PASS" } else { "FAIL" },
            o.elapsed.as_secs_f64(),
            if in_time { String::new() } else { format!(", over the {} s budget", o.limit.as_secs()) },
            o.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
