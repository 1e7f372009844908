//! Decay envelopes: the rate chain `h → r → p → q` and the solution of
//! `S' + q(S) = 0`, `S(0) = E(0)`.
//!
//! ```text
//! h(s g(s)) ≥ s² + g(s)²            |s| ≤ 1, h concave, increasing, h(0) = 0
//! r(s) = h(s / mΣ)
//! p(x) = (cI + r)⁻¹(L x)
//! q(x) = x − (I + p)⁻¹(x)
//! c    = (1/k + K) / (mΣ (1 + ‖a‖∞))
//! L    = 1 / (C_obs mΣ (1 + ‖a‖∞))
//! ```
//!
//! `mΣ` is the space-time measure `area × T`, `k ≤ |g(s)/s| ≤ K` for
//! `|s| > 1`, and `C_obs` is the measured observability constant.

use std::fmt::Write as _;

use crate::damping::FeedbackLaw;
use crate::echo::ConfigEcho;
use crate::error::{Error, Result};
use crate::solver::SimulationTrace;

/// Relative tolerance of every monotone inversion.
pub const BISECTION_TOLERANCE: f64 = 1e-12;
pub const MAX_BISECTION_ITERATIONS: usize = 200;
/// Samples of the parametric curve used for custom laws.
pub const HULL_SAMPLES: usize = 20_001;

/// The concave majorant `h`.
#[derive(Clone, Debug, PartialEq)]
pub enum HFunction {
    /// `(m + 1/m) x`.
    Linear { slope: f64 },
    /// `2 x^{2/(p+1)}`.
    Power { exponent: f64 },
    /// Piecewise linear through `(xs, ys)` starting at the origin, extended
    /// beyond the last knot with the last slope.
    Table { xs: Vec<f64>, ys: Vec<f64> },
}

impl HFunction {
    /// Validated piecewise-linear `h` through the given knots.
    pub fn from_table(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let h = Self::Table { xs, ys };
        h.validate()?;
        Ok(h)
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Linear { slope } => (slope + 1.0 / slope) * x,
            Self::Power { exponent } => 2.0 * x.powf(2.0 / (exponent + 1.0)),
            Self::Table { xs, ys } => {
                let k = xs.partition_point(|&v| v < x);
                let (i, j) = if k == 0 {
                    (0, 1)
                } else if k >= xs.len() {
                    (xs.len() - 2, xs.len() - 1)
                } else {
                    (k - 1, k)
                };
                ys[i] + (ys[j] - ys[i]) * (x - xs[i]) / (xs[j] - xs[i])
            }
        }
    }

    /// Checks `h(0) = 0` and strict increase (and concavity for tables).
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Linear { slope } if *slope > 0.0 && slope.is_finite() => Ok(()),
            Self::Power { exponent } if *exponent >= 1.0 && exponent.is_finite() => Ok(()),
            Self::Table { xs, ys } => {
                if xs.len() < 2 || xs.len() != ys.len() {
                    return Err(Error::InvalidParameter("h table needs at least two knots".into()));
                }
                if xs[0] != 0.0 || ys[0] != 0.0 {
                    return Err(Error::InvalidParameter("h table must start at (0, 0)".into()));
                }
                let mut last_slope = f64::INFINITY;
                for k in 1..xs.len() {
                    let dx = xs[k] - xs[k - 1];
                    let slope = (ys[k] - ys[k - 1]) / dx;
                    if !(dx > 0.0) || !(slope > 0.0) {
                        return Err(Error::InvalidParameter(format!(
                            "h table is not strictly increasing at knot {k} ({}, {})",
                            xs[k], ys[k]
                        )));
                    }
                    if slope > last_slope * (1.0 + 1e-12) {
                        return Err(Error::InvalidParameter(format!("h table is not concave at knot {k}")));
                    }
                    last_slope = slope;
                }
                Ok(())
            }
            other => Err(Error::InvalidParameter(format!("invalid h: {other:?}"))),
        }
    }
}

/// `h` for a feedback law: closed forms for linear and power laws, the upper
/// concave hull of `(s g(s), s² + g(s)²)`, `s ∈ [0, 1]`, otherwise.
pub fn build_h(law: &FeedbackLaw) -> HFunction {
    match law {
        FeedbackLaw::Linear { slope } => HFunction::Linear { slope: *slope },
        FeedbackLaw::Power { exponent } => HFunction::Power { exponent: *exponent },
        FeedbackLaw::Table(_) => {
            let pts: Vec<(f64, f64)> = (0..HULL_SAMPLES)
                .map(|k| {
                    let s = k as f64 / (HULL_SAMPLES - 1) as f64;
                    let g = law.eval(s);
                    (s * g, s * s + g * g)
                })
                .collect();
            let (xs, mut ys) = upper_concave_hull(&pts);
            // the curve may bulge above a chord between samples; lift the
            // hull by twice the largest bulge seen at sample midpoints
            let hull = HFunction::Table { xs: xs.clone(), ys: ys.clone() };
            let bulge = (0..HULL_SAMPLES - 1)
                .map(|k| {
                    let s = (k as f64 + 0.5) / (HULL_SAMPLES - 1) as f64;
                    let g = law.eval(s);
                    let hx = hull.eval(s * g);
                    if hx > 0.0 {
                        (s * s + g * g) / hx - 1.0
                    } else {
                        0.0
                    }
                })
                .fold(0.0, f64::max);
            let lift = 1.0 + 2.0 * bulge + 4.0 * f64::EPSILON;
            ys.iter_mut().for_each(|y| *y *= lift);
            HFunction::Table { xs, ys }
        }
    }
}

/// Upper concave hull of points sorted by `x` (monotone chain); the first
/// point is kept as the left end.
fn upper_concave_hull(pts: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>) {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in pts {
        if let Some(&(lx, ly)) = hull.last() {
            if p.0 <= lx {
                if p.1 > ly {
                    hull.pop();
                } else {
                    continue;
                }
            }
        }
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b when it lies on or below the chord a → p
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull.into_iter().unzip()
}

/// Solves `f(y) = target` for `y ≥ 0` with `f` increasing and `f(0) = 0`.
/// `hi` is an initial upper bracket (doubled if too small).
pub fn invert_increasing(mut f: impl FnMut(f64) -> f64, target: f64, hi: f64) -> Result<f64> {
    if !(target >= 0.0) || !target.is_finite() {
        return Err(Error::Bracket(format!("target {target} must be finite and nonnegative")));
    }
    if target == 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = if hi > 0.0 && hi.is_finite() { hi } else { target.max(1.0) };
    let mut grow = 0;
    while f(hi) < target {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > MAX_BISECTION_ITERATIONS || !hi.is_finite() {
            return Err(Error::Bracket(format!(
                "no upper bracket for target {target:e} (function not increasing to the target?)"
            )));
        }
    }
    for _ in 0..MAX_BISECTION_ITERATIONS {
        if hi - lo <= BISECTION_TOLERANCE * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The rate chain for one feedback law and measured constants.
#[derive(Clone, Debug)]
pub struct RateFunctions {
    pub h: HFunction,
    pub c: f64,
    pub l: f64,
    pub meas_sigma: f64,
    /// `1/k + K`.
    pub k0: f64,
    pub a_norm: f64,
    pub c_obs: f64,
}

pub fn build_rate_functions(law: &FeedbackLaw, meas_sigma: f64, a_norm: f64, c_obs: f64) -> Result<RateFunctions> {
    build_rate_functions_with_h(build_h(law), law.growth_constants(), meas_sigma, a_norm, c_obs)
}

/// As [`build_rate_functions`] with an explicit `h` and growth constants
/// `(k, K)`.
pub fn build_rate_functions_with_h(
    h: HFunction,
    growth: (f64, f64),
    meas_sigma: f64,
    a_norm: f64,
    c_obs: f64,
) -> Result<RateFunctions> {
    for (name, v) in [("meas_sigma", meas_sigma), ("a_norm", a_norm), ("C_obs", c_obs)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    let (k, kk) = growth;
    if !(k > 0.0 && kk >= k) {
        return Err(Error::InvalidParameter(format!("invalid growth constants ({k}, {kk})")));
    }
    h.validate()?;
    let k0 = 1.0 / k + kk;
    Ok(RateFunctions {
        c: k0 / (meas_sigma * (1.0 + a_norm)),
        l: 1.0 / (c_obs * meas_sigma * (1.0 + a_norm)),
        h,
        meas_sigma,
        k0,
        a_norm,
        c_obs,
    })
}

impl RateFunctions {
    pub fn r(&self, s: f64) -> f64 {
        self.h.eval(s / self.meas_sigma)
    }

    /// `(cI + r)⁻¹(L x)`.
    pub fn p(&self, x: f64) -> Result<f64> {
        let target = self.l * x;
        invert_increasing(|y| self.c * y + self.r(y), target, target / self.c)
    }

    /// `(I + p)⁻¹(y)`.
    pub fn inverse_one_plus_p(&self, y: f64) -> Result<f64> {
        let mut failure = None;
        let z = invert_increasing(
            |z| match self.p(z) {
                Ok(pz) => z + pz,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::INFINITY
                }
            },
            y,
            y,
        )?;
        match failure {
            Some(e) => Err(e),
            None => Ok(z),
        }
    }

    /// `x − (I + p)⁻¹(x)`, evaluated as `p((I + p)⁻¹(x))` to avoid
    /// cancellation.
    pub fn q(&self, x: f64) -> Result<f64> {
        self.p(self.inverse_one_plus_p(x)?)
    }
}

/// Sampled solution of `S' = −q(S)`.
#[derive(Clone, Debug)]
pub struct Envelope {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `S'` at each sample.
    pub slopes: Vec<f64>,
    pub t0: f64,
    pub config_echo: ConfigEcho,
}

impl Envelope {
    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Cubic Hermite interpolation of `S` (None beyond the horizon).
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let last = self.horizon();
        if t < 0.0 || t > last * (1.0 + 1e-14) || self.times.is_empty() {
            return None;
        }
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            return Some(self.values[0]);
        }
        if k >= self.times.len() {
            return Some(*self.values.last().unwrap());
        }
        let (i, j) = (k - 1, k);
        let h = self.times[j] - self.times[i];
        let s = (t - self.times[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * self.values[i]
            + (s3 - 2.0 * s2 + s) * h * self.slopes[i]
            + (-2.0 * s3 + 3.0 * s2) * self.values[j]
            + (s3 - s2) * h * self.slopes[j];
        Some(v.clamp(self.values[j].min(self.values[i]), self.values[i].max(self.values[j])))
    }

    /// Envelope CSV: config echo comments, header `t,S`, 17 significant
    /// digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.config_echo.comment_block();
        out.push_str("t,S\n");
        for (t, s) in self.times.iter().zip(&self.values) {
            let _ = writeln!(out, "{t:.16e},{s:.16e}");
        }
        out
    }
}

/// Classical RK4 for `S' = −q(S)` on `[0, horizon]`, `S` clamped at 0.
pub fn solve_envelope_with(q: impl Fn(f64) -> Result<f64>, e0: f64, horizon: f64, dt: f64) -> Result<Envelope> {
    if !(e0 >= 0.0 && e0.is_finite()) {
        return Err(Error::InvalidParameter(format!("E0 must be nonnegative, got {e0}")));
    }
    if !(horizon > 0.0 && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("need horizon > 0 and dt > 0, got {horizon}, {dt}")));
    }
    let rhs = |s: f64| -> Result<f64> { Ok(-q(s.max(0.0))?) };
    let steps = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
    let h = horizon / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut slopes = Vec::with_capacity(steps + 1);
    let mut s = e0;
    let mut ds = rhs(s)?;
    times.push(0.0);
    values.push(s);
    slopes.push(ds);
    for n in 1..=steps {
        if s > 0.0 {
            let k1 = ds;
            let k2 = rhs(s + 0.5 * h * k1)?;
            let k3 = rhs(s + 0.5 * h * k2)?;
            let k4 = rhs(s + h * k3)?;
            s = (s + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).max(0.0);
            ds = rhs(s)?;
        }
        times.push(n as f64 * h);
        values.push(s);
        slopes.push(ds);
    }
    Ok(Envelope {
        times,
        values,
        slopes,
        t0: 1.0,
        config_echo: ConfigEcho::default(),
    })
}

pub fn solve_envelope(rf: &RateFunctions, e0: f64, horizon: f64, dt: f64) -> Result<Envelope> {
    solve_envelope_with(|x| rf.q(x), e0, horizon, dt)
}

/// The saturated sequence `s_{m+1} + p(s_{m+1}) = s_m`, `m < m_max`.
pub fn saturated_sequence(p: impl Fn(f64) -> Result<f64>, s0: f64, m_max: usize) -> Result<Vec<f64>> {
    if !(s0 >= 0.0 && s0.is_finite()) {
        return Err(Error::InvalidParameter(format!("s0 must be nonnegative, got {s0}")));
    }
    let mut seq = Vec::with_capacity(m_max + 1);
    seq.push(s0);
    for m in 0..m_max {
        let target = seq[m];
        let mut failure = None;
        let next = invert_increasing(
            |y| match p(y) {
                Ok(v) if v >= 0.0 => y + v,
                Ok(v) => {
                    failure.get_or_insert(Error::Bracket(format!("p({y}) = {v} is negative; p is not monotone")));
                    f64::INFINITY
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::INFINITY
                }
            },
            target,
            target,
        )
        .map_err(|e| Error::Bracket(format!("step {m}: {e}")))?;
        if let Some(e) = failure {
            return Err(e);
        }
        seq.push(next);
    }
    Ok(seq)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DominationReport {
    /// Largest `s_m / S(m)` (0 when every term vanishes).
    pub max_ratio: f64,
    /// Indices with `s_m > S(m)(1 + tol)`.
    pub violations: Vec<usize>,
    pub checked: usize,
}

/// Compares the sequence with the envelope at integer times.
pub fn sequence_domination(seq: &[f64], env: &Envelope, tol: f64) -> Result<DominationReport> {
    let mut max_ratio: f64 = 0.0;
    let mut violations = Vec::new();
    for (m, &s) in seq.iter().enumerate() {
        let big = env
            .value_at(m as f64)
            .ok_or_else(|| Error::InvalidParameter(format!("envelope horizon {} shorter than m = {m}", env.horizon())))?;
        if s > big * (1.0 + tol) {
            violations.push(m);
        }
        if big > 0.0 {
            max_ratio = max_ratio.max(s / big);
        } else if s > 0.0 {
            max_ratio = f64::INFINITY;
        }
    }
    Ok(DominationReport {
        max_ratio,
        violations,
        checked: seq.len(),
    })
}

/// Result of fitting `E(t) ≤ S(t/T₀ − 1)`.
#[derive(Clone, Debug)]
pub struct EnvelopeComparison {
    /// Smallest admissible `T₀` found, if any is below the cap.
    pub t0: Option<f64>,
    pub cap: f64,
    /// Violations at the reported `T₀`, or at the cap when none was found.
    pub violations: usize,
    /// Largest `E(t)/S(t/T₀ − 1)` over `t > T₀` at that `T₀`.
    pub max_ratio: f64,
    /// `(t, E/S)` for every violating sample at the cap (empty on success).
    pub violation_profile: Vec<(f64, f64)>,
    pub samples: usize,
    pub config_echo: ConfigEcho,
}

impl EnvelopeComparison {
    pub fn found(&self) -> bool {
        self.t0.is_some()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.config_echo.comment_block();
        out.push_str("key,value\n");
        match self.t0 {
            Some(t) => {
                let _ = writeln!(out, "t0,{t:.16e}");
            }
            None => out.push_str("t0,none\n"),
        }
        let _ = writeln!(out, "cap,{:.16e}", self.cap);
        let _ = writeln!(out, "violations,{}", self.violations);
        let _ = writeln!(out, "max_ratio,{:.16e}", self.max_ratio);
        let _ = writeln!(out, "samples,{}", self.samples);
        if !self.violation_profile.is_empty() {
            out.push_str("\nt,ratio\n");
            for (t, r) in &self.violation_profile {
                let _ = writeln!(out, "{t:.16e},{r:.16e}");
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        match self.t0 {
            Some(t) => format!(
                "envelope holds for T0 = {t:.6}: 0 violations over {} samples, max E/S = {:.6}",
                self.samples, self.max_ratio
            ),
            None => format!(
                "no T0 <= {:.6}: {} violations at the cap, max E/S = {:.6}",
                self.cap, self.violations, self.max_ratio
            ),
        }
    }
}

/// Violations and the largest ratio of `E(t) ≤ S(t/T₀ − 1)` over sampled
/// `t > T₀`. Arguments beyond the envelope horizon count as violations.
fn check_t0(times: &[f64], energies: &[f64], env: &Envelope, t0: f64, profile: bool) -> (usize, f64, Vec<(f64, f64)>) {
    let mut violations = 0;
    let mut max_ratio: f64 = 0.0;
    let mut prof = Vec::new();
    for (&t, &e) in times.iter().zip(energies) {
        if t <= t0 {
            continue;
        }
        let ratio = match env.value_at(t / t0 - 1.0) {
            Some(s) if s > 0.0 => e / s,
            Some(_) if e <= 0.0 => 0.0,
            _ => f64::INFINITY,
        };
        if ratio > 1.0 + 1e-12 {
            violations += 1;
            if profile {
                prof.push((t, ratio));
            }
        }
        max_ratio = max_ratio.max(ratio);
    }
    (violations, max_ratio, prof)
}

/// Smallest `T₀` on a geometric grid (refined by bisection) such that
/// `E(t) ≤ S(t/T₀ − 1)` for every sampled `t > T₀`. The cap is half the
/// trace length.
pub fn envelope_compare(trace: &SimulationTrace, env: &Envelope) -> Result<EnvelopeComparison> {
    compare_samples(&trace.times, &trace.energies, env)
}

pub fn compare_samples(times: &[f64], energies: &[f64], env: &Envelope) -> Result<EnvelopeComparison> {
    if times.len() < 2 || times.len() != energies.len() {
        return Err(Error::InvalidParameter("trace needs at least two samples".into()));
    }
    let cap = 0.5 * times[times.len() - 1];
    let lo = (times[1] - times[0]).max(1e-6 * cap);
    let ratio = 2f64.powf(1.0 / 16.0);
    let mut grid = Vec::new();
    let mut t = lo;
    while t < cap {
        grid.push(t);
        t *= ratio;
    }
    grid.push(cap);
    let passes = |t0: f64| check_t0(times, energies, env, t0, false).0 == 0;
    let first = grid.iter().position(|&t| passes(t));
    let t0 = match first {
        None => None,
        Some(0) => Some(grid[0]),
        Some(k) => {
            let (mut a, mut b) = (grid[k - 1], grid[k]);
            while b - a > 1e-9 * b {
                let mid = 0.5 * (a + b);
                if passes(mid) {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            Some(b)
        }
    };
    let at = t0.unwrap_or(cap);
    let (violations, max_ratio, violation_profile) = check_t0(times, energies, env, at, t0.is_none());
    Ok(EnvelopeComparison {
        t0,
        cap,
        violations,
        max_ratio,
        violation_profile,
        samples: times.iter().filter(|&&t| t > at).count(),
        config_echo: ConfigEcho::default(),
    })
}
