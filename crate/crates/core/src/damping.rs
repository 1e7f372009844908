//! Feedback laws `g`, the cut-off profile `η̃`, and damping coefficients
//! `a(x)` supported on a collar around the complement of `V`.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{geodesic_distance, gradient, ScalarField, SurfaceMesh, VertexSet};

/// Monotone table `(s, g(s))` for `s ≥ 0`, extended oddly to `s < 0` and
/// by the last ratio `g(s_max)/s_max` beyond the table.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackTable {
    s: Vec<f64>,
    g: Vec<f64>,
}

impl FeedbackTable {
    pub fn new(mut pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.iter().any(|(s, g)| !s.is_finite() || !g.is_finite()) {
            return Err(Error::InvalidParameter("feedback table contains non-finite values".into()));
        }
        if pairs.first().map(|p| p.0) != Some(0.0) {
            pairs.insert(0, (0.0, 0.0));
        }
        if pairs[0].1 != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "feedback table must have g(0) = 0, found {}",
                pairs[0].1
            )));
        }
        if pairs.len() < 2 {
            return Err(Error::InvalidParameter("feedback table needs a positive abscissa".into()));
        }
        for w in pairs.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidParameter(format!(
                    "feedback table abscissae must be strictly increasing and nonnegative ({} after {})",
                    w[1].0, w[0].0
                )));
            }
            if w[1].1 <= w[0].1 {
                return Err(Error::InvalidParameter(format!(
                    "feedback table is not monotone: g({}) = {} after g({}) = {}",
                    w[1].0, w[1].1, w[0].0, w[0].1
                )));
            }
        }
        let (s, g) = pairs.into_iter().unzip();
        Ok(Self { s, g })
    }

    /// Parses `s,g` rows; a non-numeric first row is taken as a header and
    /// `#` starts a comment.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = match fields.as_slice() {
                [a, b] => a.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
                _ => None,
            };
            match parsed {
                Some(p) => pairs.push(p),
                None if pairs.is_empty() && fields.len() == 2 => continue,
                None => {
                    return Err(Error::Parse {
                        line: k + 1,
                        message: format!("expected \"s,g\", found {line:?}"),
                    })
                }
            }
        }
        Self::new(pairs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.s.iter().copied().zip(self.g.iter().copied())
    }

    fn eval_nonneg(&self, s: f64) -> f64 {
        let last = self.s.len() - 1;
        if s >= self.s[last] {
            return self.g[last] * s / self.s[last];
        }
        let k = self.s.partition_point(|&x| x <= s) - 1;
        let w = (s - self.s[k]) / (self.s[k + 1] - self.s[k]);
        self.g[k] + w * (self.g[k + 1] - self.g[k])
    }

    /// Extremes of `g(s)/s` over `s ≥ 1`. The interpolant is piecewise
    /// linear, so the extremes sit at `s = 1`, at knots, or at the tail.
    fn ratio_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let candidates = std::iter::once(1.0).chain(self.s.iter().copied().filter(|&s| s > 1.0));
        for s in candidates {
            let r = self.eval_nonneg(s) / s;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    }
}

/// Monotone feedback `g` with `g(0) = 0` and linear growth at infinity.
#[derive(Clone, Debug, PartialEq)]
pub enum FeedbackLaw {
    Linear { slope: f64 },
    /// `sign(s)|s|^p` on `[−1, 1]`, the identity beyond.
    Power { exponent: f64 },
    Table(FeedbackTable),
}

impl FeedbackLaw {
    pub fn linear(slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope.is_finite()) {
            return Err(Error::InvalidParameter(format!("linear feedback slope must be positive, got {slope}")));
        }
        Ok(Self::Linear { slope })
    }

    pub fn power(exponent: f64) -> Result<Self> {
        if !(exponent > 1.0 && exponent.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "power feedback exponent must exceed 1, got {exponent}"
            )));
        }
        Ok(Self::Power { exponent })
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Self::Linear { slope } => slope * s,
            Self::Power { exponent } => {
                if s.abs() <= 1.0 {
                    s.signum() * s.abs().powf(*exponent)
                } else {
                    s
                }
            }
            Self::Table(t) => s.signum() * t.eval_nonneg(s.abs()),
        }
    }

    /// Growth constants `(k, K)` with `k|s| ≤ |g(s)| ≤ K|s|` for `|s| > 1`.
    pub fn growth_constants(&self) -> (f64, f64) {
        match self {
            Self::Linear { slope } => (*slope, *slope),
            Self::Power { .. } => (1.0, 1.0),
            Self::Table(t) => t.ratio_bounds(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Linear { .. } => "linear",
            Self::Power { .. } => "power",
            Self::Table(_) => "table",
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Self::Linear { .. })
    }
}

impl fmt::Display for FeedbackLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { slope } => write!(f, "linear(slope={slope})"),
            Self::Power { exponent } => write!(f, "power(p={exponent})"),
            Self::Table(t) => write!(f, "table({} points)", t.s.len()),
        }
    }
}

/// The cut-off profile `η̃` on the unit scale: 1 for `x ≤ 0`, the cubic
/// `t³ − 1.75t² + 1` (`t = 2x`) on `(0, ½)`, `(x − 1)²` on `[½, 1]`, and 0
/// beyond.
pub fn eta_tilde(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < 0.5 {
        let t = 2.0 * x;
        t * t * t - 1.75 * t * t + 1.0
    } else if x <= 1.0 {
        (x - 1.0) * (x - 1.0)
    } else {
        0.0
    }
}

pub fn eta_tilde_derivative(x: f64) -> f64 {
    if x <= 0.0 || x > 1.0 {
        0.0
    } else if x < 0.5 {
        let t = 2.0 * x;
        2.0 * (3.0 * t * t - 3.5 * t)
    } else {
        2.0 * (x - 1.0)
    }
}

/// `η̃(x / ε)`.
pub fn profile_eta(x: f64, epsilon: f64) -> f64 {
    eta_tilde(x / epsilon)
}

#[derive(Clone, Copy, Debug)]
pub struct ProfileBound {
    /// `sup |η̃'|²/η̃` over `(0, 1)`.
    pub m_bound: f64,
    /// Supremum over the `[½, 1)` branch alone.
    pub upper_branch: f64,
    /// `m_bound / ε²`, the bound for the scaled profile.
    pub scaled_bound: f64,
}

const PROFILE_SAMPLES: usize = 200_000;

/// Dense sweep of `|η̃'|²/η̃` over `(0, 1)`.
pub fn verify_profile_bound(epsilon: f64) -> Result<ProfileBound> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut m_bound = 0.0f64;
    let mut upper_branch = 0.0f64;
    for i in 1..PROFILE_SAMPLES {
        let x = i as f64 / PROFILE_SAMPLES as f64;
        let d = eta_tilde_derivative(x);
        let ratio = d * d / eta_tilde(x);
        m_bound = m_bound.max(ratio);
        if x >= 0.5 {
            upper_branch = upper_branch.max(ratio);
        }
    }
    Ok(ProfileBound {
        m_bound,
        upper_branch,
        scaled_bound: m_bound / (epsilon * epsilon),
    })
}

/// `η = η̃(d(·, base_set)/ε)` with graph distance `d`.
pub fn build_cutoff_field(mesh: &SurfaceMesh, base_set: &VertexSet, epsilon: f64) -> Result<ScalarField> {
    let base = base_set.indices();
    if base.is_empty() {
        return Err(Error::InvalidParameter("cut-off base set is empty".into()));
    }
    let min_eps = 2.0 * mesh.max_edge_length();
    if !(epsilon >= min_eps) {
        return Err(Error::InvalidParameter(format!(
            "cut-off width {epsilon} is below the resolvable minimum {min_eps} (2 × max edge length)"
        )));
    }
    let d = geodesic_distance(mesh, &base)?;
    Ok(d.map(|x| profile_eta(x, epsilon)))
}

/// Largest `|∇η|² / η̄` over triangles with positive mean value `η̄`.
pub fn cutoff_gradient_ratio(mesh: &SurfaceMesh, eta: &ScalarField) -> Result<f64> {
    let g = gradient(mesh, eta)?;
    Ok(mesh
        .triangles()
        .iter()
        .zip(g.vectors())
        .filter_map(|(tri, gt)| {
            let mean = (eta[tri[0]] + eta[tri[1]] + eta[tri[2]]) / 3.0;
            (mean > 0.0).then(|| gt.norm_squared() / mean)
        })
        .fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DampingMode {
    /// `a ≡ a0` everywhere.
    Global,
    /// `a = a0` on the whole collar.
    Sharp,
    /// `a = a0·η` on the collar.
    Smooth,
}

#[derive(Clone, Debug)]
pub struct DampingField {
    pub a: ScalarField,
    pub a0: f64,
    /// Vertices where `a ≥ a0` is guaranteed (the discrete `M_*`).
    pub region_star: VertexSet,
    pub collar_epsilon: f64,
    pub mode: DampingMode,
}

impl DampingField {
    /// `sup a`.
    pub fn a_norm(&self) -> f64 {
        self.a.iter().cloned().fold(0.0, f64::max)
    }

    /// Diagonal of the damping mass matrix, `m_v a_v`.
    pub fn mass_weights(&self, mesh: &SurfaceMesh) -> Vec<f64> {
        self.a.iter().zip(mesh.vertex_areas()).map(|(a, m)| a * m).collect()
    }

    pub fn undamped(mesh: &SurfaceMesh) -> Self {
        let n = mesh.vertex_count();
        Self {
            a: ScalarField::zeros(n),
            a0: 0.0,
            region_star: VertexSet::empty(n),
            collar_epsilon: 0.0,
            mode: DampingMode::Global,
        }
    }
}

pub fn build_global_damping(mesh: &SurfaceMesh, a0: f64) -> Result<DampingField> {
    check_a0(a0)?;
    let n = mesh.vertex_count();
    Ok(DampingField {
        a: ScalarField::constant(n, a0),
        a0,
        region_star: VertexSet::full(n),
        collar_epsilon: f64::INFINITY,
        mode: DampingMode::Global,
    })
}

fn check_a0(a0: f64) -> Result<()> {
    if !(a0 > 0.0 && a0.is_finite()) {
        return Err(Error::InvalidParameter(format!("a0 must be positive, got {a0}")));
    }
    Ok(())
}

/// Damping supported on the `ε`-collar of `M∖V`.
///
/// In smooth mode the coefficient tapers to zero across the collar, so the
/// guaranteed region `region_star` is `M∖V` itself; in sharp mode it is the
/// whole open collar.
pub fn build_damping(
    mesh: &SurfaceMesh,
    region_v: &VertexSet,
    epsilon: f64,
    a0: f64,
    smooth: bool,
) -> Result<DampingField> {
    check_a0(a0)?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("collar width must be positive, got {epsilon}")));
    }
    let outside = region_v.complement();
    if outside.is_empty() {
        return Err(Error::InvalidParameter(
            "nothing to damp against; use global damping mode".into(),
        ));
    }
    let d = geodesic_distance(mesh, &outside.indices())?;
    let n = mesh.vertex_count();
    let collar = VertexSet::from_mask(d.iter().map(|&x| x < epsilon).collect());
    let (a, region_star, mode) = if smooth {
        let eta = build_cutoff_field(mesh, &outside, epsilon)?;
        let a = ScalarField((0..n).map(|v| if collar.contains(v) { a0 * eta[v] } else { 0.0 }).collect());
        (a, outside, DampingMode::Smooth)
    } else {
        let a = ScalarField((0..n).map(|v| if collar.contains(v) { a0 } else { 0.0 }).collect());
        (a, collar, DampingMode::Sharp)
    };
    Ok(DampingField {
        a,
        a0,
        region_star,
        collar_epsilon: epsilon,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_icosphere;
    use proptest::prelude::*;

    #[test]
    fn feedback_examples() {
        assert_eq!(FeedbackLaw::linear(1.0).unwrap().eval(1.0), 1.0);
        let p3 = FeedbackLaw::power(3.0).unwrap();
        assert_eq!(p3.eval(0.5), 0.125);
        assert_eq!(p3.eval(2.0), 2.0);
        assert_eq!(p3.eval(-0.5), -0.125);
        assert_eq!(p3.growth_constants(), (1.0, 1.0));
        assert!(FeedbackLaw::power(1.0).is_err());
        assert!(FeedbackLaw::linear(0.0).is_err());
    }

    #[test]
    fn table_interpolates_and_extends() {
        let t = FeedbackTable::new(vec![(0.5, 0.25), (1.0, 1.0), (2.0, 3.0)]).unwrap();
        let g = FeedbackLaw::Table(t);
        assert_eq!(g.eval(0.0), 0.0);
        assert!((g.eval(0.25) - 0.125).abs() < 1e-15);
        assert!((g.eval(1.5) - 2.0).abs() < 1e-15);
        assert!((g.eval(4.0) - 6.0).abs() < 1e-15);
        assert!((g.eval(-1.5) + 2.0).abs() < 1e-15);
        let (k, kk) = g.growth_constants();
        assert_eq!((k, kk), (1.0, 1.5));
    }

    #[test]
    fn non_monotone_table_is_rejected() {
        let err = FeedbackTable::new(vec![(0.5, 0.3), (1.0, 0.2)]).unwrap_err();
        assert!(err.to_string().contains("not monotone"), "{err}");
        assert!(FeedbackTable::new(vec![(0.0, 0.1), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn table_csv_with_header() {
        let t = FeedbackTable::parse_csv("s,g\n0,0\n0.5,0.1\n1,1 # knee\n").unwrap();
        assert_eq!(t.points().count(), 3);
        let err = FeedbackTable::parse_csv("0,0\n1;2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn profile_examples() {
        assert_eq!(profile_eta(-0.3, 0.7), 1.0);
        assert!((profile_eta(0.75, 1.0) - 0.0625).abs() < 1e-15);
        assert_eq!(profile_eta(5.0, 2.0), 0.0);
        assert!((eta_tilde(0.5) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn profile_is_c1_at_knots() {
        let h = 1e-7;
        for knot in [0.0, 0.5, 1.0] {
            let left = eta_tilde_derivative(knot - 1e-13);
            let right = eta_tilde_derivative(knot + 1e-13);
            assert!((left - right).abs() < 1e-10, "knot {knot}: {left} vs {right}");
            let fd = (eta_tilde(knot + h) - eta_tilde(knot - h)) / (2.0 * h);
            assert!((fd - right).abs() < 1e-6);
            assert!((eta_tilde(knot - 1e-13) - eta_tilde(knot + 1e-13)).abs() < 1e-12);
        }
    }

    #[test]
    fn profile_bound_has_exact_upper_branch() {
        let b = verify_profile_bound(0.5).unwrap();
        assert!((b.upper_branch - 4.0).abs() < 1e-12);
        assert!(b.m_bound >= 4.0 && b.m_bound.is_finite());
        assert!((b.scaled_bound - 4.0 * b.m_bound).abs() < 1e-12);
    }

    #[test]
    fn cutoff_field_values() {
        let m = build_icosphere(3).unwrap();
        let base = VertexSet::from_indices(m.vertex_count(), [0]);
        let eps = 0.6;
        let eta = build_cutoff_field(&m, &base, eps).unwrap();
        let d = geodesic_distance(&m, &[0]).unwrap();
        assert_eq!(eta[0], 1.0);
        for v in 0..m.vertex_count() {
            assert!((0.0..=1.0).contains(&eta[v]));
            if d[v] > eps {
                assert_eq!(eta[v], 0.0);
            }
        }
        let err = build_cutoff_field(&m, &base, 1e-3).unwrap_err();
        assert!(err.to_string().contains("resolvable minimum"));
    }

    #[test]
    fn damping_modes() {
        let m = build_icosphere(3).unwrap();
        let n = m.vertex_count();
        let v = VertexSet::from_mask(m.positions().iter().map(|p| p.z < 0.5).collect());
        let outside = v.complement();
        let eps = 0.4;
        let d = geodesic_distance(&m, &outside.indices()).unwrap();
        for smooth in [false, true] {
            let damp = build_damping(&m, &v, eps, 2.0, smooth).unwrap();
            assert!(outside.is_subset(&damp.region_star));
            for i in 0..n {
                assert!(damp.a[i] >= 0.0);
                if outside.contains(i) {
                    assert_eq!(damp.a[i], 2.0);
                }
                if damp.region_star.contains(i) {
                    assert!(damp.a[i] >= 2.0);
                }
                if d[i] >= eps {
                    assert_eq!(damp.a[i], 0.0);
                }
            }
        }
        let g = build_global_damping(&m, 0.5).unwrap();
        assert!(g.a.iter().all(|&x| x == 0.5));
        let err = build_damping(&m, &VertexSet::full(n), eps, 1.0, false).unwrap_err();
        assert!(err.to_string().contains("nothing to damp against"));
    }

    fn law_strategy() -> impl Strategy<Value = FeedbackLaw> {
        prop_oneof![
            (0.1f64..10.0).prop_map(|m| FeedbackLaw::linear(m).unwrap()),
            (1.01f64..6.0).prop_map(|p| FeedbackLaw::power(p).unwrap()),
            proptest::collection::vec((0.01f64..1.0, 0.01f64..1.0), 1..8).prop_map(|steps| {
                let mut s = 0.0;
                let mut g = 0.0;
                let pairs = steps
                    .into_iter()
                    .map(|(ds, dg)| {
                        s += ds;
                        g += dg;
                        (s, g)
                    })
                    .collect();
                FeedbackLaw::Table(FeedbackTable::new(pairs).unwrap())
            }),
        ]
    }

    proptest! {
        #[test]
        fn feedback_laws_satisfy_growth_assumptions(law in law_strategy()) {
            let (k, kk) = law.growth_constants();
            prop_assert!(0.0 < k && k <= kk);
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=4000 {
                let s = -10.0 + 20.0 * i as f64 / 4000.0;
                let g = law.eval(s);
                prop_assert!(g >= prev);
                prev = g;
                if s != 0.0 {
                    prop_assert!(g * s > 0.0);
                }
                if s.abs() > 1.0 {
                    prop_assert!(k * s.abs() <= g.abs() * (1.0 + 1e-12));
                    prop_assert!(g.abs() <= kk * s.abs() * (1.0 + 1e-12));
                }
            }
            prop_assert_eq!(law.eval(0.0), 0.0);
        }

        #[test]
        fn profile_is_non_increasing(x in -1.0f64..2.0, dx in 0.0f64..0.5, eps in 0.1f64..3.0) {
            prop_assert!(profile_eta(x + dx, eps) <= profile_eta(x, eps));
            let e = profile_eta(x, eps);
            prop_assert!((0.0..=1.0).contains(&e));
        }
    }
}
