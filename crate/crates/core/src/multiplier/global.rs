//! Greedy chart cover, disjoint shrinking, gluing and re-certification.

use std::fmt::Write as _;

use log::{debug, info};

use crate::damping::profile_eta;
use crate::error::{Error, Result};
use crate::mesh::{geodesic_distance, geodesic_distance_within, graph_diameter, ScalarField, SurfaceMesh, VertexSet};

use super::chart::{build_chart, build_local_f, NormalChart};
use super::hessian::{fit_quadratic, HessianField, LocalFit};
use super::{length_scale_for_area, theta1_form, Margins, MultiplierField, VertexMargins, DEFAULT_KAPPA};

#[derive(Clone, Debug)]
pub struct BuilderOptions {
    /// Initial chart radius as a fraction of the graph diameter.
    pub radius_fraction: f64,
    /// `ℓ / sqrt(area / 4π)`.
    pub kappa: f64,
    /// A chart is shrunk until this area fraction of its inner half is
    /// admissible.
    pub inner_fraction: f64,
    pub shrink_factor: f64,
    pub max_shrinks: usize,
    pub max_charts: usize,
    /// Charts whose kept cell is smaller than this area fraction are
    /// discarded.
    pub min_cell_fraction: f64,
    /// Candidate frame rotations tried per chart.
    pub rotations: usize,
    pub recertify_rounds: usize,
}

impl Default for BuilderOptions {
    fn default() -> Self {
        Self {
            radius_fraction: 0.4,
            kappa: DEFAULT_KAPPA,
            inner_fraction: 0.9,
            shrink_factor: 0.8,
            max_shrinks: 6,
            max_charts: 48,
            min_cell_fraction: 0.002,
            rotations: 12,
            recertify_rounds: 20,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChartDiagnostics {
    pub origin: usize,
    pub radius: f64,
    pub rotation: f64,
    pub chart_vertices: usize,
    pub admissible_vertices: usize,
    pub kept_vertices: usize,
    pub kept_area: f64,
    /// Eigenvalues of θ₁ at the origin, from the chart's own `f`.
    pub origin_theta: (f64, f64),
    pub origin_laplacian: f64,
    pub origin_grad_norm: f64,
    pub origin_in_v: bool,
}

#[derive(Clone, Debug)]
pub struct CertificationReport {
    pub area_m: f64,
    pub area_v: f64,
    pub deficit: f64,
    pub epsilon: f64,
    pub margins: Margins,
    pub length_scale: f64,
    /// Minima over `V` (`+∞` when `V` is empty).
    pub min_theta: f64,
    pub min_scalar: f64,
    pub min_gradient: f64,
    pub certified: bool,
    /// `V` is empty, so the margin checks hold vacuously.
    pub degenerate: bool,
    pub glue_width: f64,
    pub recertify_removed: usize,
    pub charts: Vec<ChartDiagnostics>,
}

impl CertificationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "key,value");
        let rows: [(&str, String); 14] = [
            ("area_m", fmt17(self.area_m)),
            ("area_v", fmt17(self.area_v)),
            ("deficit", fmt17(self.deficit)),
            ("epsilon", fmt17(self.epsilon)),
            ("margin_theta", fmt17(self.margins.theta)),
            ("margin_scalar", fmt17(self.margins.scalar)),
            ("margin_gradient", fmt17(self.margins.gradient)),
            ("min_theta", fmt17(self.min_theta)),
            ("min_scalar", fmt17(self.min_scalar)),
            ("min_gradient", fmt17(self.min_gradient)),
            ("length_scale", fmt17(self.length_scale)),
            ("glue_width", fmt17(self.glue_width)),
            ("certified", self.certified.to_string()),
            ("degenerate", self.degenerate.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k},{v}");
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "chart,origin,radius,rotation,chart_vertices,admissible_vertices,kept_vertices,kept_area,theta_min,theta_max,laplacian,grad_norm,origin_in_v"
        );
        for (i, c) in self.charts.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.origin,
                fmt17(c.radius),
                fmt17(c.rotation),
                c.chart_vertices,
                c.admissible_vertices,
                c.kept_vertices,
                fmt17(c.kept_area),
                fmt17(c.origin_theta.0),
                fmt17(c.origin_theta.1),
                fmt17(c.origin_laplacian),
                fmt17(c.origin_grad_norm),
                c.origin_in_v
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "certified: {}{}",
            self.certified,
            if self.degenerate { " (degenerate: V is empty)" } else { "" }
        );
        let _ = writeln!(
            s,
            "area(M) = {:.6}, area(V) = {:.6}, deficit = {:.6} ({:.2}% of area), budget = {:.6}",
            self.area_m,
            self.area_v,
            self.deficit,
            100.0 * self.deficit / self.area_m,
            self.epsilon
        );
        let _ = writeln!(
            s,
            "minima over V: lambda_min(theta1) = {:.4}, laplacian/2 - 3/4 = {:.4}, |grad f| = {:.4} (margins {}, {}, {})",
            self.min_theta, self.min_scalar, self.min_gradient, self.margins.theta, self.margins.scalar, self.margins.gradient
        );
        let _ = writeln!(
            s,
            "{} charts, length scale {:.4}, glue width {:.4}, {} vertices dropped at re-certification",
            self.charts.len(),
            self.length_scale,
            self.glue_width,
            self.recertify_removed
        );
        s
    }
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

struct PlacedChart {
    chart: NormalChart,
    f_hat: ScalarField,
    diagnostics: ChartDiagnostics,
}

/// Fits of `f̂` at chart vertices whose whole two-ring lies in the chart.
fn chart_fits(mesh: &SurfaceMesh, chart: &NormalChart, f_hat: &ScalarField) -> Vec<Option<LocalFit>> {
    use rayon::prelude::*;
    (0..mesh.vertex_count())
        .into_par_iter()
        .map(|v| {
            if !chart.contains(v) {
                return None;
            }
            let ring = mesh.two_ring(v);
            if ring.iter().any(|&w| !chart.contains(w)) {
                return None;
            }
            Some(fit_quadratic(mesh, v, f_hat.values(), &ring))
        })
        .collect()
}

fn admissible_in_chart(fits: &[Option<LocalFit>], ell: f64, margins: &Margins) -> Vec<bool> {
    fits.iter()
        .map(|fit| match fit {
            Some(fit) if fit.reliable => {
                VertexMargins::evaluate(&fit.hessian, fit.hessian.trace(), fit.gradient_norm() / ell).passes(margins)
            }
            _ => false,
        })
        .collect()
}

/// Frame rotation keeping the critical point `−ℓ e₁` farthest from chart
/// vertices.
fn best_rotation(chart: &NormalChart, ell: f64, count: usize) -> f64 {
    let near: Vec<[f64; 2]> = chart
        .vertices()
        .filter_map(|v| chart.coords(v))
        .filter(|x| x[0].hypot(x[1]) <= 3.0 * ell)
        .collect();
    let mut best = (0.0, f64::NEG_INFINITY);
    for k in 0..count.max(1) {
        let angle = std::f64::consts::TAU * k as f64 / count.max(1) as f64;
        // in the rotated frame e₁' = (cos, sin) in old coordinates
        let crit = [-ell * angle.cos(), -ell * angle.sin()];
        let gap = near
            .iter()
            .map(|x| (x[0] - crit[0]).hypot(x[1] - crit[1]))
            .fold(f64::INFINITY, f64::min);
        if gap > best.1 {
            best = (angle, gap);
        }
    }
    best.0
}

fn place_chart(
    mesh: &SurfaceMesh,
    origin: usize,
    radius0: f64,
    ell: f64,
    margins: &Margins,
    opts: &BuilderOptions,
) -> Result<(PlacedChart, Vec<bool>)> {
    let mut radius = radius0;
    let mut shrinks = 0;
    loop {
        let base = build_chart(mesh, origin, radius)?;
        let rotation = best_rotation(&base, ell, opts.rotations);
        let chart = base.rotated(rotation);
        let f_hat = build_local_f(&chart, ell);
        let fits = chart_fits(mesh, &chart, &f_hat);
        let admissible = admissible_in_chart(&fits, ell, margins);
        let (mut inner, mut inner_ok) = (0.0, 0.0);
        for v in chart.vertices() {
            let x = chart.coords(v).unwrap();
            if x[0].hypot(x[1]) <= 0.5 * radius {
                inner += mesh.vertex_areas()[v];
                if admissible[v] {
                    inner_ok += mesh.vertex_areas()[v];
                }
            }
        }
        let fraction = if inner > 0.0 { inner_ok / inner } else { 0.0 };
        if fraction >= opts.inner_fraction || shrinks >= opts.max_shrinks {
            let origin_fit = fits[origin].unwrap_or_else(|| fit_quadratic(mesh, origin, f_hat.values(), &mesh.two_ring(origin)));
            let th = theta1_form(&origin_fit.hessian, origin_fit.hessian.trace());
            let diagnostics = ChartDiagnostics {
                origin,
                radius,
                rotation,
                chart_vertices: chart.vertices().count(),
                admissible_vertices: admissible.iter().filter(|&&a| a).count(),
                kept_vertices: 0,
                kept_area: 0.0,
                origin_theta: th.eigenvalues(),
                origin_laplacian: origin_fit.hessian.trace(),
                origin_grad_norm: origin_fit.gradient_norm() / ell,
                origin_in_v: false,
            };
            return Ok((
                PlacedChart {
                    chart,
                    f_hat,
                    diagnostics,
                },
                admissible,
            ));
        }
        debug!("chart at {origin}: inner admissible fraction {fraction:.3} at radius {radius:.4}, shrinking");
        radius *= opts.shrink_factor;
        shrinks += 1;
    }
}

pub fn build_global_multiplier(mesh: &SurfaceMesh, epsilon: f64, margins: &Margins) -> Result<MultiplierField> {
    build_global_multiplier_with(mesh, epsilon, margins, &BuilderOptions::default())
}

/// Covers the surface by charts, keeps pairwise separated admissible cells,
/// glues `f = Σ f̂ᵢ ηᵢ`, and re-certifies the cells against the glued field.
pub fn build_global_multiplier_with(
    mesh: &SurfaceMesh,
    epsilon: f64,
    margins: &Margins,
    opts: &BuilderOptions,
) -> Result<MultiplierField> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let n = mesh.vertex_count();
    let area = mesh.total_area();
    let ell = length_scale_for_area(area, opts.kappa);
    let radius0 = opts.radius_fraction * graph_diameter(mesh);

    // cover: farthest-point origins until every vertex is admissible in
    // some chart (or no useful origin is left)
    let mut covered = vec![false; n];
    let mut blocked = vec![false; n];
    let mut origin_dist = vec![f64::INFINITY; n];
    let mut placed: Vec<PlacedChart> = Vec::new();
    let mut admissible_sets: Vec<Vec<bool>> = Vec::new();
    let first = (0..n)
        .max_by(|&a, &b| mesh.vertex_areas()[a].total_cmp(&mesh.vertex_areas()[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let mut trials = 0;

    while placed.len() < opts.max_charts && trials < 4 * opts.max_charts {
        let candidate = if placed.is_empty() && !blocked[first] {
            Some(first)
        } else {
            (0..n)
                .filter(|&v| !covered[v] && !blocked[v])
                .max_by(|&a, &b| origin_dist[a].total_cmp(&origin_dist[b]).then(b.cmp(&a)))
        };
        let Some(origin) = candidate else { break };
        trials += 1;
        let (pc, admissible) = place_chart(mesh, origin, radius0, ell, margins, opts)?;
        let gain: f64 = (0..n)
            .filter(|&v| admissible[v] && !covered[v])
            .map(|v| mesh.vertex_areas()[v])
            .sum();
        if gain < opts.min_cell_fraction * area {
            debug!("origin {origin}: new admissible area {gain:.3e} too small, blocking");
            let near = geodesic_distance_within(mesh, &[origin], 0.25 * pc.chart.radius)?;
            for v in 0..n {
                if near[v].is_finite() {
                    blocked[v] = true;
                }
            }
            blocked[origin] = true;
            continue;
        }
        for v in 0..n {
            covered[v] |= admissible[v];
        }
        let d = geodesic_distance(mesh, &[origin])?;
        for v in 0..n {
            origin_dist[v] = origin_dist[v].min(d[v]);
        }
        debug!("chart {}: origin {origin}, radius {:.4}", placed.len(), pc.chart.radius);
        placed.push(pc);
        admissible_sets.push(admissible);
    }

    // assignment: each vertex goes to the admissible chart with the nearest
    // origin (in that chart's coordinates); cells are then eroded in chart
    // order so that distinct cells never share an edge
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for v in 0..n {
        let mut best: Option<(f64, usize)> = None;
        for (i, pc) in placed.iter().enumerate() {
            if !admissible_sets[i][v] {
                continue;
            }
            let x = pc.chart.coords(v).expect("admissible vertices lie in the chart");
            let r = x[0].hypot(x[1]);
            if best.is_none_or(|(b, _)| r < b) {
                best = Some((r, i));
            }
        }
        owner[v] = best.map(|(_, i)| i);
    }
    let mut kept: Vec<Option<usize>> = vec![None; n];
    for i in 0..placed.len() {
        for v in 0..n {
            if owner[v] == Some(i) && !mesh.neighbors(v).iter().any(|&w| kept[w].is_some_and(|j| j != i)) {
                kept[v] = Some(i);
            }
        }
    }
    let owner = kept;
    for (i, pc) in placed.iter_mut().enumerate() {
        let cell: Vec<usize> = (0..n).filter(|&v| owner[v] == Some(i)).collect();
        pc.diagnostics.kept_vertices = cell.len();
        pc.diagnostics.kept_area = cell.iter().map(|&v| mesh.vertex_areas()[v]).sum();
        info!(
            "chart {i}: origin {}, radius {:.4}, kept {} vertices ({:.2}% of area)",
            pc.diagnostics.origin,
            pc.chart.radius,
            cell.len(),
            100.0 * pc.diagnostics.kept_area / area
        );
    }

    // gluing width: a quarter of the smallest distance between distinct cells
    let separation = cell_separation(mesh, &owner);
    let glue_width = if separation.is_finite() {
        0.25 * separation
    } else {
        mesh.mean_edge_length()
    };
    let mut f = vec![0.0; n];
    for (i, pc) in placed.iter().enumerate() {
        let seeds: Vec<usize> = (0..n).filter(|&v| owner[v] == Some(i)).collect();
        if seeds.is_empty() {
            continue;
        }
        let d = geodesic_distance_within(mesh, &seeds, glue_width)?;
        for v in 0..n {
            if d[v].is_finite() && pc.chart.contains(v) {
                f[v] += pc.f_hat[v] * profile_eta(d[v], glue_width);
            }
        }
    }
    let f = ScalarField(f);

    // re-certification on the glued field with stencils masked to each cell
    let mut in_v: Vec<bool> = owner.iter().map(Option::is_some).collect();
    let mut removed = 0;
    let mut stable = false;
    let mut fits: Vec<LocalFit> = vec![LocalFit::UNRELIABLE; n];
    for round in 0..opts.recertify_rounds.max(1) {
        let h = masked_fits(mesh, &f, &owner, &in_v);
        let mut dropped = 0;
        for v in 0..n {
            if !in_v[v] {
                continue;
            }
            let fit = h[v];
            let ok = fit.reliable
                && VertexMargins::evaluate(&fit.hessian, fit.hessian.trace(), fit.gradient_norm() / ell).passes(margins);
            if !ok {
                in_v[v] = false;
                dropped += 1;
            }
        }
        fits = h;
        removed += dropped;
        debug!("re-certification round {round}: dropped {dropped}");
        if dropped == 0 {
            stable = true;
            break;
        }
    }

    // off V: plain two-ring fits of the glued field
    let full = super::hessian::hessian(mesh, &f)?;
    let merged = HessianField {
        fits: (0..n).map(|v| if in_v[v] { fits[v] } else { full.fits[v] }).collect(),
    };
    let mut mf = MultiplierField::from_fits(mesh, f, &merged, ell)?;
    let region_v = VertexSet::from_mask(in_v);
    let area_v = region_v.area(mesh);
    let (mut min_theta, mut min_scalar, mut min_gradient) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for v in region_v.indices() {
        let q = VertexMargins::evaluate(&mf.hess_f[v], mf.laplacian_f[v], mf.grad_norm[v]);
        min_theta = min_theta.min(q.theta_min);
        min_scalar = min_scalar.min(q.scalar);
        min_gradient = min_gradient.min(q.gradient);
    }
    let margins_hold = region_v.is_empty()
        || (min_theta >= margins.theta && min_scalar >= margins.scalar && min_gradient >= margins.gradient);
    let deficit = area - area_v;
    let certified = stable && margins_hold && deficit <= epsilon;
    let charts = placed
        .into_iter()
        .map(|pc| {
            let mut d = pc.diagnostics;
            d.origin_in_v = region_v.contains(d.origin);
            d
        })
        .collect();
    let report = CertificationReport {
        area_m: area,
        area_v,
        deficit,
        epsilon,
        margins: *margins,
        length_scale: ell,
        min_theta,
        min_scalar,
        min_gradient,
        certified,
        degenerate: region_v.is_empty(),
        glue_width,
        recertify_removed: removed,
        charts,
    };
    info!("{}", report.summary().trim_end());
    mf.cells = (0..n).map(|v| if region_v.contains(v) { owner[v] } else { None }).collect();
    mf.region_v = region_v;
    mf.epsilon_budget = epsilon;
    mf.certified = certified;
    mf.margins = *margins;
    mf.report = Some(report);
    Ok(mf)
}

fn masked_fits(mesh: &SurfaceMesh, f: &ScalarField, owner: &[Option<usize>], in_v: &[bool]) -> Vec<LocalFit> {
    use rayon::prelude::*;
    (0..mesh.vertex_count())
        .into_par_iter()
        .map(|v| {
            if !in_v[v] {
                return LocalFit::UNRELIABLE;
            }
            let mut stencil = mesh.two_ring(v);
            stencil.retain(|&w| in_v[w] && owner[w] == owner[v]);
            fit_quadratic(mesh, v, f.values(), &stencil)
        })
        .collect()
}

/// Smallest graph distance between vertices of different cells.
fn cell_separation(mesh: &SurfaceMesh, owner: &[Option<usize>]) -> f64 {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let n = mesh.vertex_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut label: Vec<Option<usize>> = vec![None; n];
    // (distance bits, vertex); distances are nonnegative so bit order matches
    let mut heap = BinaryHeap::new();
    for v in 0..n {
        if let Some(c) = owner[v] {
            dist[v] = 0.0;
            label[v] = Some(c);
            heap.push(Reverse((0u64, v)));
        }
    }
    while let Some(Reverse((bits, v))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[v] {
            continue;
        }
        for &w in mesh.neighbors(v) {
            let nd = d + (mesh.position(w) - mesh.position(v)).norm();
            if nd < dist[w] {
                dist[w] = nd;
                label[w] = label[v];
                heap.push(Reverse((nd.to_bits(), w)));
            }
        }
    }
    let mut best = f64::INFINITY;
    for e in mesh.edges() {
        let [a, b] = e.vertices;
        if let (Some(la), Some(lb)) = (label[a], label[b]) {
            if la != lb {
                best = best.min(dist[a] + mesh.edge_length(e) + dist[b]);
            }
        }
    }
    best
}
