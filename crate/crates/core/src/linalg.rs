//! Iterative linear algebra on the `(stiffness, mass)` pencil.
//!
//! The mass matrix is diagonal (lumped), so the generalized problem
//! `L x = λ M x` is handled either directly (inverse subspace iteration
//! with Rayleigh–Ritz) or through the symmetric form `M^{-1/2} L M^{-1/2}`
//! (Lanczos).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::CsrMatrix;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Weighted inner product `Σ w_i a_i b_i`.
pub fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

/// Removes the `w`-weighted mean: `x ← x − (Σ w x / Σ w)`.
pub fn remove_weighted_mean(w: &[f64], x: &mut [f64]) {
    let total: f64 = w.iter().sum();
    let mean = weighted_dot(w, x, &vec![1.0; x.len()]) / total;
    for xi in x.iter_mut() {
        *xi -= mean;
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// (semi)definite operator. For singular operators `b` must lie in the range.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let res = dot(&r, &r).sqrt() / bnorm;
        if res <= tol {
            return Ok(CgOutcome {
                iterations: it,
                relative_residual: res,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NoConvergence(format!(
                "conjugate gradients hit non-positive curvature {pap:e} at iteration {it}"
            )));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        for ((zi, ri), d) in z.iter_mut().zip(&r).zip(diag) {
            *zi = ri / d;
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    let res = dot(&r, &r).sqrt() / bnorm;
    if res <= tol * 10.0 {
        return Ok(CgOutcome {
            iterations: max_iter,
            relative_residual: res,
        });
    }
    Err(Error::NoConvergence(format!(
        "conjugate gradients reached {max_iter} iterations with relative residual {res:e}"
    )))
}

fn deterministic_start(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Largest eigenvalue of `M⁻¹L` by `iterations` steps of the power method
/// (Rayleigh quotient of the last iterate; a lower bound).
pub fn power_max_eigenvalue(stiffness: &CsrMatrix, mass: &[f64], iterations: usize) -> f64 {
    let n = mass.len();
    let mut x = deterministic_start(n, 0x5eed);
    let mut lx = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..iterations.max(1) {
        stiffness.mul_vec_into(&x, &mut lx);
        let num = dot(&x, &lx);
        let den = weighted_dot(mass, &x, &x);
        lambda = num / den;
        for i in 0..n {
            x[i] = lx[i] / mass[i];
        }
        let s = weighted_dot(mass, &x, &x).sqrt();
        x.iter_mut().for_each(|v| *v /= s);
    }
    lambda
}

/// Extreme eigenvalues of `M⁻¹L` from `steps` Lanczos iterations with full
/// reorthogonalization on `M^{-1/2} L M^{-1/2}`.
pub fn lanczos_extremes(stiffness: &CsrMatrix, mass: &[f64], steps: usize) -> (f64, f64) {
    let n = mass.len();
    let steps = steps.min(n).max(2);
    let inv_sqrt: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let apply = |x: &[f64], y: &mut [f64]| {
        let t: Vec<f64> = x.iter().zip(&inv_sqrt).map(|(a, b)| a * b).collect();
        stiffness.mul_vec_into(&t, y);
        y.iter_mut().zip(&inv_sqrt).for_each(|(v, s)| *v *= s);
    };
    let mut q = deterministic_start(n, 0x1a2c);
    let s = dot(&q, &q).sqrt();
    q.iter_mut().for_each(|v| *v /= s);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    for j in 0..steps {
        apply(&basis[j], &mut w);
        let a = dot(&w, &basis[j]);
        alpha.push(a);
        // full reorthogonalization (twice is enough)
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                axpy(-c, b, &mut w);
            }
        }
        let nb = dot(&w, &w).sqrt();
        if j + 1 == steps || nb < 1e-12 * a.abs().max(1.0) {
            break;
        }
        beta.push(nb);
        basis.push(w.iter().map(|v| v / nb).collect());
    }
    let k = alpha.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t).eigenvalues;
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Lowest nonzero eigenpairs of `L x = λ M x` on a connected mesh.
#[derive(Clone, Debug)]
pub struct GeneralizedEigen {
    /// Ascending eigenvalues (the constant mode is excluded).
    pub values: Vec<f64>,
    /// `M`-orthonormal, mass-mean-zero eigenvectors.
    pub vectors: Vec<Vec<f64>>,
    /// Relative residuals `‖Lx − λMx‖_{M⁻¹} / (λ‖x‖_M)`.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Inverse subspace iteration on the mass-mean-zero subspace, followed by
/// Rayleigh–Ritz on the iterated block.
pub fn smallest_eigenpairs(stiffness: &CsrMatrix, mass: &[f64], count: usize, tol: f64) -> Result<GeneralizedEigen> {
    let n = mass.len();
    if count == 0 || count + 1 >= n {
        return Err(Error::InvalidParameter(format!(
            "cannot request {count} eigenpairs from a {n}-vertex mesh"
        )));
    }
    let block = (count + 6).min(n - 1);
    let diag = stiffness.diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(0xe16e);
    let mut x: Vec<Vec<f64>> = (0..block)
        .map(|_| {
            let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            remove_weighted_mean(mass, &mut v);
            v
        })
        .collect();
    let apply = |v: &[f64], out: &mut [f64]| stiffness.mul_vec_into(v, out);

    let max_outer = 300;
    let mut values = vec![0.0; block];
    let mut residuals = vec![f64::INFINITY; block];
    for outer in 1..=max_outer {
        // Y = L⁺ M X
        let mut y = Vec::with_capacity(block);
        for xi in &x {
            let rhs: Vec<f64> = xi.iter().zip(mass).map(|(a, m)| a * m).collect();
            let mut sol = xi.clone();
            conjugate_gradient(apply, &diag, &rhs, &mut sol, 1e-13, 20 * n)?;
            remove_weighted_mean(mass, &mut sol);
            y.push(sol);
        }
        let (vals, vecs) = rayleigh_ritz(stiffness, mass, &y)?;
        x = vecs;
        values = vals;
        let mut lx = vec![0.0; n];
        for (i, xi) in x.iter().enumerate() {
            stiffness.mul_vec_into(xi, &mut lx);
            let r2: f64 = (0..n)
                .map(|k| {
                    let r = lx[k] - values[i] * mass[k] * xi[k];
                    r * r / mass[k]
                })
                .sum();
            residuals[i] = r2.sqrt() / values[i].abs().max(f64::MIN_POSITIVE);
        }
        if residuals[..count].iter().all(|&r| r <= tol) {
            return Ok(GeneralizedEigen {
                values: values[..count].to_vec(),
                vectors: x[..count].to_vec(),
                residuals: residuals[..count].to_vec(),
                iterations: outer,
            });
        }
    }
    Err(Error::NoConvergence(format!(
        "subspace iteration: residuals {:?} after {max_outer} sweeps (values {:?})",
        &residuals[..count],
        &values[..count]
    )))
}

/// Rayleigh–Ritz projection of the pencil onto span(`y`); returns ascending
/// Ritz values and `M`-orthonormal Ritz vectors.
fn rayleigh_ritz(stiffness: &CsrMatrix, mass: &[f64], y: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let b = y.len();
    let n = mass.len();
    let ly: Vec<Vec<f64>> = y.iter().map(|v| stiffness.mul_vec(v)).collect();
    let a = DMatrix::from_fn(b, b, |i, j| 0.5 * (dot(&y[i], &ly[j]) + dot(&y[j], &ly[i])));
    let bm = DMatrix::from_fn(b, b, |i, j| weighted_dot(mass, &y[i], &y[j]));
    let chol = bm
        .cholesky()
        .ok_or_else(|| Error::NoConvergence("Rayleigh–Ritz block lost rank".into()))?;
    let r = chol.l();
    let rinv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NoConvergence("singular Cholesky factor".into()))?;
    let c = &rinv * a * rinv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let coeffs = rinv.transpose() * &eig.eigenvectors;
    let mut vals = Vec::with_capacity(b);
    let mut vecs = Vec::with_capacity(b);
    for &k in &order {
        vals.push(eig.eigenvalues[k]);
        let mut v = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            axpy(coeffs[(j, k)], yj, &mut v);
        }
        vecs.push(v);
    }
    Ok((vals, vecs))
}
