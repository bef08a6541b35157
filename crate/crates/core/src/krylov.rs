//! Matrix-free Krylov solvers in a diagonally weighted inner product
//! `(a, b)_W = sum_j W_j a_j b_j`.
//!
//! Operators are closures `apply(x, out)`. Entries with zero weight are
//! outside the solution space; operators must leave them at zero.

use crate::weighted::weighted_dot;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovSettings {
    /// Relative residual target `|b - Ax|_W / |b|_W`.
    pub tol: f64,
    pub max_iter: usize,
    /// GMRES restart length.
    pub restart: usize,
}

impl Default for KrylovSettings {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 2000,
            restart: 40,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct KrylovOutcome {
    pub iterations: usize,
    /// Final relative residual.
    pub residual: f64,
    /// Relative residual after each iteration.
    pub history: Vec<f64>,
    pub converged: bool,
    /// CG only: a non-positive curvature was met, the operator is not SPD.
    pub breakdown: bool,
}

fn norm_w(w: &[f64], v: &[f64]) -> f64 {
    weighted_dot(w, v, v).sqrt()
}

/// Preconditioned conjugate gradients for operators self-adjoint and positive
/// definite in the `W` inner product. `precond` is an optional inverse
/// diagonal.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    weights: &[f64],
    precond: Option<&[f64]>,
    b: &[f64],
    x: &mut [f64],
    settings: &KrylovSettings,
) -> KrylovOutcome {
    let len = b.len();
    let mut out = KrylovOutcome::default();
    let bnorm = norm_w(weights, b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        out.converged = true;
        return out;
    }
    let mut ax = vec![0.0; len];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut rel = norm_w(weights, &r) / bnorm;
    if rel <= settings.tol {
        out.residual = rel;
        out.converged = true;
        return out;
    }
    let precondition = |r: &[f64], z: &mut [f64]| match precond {
        Some(d) => z
            .iter_mut()
            .zip(r)
            .zip(d)
            .for_each(|((z, r), d)| *z = r * d),
        None => z.copy_from_slice(r),
    };
    let mut z = vec![0.0; len];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = weighted_dot(weights, &r, &z);
    let mut ap = vec![0.0; len];
    for it in 1..=settings.max_iter {
        apply(&p, &mut ap);
        let curvature = weighted_dot(weights, &p, &ap);
        if curvature <= 0.0 || !curvature.is_finite() {
            out.breakdown = true;
            out.iterations = it;
            out.residual = rel;
            return out;
        }
        let alpha = rz / curvature;
        for j in 0..len {
            x[j] += alpha * p[j];
            r[j] -= alpha * ap[j];
        }
        rel = norm_w(weights, &r) / bnorm;
        out.history.push(rel);
        out.iterations = it;
        if rel <= settings.tol {
            out.converged = true;
            break;
        }
        precondition(&r, &mut z);
        let rz_new = weighted_dot(weights, &r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for j in 0..len {
            p[j] = z[j] + beta * p[j];
        }
    }
    out.residual = rel;
    out
}

/// Restarted GMRES with right diagonal preconditioning, orthogonalizing in the
/// `W` inner product (so the minimized residual is measured in `|.|_W`).
pub fn gmres(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    weights: &[f64],
    precond: Option<&[f64]>,
    b: &[f64],
    x: &mut [f64],
    settings: &KrylovSettings,
) -> KrylovOutcome {
    let len = b.len();
    let mut out = KrylovOutcome::default();
    let bnorm = norm_w(weights, b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        out.converged = true;
        return out;
    }
    let restart = settings.restart.max(1);
    let mut ax = vec![0.0; len];
    let mut work = vec![0.0; len];
    let precondition = |v: &[f64], z: &mut [f64]| match precond {
        Some(d) => z
            .iter_mut()
            .zip(v)
            .zip(d)
            .for_each(|((z, v), d)| *z = v * d),
        None => z.copy_from_slice(v),
    };
    let mut total = 0;
    loop {
        apply(x, &mut ax);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm_w(weights, &r);
        let rel = beta / bnorm;
        out.residual = rel;
        if rel <= settings.tol {
            out.converged = true;
            break;
        }
        if total >= settings.max_iter {
            break;
        }
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(restart + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut inner = 0;
        for j in 0..restart {
            if total >= settings.max_iter {
                break;
            }
            precondition(&basis[j], &mut work);
            let mut w = vec![0.0; len];
            apply(&work, &mut w);
            for i in 0..=j {
                let hij = weighted_dot(weights, &w, &basis[i]);
                h[i][j] = hij;
                for (wk, bk) in w.iter_mut().zip(&basis[i]) {
                    *wk -= hij * bk;
                }
            }
            let hnext = norm_w(weights, &w);
            h[j + 1][j] = hnext;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            if denom == 0.0 {
                break;
            }
            cs[j] = h[j][j] / denom;
            sn[j] = h[j + 1][j] / denom;
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            total += 1;
            inner = j + 1;
            let est = g[j + 1].abs() / bnorm;
            out.history.push(est);
            if est <= settings.tol || hnext == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        if inner == 0 {
            break;
        }
        let mut y = vec![0.0; inner];
        for i in (0..inner).rev() {
            let s: f64 = (i + 1..inner).map(|k| h[i][k] * y[k]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        let mut update = vec![0.0; len];
        for (i, yi) in y.iter().enumerate() {
            for (u, bk) in update.iter_mut().zip(&basis[i]) {
                *u += yi * bk;
            }
        }
        precondition(&update, &mut work);
        for (xk, wk) in x.iter_mut().zip(&work) {
            *xk += wk;
        }
    }
    out.iterations = total;
    out
}
