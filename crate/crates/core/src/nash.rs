//! The followers' Nash equilibrium for a fixed leader control.
//!
//! Follower `i` minimizes
//! `J_i = 1/2 ds sum_k d_k |h_i^k|^2 + alpha_i/2 D_y (rho_i^2 (v(S) - v^S), v(S) - v^S)_K`.
//! The equilibrium solves `Lh = xi` with
//! `(Lh)_i = d h_i + alpha_i L_i^*(rho_i^2 D_y sum_j L_j h_j)` and
//! `xi_i = alpha_i L_i^*(rho_i^2 D_y (v^S - L_0 g))`.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::krylov::{conjugate_gradient, gmres, KrylovOutcome, KrylovSettings};
use crate::state::{ControlBundle, ControlSeries, DiscreteModel};
use crate::weighted::Field;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NashSettings {
    /// Relative residual target `|Lh - xi| / |xi|`.
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
    /// Iteration cap of the Richardson fallback.
    pub richardson_max_iter: usize,
}

impl Default for NashSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
            restart: 50,
            richardson_max_iter: 20_000,
        }
    }
}

/// Diagnostics of a Nash solve, serialized as the run report.
#[derive(Clone, Debug, Default, Serialize)]
pub struct NashSolveReport {
    pub method: String,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// `k1/2 - alpha_max k4 rho_max n C_S^2`.
    pub margin: f64,
    /// Estimated `C_i(S)` per follower. These are numerical estimates.
    #[serde(rename = "C_S")]
    pub c_s: Vec<f64>,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub alpha: Vec<f64>,
    pub rho_max: f64,
    pub verified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Smallness diagnostic of the Nash operator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Coercivity {
    pub margin: f64,
    pub c_s: Vec<f64>,
    pub k: [f64; 4],
    pub alpha_max: f64,
    pub rho_max: f64,
    /// Upper bound on the operator norm.
    pub norm_bound: f64,
}

/// Matrix-free Nash operator of a discrete model.
#[derive(Clone, Copy, Debug)]
pub struct NashOperator<'a> {
    model: &'a DiscreteModel,
}

impl<'a> NashOperator<'a> {
    pub fn new(model: &'a DiscreteModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &'a DiscreteModel {
        self.model
    }

    fn n(&self) -> usize {
        self.model.followers()
    }

    fn block(&self) -> usize {
        self.model.grid().len() * self.model.time().steps()
    }

    pub fn zeros(&self) -> Vec<ControlSeries> {
        vec![self.model.zero_controls(); self.n()]
    }

    /// Inner product on follower bundles.
    pub fn inner(&self, a: &[ControlSeries], b: &[ControlSeries]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(a, b)| self.model.control_inner(a, b))
            .sum()
    }

    pub fn norm(&self, a: &[ControlSeries]) -> f64 {
        self.inner(a, a).sqrt()
    }

    /// Restricts every follower control to its masks.
    pub fn project(&self, h: &mut [ControlSeries]) {
        for (i, hi) in h.iter_mut().enumerate() {
            hi.apply_masks(self.model.follower_masks(i));
        }
    }

    /// `sum_j L_j h_j`.
    pub fn combined_final_state(&self, h: &[ControlSeries]) -> Result<Vec<f64>> {
        let mut src = self.model.zero_controls();
        for (j, hj) in h.iter().enumerate() {
            let mut part = hj.clone();
            part.apply_masks(self.model.follower_masks(j));
            src.axpy(1.0, &part);
        }
        self.model.final_state(&src)
    }

    /// `(alpha_i L_i^*(rho_i^2 D_y w))_i`.
    pub fn couple(&self, w: &[f64]) -> Result<Vec<ControlSeries>> {
        let model = self.model;
        let dy = model.d_y();
        (0..self.n())
            .into_par_iter()
            .map(|i| {
                let alpha = model.alphas()[i];
                if alpha == 0.0 {
                    return Ok(model.zero_controls());
                }
                let terminal: Vec<f64> = w
                    .iter()
                    .zip(model.rho_sq(i))
                    .map(|(w, r)| alpha * dy * r * w)
                    .collect();
                let mut q = model
                    .sweep_backward(&terminal, model.time().steps())?
                    .pairing;
                q.apply_masks(model.follower_masks(i));
                Ok(q)
            })
            .collect()
    }

    /// `Lh`.
    pub fn apply(&self, h: &[ControlSeries]) -> Result<Vec<ControlSeries>> {
        if h.len() != self.n() {
            return Err(Error::GridMismatch(format!(
                "expected {} follower controls, got {}",
                self.n(),
                h.len()
            )));
        }
        let w = self.combined_final_state(h)?;
        let mut out = self.couple(&w)?;
        for (i, (o, hi)) in out.iter_mut().zip(h).enumerate() {
            for k in 0..self.model.time().steps() {
                let d = self.model.d_ys(k);
                let mask = self.model.follower_mask(i, k);
                for ((o, h), m) in o.step_mut(k).iter_mut().zip(hi.step(k)).zip(mask) {
                    *o += d * m * h;
                }
            }
        }
        Ok(out)
    }

    /// Returns `(xi, eta^S)` for leader control `g`, with `eta^S = v^S - L_0 g`.
    pub fn build_rhs(&self, g: &ControlSeries) -> Result<(Vec<ControlSeries>, Field)> {
        let z = self.model.resolvent_l0(g)?;
        let mut eta = self.model.target().clone();
        eta.axpy(-1.0, &z)?;
        let xi = self.couple(eta.values())?;
        Ok((xi, eta))
    }

    /// Smallness margin and operator-norm bound, using the cached `C_i(S)`.
    pub fn coercivity(&self) -> Result<Coercivity> {
        let model = self.model;
        let c_s = model.resolvent_bounds()?.to_vec();
        let (k1, k2, k3, k4) = model.scenario().jacobian_bounds();
        let c_max = c_s.iter().copied().fold(0.0, f64::max);
        let alpha_max = model.alphas().iter().copied().fold(0.0, f64::max);
        let rho_max = model.rho_sup();
        let n = self.n() as f64;
        let cross = alpha_max * k4 * rho_max * n * c_max * c_max;
        let d_max = (0..model.time().steps())
            .map(|k| model.d_ys(k))
            .fold(k1, f64::max);
        Ok(Coercivity {
            margin: k1 / 2.0 - cross,
            c_s,
            k: [k1, k2, k3, k4],
            alpha_max,
            rho_max,
            norm_bound: d_max.max(k2) + cross,
        })
    }

    fn flatten(&self, h: &[ControlSeries]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n() * self.block());
        for hi in h {
            out.extend_from_slice(hi.values());
        }
        out
    }

    fn unflatten(&self, x: &[f64]) -> Vec<ControlSeries> {
        let grid = *self.model.grid();
        let steps = self.model.time().steps();
        x.chunks(self.block())
            .map(|c| {
                ControlSeries::from_values(grid, steps, c.to_vec())
                    .expect("block size matches the grid")
            })
            .collect()
    }

    fn flat_weights(&self) -> Vec<f64> {
        let dt = self.model.time().dt();
        let w = self.model.weights();
        let steps = self.model.time().steps();
        let mut out = Vec::with_capacity(self.n() * self.block());
        for _ in 0..self.n() {
            for _ in 0..steps {
                out.extend(w.iter().map(|v| v * dt));
            }
        }
        out
    }

    /// Inverse of the diagonal part `d_k` on the masks.
    fn flat_precond(&self) -> Vec<f64> {
        let steps = self.model.time().steps();
        let mut out = Vec::with_capacity(self.n() * self.block());
        for _ in 0..self.n() {
            for k in 0..steps {
                let d = 1.0 / self.model.d_ys(k);
                out.extend(std::iter::repeat_n(d, self.model.grid().len()));
            }
        }
        out
    }

    /// Solves `Lh = xi` starting from `initial`.
    pub fn solve(
        &self,
        xi: &[ControlSeries],
        initial: Option<&[ControlSeries]>,
        settings: &NashSettings,
    ) -> Result<(Vec<ControlSeries>, NashSolveReport)> {
        let coercivity = self.coercivity()?;
        let mut report = NashSolveReport {
            margin: coercivity.margin,
            c_s: coercivity.c_s.clone(),
            k1: coercivity.k[0],
            k2: coercivity.k[1],
            k3: coercivity.k[2],
            k4: coercivity.k[3],
            alpha: self.model.alphas().to_vec(),
            rho_max: coercivity.rho_max,
            ..Default::default()
        };
        if coercivity.margin <= 0.0 {
            report.warning = Some(format!(
                "smallness margin {:.3e} is not positive; invertibility is not guaranteed",
                coercivity.margin
            ));
        }
        if self.n() == 0 {
            report.method = "none".into();
            report.converged = true;
            return Ok((Vec::new(), report));
        }
        let mut xi = xi.to_vec();
        self.project(&mut xi);
        let b = self.flatten(&xi);
        let weights = self.flat_weights();
        let precond = self.flat_precond();
        let mut x = match initial {
            Some(h) => {
                let mut h = h.to_vec();
                self.project(&mut h);
                self.flatten(&h)
            }
            None => vec![0.0; b.len()],
        };
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let mut apply = |v: &[f64], out: &mut [f64]| {
            if failure.borrow().is_some() {
                out.iter_mut().for_each(|o| *o = f64::NAN);
                return;
            }
            match self.apply(&self.unflatten(v)) {
                Ok(r) => out.copy_from_slice(&self.flatten(&r)),
                Err(e) => {
                    *failure.borrow_mut() = Some(e);
                    out.iter_mut().for_each(|o| *o = f64::NAN);
                }
            }
        };
        let ks = KrylovSettings {
            tol: settings.tol,
            max_iter: settings.max_iter,
            restart: settings.restart,
        };
        let start = x.clone();
        let mut outcome: KrylovOutcome;
        if self.n() == 1 {
            report.method = "cg".into();
            outcome = conjugate_gradient(&mut apply, &weights, Some(&precond), &b, &mut x, &ks);
            if outcome.breakdown {
                report.method = "gmres".into();
                x.copy_from_slice(&start);
                outcome = gmres(&mut apply, &weights, Some(&precond), &b, &mut x, &ks);
            }
        } else {
            report.method = "gmres".into();
            outcome = gmres(&mut apply, &weights, Some(&precond), &b, &mut x, &ks);
        }
        report.residuals = outcome.history.clone();
        report.iterations = outcome.iterations;
        report.residual = outcome.residual;
        report.converged = outcome.converged;
        if !outcome.converged && failure.borrow().is_none() {
            report.method.push_str("+richardson");
            let tau = (coercivity.k[0] / 2.0) / (coercivity.norm_bound * coercivity.norm_bound);
            let bnorm = crate::weighted::weighted_dot(&weights, &b, &b).sqrt();
            let mut r = vec![0.0; b.len()];
            for _ in 0..settings.richardson_max_iter {
                apply(&x, &mut r);
                for (r, b) in r.iter_mut().zip(&b) {
                    *r -= b;
                }
                let rel = crate::weighted::weighted_dot(&weights, &r, &r).sqrt()
                    / bnorm.max(f64::MIN_POSITIVE);
                report.residuals.push(rel);
                report.iterations += 1;
                report.residual = rel;
                if rel <= settings.tol {
                    report.converged = true;
                    break;
                }
                if !rel.is_finite() {
                    break;
                }
                for (x, r) in x.iter_mut().zip(&r) {
                    *x -= tau * r;
                }
            }
        }
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        if !report.converged {
            return Err(Error::NotConverged {
                what: "Nash equilibrium",
                iterations: report.iterations,
                residual: report.residual,
                history: report.residuals,
            });
        }
        Ok((self.unflatten(&x), report))
    }
}

impl DiscreteModel {
    /// Follower equilibrium for leader control `g`.
    pub fn solve_nash(
        &self,
        g: &ControlSeries,
        settings: &NashSettings,
    ) -> Result<(Vec<ControlSeries>, NashSolveReport)> {
        let op = NashOperator::new(self);
        let (xi, _) = op.build_rhs(g)?;
        op.solve(&xi, None, settings)
    }

    fn bundle(&self, g: &ControlSeries, h: &[ControlSeries]) -> ControlBundle {
        ControlBundle {
            leader: g.clone(),
            followers: h.to_vec(),
        }
    }

    /// `J_i` evaluated from a full forward solve.
    pub fn evaluate_ji(&self, g: &ControlSeries, h: &[ControlSeries], i: usize) -> Result<f64> {
        self.check_follower(i)?;
        let src = self.compose_source(&self.bundle(g, h))?;
        let v = self.final_state(&src)?;
        Ok(self.control_cost(i, &h[i]) + self.tracking_cost(i, &v))
    }

    /// `1/2 ds sum_k d_k |chi_i h_i^k|^2_K`.
    pub fn control_cost(&self, i: usize, hi: &ControlSeries) -> f64 {
        let dt = self.time().dt();
        (0..self.time().steps())
            .map(|k| {
                let masked: Vec<f64> = hi
                    .step(k)
                    .iter()
                    .zip(self.follower_mask(i, k))
                    .map(|(h, m)| h * m)
                    .collect();
                self.d_ys(k) * self.inner(&masked, &masked)
            })
            .sum::<f64>()
            * 0.5
            * dt
    }

    /// `alpha_i/2 D_y (rho_i^2 (v - v^S), v - v^S)_K`.
    pub fn tracking_cost(&self, i: usize, v: &[f64]) -> f64 {
        let diff: Vec<f64> = v
            .iter()
            .zip(self.target().values())
            .map(|(a, b)| a - b)
            .collect();
        let weighted: Vec<f64> = diff
            .iter()
            .zip(self.rho_sq(i))
            .map(|(d, r)| d * r)
            .collect();
        0.5 * self.alphas()[i] * self.d_y() * self.inner(&weighted, &diff)
    }

    /// `J_i` from the resolvent form
    /// `1/2 |d^{1/2} h_i|^2 + alpha_i/2 D_y |rho_i (sum_j L_j h_j - eta^S)|^2`.
    pub fn evaluate_ji_resolvent(
        &self,
        g: &ControlSeries,
        h: &[ControlSeries],
        i: usize,
    ) -> Result<f64> {
        self.check_follower(i)?;
        let z = self.resolvent_l0(g)?;
        let mut eta = self.target().clone();
        eta.axpy(-1.0, &z)?;
        let mut sum = vec![0.0; self.grid().len()];
        for (j, hj) in h.iter().enumerate() {
            let lj = self.resolvent_li(j, hj)?;
            for (s, v) in sum.iter_mut().zip(lj.values()) {
                *s += v;
            }
        }
        let diff: Vec<f64> = sum.iter().zip(eta.values()).map(|(a, b)| a - b).collect();
        let weighted: Vec<f64> = diff
            .iter()
            .zip(self.rho_sq(i))
            .map(|(d, r)| d * r)
            .collect();
        Ok(self.control_cost(i, &h[i])
            + 0.5 * self.alphas()[i] * self.d_y() * self.inner(&weighted, &diff))
    }

    /// Gateaux derivative of `J_i` with respect to `h_i` in direction `dir`:
    /// `((Lh - xi)_i, dir)`.
    pub fn gateaux(
        &self,
        g: &ControlSeries,
        h: &[ControlSeries],
        i: usize,
        dir: &ControlSeries,
    ) -> Result<f64> {
        let grad = self.follower_gradient(g, h, i)?;
        Ok(self.control_inner(&grad, dir))
    }

    /// Gradient of `J_i` in `h_i`: `d h_i + alpha_i L_i^*(rho_i^2 D_y (v(S) - v^S))`.
    pub fn follower_gradient(
        &self,
        g: &ControlSeries,
        h: &[ControlSeries],
        i: usize,
    ) -> Result<ControlSeries> {
        self.check_follower(i)?;
        let src = self.compose_source(&self.bundle(g, h))?;
        let v = self.final_state(&src)?;
        let terminal: Vec<f64> = v
            .iter()
            .zip(self.target().values())
            .zip(self.rho_sq(i))
            .map(|((v, t), r)| self.alphas()[i] * self.d_y() * r * (v - t))
            .collect();
        let mut grad = self.sweep_backward(&terminal, self.time().steps())?.pairing;
        for k in 0..self.time().steps() {
            let d = self.d_ys(k);
            for (gk, hk) in grad.step_mut(k).iter_mut().zip(h[i].step(k)) {
                *gk += d * hk;
            }
        }
        grad.apply_masks(self.follower_masks(i));
        Ok(grad)
    }
}

#[derive(Clone, Debug)]
pub struct VerifySettings {
    pub perturbations: usize,
    pub step_sizes: Vec<f64>,
    pub seed: u64,
    pub euler_lagrange_tol: f64,
    pub deviation_slack: f64,
    pub derivative_tol: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            perturbations: 3,
            step_sizes: vec![1e-2, 1e-3],
            seed: 7,
            euler_lagrange_tol: 1e-9,
            deviation_slack: 1e-12,
            derivative_tol: 1e-6,
        }
    }
}

/// Unilateral optimality check of a follower bundle.
#[derive(Clone, Debug, Default, Serialize)]
pub struct NashVerification {
    /// `|(Lh - xi)_i| / |xi|` per follower.
    pub euler_lagrange: Vec<f64>,
    /// Smallest normalized change `(J_i(h_i + t d) - J_i(h)) / scale` seen.
    pub worst_deviation: f64,
    /// Largest relative mismatch between derivative and central differences.
    pub worst_derivative_error: f64,
    pub violations: Vec<String>,
    pub passed: bool,
}

/// Checks the Euler-Lagrange residual, unilateral deviations and derivatives.
pub fn verify_nash(
    model: &DiscreteModel,
    g: &ControlSeries,
    h: &[ControlSeries],
    settings: &VerifySettings,
) -> Result<NashVerification> {
    let op = NashOperator::new(model);
    let (xi, _) = op.build_rhs(g)?;
    let lh = op.apply(h)?;
    let xi_norm = op.norm(&xi);
    let lh_norm = op.norm(&lh);
    let scale = xi_norm.max(lh_norm).max(f64::MIN_POSITIVE);
    let mut out = NashVerification {
        worst_deviation: f64::INFINITY,
        ..Default::default()
    };
    for i in 0..model.followers() {
        let mut r = lh[i].clone();
        r.axpy(-1.0, &xi[i]);
        let rel = model.control_norm(&r) / scale;
        out.euler_lagrange.push(rel);
        if rel > settings.euler_lagrange_tol {
            out.violations
                .push(format!("follower {i}: Euler-Lagrange residual {rel:.3e}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    for i in 0..model.followers() {
        let base = model.evaluate_ji(g, h, i)?;
        let grad = model.follower_gradient(g, h, i)?;
        for p in 0..settings.perturbations {
            let mut dir = model.zero_controls();
            dir.values_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-1.0..1.0));
            dir.apply_masks(model.follower_masks(i));
            let dn = model.control_norm(&dir);
            if dn == 0.0 {
                continue;
            }
            let hn = model.control_norm(&h[i]).max(1.0);
            dir.scale(hn / dn);
            let analytic = model.control_inner(&grad, &dir);
            // The gradient is a sum of two terms that cancel at equilibrium;
            // scale by their size, not by the size of the sum.
            let mut dh = h[i].clone();
            for k in 0..model.time().steps() {
                let d = model.d_ys(k);
                dh.step_mut(k).iter_mut().for_each(|v| *v *= d);
            }
            dh.apply_masks(model.follower_masks(i));
            let term_scale =
                (model.control_norm(&grad) + model.control_norm(&dh)) * model.control_norm(&dir);
            for &t in &settings.step_sizes {
                let shifted = |sign: f64| -> Result<f64> {
                    let mut hh = h.to_vec();
                    hh[i].axpy(sign * t, &dir);
                    model.evaluate_ji(g, &hh, i)
                };
                let plus = shifted(1.0)?;
                let minus = shifted(-1.0)?;
                let jscale = base.abs().max(plus.abs()).max(f64::MIN_POSITIVE);
                for value in [plus, minus] {
                    let gain = (value - base) / jscale;
                    out.worst_deviation = out.worst_deviation.min(gain);
                    if gain < -settings.deviation_slack {
                        out.violations.push(format!(
                            "follower {i}, perturbation {p}, t = {t:e}: J decreased by {:.3e} (relative)",
                            -gain
                        ));
                    }
                }
                let fd = (plus - minus) / (2.0 * t);
                let dscale = analytic.abs() + term_scale + jscale / t * 1e-14;
                let err = (fd - analytic).abs() / dscale.max(f64::MIN_POSITIVE);
                out.worst_derivative_error = out.worst_derivative_error.max(err);
                if err > settings.derivative_tol {
                    out.violations.push(format!(
                        "follower {i}, perturbation {p}, t = {t:e}: derivative mismatch {err:.3e}"
                    ));
                }
            }
        }
    }
    if !out.worst_deviation.is_finite() {
        out.worst_deviation = 0.0;
    }
    out.passed = out.violations.is_empty();
    Ok(out)
}
