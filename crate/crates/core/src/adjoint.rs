//! Backward (adjoint) solves built as exact transposes of the forward stepper
//! in the weighted inner product, and the coupled leader adjoint system.
//!
//! For every forward solve `v` with source `f` and zero initial state, the
//! adjoint trajectory with terminal datum `xi` satisfies
//! `(xi, v^m)_K = ds sum_k (mu_k, f_k)_K` up to roundoff.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::krylov::{gmres, KrylovSettings};
use crate::state::{ControlSeries, DiscreteModel, Trajectory};
use crate::weighted::Field;

/// States `p^0..p^m` of a backward solve and their pairing with sources.
#[derive(Clone, Debug)]
pub struct AdjointTrajectory {
    pub states: Vec<Field>,
    /// `mu_k`: the adjoint paired with the source of step `k`.
    pub pairing: ControlSeries,
}

impl AdjointTrajectory {
    pub fn terminal(&self) -> &Field {
        self.states.last().expect("adjoint holds m + 1 states")
    }
}

impl DiscreteModel {
    /// Backward solve from `p^m = terminal`.
    pub fn solve_adjoint(&self, terminal: &Field) -> Result<AdjointTrajectory> {
        self.grid().ensure_same(terminal.grid())?;
        let sweep = self.sweep_backward(terminal.values(), self.time().steps())?;
        let states = sweep
            .states
            .into_iter()
            .map(|v| Field::from_values(*self.grid(), v))
            .collect::<Result<Vec<_>>>()?;
        Ok(AdjointTrajectory {
            states,
            pairing: sweep.pairing,
        })
    }

    /// `L_i^* xi`: the adjoint pairing restricted to the masks of follower `i`.
    pub fn adjoint_of_li(&self, i: usize, xi: &Field) -> Result<ControlSeries> {
        self.check_follower(i)?;
        self.grid().ensure_same(xi.grid())?;
        let mut q = self
            .sweep_backward(xi.values(), self.time().steps())?
            .pairing;
        q.apply_masks(self.follower_masks(i));
        Ok(q)
    }

    /// `L_0^* xi`, restricted to the leader masks.
    pub fn adjoint_of_l0(&self, xi: &Field) -> Result<ControlSeries> {
        self.grid().ensure_same(xi.grid())?;
        let mut q = self
            .sweep_backward(xi.values(), self.time().steps())?
            .pairing;
        q.apply_masks(self.leader_masks());
        Ok(q)
    }

    /// `T phi = sum_i alpha_i D_y rho_i^2 L_i D^{-1} L_i^* phi`, so that the
    /// leader adjoint terminal value solves `phi + T phi = zeta`.
    pub(crate) fn leader_coupling(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let len = self.grid().len();
        if self.followers() == 0 {
            return Ok(vec![0.0; len]);
        }
        let q = self.sweep_backward(phi, self.time().steps())?.pairing;
        let parts = (0..self.followers())
            .into_par_iter()
            .map(|i| {
                let src = self.follower_feedback_source(i, &q, -self.alphas()[i]);
                self.final_state(&src)
            })
            .collect::<Result<Vec<_>>>()?;
        let dy = self.d_y();
        let mut out = vec![0.0; len];
        for (i, psi) in parts.iter().enumerate() {
            for ((o, p), r) in out.iter_mut().zip(psi).zip(self.rho_sq(i)) {
                *o -= dy * r * p;
            }
        }
        Ok(out)
    }

    /// `scale * chi_i q_k / d_k` on every step.
    pub(crate) fn follower_feedback_source(
        &self,
        i: usize,
        q: &ControlSeries,
        scale: f64,
    ) -> ControlSeries {
        let mut src = q.clone();
        src.apply_masks(self.follower_masks(i));
        for k in 0..self.time().steps() {
            let f = scale / self.d_ys(k);
            src.step_mut(k).iter_mut().for_each(|v| *v *= f);
        }
        src
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LeaderAdjointMethod {
    /// Damped fixed point `phi <- (1 - w) phi + w (zeta - T phi)`.
    FixedPoint { damping: f64 },
    /// GMRES on `(I + T) phi = zeta`.
    Krylov,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeaderAdjointSettings {
    pub method: LeaderAdjointMethod,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LeaderAdjointSettings {
    fn default() -> Self {
        Self {
            method: LeaderAdjointMethod::FixedPoint { damping: 0.5 },
            tol: 1e-9,
            max_iter: 200,
        }
    }
}

/// Solution `(phi, psi_1..psi_n)` of the coupled leader adjoint system.
#[derive(Clone, Debug)]
pub struct LeaderAdjointPair {
    pub phi: AdjointTrajectory,
    pub psi: Vec<Trajectory>,
    pub zeta: Field,
    pub iterations: usize,
    /// Observed ratio of successive fixed-point corrections (zero for Krylov).
    pub contraction: f64,
}

impl LeaderAdjointPair {
    /// `phi(S) - zeta - sum_i D_y rho_i^2 psi_i(S)`, relative to `|zeta|`.
    pub fn terminal_residual(&self, model: &DiscreteModel) -> f64 {
        let mut r = self.phi.terminal().values().to_vec();
        for (x, z) in r.iter_mut().zip(self.zeta.values()) {
            *x -= z;
        }
        for (i, psi) in self.psi.iter().enumerate() {
            for ((x, p), rho) in r
                .iter_mut()
                .zip(psi.final_state().values())
                .zip(model.rho_sq(i))
            {
                *x -= model.d_y() * rho * p;
            }
        }
        let zn = model.inner(self.zeta.values(), self.zeta.values()).sqrt();
        model.inner(&r, &r).sqrt() / zn.max(f64::MIN_POSITIVE)
    }

    /// `R^* zeta`: `phi` paired with sources, restricted to the leader masks.
    pub fn leader_restriction(&self, model: &DiscreteModel) -> ControlSeries {
        let mut q = self.phi.pairing.clone();
        q.apply_masks(model.leader_masks());
        q
    }
}

/// Solves the leader adjoint system with terminal coupling `zeta`.
pub fn solve_leader_adjoint(
    model: &DiscreteModel,
    zeta: &Field,
    settings: &LeaderAdjointSettings,
) -> Result<LeaderAdjointPair> {
    model.grid().ensure_same(zeta.grid())?;
    let mut zeta = zeta.clone();
    zeta.zero_boundary();
    let z = zeta.values();
    let zn = model.inner(z, z).sqrt();
    let len = model.grid().len();
    let mut iterations = 0;
    let mut contraction = 0.0;
    let phi_terminal: Vec<f64> = if zn == 0.0 || model.followers() == 0 {
        z.to_vec()
    } else {
        match settings.method {
            LeaderAdjointMethod::FixedPoint { damping } => {
                if !(damping > 0.0 && damping <= 1.0) {
                    return Err(Error::config("damping", "must lie in (0, 1]"));
                }
                let mut phi = z.to_vec();
                let mut history = Vec::new();
                let mut prev_change = f64::NAN;
                let mut converged = false;
                for it in 1..=settings.max_iter {
                    let t = model.leader_coupling(&phi)?;
                    let mut change = vec![0.0; len];
                    for j in 0..len {
                        let target = z[j] - t[j];
                        change[j] = damping * (target - phi[j]);
                        phi[j] += change[j];
                    }
                    let rel = model.inner(&change, &change).sqrt() / zn;
                    history.push(rel);
                    if prev_change.is_finite() && prev_change > 0.0 {
                        contraction = rel / prev_change;
                    }
                    prev_change = rel;
                    iterations = it;
                    if rel <= settings.tol {
                        converged = true;
                        break;
                    }
                    if !rel.is_finite() {
                        break;
                    }
                }
                if !converged {
                    return Err(Error::NotConverged {
                        what: "leader adjoint fixed point",
                        iterations,
                        residual: history.last().copied().unwrap_or(f64::NAN),
                        history,
                    });
                }
                phi
            }
            LeaderAdjointMethod::Krylov => {
                let mut phi = z.to_vec();
                let mut failure = None;
                let apply = |x: &[f64], out: &mut [f64]| match model.leader_coupling(x) {
                    Ok(t) => {
                        for j in 0..len {
                            out[j] = x[j] + t[j];
                        }
                    }
                    Err(e) => {
                        failure.get_or_insert(e);
                        out.iter_mut().for_each(|v| *v = f64::NAN);
                    }
                };
                let ks = KrylovSettings {
                    tol: settings.tol,
                    max_iter: settings.max_iter,
                    restart: 60,
                };
                let out = gmres(apply, model.weights(), None, z, &mut phi, &ks);
                if let Some(e) = failure {
                    return Err(e);
                }
                iterations = out.iterations;
                if !out.converged {
                    return Err(Error::NotConverged {
                        what: "leader adjoint GMRES",
                        iterations: out.iterations,
                        residual: out.residual,
                        history: out.history,
                    });
                }
                phi
            }
        }
    };
    let phi_field = Field::from_values(*model.grid(), phi_terminal)?;
    let phi = model.solve_adjoint(&phi_field)?;
    let psi = (0..model.followers())
        .into_par_iter()
        .map(|i| {
            let src = model.follower_feedback_source(i, &phi.pairing, -model.alphas()[i]);
            model.solve_source(&src, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LeaderAdjointPair {
        phi,
        psi,
        zeta,
        iterations,
        contraction,
    })
}
