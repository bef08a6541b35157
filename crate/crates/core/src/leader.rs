//! The leader's penalized approximate-controllability problem over the
//! reduced affine map `g -> v(S; g, h(g))`, where `h(g)` is the followers'
//! Nash equilibrium.
//!
//! The leader minimizes `F(g) = |G(g) - v^S|_K^2 + eps |g|^2` with
//! `G(g) = R g + c`. Conjugate gradients run on `(R^* R + eps) g = R^*(v^S - c)`;
//! `R^*` comes from the coupled leader adjoint system.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Serialize;

use crate::adjoint::{solve_leader_adjoint, LeaderAdjointMethod, LeaderAdjointSettings};
use crate::error::{Error, Result};
use crate::krylov::{conjugate_gradient, KrylovSettings};
use crate::nash::{NashOperator, NashSettings};
use crate::scenario::{from_similarity_controls, PhysicalControls};
use crate::state::{ControlBundle, ControlSeries, DiscreteModel};
use crate::weighted::Field;

#[derive(Clone, Debug)]
pub struct LeaderProblem {
    pub epsilon: f64,
    /// Relative gradient norm at which the outer iteration stops.
    pub tol: f64,
    pub max_outer: usize,
    pub nash: NashSettings,
    pub adjoint: LeaderAdjointSettings,
}

impl LeaderProblem {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::config(
                "epsilon",
                format!("penalty must be positive, got {epsilon}"),
            ));
        }
        Ok(Self {
            epsilon,
            tol: 1e-8,
            max_outer: 5000,
            nash: NashSettings {
                tol: 1e-12,
                ..NashSettings::default()
            },
            adjoint: LeaderAdjointSettings {
                method: LeaderAdjointMethod::Krylov,
                tol: 1e-13,
                max_iter: 500,
            },
        })
    }
}

/// Converged leader control together with its equilibrium.
#[derive(Clone, Debug)]
pub struct LeaderSolution {
    pub g: ControlSeries,
    pub h: Vec<ControlSeries>,
    pub final_state: Field,
    /// `|v(S) - v^S|_K`.
    pub weighted_residual: f64,
    pub leader_norm: f64,
    pub outer_iterations: usize,
    pub nash_iterations: usize,
    pub gradient_residual: f64,
}

/// Reduced map with counters for the inner solves.
pub struct ReducedMap<'a> {
    model: &'a DiscreteModel,
    op: NashOperator<'a>,
    nash: NashSettings,
    adjoint: LeaderAdjointSettings,
    nash_iterations: AtomicUsize,
}

impl<'a> ReducedMap<'a> {
    pub fn new(
        model: &'a DiscreteModel,
        nash: NashSettings,
        adjoint: LeaderAdjointSettings,
    ) -> Self {
        Self {
            model,
            op: NashOperator::new(model),
            nash,
            adjoint,
            nash_iterations: AtomicUsize::new(0),
        }
    }

    pub fn nash_iterations(&self) -> usize {
        self.nash_iterations.load(Ordering::Relaxed)
    }

    /// `G(g) = v(S; g, h(g))` and the equilibrium `h(g)`.
    pub fn evaluate(&self, g: &ControlSeries) -> Result<(Field, Vec<ControlSeries>)> {
        let (xi, _) = self.op.build_rhs(g)?;
        let (h, report) = self.op.solve(&xi, None, &self.nash)?;
        self.nash_iterations
            .fetch_add(report.iterations, Ordering::Relaxed);
        let bundle = ControlBundle {
            leader: g.clone(),
            followers: h.clone(),
        };
        let src = self.model.compose_source(&bundle)?;
        let v = Field::from_values(*self.model.grid(), self.model.final_state(&src)?)?;
        Ok((v, h))
    }

    /// Linear part `R g = G(g) - G(0)`.
    pub fn apply_linear(&self, g: &ControlSeries) -> Result<Field> {
        let z = self.model.resolvent_l0(g)?;
        let neg: Vec<f64> = z.values().iter().map(|v| -v).collect();
        let xi = self.op.couple(&neg)?;
        let (h, report) = self.op.solve(&xi, None, &self.nash)?;
        self.nash_iterations
            .fetch_add(report.iterations, Ordering::Relaxed);
        let w = self.op.combined_final_state(&h)?;
        let mut out = z;
        for (o, w) in out.values_mut().iter_mut().zip(&w) {
            *o += w;
        }
        Ok(out)
    }

    /// `R^* zeta` through the coupled leader adjoint.
    pub fn apply_adjoint(&self, zeta: &Field) -> Result<ControlSeries> {
        let pair = solve_leader_adjoint(self.model, zeta, &self.adjoint)?;
        Ok(pair.leader_restriction(self.model))
    }

    /// `F(g) = |G(g) - v^S|^2 + eps |g|^2`.
    pub fn objective(&self, g: &ControlSeries, epsilon: f64) -> Result<f64> {
        let (v, _) = self.evaluate(g)?;
        let mut r = v;
        r.axpy(-1.0, self.model.target())?;
        let gn = self.model.control_norm(&self.masked(g));
        Ok(self.model.inner(r.values(), r.values()) + epsilon * gn * gn)
    }

    /// `2 R^*(G(g) - v^S) + 2 eps g` on the leader masks.
    pub fn gradient(&self, g: &ControlSeries, epsilon: f64) -> Result<ControlSeries> {
        let (v, _) = self.evaluate(g)?;
        let mut r = v;
        r.axpy(-1.0, self.model.target())?;
        let mut grad = self.apply_adjoint(&r)?;
        grad.axpy(epsilon, &self.masked(g));
        grad.scale(2.0);
        Ok(grad)
    }

    fn masked(&self, g: &ControlSeries) -> ControlSeries {
        let mut g = g.clone();
        g.apply_masks(self.model.leader_masks());
        g
    }
}

impl DiscreteModel {
    /// `v(S; g, h(g))`.
    pub fn reduced_map(&self, g: &ControlSeries, nash: &NashSettings) -> Result<Field> {
        ReducedMap::new(self, *nash, LeaderAdjointSettings::default())
            .evaluate(g)
            .map(|(v, _)| v)
    }

    fn leader_weights(&self) -> Vec<f64> {
        let dt = self.time().dt();
        let w = self.weights();
        let mut out = Vec::with_capacity(w.len() * self.time().steps());
        for k in 0..self.time().steps() {
            out.extend(w.iter().zip(self.leader_mask(k)).map(|(w, m)| w * m * dt));
        }
        out
    }

    /// Minimizes the penalized tracking functional, starting from `initial`.
    pub fn solve_leader(
        &self,
        problem: &LeaderProblem,
        initial: Option<&ControlSeries>,
    ) -> Result<LeaderSolution> {
        if !(problem.epsilon.is_finite() && problem.epsilon > 0.0) {
            return Err(Error::config("epsilon", "penalty must be positive"));
        }
        let map = ReducedMap::new(self, problem.nash, problem.adjoint);
        let (c, _) = map.evaluate(&self.zero_controls())?;
        let mut rhs_field = self.target().clone();
        rhs_field.axpy(-1.0, &c)?;
        let b = map.apply_adjoint(&rhs_field)?;
        let weights = self.leader_weights();
        let grid = *self.grid();
        let steps = self.time().steps();
        let mut x = match initial {
            Some(g) => {
                let mut g = g.clone();
                g.apply_masks(self.leader_masks());
                g.values().to_vec()
            }
            None => vec![0.0; b.values().len()],
        };
        let mut failure: Option<Error> = None;
        let eps = problem.epsilon;
        let apply = |v: &[f64], out: &mut [f64]| {
            if failure.is_some() {
                out.iter_mut().for_each(|o| *o = f64::NAN);
                return;
            }
            let g = ControlSeries::from_values(grid, steps, v.to_vec())
                .expect("leader vector has the grid size");
            let res = map.apply_linear(&g).and_then(|rg| map.apply_adjoint(&rg));
            match res {
                Ok(mut y) => {
                    y.axpy(eps, &g);
                    y.apply_masks(self.leader_masks());
                    out.copy_from_slice(y.values());
                }
                Err(e) => {
                    failure = Some(e);
                    out.iter_mut().for_each(|o| *o = f64::NAN);
                }
            }
        };
        let settings = KrylovSettings {
            tol: problem.tol,
            max_iter: problem.max_outer,
            restart: 0,
        };
        let outcome = conjugate_gradient(apply, &weights, None, b.values(), &mut x, &settings);
        if let Some(e) = failure {
            return Err(e);
        }
        if !outcome.converged {
            return Err(Error::NotConverged {
                what: "leader conjugate gradients",
                iterations: outcome.iterations,
                residual: outcome.residual,
                history: outcome.history,
            });
        }
        let g = ControlSeries::from_values(grid, steps, x)?;
        let (v, h) = map.evaluate(&g)?;
        let mut r = v.clone();
        r.axpy(-1.0, self.target())?;
        Ok(LeaderSolution {
            leader_norm: self.control_norm(&g),
            weighted_residual: self.inner(r.values(), r.values()).sqrt(),
            final_state: v,
            g,
            h,
            outer_iterations: outcome.iterations,
            nash_iterations: map.nash_iterations(),
            gradient_residual: outcome.residual,
        })
    }

    /// Physical-space check of a final state: returns
    /// `(|u(T) - u^T|_{L^2(R^N)}, ((1+T)^{-N/2} |v(S) - v^S|^2_K)^{1/2})`
    /// where `u(T)` lives on the stretched nodes `x = sqrt(1+T) y` and `u^T`,
    /// `v^S` are sampled from the physical target.
    pub fn physical_residual(&self, final_state: &Field) -> Result<(f64, f64)> {
        self.grid().ensure_same(final_state.grid())?;
        let physical = self.scenario().physical();
        let t = physical.horizon;
        let dim = self.grid().dim();
        let stretch = (1.0 + t).sqrt();
        let jac = (1.0 + t).powf(dim as f64 / 2.0);
        let grid = self.grid();
        let n = grid.points_per_axis();
        let dx = grid.spacing() * stretch;
        let quad = self.space().quadrature();
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for idx in 0..grid.len() {
            let y = grid.point(idx);
            let mut x = [0.0; crate::weighted::MAX_DIM];
            for a in 0..dim {
                x[a] = stretch * y[a];
            }
            let ut = (physical.target)(&x[..dim]);
            let u = final_state.values()[idx] / jac;
            let mi = grid.multi_index(idx);
            let trap: f64 = (0..dim)
                .map(|a| {
                    if mi[a] == 0 || mi[a] == n - 1 {
                        0.5
                    } else {
                        1.0
                    }
                })
                .product();
            lhs += trap * dx.powi(dim as i32) * (u - ut) * (u - ut);
            let vs = jac * ut;
            let d = final_state.values()[idx] - vs;
            rhs += quad[idx] * d * d;
        }
        Ok((lhs.sqrt(), (rhs / jac).sqrt()))
    }

    /// Residuals of the discrete optimality system at `(g, h)`.
    pub fn optimality_residuals(
        &self,
        g: &ControlSeries,
        h: &[ControlSeries],
    ) -> Result<OptimalityResiduals> {
        let bundle = ControlBundle {
            leader: g.clone(),
            followers: h.to_vec(),
        };
        let src = self.compose_source(&bundle)?;
        let v = self.final_state(&src)?;
        let vn = self.inner(&v, &v).sqrt().max(f64::MIN_POSITIVE);
        let mut feedback = Vec::new();
        let mut terminal = Vec::new();
        let mut rebuilt = ControlBundle {
            leader: g.clone(),
            followers: Vec::new(),
        };
        for i in 0..self.followers() {
            let p_terminal: Vec<f64> = v
                .iter()
                .zip(self.target().values())
                .zip(self.rho_sq(i))
                .map(|((v, t), r)| self.d_y() * r * (v - t))
                .collect();
            let p = self.solve_adjoint(&Field::from_values(*self.grid(), p_terminal.clone())?)?;
            let mut diff: Vec<f64> = p
                .terminal()
                .values()
                .iter()
                .zip(&p_terminal)
                .map(|(a, b)| a - b)
                .collect();
            let pn = self
                .inner(&p_terminal, &p_terminal)
                .sqrt()
                .max(f64::MIN_POSITIVE);
            terminal.push(self.inner(&diff, &diff).sqrt() / pn);
            let fb = self.follower_feedback_source(i, &p.pairing, -self.alphas()[i]);
            let mut hi = h[i].clone();
            hi.apply_masks(self.follower_masks(i));
            let mut e = hi.clone();
            e.axpy(-1.0, &fb);
            let hn = self
                .control_norm(&hi)
                .max(self.control_norm(&fb))
                .max(f64::MIN_POSITIVE);
            feedback.push(self.control_norm(&e) / hn);
            rebuilt.followers.push(fb);
            diff.clear();
        }
        let v2 = self.final_state(&self.compose_source(&rebuilt)?)?;
        let d: Vec<f64> = v2.iter().zip(&v).map(|(a, b)| a - b).collect();
        Ok(OptimalityResiduals {
            forward: self.inner(&d, &d).sqrt() / vn,
            feedback,
            terminal,
        })
    }
}

/// Relative residuals of the optimality system.
#[derive(Clone, Debug, Serialize)]
pub struct OptimalityResiduals {
    /// Final state rebuilt with feedback sources `-alpha_i p_i / d` versus `v(S)`.
    pub forward: f64,
    /// `|h_i + alpha_i chi_i p_i / d| / |h_i|` per follower.
    pub feedback: Vec<f64>,
    /// `|p_i(S) - D_y rho_i^2 (v(S) - v^S)|` relative, per follower.
    pub terminal: Vec<f64>,
}

impl OptimalityResiduals {
    pub fn max(&self) -> f64 {
        self.feedback
            .iter()
            .chain(&self.terminal)
            .fold(self.forward, |m, v| m.max(*v))
    }
}

/// One row of the penalty sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepEntry {
    pub epsilon: f64,
    pub weighted_residual: f64,
    pub physical_residual: f64,
    /// `((1+T)^{-N/2} |v(S) - v^S|^2_K)^{1/2}`, the bound on `physical_residual`.
    pub physical_bound: f64,
    pub leader_norm: f64,
    pub nash_iters: usize,
    pub outer_iters: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ControllabilityReport {
    pub entries: Vec<SweepEntry>,
    pub achieved_residual: f64,
    pub leader_norm: f64,
    pub physical_residual: f64,
    /// Every entry satisfies `physical_residual <= physical_bound`.
    pub inequality_holds: bool,
    /// Weighted residuals strictly decrease along the sweep.
    pub strictly_decreasing: bool,
}

impl ControllabilityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epsilon,weighted_residual,physical_residual,leader_norm,nash_iters,outer_iters\n",
        );
        for e in &self.entries {
            out.push_str(&format!(
                "{:e},{:.12e},{:.12e},{:.12e},{},{}\n",
                e.epsilon,
                e.weighted_residual,
                e.physical_residual,
                e.leader_norm,
                e.nash_iters,
                e.outer_iters
            ));
        }
        out
    }
}

/// Output of [`controllability_experiment`].
#[derive(Clone, Debug)]
pub struct ControllabilityRun {
    pub report: ControllabilityReport,
    /// Solution at the last (smallest) penalty.
    pub solution: LeaderSolution,
    pub physical_controls: PhysicalControls,
}

/// Runs the penalty sweep in decreasing order of `epsilons`, warm-starting
/// each solve from the previous control, then pulls the final controls back
/// to physical variables and checks the physical residual bound.
pub fn controllability_experiment(
    model: &DiscreteModel,
    epsilons: &[f64],
    template: &LeaderProblem,
) -> Result<ControllabilityRun> {
    if epsilons.is_empty() {
        return Err(Error::config(
            "eps-sweep",
            "at least one penalty is required",
        ));
    }
    let mut entries = Vec::with_capacity(epsilons.len());
    let mut last: Option<LeaderSolution> = None;
    for &eps in epsilons {
        let mut problem = template.clone();
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::config(
                "eps-sweep",
                format!("penalty must be positive, got {eps}"),
            ));
        }
        problem.epsilon = eps;
        let sol = model.solve_leader(&problem, last.as_ref().map(|s| &s.g))?;
        let (phys, bound) = model.physical_residual(&sol.final_state)?;
        entries.push(SweepEntry {
            epsilon: eps,
            weighted_residual: sol.weighted_residual,
            physical_residual: phys,
            physical_bound: bound,
            leader_norm: sol.leader_norm,
            nash_iters: sol.nash_iterations,
            outer_iters: sol.outer_iterations,
        });
        last = Some(sol);
    }
    let solution = last.expect("sweep is not empty");
    let physical_controls = from_similarity_controls(
        &solution.g,
        &solution.h,
        model.time(),
        model.scenario().physical(),
    )?;
    let inequality_holds = entries
        .iter()
        .all(|e| e.physical_residual <= e.physical_bound * (1.0 + 1e-12));
    let strictly_decreasing = entries
        .windows(2)
        .all(|w| w[1].weighted_residual < w[0].weighted_residual);
    let tail = entries.last().expect("sweep is not empty");
    let report = ControllabilityReport {
        achieved_residual: tail.weighted_residual,
        leader_norm: tail.leader_norm,
        physical_residual: tail.physical_residual,
        inequality_holds,
        strictly_decreasing,
        entries,
    };
    Ok(ControllabilityRun {
        report,
        solution,
        physical_controls,
    })
}
