//! Forward solver for `v_s + L v + A v + B.grad v - (N/2) v = source` on a
//! truncated grid with zero initial data, and the discrete model every other
//! solver is built on.
//!
//! Time stepping is the theta-scheme
//! `(I + theta ds M_{k+1}) v^{k+1} = (I - (1 - theta) ds M_k) v^k + ds f_k`
//! with `M_k = L + A(s_k) + B(s_k).grad - N/2` and piecewise-constant sources
//! `f_k` on `[s_k, s_{k+1})`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::krylov::{conjugate_gradient, gmres, KrylovOutcome, KrylovSettings};
use crate::scenario::{
    jacobian_ys, to_similarity, PhysicalScenario, ScenarioConfig, SimilarityScenario,
};
use crate::weighted::{Field, Grid, WeightedSpace, MAX_DIM};

/// Uniform time grid on `[0, S]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    theta: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize, theta: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::config(
                "T",
                format!("horizon must be positive, got {horizon}"),
            ));
        }
        if steps < 2 {
            return Err(Error::config(
                "steps",
                format!("need at least 2 steps, got {steps}"),
            ));
        }
        if !(0.5..=1.0).contains(&theta) {
            return Err(Error::config(
                "theta",
                format!("theta must lie in [1/2, 1], got {theta}"),
            ));
        }
        Ok(Self {
            horizon,
            steps,
            theta,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `s_k = k ds`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dt()
    }

    /// Index of the step `[s_k, s_{k+1})` containing `s`, clamped to the grid.
    pub fn step_containing(&self, s: f64) -> usize {
        let u = s / self.dt() + 1e-9;
        if u <= 0.0 {
            0
        } else {
            (u.floor() as usize).min(self.steps - 1)
        }
    }
}

/// A control or source: one field per time step, constant on the step.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSeries {
    grid: Grid,
    steps: usize,
    values: Vec<f64>,
}

impl ControlSeries {
    pub fn zeros(grid: Grid, steps: usize) -> Self {
        Self {
            grid,
            steps,
            values: vec![0.0; grid.len() * steps],
        }
    }

    pub fn from_values(grid: Grid, steps: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * steps {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.len() * steps,
                values.len()
            )));
        }
        Ok(Self {
            grid,
            steps,
            values,
        })
    }

    /// Samples `f(y, k)` at every node and step.
    pub fn from_fn(grid: Grid, steps: usize, f: impl Fn(&[f64], usize) -> f64) -> Self {
        let len = grid.len();
        let mut values = vec![0.0; len * steps];
        for k in 0..steps {
            for idx in 0..len {
                let p = grid.point(idx);
                values[k * len + idx] = f(&p[..grid.dim()], k);
            }
        }
        Self {
            grid,
            steps,
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&self, k: usize) -> &[f64] {
        let len = self.grid.len();
        &self.values[k * len..(k + 1) * len]
    }

    pub fn step_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.grid.len();
        &mut self.values[k * len..(k + 1) * len]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn axpy(&mut self, a: f64, x: &ControlSeries) {
        for (y, x) in self.values.iter_mut().zip(&x.values) {
            *y += a * x;
        }
    }

    /// Multiplies step `k` by `masks[k]` entrywise.
    pub fn apply_masks(&mut self, masks: &[Vec<f64>]) {
        let len = self.grid.len();
        for (k, mask) in masks.iter().enumerate().take(self.steps) {
            for (v, m) in self.values[k * len..(k + 1) * len].iter_mut().zip(mask) {
                *v *= m;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn ensure_shape(&self, grid: &Grid, steps: usize) -> Result<()> {
        self.grid.ensure_same(grid)?;
        if self.steps != steps {
            return Err(Error::GridMismatch(format!(
                "control has {} steps, time grid has {steps}",
                self.steps
            )));
        }
        Ok(())
    }
}

/// Leader control `g` and follower controls `h_1..h_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlBundle {
    pub leader: ControlSeries,
    pub followers: Vec<ControlSeries>,
}

impl ControlBundle {
    pub fn zeros(grid: Grid, steps: usize, followers: usize) -> Self {
        Self {
            leader: ControlSeries::zeros(grid, steps),
            followers: vec![ControlSeries::zeros(grid, steps); followers],
        }
    }
}

/// States `v^0..v^m` of a forward solve.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub time: TimeGrid,
    pub states: Vec<Field>,
}

impl Trajectory {
    pub fn final_state(&self) -> &Field {
        self.states.last().expect("trajectory holds m + 1 states")
    }

    pub fn state(&self, k: usize) -> &Field {
        &self.states[k]
    }
}

/// Result of a backward sweep with the transposed stepper.
#[derive(Clone, Debug)]
pub struct BackwardSweep {
    /// `lambda^k` for `k = 0..=level`.
    pub states: Vec<Vec<f64>>,
    /// `mu_k`, the pairing against the source of step `k`; zero for `k >= level`.
    pub pairing: ControlSeries,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub linear: KrylovSettings,
    /// One-sided differences for `B.grad` instead of centered ones.
    pub upwind: bool,
    /// Two-dimensional systems with at most this many interior nodes are
    /// factorized densely once per time level.
    pub direct_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            linear: KrylovSettings::default(),
            upwind: false,
            direct_limit: 1024,
        }
    }
}

#[derive(Clone)]
struct DenseFactors {
    forward: LU<f64, Dyn, Dyn>,
    transpose: LU<f64, Dyn, Dyn>,
}

#[derive(Clone)]
enum Backend {
    Tridiagonal,
    Dense(Vec<DenseFactors>),
    Krylov { symmetric: bool },
}

/// Which norm [`DiscreteModel::power_iteration`] maximizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResolventNorm {
    /// `|v(S)|_{L^2(K)}`: the operator norm of `L_i`.
    FinalL2,
    /// `max_k |v^k|_{H^1(K)}`.
    TrajectoryH1,
}

/// A similarity scenario discretized in space and time.
#[derive(Clone)]
pub struct DiscreteModel {
    scenario: SimilarityScenario,
    space: WeightedSpace,
    time: TimeGrid,
    options: SolverOptions,
    interior: Vec<usize>,
    slot: Vec<usize>,
    /// `A(s_k) - N/2` at every node, for `k = 0..=m`.
    shifted_a: Vec<Vec<f64>>,
    /// `B(s_k)` at every node, components interleaved.
    drift: Vec<Vec<f64>>,
    a_sup: f64,
    b_sup: f64,
    alphas: Vec<f64>,
    leader_masks: Vec<Vec<f64>>,
    follower_masks: Vec<Vec<Vec<f64>>>,
    rho_sq: Vec<Vec<f64>>,
    rho_sup: f64,
    target: Field,
    backend: Backend,
    ci_cache: OnceLock<Vec<f64>>,
}

impl std::fmt::Debug for DiscreteModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteModel")
            .field("grid", self.space.grid())
            .field("time", &self.time)
            .field("followers", &self.followers())
            .finish_non_exhaustive()
    }
}

const NO_SLOT: usize = usize::MAX;

impl DiscreteModel {
    pub fn new(
        scenario: SimilarityScenario,
        grid: Grid,
        steps: usize,
        theta: f64,
        options: SolverOptions,
    ) -> Result<Self> {
        if grid.dim() != scenario.dim() {
            return Err(Error::GridMismatch(format!(
                "grid dimension {} differs from scenario dimension {}",
                grid.dim(),
                scenario.dim()
            )));
        }
        let time = TimeGrid::new(scenario.horizon(), steps, theta)?;
        let space = WeightedSpace::new(grid);
        let dim = grid.dim();
        let len = grid.len();
        let interior = grid.interior_indices();
        let mut slot = vec![NO_SLOT; len];
        for (p, &idx) in interior.iter().enumerate() {
            slot[idx] = p;
        }
        let points: Vec<[f64; MAX_DIM]> = (0..len).map(|i| grid.point(i)).collect();

        let mut shifted_a = Vec::with_capacity(steps + 1);
        let mut drift = Vec::with_capacity(steps + 1);
        let (mut a_sup, mut b_sup) = (0.0f64, 0.0f64);
        let mut bvec = [0.0; MAX_DIM];
        for k in 0..=steps {
            let s = time.time(k);
            let mut a = vec![0.0; len];
            let mut b = vec![0.0; len * dim];
            for idx in 0..len {
                let y = &points[idx][..dim];
                let av = scenario.potential_a(y, s);
                scenario.potential_b(y, s, &mut bvec[..dim]);
                if !av.is_finite() || bvec[..dim].iter().any(|v| !v.is_finite()) {
                    return Err(Error::OutOfRange(format!(
                        "potential is not finite at y = {y:?}, s = {s}"
                    )));
                }
                a_sup = a_sup.max(av.abs());
                b_sup = b_sup.max(bvec[..dim].iter().map(|v| v * v).sum::<f64>().sqrt());
                a[idx] = av - dim as f64 / 2.0;
                b[idx * dim..(idx + 1) * dim].copy_from_slice(&bvec[..dim]);
            }
            shifted_a.push(a);
            drift.push(b);
        }

        let mask_for = |region: &crate::scenario::BoxRegion| -> Vec<f64> {
            (0..len)
                .map(|idx| {
                    if slot[idx] != NO_SLOT && region.contains(&points[idx][..dim]) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let leader_masks = (0..steps)
            .map(|k| mask_for(&scenario.leader_region_at(time.time(k))))
            .collect();
        let follower_masks = (0..scenario.followers())
            .map(|i| {
                (0..steps)
                    .map(|k| mask_for(&scenario.follower_region_at(i, time.time(k))))
                    .collect()
            })
            .collect();
        let margin = scenario.rho_margin() * grid.spacing();
        let rho_sq: Vec<Vec<f64>> = (0..scenario.followers())
            .map(|i| {
                (0..len)
                    .map(|idx| {
                        if slot[idx] == NO_SLOT {
                            0.0
                        } else {
                            scenario.rho(i, &points[idx][..dim], margin).powi(2)
                        }
                    })
                    .collect()
            })
            .collect();
        let rho_sup = (0..scenario.followers())
            .flat_map(|i| (0..len).map(move |idx| (i, idx)))
            .map(|(i, idx)| scenario.rho(i, &points[idx][..dim], margin))
            .fold(0.0, f64::max);
        let target = Field::from_fn_dirichlet(grid, |y| scenario.target(y));
        if !target.is_finite() {
            return Err(Error::OutOfRange(
                "target is not representable on the grid (non-finite after scaling)".into(),
            ));
        }

        let mut model = Self {
            alphas: scenario.alphas().to_vec(),
            scenario,
            space,
            time,
            options,
            interior,
            slot,
            shifted_a,
            drift,
            a_sup,
            b_sup,
            leader_masks,
            follower_masks,
            rho_sq,
            rho_sup,
            target,
            backend: Backend::Krylov { symmetric: false },
            ci_cache: OnceLock::new(),
        };
        model.backend = model.choose_backend()?;
        Ok(model)
    }

    /// Builds the model of a validated scenario file, using its discretization
    /// block or the defaults.
    pub fn from_config(config: &ScenarioConfig) -> Result<Self> {
        let d = config.discretization_or_default();
        d.validate(config.dim)?;
        let physical = PhysicalScenario::from_config(config)?;
        let scenario = to_similarity(&physical)?;
        let grid = Grid::new(config.dim, d.radius, d.n)?;
        let options = SolverOptions {
            linear: KrylovSettings {
                tol: d.linear_tol,
                ..KrylovSettings::default()
            },
            upwind: d.upwind,
            ..SolverOptions::default()
        };
        Self::new(scenario, grid, d.steps, d.theta, options)
    }

    fn choose_backend(&self) -> Result<Backend> {
        if self.space.grid().dim() == 1 {
            return Ok(Backend::Tridiagonal);
        }
        if self.interior.len() <= self.options.direct_limit {
            let mut factors = Vec::with_capacity(self.time.steps());
            for level in 1..=self.time.steps() {
                let p = self.assemble_implicit(level);
                let forward = LU::new(p.clone());
                if forward.determinant().abs() == 0.0 {
                    return Err(Error::Singular {
                        message: format!("implicit matrix at level {level}"),
                        condition: f64::INFINITY,
                    });
                }
                factors.push(DenseFactors {
                    forward,
                    transpose: LU::new(p.transpose()),
                });
            }
            return Ok(Backend::Dense(factors));
        }
        let symmetric = self.drift.iter().all(|b| b.iter().all(|v| *v == 0.0));
        Ok(Backend::Krylov { symmetric })
    }

    pub fn scenario(&self) -> &SimilarityScenario {
        &self.scenario
    }

    pub fn space(&self) -> &WeightedSpace {
        &self.space
    }

    pub fn grid(&self) -> &Grid {
        self.space.grid()
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn followers(&self) -> usize {
        self.follower_masks.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Overrides the follower weights. Zero weights decouple the followers.
    pub fn set_alphas(&mut self, alphas: &[f64]) -> Result<()> {
        if alphas.len() != self.followers() {
            return Err(Error::config(
                "alpha",
                "one weight per follower is required",
            ));
        }
        if let Some(i) = alphas.iter().position(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::config(
                format!("alpha[{i}]"),
                "must be a nonnegative number",
            ));
        }
        self.alphas = alphas.to_vec();
        Ok(())
    }

    /// Sup norms `(A_0, B_0)` sampled over all nodes and levels.
    pub fn potential_bounds(&self) -> (f64, f64) {
        (self.a_sup, self.b_sup)
    }

    pub fn leader_mask(&self, k: usize) -> &[f64] {
        &self.leader_masks[k]
    }

    pub fn leader_masks(&self) -> &[Vec<f64>] {
        &self.leader_masks
    }

    pub fn follower_mask(&self, i: usize, k: usize) -> &[f64] {
        &self.follower_masks[i][k]
    }

    pub fn follower_masks(&self, i: usize) -> &[Vec<f64>] {
        &self.follower_masks[i]
    }

    pub fn rho_sq(&self, i: usize) -> &[f64] {
        &self.rho_sq[i]
    }

    /// `max_i |rho_i|_inf`.
    pub fn rho_sup(&self) -> f64 {
        self.rho_sup
    }

    /// Similarity target `v^S`, zero on the truncation boundary.
    pub fn target(&self) -> &Field {
        &self.target
    }

    pub fn set_target(&mut self, target: Field) -> Result<()> {
        self.grid().ensure_same(target.grid())?;
        let mut target = target;
        target.zero_boundary();
        self.target = target;
        Ok(())
    }

    /// Time-quadrature factor of step `k`: `D_ys` at the step midpoint.
    pub fn d_ys(&self, k: usize) -> f64 {
        jacobian_ys(self.grid().dim(), self.time.midpoint(k))
    }

    pub fn d_y(&self) -> f64 {
        self.scenario.jacobian_y()
    }

    /// Interior quadrature weights of the weighted inner product.
    pub fn weights(&self) -> &[f64] {
        self.space.interior_quadrature()
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.space.dot_raw(u, v)
    }

    /// Inner product `ds sum_k (a_k, b_k)_K` of control series.
    pub fn control_inner(&self, a: &ControlSeries, b: &ControlSeries) -> f64 {
        (0..self.time.steps())
            .map(|k| self.space.dot_raw(a.step(k), b.step(k)))
            .sum::<f64>()
            * self.time.dt()
    }

    pub fn control_norm(&self, a: &ControlSeries) -> f64 {
        self.control_inner(a, a).sqrt()
    }

    pub fn zero_controls(&self) -> ControlSeries {
        ControlSeries::zeros(*self.grid(), self.time.steps())
    }

    /// Entries of row `idx` of `M_k` restricted to interior columns; the
    /// diagonal comes first.
    fn row(&self, k: usize, idx: usize, out: &mut [(usize, f64); 1 + 2 * MAX_DIM]) -> usize {
        let grid = self.space.grid();
        let n = grid.points_per_axis();
        let dim = grid.dim();
        let h = grid.spacing();
        let inv_h2 = 1.0 / (h * h);
        let (cp, cm) = (self.space.coef_plus(), self.space.coef_minus());
        let mi = grid.multi_index(idx);
        let mut diag = self.shifted_a[k][idx];
        let mut count = 1;
        for a in 0..dim {
            let j = mi[a];
            let stride = grid.stride(a);
            let mut up = -cp[j] * inv_h2;
            let mut down = -cm[j] * inv_h2;
            diag += (cp[j] + cm[j]) * inv_h2;
            let b = self.drift[k][idx * dim + a];
            if self.options.upwind {
                if b > 0.0 {
                    diag += b / h;
                    down -= b / h;
                } else {
                    diag -= b / h;
                    up += b / h;
                }
            } else {
                up += b / (2.0 * h);
                down -= b / (2.0 * h);
            }
            if j + 2 < n {
                out[count] = (idx + stride, up);
                count += 1;
            }
            if j > 1 {
                out[count] = (idx - stride, down);
                count += 1;
            }
        }
        out[0] = (idx, diag);
        count
    }

    /// `out = M_k v` on interior nodes, zero on the boundary.
    pub fn apply_m(&self, k: usize, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut row = [(0usize, 0.0f64); 1 + 2 * MAX_DIM];
        for &idx in &self.interior {
            let cnt = self.row(k, idx, &mut row);
            out[idx] = row[..cnt].iter().map(|(j, c)| c * v[*j]).sum();
        }
    }

    /// `out = M_k^* u`, the adjoint in the weighted inner product.
    pub fn apply_m_adjoint(&self, k: usize, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let w = self.weights();
        let mut row = [(0usize, 0.0f64); 1 + 2 * MAX_DIM];
        for &idx in &self.interior {
            let wu = w[idx] * u[idx];
            if wu == 0.0 {
                continue;
            }
            let cnt = self.row(k, idx, &mut row);
            for &(j, c) in &row[..cnt] {
                out[j] += c * wu;
            }
        }
        for &idx in &self.interior {
            out[idx] /= w[idx];
        }
    }

    fn implicit_scale(&self) -> f64 {
        self.time.theta() * self.time.dt()
    }

    fn apply_implicit(&self, level: usize, x: &[f64], out: &mut [f64], adjoint: bool) {
        if adjoint {
            self.apply_m_adjoint(level, x, out);
        } else {
            self.apply_m(level, x, out);
        }
        let c = self.implicit_scale();
        for &idx in &self.interior {
            out[idx] = x[idx] + c * out[idx];
        }
    }

    fn implicit_diagonal_inverse(&self, level: usize) -> Vec<f64> {
        let c = self.implicit_scale();
        let mut row = [(0usize, 0.0f64); 1 + 2 * MAX_DIM];
        let mut d = vec![0.0; self.grid().len()];
        for &idx in &self.interior {
            self.row(level, idx, &mut row);
            d[idx] = 1.0 / (1.0 + c * row[0].1);
        }
        d
    }

    /// Dense `I + theta ds M_level` over interior nodes.
    fn assemble_implicit(&self, level: usize) -> DMatrix<f64> {
        let m = self.interior.len();
        let c = self.implicit_scale();
        let mut mat = DMatrix::zeros(m, m);
        let mut row = [(0usize, 0.0f64); 1 + 2 * MAX_DIM];
        for (p, &idx) in self.interior.iter().enumerate() {
            let cnt = self.row(level, idx, &mut row);
            for &(j, v) in &row[..cnt] {
                mat[(p, self.slot[j])] += c * v;
            }
            mat[(p, p)] += 1.0;
        }
        mat
    }

    /// Tridiagonal bands of the implicit matrix (one-dimensional grids).
    fn implicit_bands(&self, level: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.interior.len();
        let c = self.implicit_scale();
        let (mut sub, mut diag, mut sup) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        let mut row = [(0usize, 0.0f64); 1 + 2 * MAX_DIM];
        for (p, &idx) in self.interior.iter().enumerate() {
            let cnt = self.row(level, idx, &mut row);
            diag[p] = 1.0 + c * row[0].1;
            for &(j, v) in &row[1..cnt] {
                if j > idx {
                    sup[p] = c * v;
                } else {
                    sub[p] = c * v;
                }
            }
        }
        (sub, diag, sup)
    }

    fn krylov_failure(&self, what: &'static str, out: KrylovOutcome) -> Error {
        Error::NotConverged {
            what,
            iterations: out.iterations,
            residual: out.residual,
            history: out.history,
        }
    }

    /// Solves `(I + theta ds M_level) x = rhs`, or its weighted adjoint.
    /// `x` holds the initial guess on entry.
    fn solve_implicit(
        &self,
        level: usize,
        rhs: &[f64],
        x: &mut [f64],
        adjoint: bool,
    ) -> Result<()> {
        let w = self.weights();
        match &self.backend {
            Backend::Tridiagonal => {
                let (sub, diag, sup) = self.implicit_bands(level);
                let m = diag.len();
                let sol = if adjoint {
                    let rhs: Vec<f64> = self.interior.iter().map(|&i| w[i] * rhs[i]).collect();
                    let tsub: Vec<f64> = (0..m)
                        .map(|p| if p > 0 { sup[p - 1] } else { 0.0 })
                        .collect();
                    let tsup: Vec<f64> = (0..m)
                        .map(|p| if p + 1 < m { sub[p + 1] } else { 0.0 })
                        .collect();
                    let mut y = thomas(&tsub, &diag, &tsup, &rhs)?;
                    for (p, &i) in self.interior.iter().enumerate() {
                        y[p] /= w[i];
                    }
                    y
                } else {
                    let rhs: Vec<f64> = self.interior.iter().map(|&i| rhs[i]).collect();
                    thomas(&sub, &diag, &sup, &rhs)?
                };
                x.iter_mut().for_each(|v| *v = 0.0);
                for (p, &i) in self.interior.iter().enumerate() {
                    x[i] = sol[p];
                }
                Ok(())
            }
            Backend::Dense(factors) => {
                let f = &factors[level - 1];
                let sol = if adjoint {
                    let b = DVector::from_iterator(
                        self.interior.len(),
                        self.interior.iter().map(|&i| w[i] * rhs[i]),
                    );
                    let mut y = f.transpose.solve(&b).ok_or_else(|| Error::Singular {
                        message: format!("transposed implicit matrix at level {level}"),
                        condition: f64::INFINITY,
                    })?;
                    for (p, &i) in self.interior.iter().enumerate() {
                        y[p] /= w[i];
                    }
                    y
                } else {
                    let b = DVector::from_iterator(
                        self.interior.len(),
                        self.interior.iter().map(|&i| rhs[i]),
                    );
                    f.forward.solve(&b).ok_or_else(|| Error::Singular {
                        message: format!("implicit matrix at level {level}"),
                        condition: f64::INFINITY,
                    })?
                };
                x.iter_mut().for_each(|v| *v = 0.0);
                for (p, &i) in self.interior.iter().enumerate() {
                    x[i] = sol[p];
                }
                Ok(())
            }
            Backend::Krylov { symmetric } => {
                let precond = self.implicit_diagonal_inverse(level);
                let apply =
                    |v: &[f64], out: &mut [f64]| self.apply_implicit(level, v, out, adjoint);
                let settings = &self.options.linear;
                if *symmetric {
                    let start = x.to_vec();
                    let out = conjugate_gradient(apply, w, Some(&precond), rhs, x, settings);
                    if out.converged {
                        return Ok(());
                    }
                    if !out.breakdown {
                        return Err(self.krylov_failure("implicit step (CG)", out));
                    }
                    x.copy_from_slice(&start);
                }
                let apply =
                    |v: &[f64], out: &mut [f64]| self.apply_implicit(level, v, out, adjoint);
                let out = gmres(apply, w, Some(&precond), rhs, x, settings);
                if out.converged {
                    Ok(())
                } else {
                    Err(self.krylov_failure("implicit step (GMRES)", out))
                }
            }
        }
    }

    /// One forward step from `v = v^k` with source `f_k`.
    pub fn step_forward(
        &self,
        k: usize,
        v: &[f64],
        source: Option<&[f64]>,
        next: &mut [f64],
    ) -> Result<()> {
        let dt = self.time.dt();
        let explicit = (1.0 - self.time.theta()) * dt;
        let mut rhs = vec![0.0; v.len()];
        if explicit > 0.0 {
            self.apply_m(k, v, &mut rhs);
        }
        for &idx in &self.interior {
            let f = source.map_or(0.0, |s| s[idx]);
            rhs[idx] = v[idx] - explicit * rhs[idx] + dt * f;
        }
        next.copy_from_slice(v);
        self.solve_implicit(k + 1, &rhs, next, false)
    }

    /// Transpose of [`Self::step_forward`]: from `lambda^{k+1}` computes
    /// `mu_k = P_{k+1}^{-*} lambda^{k+1}` and `lambda^k = E_k^* mu_k`.
    pub fn step_backward(
        &self,
        k: usize,
        lambda_next: &[f64],
        mu: &mut [f64],
        lambda: &mut [f64],
    ) -> Result<()> {
        mu.copy_from_slice(lambda_next);
        self.solve_implicit(k + 1, lambda_next, mu, true)?;
        let explicit = (1.0 - self.time.theta()) * self.time.dt();
        if explicit > 0.0 {
            self.apply_m_adjoint(k, mu, lambda);
        } else {
            lambda.iter_mut().for_each(|v| *v = 0.0);
        }
        for &idx in &self.interior {
            lambda[idx] = mu[idx] - explicit * lambda[idx];
        }
        Ok(())
    }

    /// Forward solve with a raw (unmasked) source and optional initial state.
    pub fn solve_source(
        &self,
        source: &ControlSeries,
        initial: Option<&Field>,
    ) -> Result<Trajectory> {
        source.ensure_shape(self.grid(), self.time.steps())?;
        let mut v = match initial {
            Some(f) => {
                self.grid().ensure_same(f.grid())?;
                let mut f = f.clone();
                f.zero_boundary();
                f
            }
            None => Field::zeros(*self.grid()),
        };
        let mut states = Vec::with_capacity(self.time.steps() + 1);
        states.push(v.clone());
        for k in 0..self.time.steps() {
            let mut next = Field::zeros(*self.grid());
            self.step_forward(k, v.values(), Some(source.step(k)), next.values_mut())?;
            if !next.is_finite() {
                return Err(Error::OutOfRange(format!(
                    "state became non-finite at step {}",
                    k + 1
                )));
            }
            v = next;
            states.push(v.clone());
        }
        Ok(Trajectory {
            time: self.time,
            states,
        })
    }

    /// Final state `v^m` of a forward solve from zero with the given source.
    pub fn final_state(&self, source: &ControlSeries) -> Result<Vec<f64>> {
        source.ensure_shape(self.grid(), self.time.steps())?;
        let mut v = vec![0.0; self.grid().len()];
        let mut next = v.clone();
        for k in 0..self.time.steps() {
            self.step_forward(k, &v, Some(source.step(k)), &mut next)?;
            std::mem::swap(&mut v, &mut next);
        }
        Ok(v)
    }

    /// Backward sweep from `lambda^level = terminal`.
    pub fn sweep_backward(&self, terminal: &[f64], level: usize) -> Result<BackwardSweep> {
        if terminal.len() != self.grid().len() {
            return Err(Error::GridMismatch(
                "terminal datum has the wrong length".into(),
            ));
        }
        if level > self.time.steps() {
            return Err(Error::OutOfRange(format!(
                "level {level} beyond the time grid"
            )));
        }
        let len = self.grid().len();
        let mut pairing = self.zero_controls();
        let mut states = vec![Vec::new(); level + 1];
        let mut lam: Vec<f64> = terminal.to_vec();
        for (idx, v) in lam.iter_mut().enumerate() {
            if self.slot[idx] == NO_SLOT {
                *v = 0.0;
            }
        }
        let mut mu = vec![0.0; len];
        let mut prev = vec![0.0; len];
        for k in (0..level).rev() {
            self.step_backward(k, &lam, &mut mu, &mut prev)?;
            pairing.step_mut(k).copy_from_slice(&mu);
            states[k + 1] = std::mem::replace(&mut lam, prev.clone());
        }
        states[0] = lam;
        Ok(BackwardSweep { states, pairing })
    }

    /// Masked source `chi_O' g + sum_i chi_O'_i h_i`.
    pub fn compose_source(&self, controls: &ControlBundle) -> Result<ControlSeries> {
        if controls.followers.len() != self.followers() {
            return Err(Error::GridMismatch(format!(
                "expected {} follower controls, got {}",
                self.followers(),
                controls.followers.len()
            )));
        }
        controls
            .leader
            .ensure_shape(self.grid(), self.time.steps())?;
        let mut src = controls.leader.clone();
        src.apply_masks(&self.leader_masks);
        for (i, h) in controls.followers.iter().enumerate() {
            h.ensure_shape(self.grid(), self.time.steps())?;
            let mut part = h.clone();
            part.apply_masks(&self.follower_masks[i]);
            src.axpy(1.0, &part);
        }
        Ok(src)
    }

    pub fn solve_state(&self, controls: &ControlBundle) -> Result<Trajectory> {
        let src = self.compose_source(controls)?;
        self.solve_source(&src, None)
    }

    /// `L_0 g = z(S)`: final state driven by the leader alone.
    pub fn resolvent_l0(&self, g: &ControlSeries) -> Result<Field> {
        g.ensure_shape(self.grid(), self.time.steps())?;
        let mut src = g.clone();
        src.apply_masks(&self.leader_masks);
        Field::from_values(*self.grid(), self.final_state(&src)?)
    }

    /// `L_i h_i = v_i(S)`: final state driven by follower `i` alone.
    pub fn resolvent_li(&self, i: usize, h: &ControlSeries) -> Result<Field> {
        self.check_follower(i)?;
        h.ensure_shape(self.grid(), self.time.steps())?;
        let mut src = h.clone();
        src.apply_masks(&self.follower_masks[i]);
        Field::from_values(*self.grid(), self.final_state(&src)?)
    }

    pub(crate) fn check_follower(&self, i: usize) -> Result<()> {
        if i < self.followers() {
            Ok(())
        } else {
            Err(Error::OutOfRange(format!(
                "follower index {i} out of range ({} followers)",
                self.followers()
            )))
        }
    }

    /// Bound on `|v^k|_{L^2(K)}` accumulated step by step from the estimate
    /// `(M v, v) >= -c |v|^2`, `c = N/2 + A_0 + B_0^2/4`. Returns `None` when
    /// the step is too large for the estimate (`theta c ds >= 1`).
    pub fn energy_bound(&self, initial_norm: f64, source: &ControlSeries) -> Option<Vec<f64>> {
        let c = self.grid().dim() as f64 / 2.0 + self.a_sup + self.b_sup * self.b_sup / 4.0;
        let dt = self.time.dt();
        let theta = self.time.theta();
        let denom = 1.0 - theta * c * dt;
        if denom <= 0.0 {
            return None;
        }
        let gamma = (1.0 + (1.0 - theta) * c * dt) / denom;
        let mut out = Vec::with_capacity(self.time.steps() + 1);
        let mut b = initial_norm;
        out.push(b);
        for k in 0..self.time.steps() {
            let f = self.space.dot_raw(source.step(k), source.step(k)).sqrt();
            b = gamma * b + dt / denom * f;
            out.push(b);
        }
        Some(out)
    }

    fn random_follower_control(&self, i: usize, rng: &mut ChaCha8Rng) -> ControlSeries {
        let mut h = self.zero_controls();
        h.values_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.0..1.0));
        h.apply_masks(&self.follower_masks[i]);
        h
    }

    /// Power iteration maximizing `|T h| / |h|` over controls of follower `i`,
    /// where `T` maps `h` to the final state or to the trajectory.
    /// Returns the largest ratio found over `starts` seeded starts.
    pub fn power_iteration(
        &self,
        i: usize,
        norm: ResolventNorm,
        starts: usize,
        max_iter: usize,
        tol: f64,
    ) -> Result<f64> {
        self.check_follower(i)?;
        let steps = self.time.steps();
        let mut best = 0.0f64;
        for start in 0..starts.max(1) {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + 97 * i as u64 + start as u64);
            let mut h = self.random_follower_control(i, &mut rng);
            let hn = self.control_norm(&h);
            if hn == 0.0 {
                return Ok(0.0);
            }
            h.scale(1.0 / hn);
            let mut value = 0.0f64;
            for _ in 0..max_iter {
                let (level, ratio_sq, terminal) = match norm {
                    ResolventNorm::FinalL2 => {
                        let v = self.final_state(&h)?;
                        (steps, self.inner(&v, &v), v)
                    }
                    ResolventNorm::TrajectoryH1 => {
                        let traj = self.solve_source(&h, None)?;
                        let mut best_k = 0;
                        let mut best_val = -1.0;
                        let mut best_g = Vec::new();
                        let mut lv = vec![0.0; self.grid().len()];
                        for k in 1..=steps {
                            let v = traj.states[k].values();
                            self.space.apply_l_raw(v, &mut lv);
                            let g: Vec<f64> = v.iter().zip(&lv).map(|(a, b)| a + b).collect();
                            let val = self.inner(v, &g);
                            if val > best_val {
                                best_val = val;
                                best_k = k;
                                best_g = g;
                            }
                        }
                        (best_k, best_val, best_g)
                    }
                };
                let ratio = ratio_sq.max(0.0).sqrt();
                let converged = value > 0.0 && (ratio - value).abs() <= tol * ratio;
                value = value.max(ratio);
                if converged || ratio == 0.0 {
                    break;
                }
                let sweep = self.sweep_backward(&terminal, level)?;
                let mut next = sweep.pairing;
                next.apply_masks(&self.follower_masks[i]);
                let nn = self.control_norm(&next);
                if nn == 0.0 {
                    break;
                }
                next.scale(1.0 / nn);
                h = next;
            }
            best = best.max(value);
        }
        Ok(best)
    }

    /// Numerical bound `C_i(S)` on `max_k |v_i^k|_{H^1(K)} / |h_i|`.
    pub fn estimate_ci(&self, i: usize) -> Result<f64> {
        self.power_iteration(i, ResolventNorm::TrajectoryH1, 3, 300, 1e-9)
    }

    /// `C_i(S)` for every follower, computed once per model.
    pub fn resolvent_bounds(&self) -> Result<&[f64]> {
        if let Some(v) = self.ci_cache.get() {
            return Ok(v);
        }
        let values = (0..self.followers())
            .map(|i| self.estimate_ci(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.ci_cache.get_or_init(|| values))
    }

    /// Operator norm of `L_i` from the control space to `L^2(K)`.
    pub fn resolvent_norm(&self, i: usize) -> Result<f64> {
        self.power_iteration(i, ResolventNorm::FinalL2, 2, 5000, 1e-13)
    }
}

/// Solves a tridiagonal system; `sub[0]` and `sup[m-1]` are ignored.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(Error::Singular {
            message: "zero pivot in tridiagonal solve".into(),
            condition: f64::INFINITY,
        });
    }
    c[0] = sup[0] / beta;
    d[0] = rhs[0] / beta;
    for p in 1..m {
        beta = diag[p] - sub[p] * c[p - 1];
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::Singular {
                message: "zero pivot in tridiagonal solve".into(),
                condition: f64::INFINITY,
            });
        }
        c[p] = if p + 1 < m { sup[p] / beta } else { 0.0 };
        d[p] = (rhs[p] - sub[p] * d[p - 1]) / beta;
    }
    for p in (0..m - 1).rev() {
        d[p] -= c[p] * d[p + 1];
    }
    Ok(d)
}
