//! Explicit matrices of the matrix-free operators on tiny instances.
//!
//! Columns are obtained by applying each operator to canonical basis
//! vectors. Degrees of freedom are interior grid nodes for states and
//! `(step, node)` pairs inside the region masks for controls.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::adjoint::LeaderAdjointSettings;
use crate::error::{Error, Result};
use crate::leader::ReducedMap;
use crate::nash::{NashOperator, NashSettings};
use crate::state::{ControlSeries, DiscreteModel};
use crate::weighted::Field;

pub const MAX_NODES: usize = 64;
pub const MAX_STEPS: usize = 8;
pub const MAX_FOLLOWERS: usize = 3;

/// Control degree of freedom: time step and node index.
pub type ControlDof = (usize, usize);

#[derive(Clone, Debug)]
pub struct DenseInstance {
    pub state_dofs: Vec<usize>,
    pub leader_dofs: Vec<ControlDof>,
    pub follower_dofs: Vec<Vec<ControlDof>>,
    /// Weighted inner-product weights of state and control dofs.
    pub state_weights: DVector<f64>,
    pub leader_weights: DVector<f64>,
    pub follower_weights: Vec<DVector<f64>>,
    pub l0: DMatrix<f64>,
    pub li: Vec<DMatrix<f64>>,
    pub li_adjoint: Vec<DMatrix<f64>>,
    /// Nash operator on the stacked follower dofs.
    pub nash: DMatrix<f64>,
    /// Linear part of the reduced leader map.
    pub reduced: DMatrix<f64>,
}

fn control_dofs(masks: &[Vec<f64>]) -> Vec<ControlDof> {
    let mut out = Vec::new();
    for (k, mask) in masks.iter().enumerate() {
        for (idx, m) in mask.iter().enumerate() {
            if *m != 0.0 {
                out.push((k, idx));
            }
        }
    }
    out
}

fn unit_control(model: &DiscreteModel, dof: ControlDof) -> ControlSeries {
    let mut c = model.zero_controls();
    c.step_mut(dof.0)[dof.1] = 1.0;
    c
}

fn gather(c: &ControlSeries, dofs: &[ControlDof]) -> DVector<f64> {
    DVector::from_iterator(dofs.len(), dofs.iter().map(|&(k, idx)| c.step(k)[idx]))
}

fn scatter(model: &DiscreteModel, x: &[f64], dofs: &[ControlDof]) -> ControlSeries {
    let mut c = model.zero_controls();
    for (v, &(k, idx)) in x.iter().zip(dofs) {
        c.step_mut(k)[idx] = *v;
    }
    c
}

impl DenseInstance {
    pub fn follower_offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for d in &self.follower_dofs {
            off.push(off.last().unwrap() + d.len());
        }
        off
    }

    /// Stacked follower weights.
    pub fn nash_weights(&self) -> DVector<f64> {
        let all: Vec<f64> = self
            .follower_weights
            .iter()
            .flat_map(|w| w.iter().copied())
            .collect();
        DVector::from_vec(all)
    }

    /// Gathers a follower bundle into the stacked dof vector.
    pub fn stack(&self, h: &[ControlSeries]) -> DVector<f64> {
        let all: Vec<f64> = h
            .iter()
            .zip(&self.follower_dofs)
            .flat_map(|(hi, dofs)| gather(hi, dofs).iter().copied().collect::<Vec<_>>())
            .collect();
        DVector::from_vec(all)
    }

    pub fn unstack(&self, model: &DiscreteModel, x: &DVector<f64>) -> Vec<ControlSeries> {
        let off = self.follower_offsets();
        self.follower_dofs
            .iter()
            .enumerate()
            .map(|(i, dofs)| scatter(model, &x.as_slice()[off[i]..off[i + 1]], dofs))
            .collect()
    }

    pub fn gather_leader(&self, g: &ControlSeries) -> DVector<f64> {
        gather(g, &self.leader_dofs)
    }

    /// `max |L_i^* - W_c^{-1} L_i^T W_s|` relative to `max |L_i^*|`.
    pub fn transpose_defect(&self, i: usize) -> f64 {
        let li = &self.li[i];
        let adj = &self.li_adjoint[i];
        let wc = &self.follower_weights[i];
        let mut worst = 0.0f64;
        let scale = adj.amax().max(f64::MIN_POSITIVE);
        for c in 0..adj.nrows() {
            for j in 0..adj.ncols() {
                let expected = li[(j, c)] * self.state_weights[j] / wc[c];
                worst = worst.max((adj[(c, j)] - expected).abs());
            }
        }
        worst / scale
    }

    /// Asymmetry of the Nash operator in the weighted product,
    /// `|W A - (W A)^T| / |W A|`.
    pub fn nash_symmetry_defect(&self) -> f64 {
        let w = self.nash_weights();
        let wa = DMatrix::from_diagonal(&w) * &self.nash;
        (&wa - wa.transpose()).amax() / wa.amax().max(f64::MIN_POSITIVE)
    }

    /// Eigenvalues of the symmetric part of `W^{1/2} A W^{-1/2}`, ascending.
    pub fn symmetrized_nash_spectrum(&self) -> Vec<f64> {
        let w = self.nash_weights();
        let s = w.map(f64::sqrt);
        let n = self.nash.nrows();
        let b = DMatrix::from_fn(n, n, |r, c| s[r] * self.nash[(r, c)] / s[c]);
        let sym = (&b + b.transpose()) * 0.5;
        let mut ev: Vec<f64> = SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// Right-hand side `xi` assembled from the dense blocks.
    pub fn dense_rhs(&self, model: &DiscreteModel, g: &ControlSeries) -> DVector<f64> {
        let z = &self.l0 * self.gather_leader(g);
        let target = DVector::from_iterator(
            self.state_dofs.len(),
            self.state_dofs.iter().map(|&j| model.target().values()[j]),
        );
        let eta = target - z;
        let mut parts = Vec::new();
        for i in 0..self.li.len() {
            let weighted = DVector::from_iterator(
                eta.len(),
                eta.iter()
                    .zip(&self.state_dofs)
                    .map(|(e, &j)| model.alphas()[i] * model.d_y() * model.rho_sq(i)[j] * e),
            );
            parts.extend((&self.li_adjoint[i] * weighted).iter().copied());
        }
        DVector::from_vec(parts)
    }
}

/// Assembles every operator of a tiny instance.
pub fn assemble_dense(model: &DiscreteModel) -> Result<DenseInstance> {
    let grid = model.grid();
    if grid.len() > MAX_NODES
        || model.time().steps() > MAX_STEPS
        || model.followers() > MAX_FOLLOWERS
    {
        return Err(Error::TooLarge(format!(
            "dense assembly needs at most {MAX_NODES} nodes, {MAX_STEPS} steps and {MAX_FOLLOWERS} followers; got {}, {}, {}",
            grid.len(),
            model.time().steps(),
            model.followers()
        )));
    }
    let state_dofs = grid.interior_indices();
    let leader_dofs = control_dofs(model.leader_masks());
    let follower_dofs: Vec<Vec<ControlDof>> = (0..model.followers())
        .map(|i| control_dofs(model.follower_masks(i)))
        .collect();
    let w = model.weights();
    let dt = model.time().dt();
    let state_weights = DVector::from_iterator(state_dofs.len(), state_dofs.iter().map(|&j| w[j]));
    let cw = |dofs: &[ControlDof]| {
        DVector::from_iterator(dofs.len(), dofs.iter().map(|&(_, j)| dt * w[j]))
    };
    let leader_weights = cw(&leader_dofs);
    let follower_weights: Vec<DVector<f64>> = follower_dofs.iter().map(|d| cw(d)).collect();

    let state_column = |f: &Field| {
        DVector::from_iterator(state_dofs.len(), state_dofs.iter().map(|&j| f.values()[j]))
    };

    let mut l0 = DMatrix::zeros(state_dofs.len(), leader_dofs.len());
    for (c, &dof) in leader_dofs.iter().enumerate() {
        l0.set_column(
            c,
            &state_column(&model.resolvent_l0(&unit_control(model, dof))?),
        );
    }
    let mut li = Vec::new();
    let mut li_adjoint = Vec::new();
    for (i, dofs) in follower_dofs.iter().enumerate() {
        let mut m = DMatrix::zeros(state_dofs.len(), dofs.len());
        for (c, &dof) in dofs.iter().enumerate() {
            m.set_column(
                c,
                &state_column(&model.resolvent_li(i, &unit_control(model, dof))?),
            );
        }
        li.push(m);
        let mut a = DMatrix::zeros(dofs.len(), state_dofs.len());
        for (c, &j) in state_dofs.iter().enumerate() {
            let mut e = Field::zeros(*grid);
            e.values_mut()[j] = 1.0;
            a.set_column(c, &gather(&model.adjoint_of_li(i, &e)?, dofs));
        }
        li_adjoint.push(a);
    }

    let op = NashOperator::new(model);
    let total: usize = follower_dofs.iter().map(Vec::len).sum();
    let mut nash = DMatrix::zeros(total, total);
    let mut col = 0;
    for (i, dofs) in follower_dofs.iter().enumerate() {
        for &dof in dofs {
            let mut h = op.zeros();
            h[i] = unit_control(model, dof);
            let out = op.apply(&h)?;
            let mut row = 0;
            for (j, dj) in follower_dofs.iter().enumerate() {
                for (r, v) in gather(&out[j], dj).iter().enumerate() {
                    nash[(row + r, col)] = *v;
                }
                row += dj.len();
            }
            col += 1;
        }
    }

    let map = ReducedMap::new(
        model,
        NashSettings {
            tol: 1e-14,
            ..NashSettings::default()
        },
        LeaderAdjointSettings::default(),
    );
    let mut reduced = DMatrix::zeros(state_dofs.len(), leader_dofs.len());
    for (c, &dof) in leader_dofs.iter().enumerate() {
        reduced.set_column(
            c,
            &state_column(&map.apply_linear(&unit_control(model, dof))?),
        );
    }

    Ok(DenseInstance {
        state_dofs,
        leader_dofs,
        follower_dofs,
        state_weights,
        leader_weights,
        follower_weights,
        l0,
        li,
        li_adjoint,
        nash,
        reduced,
    })
}

/// Direct solution of the stacked Euler-Lagrange system for leader `g`.
pub fn brute_force_nash(
    dense: &DenseInstance,
    model: &DiscreteModel,
    g: &ControlSeries,
) -> Result<Vec<ControlSeries>> {
    if dense.nash.nrows() == 0 {
        return Ok(Vec::new());
    }
    let sv = dense.nash.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if condition.is_nan() || condition >= 1e14 {
        return Err(Error::Singular {
            message: "stacked Nash system".into(),
            condition,
        });
    }
    let rhs = dense.dense_rhs(model, g);
    let x = dense
        .nash
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular {
            message: "stacked Nash system".into(),
            condition,
        })?;
    Ok(dense.unstack(model, &x))
}
