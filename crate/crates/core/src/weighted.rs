//! Truncated tensor grids, the Gaussian weight `K(y) = exp(|y|^2/4)` and the
//! discrete operator `L v = -(1/K) div(K grad v)` in divergence form.
//!
//! The grid covers `[-R, R]^N` with `n` nodes per axis. Boundary nodes carry
//! Dirichlet data; every solution-space field vanishes there. `L` reads
//! boundary values as Dirichlet data and writes zero on the boundary, so for
//! fields in the solution space it is the homogeneous Dirichlet operator.
//!
//! `K` is evaluated at cell faces (half-nodes). With interior quadrature
//! weights `dy^N K_j` the stencil is exactly symmetric in the weighted inner
//! product and `(Lu, u)_K` equals the face-sum discrete gradient energy.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 2;

/// Largest grid (counting all `n^N` nodes) assembled as a dense matrix.
pub const DENSE_THRESHOLD: usize = 4096;
/// Largest one-axis stencil handed to the dense eigensolver.
pub const AXIS_THRESHOLD: usize = 2049;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    radius: f64,
    n: usize,
}

impl Grid {
    pub fn new(dim: usize, radius: f64, n: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::config("dim", format!("expected 1 or 2, got {dim}")));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::config(
                "R",
                format!("radius must be positive, got {radius}"),
            ));
        }
        if n < 3 {
            return Err(Error::config(
                "n",
                format!("need at least 3 points per axis, got {n}"),
            ));
        }
        if n.checked_pow(dim as u32).is_none_or(|len| len > 1 << 26) {
            return Err(Error::config("n", "grid is too large"));
        }
        Ok(Self { dim, radius, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.radius / (self.n - 1) as f64
    }

    /// Total number of nodes, `n^N`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of node `j` along any axis.
    pub fn coord(&self, j: usize) -> f64 {
        // Symmetric evaluation so that coord(j) == -coord(n-1-j) exactly.
        let half = (self.n - 1) as f64 / 2.0;
        (j as f64 - half) * self.spacing()
    }

    pub fn axis_coords(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.coord(j)).collect()
    }

    /// Stride of `axis` in the row-major flat layout (axis 0 slowest).
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    pub fn multi_index(&self, idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        let mut rem = idx;
        for axis in (0..self.dim).rev() {
            out[axis] = rem % self.n;
            rem /= self.n;
        }
        out
    }

    pub fn point(&self, idx: usize) -> [f64; MAX_DIM] {
        let mi = self.multi_index(idx);
        let mut p = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            p[axis] = self.coord(mi[axis]);
        }
        p
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        let mi = self.multi_index(idx);
        (0..self.dim).all(|a| mi[a] > 0 && mi[a] < self.n - 1)
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_interior(i)).collect()
    }

    /// Index of the node reflected through the origin.
    pub fn reflect(&self, idx: usize) -> usize {
        let mi = self.multi_index(idx);
        (0..self.dim).fold(0, |acc, a| acc * self.n + (self.n - 1 - mi[a]))
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// A grid function. Values are stored for every node, boundary included.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at every node, boundary included.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                f(&p[..grid.dim()])
            })
            .collect();
        Self { grid, values }
    }

    /// Samples `f` at interior nodes and sets the boundary to zero.
    pub fn from_fn_dirichlet(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut field = Self::from_fn(grid, f);
        field.zero_boundary();
        field
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn zero_boundary(&mut self) {
        for i in 0..self.grid.len() {
            if !self.grid.is_interior(i) {
                self.values[i] = 0.0;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn axpy(&mut self, a: f64, x: &Field) -> Result<()> {
        self.grid.ensure_same(&x.grid)?;
        for (y, x) in self.values.iter_mut().zip(&x.values) {
            *y += a * x;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with columns `y,value` in 1D and `y0,y1,value` in 2D.
    pub fn to_csv(&self) -> Result<String> {
        let dim = self.grid.dim();
        let mut out = if dim == 1 {
            String::from("y,value\n")
        } else {
            let cols: Vec<String> = (0..dim).map(|a| format!("y{a}")).collect();
            format!("{},value\n", cols.join(","))
        };
        for (j, v) in self.values.iter().enumerate() {
            for y in &self.grid.point(j)[..dim] {
                out.push_str(&format!("{y:.17e},"));
            }
            out.push_str(&format!("{v:.17e}\n"));
        }
        Ok(out)
    }
}

/// Gaussian weight sampled at nodes and half-nodes.
#[derive(Clone, Debug)]
pub struct WeightK {
    /// `K` at every node of the tensor grid.
    pub node: Vec<f64>,
    /// One-axis factor `exp(y_j^2/4)`.
    pub axis_node: Vec<f64>,
    /// One-axis factor at the face between nodes `j` and `j+1`.
    pub axis_half: Vec<f64>,
}

impl WeightK {
    pub fn new(grid: &Grid) -> Self {
        let axis_node: Vec<f64> = grid
            .axis_coords()
            .iter()
            .map(|y| (y * y / 4.0).exp())
            .collect();
        let axis_half: Vec<f64> = (0..grid.points_per_axis() - 1)
            .map(|j| {
                let ym = 0.5 * (grid.coord(j) + grid.coord(j + 1));
                (ym * ym / 4.0).exp()
            })
            .collect();
        let node = (0..grid.len())
            .map(|i| {
                let mi = grid.multi_index(i);
                (0..grid.dim()).map(|a| axis_node[mi[a]]).product()
            })
            .collect();
        Self {
            node,
            axis_node,
            axis_half,
        }
    }
}

/// A grid together with its weight, quadrature and stencil coefficients.
#[derive(Clone, Debug)]
pub struct WeightedSpace {
    grid: Grid,
    weight: WeightK,
    /// Trapezoidal weight times `K`.
    quad: Vec<f64>,
    /// Same as `quad` on interior nodes, zero on the boundary.
    interior_quad: Vec<f64>,
    /// `K_{j+1/2} / K_j` per axis.
    coef_plus: Vec<f64>,
    /// `K_{j-1/2} / K_j` per axis.
    coef_minus: Vec<f64>,
}

impl WeightedSpace {
    pub fn new(grid: Grid) -> Self {
        let weight = WeightK::new(&grid);
        let n = grid.points_per_axis();
        let dy = grid.spacing();
        let cell = dy.powi(grid.dim() as i32);
        let quad: Vec<f64> = (0..grid.len())
            .map(|i| {
                let mi = grid.multi_index(i);
                let trap: f64 = (0..grid.dim())
                    .map(|a| {
                        if mi[a] == 0 || mi[a] == n - 1 {
                            0.5
                        } else {
                            1.0
                        }
                    })
                    .product();
                cell * trap * weight.node[i]
            })
            .collect();
        let interior_quad = (0..grid.len())
            .map(|i| if grid.is_interior(i) { quad[i] } else { 0.0 })
            .collect();
        let mut coef_plus = vec![0.0; n];
        let mut coef_minus = vec![0.0; n];
        for j in 1..n - 1 {
            coef_plus[j] = weight.axis_half[j] / weight.axis_node[j];
            coef_minus[j] = weight.axis_half[j - 1] / weight.axis_node[j];
        }
        Self {
            grid,
            weight,
            quad,
            interior_quad,
            coef_plus,
            coef_minus,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weight(&self) -> &WeightK {
        &self.weight
    }

    /// Quadrature weights of the weighted inner product (trapezoid times `K`).
    pub fn quadrature(&self) -> &[f64] {
        &self.quad
    }

    /// Quadrature weights restricted to interior nodes.
    pub fn interior_quadrature(&self) -> &[f64] {
        &self.interior_quad
    }

    pub(crate) fn coef_plus(&self) -> &[f64] {
        &self.coef_plus
    }

    pub(crate) fn coef_minus(&self) -> &[f64] {
        &self.coef_minus
    }

    pub fn zeros(&self) -> Field {
        Field::zeros(self.grid)
    }

    pub fn dot_raw(&self, u: &[f64], v: &[f64]) -> f64 {
        weighted_dot(&self.quad, u, v)
    }

    pub fn inner(&self, u: &Field, v: &Field) -> Result<f64> {
        self.grid.ensure_same(&u.grid)?;
        self.grid.ensure_same(&v.grid)?;
        Ok(self.dot_raw(&u.values, &v.values))
    }

    pub fn norm(&self, u: &Field) -> Result<f64> {
        Ok(self.inner(u, u)?.sqrt())
    }

    /// Applies the divergence-form stencil. Boundary entries of `v` act as
    /// Dirichlet data; `out` is zero on the boundary.
    pub fn apply_l_raw(&self, v: &[f64], out: &mut [f64]) {
        let n = self.grid.points_per_axis();
        let inv_h2 = 1.0 / (self.grid.spacing() * self.grid.spacing());
        let (cp, cm) = (&self.coef_plus, &self.coef_minus);
        out.iter_mut().for_each(|o| *o = 0.0);
        match self.grid.dim() {
            1 => {
                for j in 1..n - 1 {
                    out[j] = -(cp[j] * (v[j + 1] - v[j]) - cm[j] * (v[j] - v[j - 1])) * inv_h2;
                }
            }
            2 => {
                for i0 in 1..n - 1 {
                    for i1 in 1..n - 1 {
                        let j = i0 * n + i1;
                        let c = v[j];
                        let ax0 = cp[i0] * (v[j + n] - c) - cm[i0] * (c - v[j - n]);
                        let ax1 = cp[i1] * (v[j + 1] - c) - cm[i1] * (c - v[j - 1]);
                        out[j] = -(ax0 + ax1) * inv_h2;
                    }
                }
            }
            _ => unreachable!("grid dimension is validated at construction"),
        }
    }

    /// Diagonal of the stencil at node `idx` (zero on the boundary).
    pub fn l_diagonal(&self, idx: usize) -> f64 {
        if !self.grid.is_interior(idx) {
            return 0.0;
        }
        let mi = self.grid.multi_index(idx);
        let inv_h2 = 1.0 / (self.grid.spacing() * self.grid.spacing());
        (0..self.grid.dim())
            .map(|a| (self.coef_plus[mi[a]] + self.coef_minus[mi[a]]) * inv_h2)
            .sum()
    }

    pub fn apply_l(&self, v: &Field) -> Result<Field> {
        self.grid.ensure_same(&v.grid)?;
        let mut out = self.zeros();
        self.apply_l_raw(&v.values, &mut out.values);
        Ok(out)
    }

    /// Discrete `int |grad u|^2 K dy`: forward differences on faces, `K` at
    /// the face midpoint, trapezoid weights across the other axes.
    pub fn gradient_energy(&self, u: &Field) -> Result<f64> {
        self.grid.ensure_same(&u.grid)?;
        let n = self.grid.points_per_axis();
        let dim = self.grid.dim();
        let dy = self.grid.spacing();
        let scale = dy.powi(dim as i32 - 2);
        let w = &self.weight;
        let mut total = 0.0;
        for idx in 0..self.grid.len() {
            let mi = self.grid.multi_index(idx);
            for axis in 0..dim {
                if mi[axis] + 1 >= n {
                    continue;
                }
                let mut kf = w.axis_half[mi[axis]];
                for other in (0..dim).filter(|&b| b != axis) {
                    let edge = mi[other] == 0 || mi[other] == n - 1;
                    kf *= w.axis_node[mi[other]] * if edge { 0.5 } else { 1.0 };
                }
                let d = u.values[idx + self.grid.stride(axis)] - u.values[idx];
                total += kf * d * d;
            }
        }
        Ok(total * scale)
    }

    /// Squared `H^1(K)` norm `|u|^2 + |grad u|^2`.
    pub fn h1_norm_sq(&self, u: &Field) -> Result<f64> {
        Ok(self.inner(u, u)? + self.gradient_energy(u)?)
    }

    /// Returns `((N/2) |u|^2_{L^2(K)}, |grad u|^2_{L^2(K)})`.
    pub fn check_poincare(&self, u: &Field) -> Result<(f64, f64)> {
        let lhs = 0.5 * self.grid.dim() as f64 * self.inner(u, u)?;
        let rhs = self.gradient_energy(u)?;
        Ok((lhs, rhs))
    }

    /// The ground state `exp(-|y|^2/4)` sampled at every node.
    pub fn phi1(&self) -> Field {
        Field::from_fn(self.grid, |y| {
            (-y.iter().map(|c| c * c).sum::<f64>() / 4.0).exp()
        })
    }

    /// One-axis stencil symmetrized by `K^{1/2}`, over interior nodes.
    fn axis_symmetric_matrix(&self) -> DMatrix<f64> {
        let n = self.grid.points_per_axis();
        let m = n - 2;
        let inv_h2 = 1.0 / (self.grid.spacing() * self.grid.spacing());
        let w = &self.weight;
        DMatrix::from_fn(m, m, |r, c| {
            let (jr, jc) = (r + 1, c + 1);
            if r == c {
                (self.coef_plus[jr] + self.coef_minus[jr]) * inv_h2
            } else if jc == jr + 1 {
                -w.axis_half[jr] / (w.axis_node[jr] * w.axis_node[jc]).sqrt() * inv_h2
            } else if jr == jc + 1 {
                -w.axis_half[jc] / (w.axis_node[jr] * w.axis_node[jc]).sqrt() * inv_h2
            } else {
                0.0
            }
        })
    }

    /// `K^{1/2} L K^{-1/2}` assembled densely over all interior nodes.
    pub fn dense_symmetrized_operator(&self) -> Result<DMatrix<f64>> {
        if self.grid.len() > DENSE_THRESHOLD {
            return Err(Error::TooLarge(format!(
                "{} nodes exceeds the dense threshold {DENSE_THRESHOLD}",
                self.grid.len()
            )));
        }
        let interior = self.grid.interior_indices();
        let mut mat = DMatrix::zeros(interior.len(), interior.len());
        let mut e = vec![0.0; self.grid.len()];
        let mut out = vec![0.0; self.grid.len()];
        for (c, &ic) in interior.iter().enumerate() {
            e[ic] = 1.0;
            self.apply_l_raw(&e, &mut out);
            e[ic] = 0.0;
            for (r, &ir) in interior.iter().enumerate() {
                let kr = self.weight.node[ir].sqrt();
                let kc = self.weight.node[ic].sqrt();
                mat[(r, c)] = kr * out[ir] / kc;
            }
        }
        Ok(mat)
    }

    /// The `k` smallest eigenvalues of the discrete operator, ascending.
    ///
    /// The weight factorizes across axes, so the stencil is a Kronecker sum of
    /// one-axis stencils and its spectrum is the set of sums of one-axis
    /// eigenvalues. Each one-axis stencil is solved densely.
    pub fn spectral_probe(&self, k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > 20 {
            return Err(Error::OutOfRange(format!(
                "spectral probe needs 1 <= k <= 20, got {k}"
            )));
        }
        if self.grid.points_per_axis() > AXIS_THRESHOLD {
            return Err(Error::TooLarge(format!(
                "{} points per axis exceeds {AXIS_THRESHOLD}",
                self.grid.points_per_axis()
            )));
        }
        let mut axis = SymmetricEigen::new(self.axis_symmetric_matrix())
            .eigenvalues
            .iter()
            .copied()
            .collect::<Vec<_>>();
        axis.sort_by(|a, b| a.total_cmp(b));
        let mut all = match self.grid.dim() {
            1 => axis,
            2 => {
                let take = axis.len().min(k);
                let mut sums = Vec::with_capacity(take * take);
                for a in &axis[..take] {
                    for b in &axis[..take] {
                        sums.push(a + b);
                    }
                }
                sums.sort_by(|a, b| a.total_cmp(b));
                sums
            }
            _ => unreachable!(),
        };
        all.truncate(k);
        Ok(all)
    }
}

pub(crate) fn weighted_dot(w: &[f64], u: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(u).zip(v).map(|((w, a), b)| w * a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dirichlet(space: &WeightedSpace, rng: &mut ChaCha8Rng) -> Field {
        let grid = *space.grid();
        let bumps: Vec<(f64, [f64; 2], f64)> = (0..3)
            .map(|_| {
                let r = grid.radius() / 2.0;
                (
                    rng.gen_range(-1.0..1.0),
                    [rng.gen_range(-r..r), rng.gen_range(-r..r)],
                    rng.gen_range(0.5..2.0),
                )
            })
            .collect();
        Field::from_fn_dirichlet(grid, |y| {
            bumps
                .iter()
                .map(|(a, c, w)| {
                    let d2: f64 = y.iter().zip(c).map(|(y, c)| (y - c) * (y - c)).sum();
                    a * (-d2 / (w * w)).exp()
                })
                .sum()
        })
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(3, 1.0, 9).is_err());
        assert!(Grid::new(1, 0.0, 9).is_err());
        assert!(Grid::new(1, 1.0, 2).is_err());
        let g = Grid::new(2, 4.0, 5).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g.coord(0), -4.0);
        assert_eq!(g.coord(4), 4.0);
        assert_eq!(g.coord(2), 0.0);
        assert_eq!(g.reflect(g.reflect(7)), 7);
    }

    #[test]
    fn inner_of_zero_is_zero() {
        let space = WeightedSpace::new(Grid::new(1, 8.0, 33).unwrap());
        let z = space.zeros();
        assert_eq!(space.inner(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_mass_matches_closed_form() {
        // int phi1^2 K dy = int exp(-y^2/4) dy = 2 sqrt(pi)
        let space = WeightedSpace::new(Grid::new(1, 8.0, 257).unwrap());
        let phi = space.phi1();
        let mass = space.inner(&phi, &phi).unwrap();
        assert!(
            (mass - 2.0 * std::f64::consts::PI.sqrt()).abs() < 1e-6,
            "{mass}"
        );
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let a = WeightedSpace::new(Grid::new(1, 8.0, 33).unwrap());
        let other = Field::zeros(Grid::new(1, 8.0, 35).unwrap());
        assert!(matches!(
            a.inner(&a.zeros(), &other),
            Err(Error::GridMismatch(_))
        ));
        assert!(a.apply_l(&other).is_err());
    }

    #[test]
    fn stencil_is_self_adjoint_and_matches_gradient_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for grid in [
            Grid::new(1, 8.0, 65).unwrap(),
            Grid::new(2, 6.0, 21).unwrap(),
        ] {
            let space = WeightedSpace::new(grid);
            for _ in 0..5 {
                let u = random_dirichlet(&space, &mut rng);
                let v = random_dirichlet(&space, &mut rng);
                let lu = space.apply_l(&u).unwrap();
                let lv = space.apply_l(&v).unwrap();
                let a = space.inner(&lu, &v).unwrap();
                let b = space.inner(&u, &lv).unwrap();
                let scale = space.norm(&lu).unwrap() * space.norm(&v).unwrap();
                assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
                let energy = space.gradient_energy(&u).unwrap();
                let luu = space.inner(&lu, &u).unwrap();
                assert!((energy - luu).abs() <= 1e-12 * energy.abs().max(1e-300));
                assert!(luu > 0.0);
            }
        }
    }

    #[test]
    fn phi1_is_approximately_an_eigenfunction() {
        let space = WeightedSpace::new(Grid::new(1, 8.0, 257).unwrap());
        let phi = space.phi1();
        let lphi = space.apply_l(&phi).unwrap();
        let mut res = lphi.clone();
        let mut half = phi.clone();
        half.zero_boundary();
        res.axpy(-0.5, &half).unwrap();
        let rel = space.norm(&res).unwrap() / space.norm(&phi).unwrap();
        assert!(rel < 1e-3, "{rel}");
        assert_eq!(space.apply_l(&space.zeros()).unwrap(), space.zeros());
    }

    #[test]
    fn kronecker_spectrum_matches_full_dense_solve() {
        let space = WeightedSpace::new(Grid::new(2, 5.0, 17).unwrap());
        let probe = space.spectral_probe(8).unwrap();
        let dense = space.dense_symmetrized_operator().unwrap();
        let sym = (&dense + dense.transpose()) * 0.5;
        assert!((&dense - &sym).norm() < 1e-10 * dense.norm());
        let mut full: Vec<f64> = SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        full.sort_by(|a, b| a.total_cmp(b));
        for (a, b) in probe.iter().zip(&full) {
            assert!((a - b).abs() < 1e-9 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn spectral_probe_limits() {
        let space = WeightedSpace::new(Grid::new(2, 8.0, 65).unwrap());
        assert!(matches!(
            space.spectral_probe(21),
            Err(Error::OutOfRange(_))
        ));
        assert!(WeightedSpace::new(Grid::new(2, 8.0, 129).unwrap())
            .spectral_probe(3)
            .is_ok());
        let big = WeightedSpace::new(Grid::new(1, 8.0, AXIS_THRESHOLD + 2).unwrap());
        assert!(matches!(big.spectral_probe(3), Err(Error::TooLarge(_))));
    }

    #[test]
    fn hermite_spacing_of_one_dimensional_spectrum() {
        let space = WeightedSpace::new(Grid::new(1, 8.0, 257).unwrap());
        let ev = space.spectral_probe(5).unwrap();
        assert!((ev[0] - 0.5).abs() < 1e-3);
        for w in ev.windows(2).take(3) {
            assert!((w[1] - w[0] - 0.5).abs() < 1e-3, "{:?}", ev);
        }
    }

    #[test]
    fn weight_is_symmetric() {
        let grid = Grid::new(2, 3.0, 9).unwrap();
        let w = WeightK::new(&grid);
        for i in 0..grid.len() {
            assert_eq!(w.node[i], w.node[grid.reflect(i)]);
            assert!(w.node[i] >= 1.0);
        }
    }
}
