//! Weighted Poincaré, moment and L¹ embedding checks on random smooth fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::weighted::{Field, Grid, WeightedSpace};

/// Relative slack allowed on the Poincaré inequality.
pub const POINCARE_SLACK: f64 = 1e-12;

/// Sum of at most five Gaussian bumps with centers in `[-R/2, R/2]` and
/// widths in `[0.5, 2]`, zeroed on the truncation boundary.
pub fn random_smooth_field(grid: &Grid, rng: &mut impl Rng) -> Field {
    let count = rng.gen_range(1..=5);
    let half = grid.radius() / 2.0;
    let dim = grid.dim();
    let bumps: Vec<(f64, Vec<f64>, f64)> = (0..count)
        .map(|_| {
            let amp = rng.gen_range(-1.0..1.0);
            let center = (0..dim).map(|_| rng.gen_range(-half..=half)).collect();
            let width = rng.gen_range(0.5..=2.0);
            (amp, center, width)
        })
        .collect();
    Field::from_fn_dirichlet(*grid, |y| {
        bumps
            .iter()
            .map(|(a, c, w)| {
                let r2: f64 = y.iter().zip(c).map(|(p, q)| (p - q) * (p - q)).sum();
                a * (-r2 / (w * w)).exp()
            })
            .sum()
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityReport {
    pub dim: usize,
    pub radius: f64,
    pub n: usize,
    pub trials: usize,
    pub poincare_violations: usize,
    /// Largest `(N/2)|f|^2 / |grad f|^2` seen over the random fields.
    pub poincare_worst_ratio: f64,
    /// `|1 - ratio|` for the ground state.
    pub ground_state_gap: f64,
    /// Estimated constant of `int f^2 |y|^2 K <= c int |grad f|^2 K`.
    pub moment_constant: f64,
    pub l1_violations: usize,
    /// `(int 1/K)^{1/2}` by quadrature.
    pub l1_constant: f64,
    /// `(2 sqrt(pi))^{N/2}`.
    pub l1_constant_exact: f64,
}

impl InequalityReport {
    pub fn passed(&self) -> bool {
        self.poincare_violations == 0 && self.l1_violations == 0 && self.moment_constant.is_finite()
    }
}

/// Quadrature of `int f^2 |y|^2 K`.
pub fn moment_integral(space: &WeightedSpace, f: &Field) -> f64 {
    let grid = space.grid();
    let w = space.quadrature();
    (0..grid.len())
        .map(|j| {
            let p = grid.point(j);
            let r2: f64 = p[..grid.dim()].iter().map(|c| c * c).sum();
            w[j] * r2 * f.values()[j] * f.values()[j]
        })
        .sum()
}

/// Trapezoid cell volumes without the weight.
fn plain_quadrature(space: &WeightedSpace) -> Vec<f64> {
    space
        .quadrature()
        .iter()
        .zip(&space.weight().node)
        .map(|(q, k)| q / k)
        .collect()
}

/// `(int 1/K dy)^{1/2}` over the truncated box.
pub fn l1_embedding_constant(space: &WeightedSpace) -> f64 {
    plain_quadrature(space)
        .iter()
        .zip(&space.weight().node)
        .map(|(q, k)| q / k)
        .sum::<f64>()
        .sqrt()
}

/// `(int_{R^N} exp(-|y|^2/4))^{1/2} = (2 sqrt(pi))^{N/2}`.
pub fn l1_embedding_constant_exact(dim: usize) -> f64 {
    (2.0 * std::f64::consts::PI.sqrt()).powf(dim as f64 / 2.0)
}

/// Runs every inequality on `trials` random fields.
pub fn run_inequality_suite(grid: &Grid, trials: usize, seed: u64) -> Result<InequalityReport> {
    let space = WeightedSpace::new(*grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plain = plain_quadrature(&space);
    let l1_constant = l1_embedding_constant(&space);
    let mut report = InequalityReport {
        dim: grid.dim(),
        radius: grid.radius(),
        n: grid.points_per_axis(),
        trials,
        poincare_violations: 0,
        poincare_worst_ratio: 0.0,
        ground_state_gap: 0.0,
        moment_constant: 0.0,
        l1_violations: 0,
        l1_constant,
        l1_constant_exact: l1_embedding_constant_exact(grid.dim()),
    };
    for _ in 0..trials {
        let f = random_smooth_field(grid, &mut rng);
        let (lhs, rhs) = space.check_poincare(&f)?;
        if lhs > rhs * (1.0 + POINCARE_SLACK) {
            report.poincare_violations += 1;
        }
        if rhs > 0.0 {
            report.poincare_worst_ratio = report.poincare_worst_ratio.max(lhs / rhs);
            report.moment_constant = report
                .moment_constant
                .max(moment_integral(&space, &f) / rhs);
        }
        let l1: f64 = plain.iter().zip(f.values()).map(|(q, v)| q * v.abs()).sum();
        if l1 > space.norm(&f)? * l1_constant * (1.0 + POINCARE_SLACK) {
            report.l1_violations += 1;
        }
    }
    let phi = space.phi1();
    let (lhs, rhs) = space.check_poincare(&phi)?;
    report.ground_state_gap = (1.0 - lhs / rhs).abs();
    Ok(report)
}
