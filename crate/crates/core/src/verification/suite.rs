//! Oracle checks bundled as named suite cases with JUnit-style output.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adjoint::{LeaderAdjointMethod, LeaderAdjointSettings};
use crate::error::Result;
use crate::leader::ReducedMap;
use crate::nash::{verify_nash, NashOperator, NashSettings, VerifySettings};
use crate::scenario::{from_similarity_value, interpolate, to_similarity_value, Quantity};
use crate::state::{ControlSeries, DiscreteModel};
use crate::verification::dense::{assemble_dense, brute_force_nash};
use crate::verification::inequalities::run_inequality_suite;
use crate::weighted::{Field, Grid, WeightedSpace};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteCase {
    pub name: String,
    pub passed: bool,
    pub message: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub cases: Vec<SuiteCase>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.cases.iter().filter(|c| !c.passed).count()
    }

    pub fn to_junit_xml(&self) -> String {
        let total: f64 = self.cases.iter().map(|c| c.seconds).sum();
        let mut out = format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<testsuite name=\"{}\" tests=\"{}\" failures=\"{}\" time=\"{:.3}\">\n",
            xml_escape(&self.name),
            self.cases.len(),
            self.failures(),
            total
        );
        for c in &self.cases {
            out.push_str(&format!(
                "  <testcase name=\"{}\" time=\"{:.3}\"",
                xml_escape(&c.name),
                c.seconds
            ));
            if c.passed {
                out.push_str(&format!(
                    ">\n    <system-out>{}</system-out>\n  </testcase>\n",
                    xml_escape(&c.message)
                ));
            } else {
                out.push_str(&format!(
                    ">\n    <failure message=\"{}\"/>\n  </testcase>\n",
                    xml_escape(&c.message)
                ));
            }
        }
        out.push_str("</testsuite>\n");
        out
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Random control on the given masks with entries in `[-1, 1]`.
pub fn random_masked(
    model: &DiscreteModel,
    masks: &[Vec<f64>],
    rng: &mut impl Rng,
) -> ControlSeries {
    let mut c = model.zero_controls();
    c.values_mut()
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-1.0..1.0));
    c.apply_masks(masks);
    c
}

/// Random interior field with entries in `[-1, 1]`.
pub fn random_field(model: &DiscreteModel, rng: &mut impl Rng) -> Field {
    let mut f = Field::zeros(*model.grid());
    f.values_mut()
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-1.0..1.0));
    f.zero_boundary();
    f
}

/// Worst `|<L_i h, xi> - <h, L_i^* xi>| / (|h| |xi|)` over random pairs.
pub fn duality_defect(model: &DiscreteModel, pairs: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in 0..pairs {
        let i = p % model.followers().max(1);
        let (masks, forward) = if model.followers() == 0 {
            (model.leader_masks(), None)
        } else {
            (model.follower_masks(i), Some(i))
        };
        let h = random_masked(model, masks, &mut rng);
        let xi = random_field(model, &mut rng);
        let (lh, adj) = match forward {
            Some(i) => (model.resolvent_li(i, &h)?, model.adjoint_of_li(i, &xi)?),
            None => (model.resolvent_l0(&h)?, model.adjoint_of_l0(&xi)?),
        };
        let lhs = model.inner(lh.values(), xi.values());
        let rhs = model.control_inner(&h, &adj);
        let scale = model.control_norm(&h) * model.inner(xi.values(), xi.values()).sqrt();
        if scale > 0.0 {
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    Ok(worst)
}

/// Worst `<Lh, h> / |h|^2` deficit against `k1/2`: returns the smallest
/// ratio `<Lh, h> / ((k1/2) |h|^2)` over random bundles.
pub fn coercivity_ratio(model: &DiscreteModel, bundles: usize, seed: u64) -> Result<f64> {
    let op = NashOperator::new(model);
    let k1 = op.coercivity()?.k[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..bundles {
        let h: Vec<ControlSeries> = (0..model.followers())
            .map(|i| random_masked(model, model.follower_masks(i), &mut rng))
            .collect();
        let n2 = op.inner(&h, &h);
        if n2 == 0.0 {
            continue;
        }
        let lh = op.apply(&h)?;
        worst = worst.min(op.inner(&lh, &h) / (0.5 * k1 * n2));
    }
    Ok(worst)
}

/// Worst relative mismatch between the adjoint gradient of the penalized
/// leader objective and central differences, over random `g` and directions.
pub fn leader_gradient_defect(
    model: &DiscreteModel,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let map = ReducedMap::new(
        model,
        NashSettings {
            tol: 1e-13,
            ..NashSettings::default()
        },
        LeaderAdjointSettings {
            method: LeaderAdjointMethod::Krylov,
            tol: 1e-13,
            max_iter: 500,
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let g = random_masked(model, model.leader_masks(), &mut rng);
        let d = random_masked(model, model.leader_masks(), &mut rng);
        let grad = map.gradient(&g, epsilon)?;
        let analytic = model.control_inner(&grad, &d);
        let t = 1e-3;
        let at = |sign: f64| {
            let mut gg = g.clone();
            gg.axpy(sign * t, &d);
            map.objective(&gg, epsilon)
        };
        let fd = (at(1.0)? - at(-1.0)?) / (2.0 * t);
        let scale = analytic
            .abs()
            .max(model.control_norm(&grad) * model.control_norm(&d));
        worst = worst.max((fd - analytic).abs() / scale.max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

/// Largest `|sim -> phys -> sim - id|` over the nodes of `grid` at log-time
/// `s`, for every transformed quantity, relative to the field's sup norm.
pub fn change_of_variables_defect(grid: &Grid, s: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sim = |y: &[f64], _s: f64| interpolate(grid, &values, y);
    let mut worst = 0.0f64;
    for q in [
        Quantity::State,
        Quantity::PotentialA,
        Quantity::PotentialB,
        Quantity::Control,
    ] {
        let phys = |x: &[f64], t: f64| from_similarity_value(q, sim, x, t);
        for (j, v) in values.iter().enumerate() {
            let p = grid.point(j);
            let back = to_similarity_value(q, phys, &p[..grid.dim()], s);
            worst = worst.max((back - v).abs() / scale);
        }
    }
    worst
}

#[derive(Clone, Debug)]
pub struct SuiteSettings {
    pub seed: u64,
    pub inequality_trials: usize,
    pub duality_pairs: usize,
    pub coercivity_bundles: usize,
    pub gradient_trials: usize,
    pub gradient_epsilon: f64,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            seed: 7,
            inequality_trials: 1000,
            duality_pairs: 100,
            coercivity_bundles: 100,
            gradient_trials: 10,
            gradient_epsilon: 1e-2,
        }
    }
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> SuiteCase {
    let start = Instant::now();
    let (passed, message) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    SuiteCase {
        name: name.to_string(),
        passed,
        message,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every oracle on `model`. Dense checks are skipped (and reported as
/// such) when the model exceeds the dense-assembly limits.
pub fn run_suite(model: &DiscreteModel, settings: &SuiteSettings) -> SuiteReport {
    let dim = model.grid().dim();
    let seed = settings.seed;
    let jobs: Vec<Box<dyn Fn() -> SuiteCase + Send + Sync + '_>> = vec![
        Box::new(move || {
            timed("eigenpair", || {
                let (n, tol) = if dim == 1 { (257, 1e-3) } else { (65, 5e-3) };
                let space = WeightedSpace::new(Grid::new(dim, 8.0, n)?);
                let lam = space.spectral_probe(1)?[0];
                let phi = space.phi1();
                let lphi = space.apply_l(&phi)?;
                let mut r = lphi.clone();
                r.axpy(-(dim as f64) / 2.0, &phi)?;
                let rel = space.norm(&r)? / space.norm(&lphi)?;
                let gap = (lam - dim as f64 / 2.0).abs();
                let ok = gap <= tol && rel <= if dim == 1 { 1e-3 } else { tol };
                Ok((
                    ok,
                    format!("lambda_1 - N/2 = {gap:.3e}, residual {rel:.3e}"),
                ))
            })
        }),
        Box::new(move || {
            timed("inequalities", || {
                // At N = 2 the coarser 65-point grid has a discrete ground
                // state slightly below N/2, which breaks the inequality itself.
                let n = if dim == 1 { 257 } else { 129 };
                let r = run_inequality_suite(
                    &Grid::new(dim, 8.0, n)?,
                    settings.inequality_trials,
                    seed,
                )?;
                Ok((
                    r.passed(),
                    format!(
                        "poincare violations {}, l1 violations {}, moment constant {:.4}, ground-state gap {:.3e}",
                        r.poincare_violations, r.l1_violations, r.moment_constant, r.ground_state_gap
                    ),
                ))
            })
        }),
        Box::new(move || {
            timed("duality", || {
                let d = duality_defect(model, settings.duality_pairs, seed)?;
                Ok((d <= 1e-10, format!("worst defect {d:.3e}")))
            })
        }),
        Box::new(move || {
            timed("coercivity", || {
                let margin = NashOperator::new(model).coercivity()?.margin;
                if margin <= 0.0 {
                    return Ok((
                        true,
                        format!("margin {margin:.3e} not positive; check not applicable"),
                    ));
                }
                let r = coercivity_ratio(model, settings.coercivity_bundles, seed)?;
                Ok((r >= 1.0, format!("margin {margin:.4}, worst ratio {r:.4}")))
            })
        }),
        Box::new(move || {
            timed("dense_oracles", || {
                let dense = match assemble_dense(model) {
                    Ok(d) => d,
                    Err(crate::Error::TooLarge(m)) => return Ok((true, format!("skipped: {m}"))),
                    Err(e) => return Err(e),
                };
                let transpose = (0..model.followers())
                    .map(|i| dense.transpose_defect(i))
                    .fold(0.0, f64::max);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g = random_masked(model, model.leader_masks(), &mut rng);
                let brute = brute_force_nash(&dense, model, &g)?;
                let (h, _) = model.solve_nash(
                    &g,
                    &NashSettings {
                        tol: 1e-12,
                        ..NashSettings::default()
                    },
                )?;
                let op = NashOperator::new(model);
                let mut diff = h.clone();
                for (d, b) in diff.iter_mut().zip(&brute) {
                    d.axpy(-1.0, b);
                }
                let rel = op.norm(&diff) / op.norm(&brute).max(f64::MIN_POSITIVE);
                let k1 = op.coercivity()?.k[0];
                let lowest = dense
                    .symmetrized_nash_spectrum()
                    .first()
                    .copied()
                    .unwrap_or(f64::INFINITY);
                let ok = transpose <= 1e-10 && rel <= 1e-8 && lowest >= 0.5 * k1 * (1.0 - 1e-12);
                Ok((
                    ok,
                    format!("transpose defect {transpose:.3e}, brute vs iterative {rel:.3e}, lowest symmetrized eigenvalue {lowest:.4} (k1/2 = {:.4})", 0.5 * k1),
                ))
            })
        }),
        Box::new(move || {
            timed("verify_nash", || {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a);
                let g = random_masked(model, model.leader_masks(), &mut rng);
                let (h, _) = model.solve_nash(
                    &g,
                    &NashSettings {
                        tol: 1e-12,
                        ..NashSettings::default()
                    },
                )?;
                let v = verify_nash(
                    model,
                    &g,
                    &h,
                    &VerifySettings {
                        seed,
                        ..VerifySettings::default()
                    },
                )?;
                let el = v.euler_lagrange.iter().copied().fold(0.0, f64::max);
                Ok((
                    v.passed,
                    format!(
                        "euler-lagrange {el:.3e}, worst deviation {:.3e}, derivative error {:.3e}",
                        v.worst_deviation, v.worst_derivative_error
                    ),
                ))
            })
        }),
        Box::new(move || {
            timed("leader_gradient", || {
                let d = leader_gradient_defect(
                    model,
                    settings.gradient_epsilon,
                    settings.gradient_trials,
                    seed,
                )?;
                Ok((d <= 1e-6, format!("worst relative error {d:.3e}")))
            })
        }),
        Box::new(move || {
            timed("change_of_variables", || {
                let d = change_of_variables_defect(model.grid(), model.time().horizon(), seed);
                Ok((d <= 1e-10, format!("worst round-trip error {d:.3e}")))
            })
        }),
    ];
    let cases = jobs.par_iter().map(|job| job()).collect();
    SuiteReport {
        name: "stackelberg-heat".into(),
        cases,
    }
}
