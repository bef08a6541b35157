//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness; the process fails if any criterion fails.

mod common;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stackelberg_heat::leader::{controllability_experiment, LeaderProblem};
use stackelberg_heat::nash::{verify_nash, NashOperator, NashSettings, VerifySettings};
use stackelberg_heat::presets;
use stackelberg_heat::scenario::{
    from_similarity_value, interpolate, to_similarity, to_similarity_value, PhysicalScenario,
    Quantity,
};
use stackelberg_heat::verification::dense::{assemble_dense, brute_force_nash};
use stackelberg_heat::verification::inequalities::run_inequality_suite;
use stackelberg_heat::verification::suite::{
    change_of_variables_defect, coercivity_ratio, duality_defect, leader_gradient_defect,
    random_masked,
};
use stackelberg_heat::verification::{convergence_study, StudyKind, StudySettings};
use stackelberg_heat::{Grid, Result, WeightedSpace};

const SEED: u64 = 20_240_601;

struct Line {
    pass: bool,
    detail: String,
}

fn line(pass: bool, detail: String) -> Result<Line> {
    Ok(Line { pass, detail })
}

fn eigenpair() -> Result<Line> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (dim, n, tol) in [(1usize, 257usize, 1e-3), (2, 65, 5e-3)] {
        let space = WeightedSpace::new(Grid::new(dim, 8.0, n)?);
        let lam = space.spectral_probe(1)?[0];
        let gap = (lam - dim as f64 / 2.0).abs();
        pass &= gap <= tol;
        parts.push(format!(
            "N={dim} n={n}: |lambda1 - N/2| = {gap:.2e} (tol {tol:.0e})"
        ));
    }
    // The residual is a truncation measure; it is taken at the spacing
    // dy = 1/16 of the one-dimensional configuration in both dimensions.
    for (dim, n) in [(1usize, 257usize), (2, 257), (2, 65)] {
        let space = WeightedSpace::new(Grid::new(dim, 8.0, n)?);
        let phi = space.phi1();
        let mut r = space.apply_l(&phi)?;
        r.axpy(-(dim as f64) / 2.0, &phi)?;
        let rel = space.norm(&r)? / (dim as f64 / 2.0 * space.norm(&phi)?);
        if n == 257 {
            pass &= rel <= 1e-3;
            parts.push(format!("N={dim} n={n}: residual {rel:.2e} (tol 1e-3)"));
        } else {
            parts.push(format!("N={dim} n={n}: residual {rel:.2e} (informational)"));
        }
    }
    line(pass, parts.join("; "))
}

fn poincare() -> Result<Line> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (dim, n) in [(1usize, 257usize), (2, 129)] {
        let grid = Grid::new(dim, 8.0, n)?;
        let r = run_inequality_suite(&grid, 1000, SEED)?;
        let dy2 = grid.spacing() * grid.spacing();
        let ok = r.poincare_violations == 0 && r.ground_state_gap <= dy2;
        pass &= ok;
        parts.push(format!(
            "N={dim}: {} violations in {} fields, ground-state gap {:.2e} (dy^2 = {dy2:.2e})",
            r.poincare_violations, r.trials, r.ground_state_gap
        ));
    }
    line(pass, parts.join("; "))
}

fn duality() -> Result<Line> {
    let model = common::model(&presets::by_name("tiny")?);
    let d = duality_defect(&model, 100, SEED)?;
    line(
        d <= 1e-10,
        format!("worst |<L h, xi> - <h, L* xi>| / (|h||xi|) = {d:.2e} over 100 pairs"),
    )
}

fn nash_oracle() -> Result<Line> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_rel = 0.0f64;
    let mut worst_el = 0.0f64;
    let mut worst_dev = f64::INFINITY;
    let mut failures = 0;
    for trial in 0..20 {
        let model = common::model(&common::random_tiny(&mut rng));
        let dense = assemble_dense(&model)?;
        let g = random_masked(&model, model.leader_masks(), &mut rng);
        let brute = brute_force_nash(&dense, &model, &g)?;
        let (h, _) = model.solve_nash(
            &g,
            &NashSettings {
                tol: 1e-12,
                ..NashSettings::default()
            },
        )?;
        let op = NashOperator::new(&model);
        let mut diff = h.clone();
        for (d, b) in diff.iter_mut().zip(&brute) {
            d.axpy(-1.0, b);
        }
        let rel = op.norm(&diff) / op.norm(&brute);
        worst_rel = worst_rel.max(rel);
        let v = verify_nash(
            &model,
            &g,
            &h,
            &VerifySettings {
                seed: SEED + trial,
                ..VerifySettings::default()
            },
        )?;
        worst_el = v.euler_lagrange.iter().copied().fold(worst_el, f64::max);
        worst_dev = worst_dev.min(v.worst_deviation);
        if rel > 1e-8 || !v.passed {
            failures += 1;
        }
    }
    line(
        failures == 0,
        format!(
            "20 scenarios: worst iterative-vs-dense {worst_rel:.2e}, worst Euler-Lagrange {worst_el:.2e}, smallest unilateral change {worst_dev:.2e}, {failures} failures"
        ),
    )
}

fn coercivity() -> Result<Line> {
    let mut pass = true;
    let mut parts = Vec::new();
    for f in 1..=3 {
        let model = common::tiny(f);
        let c = NashOperator::new(&model).coercivity()?;
        if c.margin <= 0.0 {
            parts.push(format!(
                "n={f}: margin {:.3} not positive, skipped",
                c.margin
            ));
            continue;
        }
        let ratio = coercivity_ratio(&model, 100, SEED)?;
        let lowest = assemble_dense(&model)?.symmetrized_nash_spectrum()[0];
        let half_k1 = 0.5 * c.k[0];
        pass &= ratio >= 1.0 && lowest >= half_k1;
        parts.push(format!(
            "n={f}: margin {:.3}, min <Lh,h>/((k1/2)|h|^2) = {ratio:.3}, lowest symmetrized eigenvalue {lowest:.3} >= {half_k1:.3}",
            c.margin
        ));
    }
    line(pass, parts.join("; "))
}

fn leader_gradient() -> Result<Line> {
    let model = common::model(&presets::by_name("tiny")?);
    let d = leader_gradient_defect(&model, 1e-2, 10, SEED)?;
    line(
        d <= 1e-6,
        format!("worst relative error vs central differences {d:.2e} over 10 controls"),
    )
}

fn controllability(store: &mut Option<Line>) -> Result<Line> {
    let model = common::model(&presets::desk());
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    let run = controllability_experiment(&model, &eps, &LeaderProblem::new(1e-1)?)?;
    let r = &run.report;
    let first = r.entries.first().map_or(f64::NAN, |e| e.weighted_residual);
    let decrease = first / r.achieved_residual;
    let residuals: Vec<String> = r
        .entries
        .iter()
        .map(|e| format!("{:.3e}", e.weighted_residual))
        .collect();
    let opt = model.optimality_residuals(&run.solution.g, &run.solution.h)?;
    let worst = opt.max();
    *store = Some(Line {
        pass: worst <= 1e-7,
        detail: format!(
            "forward {:.2e}, feedback h = -alpha p / d {:.2e}, terminal {:.2e}",
            opt.forward,
            opt.feedback.iter().copied().fold(0.0, f64::max),
            opt.terminal.iter().copied().fold(0.0, f64::max)
        ),
    });
    line(
        r.strictly_decreasing && decrease >= 10.0 && r.inequality_holds,
        format!(
            "residuals [{}], decrease {decrease:.1}x, physical inequality {}",
            residuals.join(", "),
            if r.inequality_holds {
                "holds"
            } else {
                "violated"
            }
        ),
    )
}

fn convergence() -> Result<Line> {
    let config = presets::desk();
    let scenario = to_similarity(&PhysicalScenario::from_config(&config)?)?;
    let settings = StudySettings::for_dim(1);
    let space = convergence_study(&scenario, StudyKind::Space, &settings)?;
    let time = convergence_study(&scenario, StudyKind::Time, &settings)?;
    let radius = convergence_study(&scenario, StudyKind::Radius, &settings)?;
    let pass = (space.fitted_rate - 2.0).abs() <= 0.3
        && (time.fitted_rate - 2.0).abs() <= 0.3
        && radius.flat_beyond(8.0);
    let changes: Vec<String> = radius
        .rows
        .iter()
        .skip(1)
        .map(|r| format!("R={}: {:.1e}", r.parameter, r.error))
        .collect();
    line(
        pass,
        format!(
            "space rate {:.3} (R^2 {:.5}), time rate {:.3} (R^2 {:.5}), radius changes [{}] vs floor {:.1e}",
            space.fitted_rate,
            space.r_squared,
            time.fitted_rate,
            time.r_squared,
            changes.join(", "),
            radius.floor.unwrap_or(f64::NAN)
        ),
    )
}

fn round_trip() -> Result<Line> {
    let horizon = 1.0f64;
    let s = horizon.ln_1p();
    let mut worst = 0.0f64;
    for dim in [1usize, 2] {
        let ygrid = Grid::new(dim, 4.0, 17)?;
        worst = worst.max(change_of_variables_defect(&ygrid, s, SEED));
        // Physical values on the stretched nodes x = sqrt(1 + T) y.
        let xgrid = Grid::new(dim, 4.0 * (1.0 + horizon).sqrt(), 17)?;
        let values: Vec<f64> = (0..xgrid.len()).map(|j| (j as f64 * 0.37).sin()).collect();
        for q in [
            Quantity::State,
            Quantity::PotentialA,
            Quantity::PotentialB,
            Quantity::Control,
        ] {
            let sim: Vec<f64> = (0..ygrid.len())
                .map(|j| {
                    let p = ygrid.point(j);
                    to_similarity_value(q, |x, _| interpolate(&xgrid, &values, x), &p[..dim], s)
                })
                .collect();
            for (j, v) in values.iter().enumerate() {
                let p = xgrid.point(j);
                let back = from_similarity_value(
                    q,
                    |y, _| interpolate(&ygrid, &sim, y),
                    &p[..dim],
                    horizon,
                );
                worst = worst.max((back - v).abs());
            }
        }
    }
    line(
        worst <= 1e-10,
        format!("worst round-trip error {worst:.2e} over both directions, N = 1, 2"),
    )
}

fn main() {
    let mut optimality = None;
    let mut cases: Vec<(usize, &str, f64, Box<dyn FnMut() -> Result<Line> + '_>)> = Vec::new();
    cases.push((1, "eigenpair", 10.0, Box::new(eigenpair)));
    cases.push((2, "weighted Poincare", 30.0, Box::new(poincare)));
    cases.push((3, "discrete duality", 60.0, Box::new(duality)));
    cases.push((4, "Nash oracle equivalence", 120.0, Box::new(nash_oracle)));
    cases.push((5, "coercivity", 60.0, Box::new(coercivity)));
    cases.push((6, "leader gradient", 120.0, Box::new(leader_gradient)));
    cases.push((
        7,
        "controllability trend",
        600.0,
        Box::new(|| controllability(&mut optimality)),
    ));
    let mut failed = 0;
    let mut report = |id: usize, name: &str, budget: f64, result: Result<Line>, seconds: f64| {
        let (pass, detail) = match result {
            Ok(l) => (l.pass && seconds <= budget, l.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {}: {name}: {detail} [{seconds:.2}s / {budget:.0}s]",
            if pass { "PASS" } else { "FAIL" }
        );
    };
    let mut sweep_seconds = 0.0;
    for (id, name, budget, mut f) in cases {
        let t = Instant::now();
        let r = f();
        let secs = t.elapsed().as_secs_f64();
        if id == 7 {
            sweep_seconds = secs;
        }
        report(id, name, budget, r, secs);
    }
    let opt = optimality
        .take()
        .ok_or_else(|| stackelberg_heat::Error::OutOfRange("sweep did not finish".into()));
    report(8, "optimality system", 600.0, opt, sweep_seconds);
    let t = Instant::now();
    let r = convergence();
    report(9, "convergence rates", 300.0, r, t.elapsed().as_secs_f64());
    let t = Instant::now();
    let r = round_trip();
    report(10, "change of variables", 5.0, r, t.elapsed().as_secs_f64());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
