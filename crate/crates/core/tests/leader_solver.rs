mod common;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stackelberg_heat::leader::{controllability_experiment, LeaderProblem, ReducedMap};
use stackelberg_heat::verification::assemble_dense;
use stackelberg_heat::verification::suite::{leader_gradient_defect, random_masked};
use stackelberg_heat::Error;

#[test]
fn gradient_matches_central_differences() {
    for f in 1..=3 {
        let d = leader_gradient_defect(&common::tiny(f), 1e-2, 4, 31 + f as u64).unwrap();
        assert!(d <= 1e-6, "{f} followers: {d}");
    }
}

#[test]
fn leader_solution_solves_the_dense_normal_equations() {
    let model = common::tiny(2);
    let dense = assemble_dense(&model).unwrap();
    let eps = 1e-2;
    let problem = LeaderProblem::new(eps).unwrap();
    let sol = model.solve_leader(&problem, None).unwrap();

    let map = ReducedMap::new(&model, problem.nash, problem.adjoint);
    let (c, _) = map.evaluate(&model.zero_controls()).unwrap();
    let rhs_state = DVector::from_iterator(
        dense.state_dofs.len(),
        dense
            .state_dofs
            .iter()
            .map(|&j| model.target().values()[j] - c.values()[j]),
    );
    let ws = DMatrix::from_diagonal(&dense.state_weights);
    let wc = DMatrix::from_diagonal(&dense.leader_weights);
    let rt_ws = dense.reduced.transpose() * &ws;
    let lhs = &rt_ws * &dense.reduced + wc * eps;
    let rhs = &rt_ws * rhs_state;
    let expected = lhs.lu().solve(&rhs).unwrap();
    let got = dense.gather_leader(&sol.g);
    assert!(
        (&got - &expected).amax() <= 1e-6 * expected.amax(),
        "{} vs {}",
        got.amax(),
        expected.amax()
    );
}

#[test]
fn reduced_map_is_affine() {
    let model = common::tiny(3);
    let problem = LeaderProblem::new(1.0).unwrap();
    let map = ReducedMap::new(&model, problem.nash, problem.adjoint);
    let g = random_masked(
        &model,
        model.leader_masks(),
        &mut ChaCha8Rng::seed_from_u64(2),
    );
    let (full, _) = map.evaluate(&g).unwrap();
    let (zero, _) = map.evaluate(&model.zero_controls()).unwrap();
    let linear = map.apply_linear(&g).unwrap();
    let mut d = full;
    d.axpy(-1.0, &zero).unwrap();
    d.axpy(-1.0, &linear).unwrap();
    assert!(d.max_abs() <= 1e-10 * linear.max_abs());
}

#[test]
fn residual_decreases_with_the_penalty() {
    let model = common::tiny(2);
    let run = controllability_experiment(
        &model,
        &[1e-1, 1e-2, 1e-3],
        &LeaderProblem::new(1.0).unwrap(),
    )
    .unwrap();
    assert!(run.report.strictly_decreasing);
    assert!(run.report.inequality_holds);
    let norms: Vec<f64> = run.report.entries.iter().map(|e| e.leader_norm).collect();
    assert!(norms.windows(2).all(|w| w[1] >= w[0]), "{norms:?}");
    let residuals = model
        .optimality_residuals(&run.solution.g, &run.solution.h)
        .unwrap();
    assert!(residuals.max() <= 1e-8, "{residuals:?}");
}

#[test]
fn physical_residual_is_bounded_by_the_weighted_one() {
    let model = common::model(&stackelberg_heat::presets::desk());
    let sol = model
        .solve_leader(&LeaderProblem::new(1e-2).unwrap(), None)
        .unwrap();
    let (phys, bound) = model.physical_residual(&sol.final_state).unwrap();
    assert!(phys <= bound * (1.0 + 1e-12), "{phys} > {bound}");
    assert!(phys > 0.0);
}

#[test]
fn report_csv_has_one_row_per_penalty() {
    let model = common::tiny(1);
    let run = controllability_experiment(&model, &[1e-1, 1e-2], &LeaderProblem::new(1.0).unwrap())
        .unwrap();
    let csv = run.report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epsilon,weighted_residual,physical_residual,leader_norm,nash_iters,outer_iters"
    );
    assert_eq!(lines.count(), 2);
    assert_eq!(run.physical_controls.followers.len(), 1);
}

#[test]
fn nonpositive_penalties_are_rejected() {
    assert!(matches!(LeaderProblem::new(0.0), Err(Error::Config { .. })));
    assert!(matches!(
        LeaderProblem::new(f64::NAN),
        Err(Error::Config { .. })
    ));
    let model = common::tiny(1);
    let template = LeaderProblem::new(1.0).unwrap();
    assert!(matches!(
        controllability_experiment(&model, &[], &template),
        Err(Error::Config { .. })
    ));
    assert!(matches!(
        controllability_experiment(&model, &[-1.0], &template),
        Err(Error::Config { .. })
    ));
}
