mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stackelberg_heat::nash::{verify_nash, NashOperator, NashSettings, VerifySettings};
use stackelberg_heat::presets;
use stackelberg_heat::verification::suite::random_masked;
use stackelberg_heat::verification::{assemble_dense, brute_force_nash};
use stackelberg_heat::{ControlSeries, DiscreteModel, Error};

fn tight() -> NashSettings {
    NashSettings {
        tol: 1e-12,
        ..NashSettings::default()
    }
}

fn random_bundle(model: &DiscreteModel, rng: &mut ChaCha8Rng) -> Vec<ControlSeries> {
    (0..model.followers())
        .map(|i| random_masked(model, model.follower_masks(i), rng))
        .collect()
}

#[test]
fn dense_matrix_reproduces_the_matrix_free_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for f in 1..=3 {
        let model = common::tiny(f);
        let dense = assemble_dense(&model).unwrap();
        let op = NashOperator::new(&model);
        let h = random_bundle(&model, &mut rng);
        let direct = dense.stack(&op.apply(&h).unwrap());
        let via = &dense.nash * dense.stack(&h);
        assert!(
            (&direct - &via).amax() <= 1e-12 * direct.amax(),
            "{f} followers"
        );
    }
}

#[test]
fn single_follower_operator_is_symmetric() {
    let dense = assemble_dense(&common::tiny(1)).unwrap();
    assert!(
        dense.nash_symmetry_defect() <= 1e-12,
        "{}",
        dense.nash_symmetry_defect()
    );
    assert!(dense.transpose_defect(0) <= 1e-12);
}

#[test]
fn symmetrized_spectrum_lies_above_half_k1() {
    for f in 1..=3 {
        let model = common::tiny(f);
        let c = NashOperator::new(&model).coercivity().unwrap();
        assert!(c.margin > 0.0);
        let spectrum = assemble_dense(&model).unwrap().symmetrized_nash_spectrum();
        assert!(
            spectrum[0] >= 0.5 * c.k[0],
            "{f}: {} < {}",
            spectrum[0],
            0.5 * c.k[0]
        );
        assert!(*spectrum.last().unwrap() <= c.norm_bound * (1.0 + 1e-12));
    }
}

#[test]
fn zero_weights_give_zero_followers() {
    let mut model = common::tiny(2);
    model.set_alphas(&[0.0, 0.0]).unwrap();
    let g = random_masked(
        &model,
        model.leader_masks(),
        &mut ChaCha8Rng::seed_from_u64(5),
    );
    let (h, _) = model.solve_nash(&g, &tight()).unwrap();
    assert!(h.iter().all(|hi| hi.max_abs() <= 1e-14));
}

#[test]
fn iterative_solution_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let model = common::model(&common::random_tiny(&mut rng));
        let dense = assemble_dense(&model).unwrap();
        let g = random_masked(&model, model.leader_masks(), &mut rng);
        let brute = brute_force_nash(&dense, &model, &g).unwrap();
        let (h, report) = model.solve_nash(&g, &tight()).unwrap();
        assert!(report.converged && report.margin > 0.0 && report.warning.is_none());
        let op = NashOperator::new(&model);
        let mut d = h.clone();
        for (d, b) in d.iter_mut().zip(&brute) {
            d.axpy(-1.0, b);
        }
        assert!(op.norm(&d) <= 1e-8 * op.norm(&brute));
    }
}

#[test]
fn equilibrium_is_a_minimum_on_a_five_point_stencil() {
    let model = common::tiny(3);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = random_masked(&model, model.leader_masks(), &mut rng);
    let (h, _) = model.solve_nash(&g, &tight()).unwrap();
    for i in 0..3 {
        let base = model.evaluate_ji(&g, &h, i).unwrap();
        let mut dir = random_masked(&model, model.follower_masks(i), &mut rng);
        dir.scale(1.0 / model.control_norm(&dir));
        let mut values = Vec::new();
        for t in [-2e-2, -1e-2, 1e-2, 2e-2] {
            let mut hh = h.clone();
            hh[i].axpy(t, &dir);
            values.push(model.evaluate_ji(&g, &hh, i).unwrap());
        }
        assert!(
            values.iter().all(|v| *v >= base - 1e-14 * base.abs()),
            "{i}: {base} vs {values:?}"
        );
        // Quadratic in t: the stencil second difference is constant.
        let c1 = values[1] - 2.0 * base + values[2];
        let c2 = values[0] - 2.0 * base + values[3];
        assert!((c2 - 4.0 * c1).abs() <= 1e-8 * c2.abs());
    }
}

#[test]
fn gateaux_derivative_matches_central_differences() {
    let model = common::tiny(2);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let g = random_masked(&model, model.leader_masks(), &mut rng);
    let h = random_bundle(&model, &mut rng);
    for i in 0..2 {
        let dir = random_masked(&model, model.follower_masks(i), &mut rng);
        let analytic = model.gateaux(&g, &h, i, &dir).unwrap();
        let t = 1e-3;
        let eval = |s: f64| {
            let mut hh = h.clone();
            hh[i].axpy(s * t, &dir);
            model.evaluate_ji(&g, &hh, i).unwrap()
        };
        let fd = (eval(1.0) - eval(-1.0)) / (2.0 * t);
        assert!(
            (analytic - fd).abs() <= 1e-8 * analytic.abs().max(1.0),
            "{analytic} vs {fd}"
        );
    }
}

#[test]
fn resolvent_form_of_the_cost_equals_the_direct_form() {
    let model = common::tiny(3);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let g = random_masked(&model, model.leader_masks(), &mut rng);
    let h = random_bundle(&model, &mut rng);
    for i in 0..3 {
        let a = model.evaluate_ji(&g, &h, i).unwrap();
        let b = model.evaluate_ji_resolvent(&g, &h, i).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }
}

#[test]
fn verify_accepts_the_equilibrium_and_rejects_a_perturbation() {
    let model = common::tiny(2);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let g = random_masked(&model, model.leader_masks(), &mut rng);
    let (h, _) = model.solve_nash(&g, &tight()).unwrap();
    let ok = verify_nash(&model, &g, &h, &VerifySettings::default()).unwrap();
    assert!(ok.passed, "{:?}", ok.violations);
    let mut bad = h.clone();
    bad[1].axpy(
        0.1,
        &random_masked(&model, model.follower_masks(1), &mut rng),
    );
    let rejected = verify_nash(&model, &g, &bad, &VerifySettings::default()).unwrap();
    assert!(!rejected.passed);
    assert!(rejected.euler_lagrange[1] > 1e-9);
}

#[test]
fn large_weights_produce_a_margin_warning() {
    let mut model = common::tiny(2);
    model.set_alphas(&[200.0, 200.0]).unwrap();
    let g = random_masked(
        &model,
        model.leader_masks(),
        &mut ChaCha8Rng::seed_from_u64(29),
    );
    match model.solve_nash(&g, &tight()) {
        Ok((_, report)) => {
            assert!(report.margin <= 0.0);
            assert!(report.warning.unwrap().contains("margin"));
        }
        Err(Error::NotConverged { .. }) => {}
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn dense_assembly_refuses_large_models() {
    let model = common::model(&presets::desk());
    assert!(matches!(assemble_dense(&model), Err(Error::TooLarge(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn operator_is_coercive_when_the_margin_is_positive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::model(&common::random_tiny(&mut rng));
        let op = NashOperator::new(&model);
        let c = op.coercivity().unwrap();
        prop_assume!(c.margin > 0.0);
        let h = random_bundle(&model, &mut rng);
        let lh = op.apply(&h).unwrap();
        let q = op.inner(&lh, &h);
        prop_assert!(q >= 0.5 * c.k[0] * op.inner(&h, &h) * (1.0 - 1e-12));
    }

    #[test]
    fn dense_weights_are_positive(seed in 0u64..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::model(&common::random_tiny(&mut rng));
        let dense = assemble_dense(&model).unwrap();
        let w: DVector<f64> = dense.nash_weights();
        prop_assert!(w.iter().all(|v| *v > 0.0));
        prop_assert_eq!(w.len(), dense.nash.nrows());
    }
}
