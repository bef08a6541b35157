mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stackelberg_heat::adjoint::{solve_leader_adjoint, LeaderAdjointMethod, LeaderAdjointSettings};
use stackelberg_heat::leader::ReducedMap;
use stackelberg_heat::nash::NashSettings;
use stackelberg_heat::presets;
use stackelberg_heat::verification::suite::{duality_defect, random_field, random_masked};
use stackelberg_heat::Field;

#[test]
fn follower_duality_holds_on_tiny() {
    for f in 1..=3 {
        let model = common::tiny(f);
        let d = duality_defect(&model, 100, 17 + f as u64).unwrap();
        assert!(d <= 1e-10, "{f} followers: {d}");
    }
}

#[test]
fn duality_holds_on_desk_with_the_full_trajectory() {
    let model = common::model(&presets::desk());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let mut src = model.zero_controls();
        src.values_mut()
            .iter_mut()
            .for_each(|v| *v = rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let xi = random_field(&model, &mut rng);
        let v = model.final_state(&src).unwrap();
        let adj = model.solve_adjoint(&xi).unwrap();
        let lhs = model.inner(&v, xi.values());
        let rhs = model.control_inner(&src, &adj.pairing);
        assert!(
            (lhs - rhs).abs()
                <= 1e-12 * model.control_norm(&src) * model.inner(xi.values(), xi.values()).sqrt()
        );
        assert_eq!(adj.states.len(), model.time().steps() + 1);
        assert_eq!(adj.terminal().values(), xi.values());
    }
}

#[test]
fn leader_adjoint_variants_agree() {
    let model = common::tiny(3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let zeta = random_field(&model, &mut rng);
    let fixed = solve_leader_adjoint(&model, &zeta, &LeaderAdjointSettings::default()).unwrap();
    let krylov = solve_leader_adjoint(
        &model,
        &zeta,
        &LeaderAdjointSettings {
            method: LeaderAdjointMethod::Krylov,
            tol: 1e-13,
            max_iter: 200,
        },
    )
    .unwrap();
    assert!(fixed.terminal_residual(&model) < 1e-8);
    assert!(krylov.terminal_residual(&model) < 1e-12);
    assert!(fixed.contraction < 1.0);
    let a = fixed.leader_restriction(&model);
    let b = krylov.leader_restriction(&model);
    let mut d = a.clone();
    d.axpy(-1.0, &b);
    assert!(model.control_norm(&d) <= 1e-7 * model.control_norm(&b));
}

#[test]
fn zero_coupling_gives_zero_adjoint() {
    let model = common::tiny(2);
    let pair = solve_leader_adjoint(
        &model,
        &Field::zeros(*model.grid()),
        &LeaderAdjointSettings::default(),
    )
    .unwrap();
    assert_eq!(pair.leader_restriction(&model).max_abs(), 0.0);
    assert!(pair.psi.iter().all(|p| p.final_state().max_abs() == 0.0));
}

#[test]
fn invalid_damping_is_a_config_error() {
    let model = common::tiny(1);
    let zeta = random_field(&model, &mut ChaCha8Rng::seed_from_u64(1));
    let bad = LeaderAdjointSettings {
        method: LeaderAdjointMethod::FixedPoint { damping: 1.5 },
        ..LeaderAdjointSettings::default()
    };
    assert!(matches!(
        solve_leader_adjoint(&model, &zeta, &bad),
        Err(stackelberg_heat::Error::Config { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn leader_adjoint_is_the_transpose_of_the_reduced_map(seed in any::<u64>(), followers in 1usize..=3) {
        let model = common::tiny(followers);
        let map = ReducedMap::new(
            &model,
            NashSettings { tol: 1e-13, ..NashSettings::default() },
            LeaderAdjointSettings { method: LeaderAdjointMethod::Krylov, tol: 1e-13, max_iter: 200 },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_masked(&model, model.leader_masks(), &mut rng);
        let zeta = random_field(&model, &mut rng);
        let rg = map.apply_linear(&g).unwrap();
        let rz = map.apply_adjoint(&zeta).unwrap();
        let lhs = model.inner(rg.values(), zeta.values());
        let rhs = model.control_inner(&g, &rz);
        let scale = model.control_norm(&g) * model.inner(zeta.values(), zeta.values()).sqrt();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale, "{} vs {}", lhs, rhs);
    }
}
