//! Shared builders for the integration tests.
#![allow(dead_code)]

use rand::Rng;
use stackelberg_heat::presets;
use stackelberg_heat::scenario::{ScalarSpec, ScenarioConfig, VectorSpec};
use stackelberg_heat::DiscreteModel;

pub fn model(config: &ScenarioConfig) -> DiscreteModel {
    DiscreteModel::from_config(config).expect("preset builds")
}

pub fn tiny(followers: usize) -> DiscreteModel {
    model(&presets::tiny(followers))
}

/// A `tiny` scenario with random potentials, target and follower weights.
/// The weights stay small enough for a positive smallness margin.
pub fn random_tiny(rng: &mut impl Rng) -> ScenarioConfig {
    let followers = rng.gen_range(1..=3);
    let mut c = presets::tiny(followers);
    c.a = ScalarSpec::Constant(rng.gen_range(0.0..0.3));
    c.b = VectorSpec::Components(vec![rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)]);
    c.alpha = (0..followers).map(|_| rng.gen_range(0.005..0.03)).collect();
    c.target = ScalarSpec::Gaussian {
        amplitude: rng.gen_range(0.5..2.0),
        center: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        width: rng.gen_range(0.7..1.5),
    };
    c
}
