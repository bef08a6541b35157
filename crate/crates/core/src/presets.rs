//! Built-in scenarios: `tiny` (oracle scale), `desk` (one dimension) and
//! `desk2d` (two dimensions).

use crate::error::{Error, Result};
use crate::scenario::{BoxRegion, DiscretizationConfig, ScalarSpec, ScenarioConfig, VectorSpec};

pub const NAMES: [&str; 3] = ["tiny", "desk", "desk2d"];

fn boxed(lo: &[f64], hi: &[f64]) -> BoxRegion {
    BoxRegion::new(lo.to_vec(), hi.to_vec())
}

/// Two-dimensional 8x8 grid with four time steps and up to three followers.
pub fn tiny(followers: usize) -> ScenarioConfig {
    let all = [
        boxed(&[1.2, -1.0], &[3.5, 1.0]),
        boxed(&[-3.5, -1.0], &[-1.2, 1.0]),
        boxed(&[-1.0, 1.2], &[1.0, 3.5]),
    ];
    let followers = followers.min(all.len());
    ScenarioConfig {
        dim: 2,
        horizon: 1.0,
        a: ScalarSpec::Constant(0.1),
        b: VectorSpec::Components(vec![0.2, -0.1]),
        leader_box: boxed(&[-1.0, -1.0], &[1.0, 1.0]),
        follower_boxes: all[..followers].to_vec(),
        alpha: vec![0.02; followers],
        rho_margin: 0.5,
        target: ScalarSpec::Gaussian {
            amplitude: 1.0,
            center: vec![0.0, 0.0],
            width: 1.0,
        },
        discretization: Some(DiscretizationConfig {
            n: 8,
            radius: 4.0,
            steps: 4,
            theta: 0.5,
            linear_tol: 1e-13,
            upwind: false,
        }),
    }
}

/// One-dimensional scenario with a Gaussian target and two followers.
pub fn desk() -> ScenarioConfig {
    ScenarioConfig {
        dim: 1,
        horizon: 1.0,
        a: ScalarSpec::Constant(0.2),
        b: VectorSpec::Components(vec![0.1]),
        leader_box: boxed(&[-1.0], &[1.0]),
        follower_boxes: vec![boxed(&[1.5], &[3.0]), boxed(&[-3.0], &[-1.5])],
        alpha: vec![0.05, 0.05],
        rho_margin: 2.0,
        target: ScalarSpec::Gaussian {
            amplitude: 1.0,
            center: vec![0.0],
            width: 1.0,
        },
        discretization: Some(DiscretizationConfig {
            n: 129,
            radius: 8.0,
            steps: 128,
            theta: 0.5,
            linear_tol: 1e-12,
            upwind: false,
        }),
    }
}

/// Two-dimensional counterpart of [`desk`].
pub fn desk2d() -> ScenarioConfig {
    ScenarioConfig {
        dim: 2,
        horizon: 1.0,
        a: ScalarSpec::Constant(0.2),
        b: VectorSpec::Components(vec![0.1, 0.0]),
        leader_box: boxed(&[-1.0, -1.0], &[1.0, 1.0]),
        follower_boxes: vec![
            boxed(&[1.5, -1.0], &[3.0, 1.0]),
            boxed(&[-3.0, -1.0], &[-1.5, 1.0]),
        ],
        alpha: vec![0.02, 0.02],
        rho_margin: 2.0,
        target: ScalarSpec::Gaussian {
            amplitude: 1.0,
            center: vec![0.0, 0.0],
            width: 1.0,
        },
        discretization: Some(DiscretizationConfig {
            n: 65,
            radius: 8.0,
            steps: 64,
            theta: 0.5,
            linear_tol: 1e-12,
            upwind: false,
        }),
    }
}

pub fn by_name(name: &str) -> Result<ScenarioConfig> {
    match name {
        "tiny" => Ok(tiny(2)),
        "desk" => Ok(desk()),
        "desk2d" => Ok(desk2d()),
        other => Err(Error::config(
            "preset",
            format!(
                "unknown preset `{other}`; expected one of {}",
                NAMES.join(", ")
            ),
        )),
    }
}
