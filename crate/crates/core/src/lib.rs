//! Stackelberg-Nash hierarchic control of the linear heat equation in
//! similarity variables.
//!
//! The physical problem on `R^N x (0, T)` is mapped to the variables
//! `y = x / sqrt(1 + t)`, `s = log(1 + t)`, where the state equation involves
//! the operator `L = -(1/K) div(K grad)` with the Gaussian weight
//! `K(y) = exp(|y|^2 / 4)`. Followers play a Nash equilibrium for every
//! leader control; the leader then drives the final state towards a target.

pub mod adjoint;
pub mod error;
pub mod io;
pub mod krylov;
pub mod leader;
pub mod nash;
pub mod presets;
pub mod scenario;
pub mod state;
pub mod verification;
pub mod weighted;

pub use error::{Error, Result};
pub use state::{ControlBundle, ControlSeries, DiscreteModel, TimeGrid, Trajectory};
pub use weighted::{Field, Grid, WeightedSpace};
