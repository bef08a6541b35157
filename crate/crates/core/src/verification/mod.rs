//! Independent oracles: dense assembly, brute-force equilibria, weighted
//! inequalities and self-convergence studies.

pub mod convergence;
pub mod dense;
pub mod inequalities;
pub mod suite;

pub use convergence::{convergence_study, loglog_fit, StudyKind, StudySettings, StudyTable};
pub use dense::{assemble_dense, brute_force_nash, DenseInstance};
pub use inequalities::{run_inequality_suite, InequalityReport};
pub use suite::{run_suite, SuiteCase, SuiteReport, SuiteSettings};
