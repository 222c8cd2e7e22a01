//! Numerical laboratory for the macroscopic training dynamics of two-layer
//! networks in the teacher-student setting: the infinite-width ODE for the
//! alignment/second-layer pair (R, a), its critical-manifold reduction and
//! time-scale diagnostics, verdicts and scaling fits over trajectories, and
//! a finite-width online-SGD simulator for ground-truth comparison.

pub mod analysis;
pub mod coefficients;
pub mod config;
pub mod fastslow;
pub mod io;
pub mod macro_ode;
pub mod rk45;
pub mod width_sim;

pub use coefficients::CoefficientSpec;
pub use macro_ode::{MacroState, MacroTrajectory};
