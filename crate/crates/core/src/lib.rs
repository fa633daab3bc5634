//! A numerical laboratory for the semilinear damped wave equation with a
//! dynamic boundary condition on the unit interval:
//!
//! ```text
//! u_tt - u_xx - alpha u_txx = |u|^(p-2) u          in (0,1)
//! u(0,t) = 0
//! u_tt(1,t) = -a [u_x + alpha u_tx + r |u_t|^(m-2) u_t](1,t)
//! ```
//!
//! The crate assembles a piecewise-linear finite element model, evaluates the
//! potential-well functionals (`I`, `J`, `E`, the Lyapunov functional), computes
//! the well constants (Sobolev constant, well depth, Nehari distance), integrates
//! the semi-discrete system with an implicit midpoint scheme, and checks the
//! resulting trajectories for exponential decay or finite-time blow-up.

// `!(x > 0.0)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod commands;
pub mod constants;
pub mod domain;
pub mod error;
pub mod functionals;
pub mod integrator;
pub mod output;
pub mod quadrature;
pub mod scenario;
pub mod tridiag;

pub use analysis::{DecayFit, ReportCard, RunOutcome, ThetaDiagnostics};
pub use constants::WellConstants;
pub use domain::{DiscreteOperators, Mesh1D, Norm, ProblemParams, Purpose, Source, State};
pub use error::{Error, Result};
pub use functionals::{EnergySnapshot, Region, SetMembership, TargetSet};
pub use integrator::{SimConfig, Termination, Trajectory};
pub use scenario::{ScenarioConfig, Setup};
