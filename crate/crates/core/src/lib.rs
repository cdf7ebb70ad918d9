//! Limiting co-state arcs for infinite-horizon Bolza optimal control.
//!
//! The crate evaluates sensitivity integrals and Cauchy-formula co-state
//! reconstructions along a reference control, sweeps growing horizon
//! sequences to classify the normal/abnormal limit dichotomy, verifies the
//! Pontryagin maximum principle relations together with transversality at
//! the initial point, and carries the control-metric machinery used to
//! bound trajectory divergence from the reference flow.
//!
//! Entry points:
//! - [`problem`]: problem definitions, the expression DSL, and the built-in
//!   registry (`bolza-example`, `lq-scalar`, `zero`).
//! - [`integrate`]: state/cost/fundamental-matrix/adjoint integration.
//! - [`costate`]: horizon sweeps, backward shots, limit classification and
//!   the explicit co-state formulae.
//! - [`pmp`]: maximum-principle residuals and applicability probes.
//! - [`metric`]: the control (ultra)metric and divergence bounds.
//! - [`example`]: closed-form oracles for the worked Bolza example.

pub mod costate;
pub mod error;
pub mod example;
pub mod expr;
pub mod integrate;
pub mod metric;
pub mod ode;
pub mod pmp;
pub mod problem;

pub use error::CoreError;
