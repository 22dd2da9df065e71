//! Entropy bounds for nonlinear time-varying and interconnected ODE systems.
//!
//! The crate computes closed-form upper and lower bounds on the topological
//! entropy of `x' = f(t, x)` restricted to a compact box of initial states,
//! plus a grid-based empirical estimate of the same quantity, and ships a CLI
//! (`entrobound`) that drives both from a small text spec format.
//!
//! Pipeline: [`expr`] parses and differentiates the vector field, [`system`]
//! assembles it with its Jacobian and block partition, [`ode`] integrates
//! trajectories / variational equations / initial-state ensembles, [`measures`]
//! provides the matrix-norm and matrix-measure kernels, [`bounds`] turns
//! sampled tail extrema of those kernels into entropy bounds, and [`empirical`]
//! estimates entropy directly from separated/spanning set cardinalities.

pub mod bounds;
pub mod cli;
pub mod empirical;
pub mod expr;
pub mod measures;
pub mod ode;
pub mod par;
pub mod specfile;
pub mod system;

pub use bounds::{BoundReport, HorizonConfig};
pub use expr::Expr;
pub use measures::Matrix;
pub use system::{BoxSet, Norm, Partition, System};
