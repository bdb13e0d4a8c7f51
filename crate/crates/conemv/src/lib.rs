//! Cone-constrained continuous-time mean-variance portfolio selection in
//! Levy market models.
//!
//! The crate solves the pair of coupled backward equations for the
//! opportunity processes of the constrained quadratic hedging problem,
//! extracts the sign-switching feedback policy, simulates the optimal wealth
//! process, assembles the classical mean-variance solutions, and validates
//! everything against an exact discrete-time dynamic-programming oracle on
//! scenario trees.

pub mod cones;
pub mod drift;
pub mod linalg;
pub mod model;
pub mod opportunity;
pub mod oracle;
pub mod simulate;
