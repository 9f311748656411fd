//! Boundary control synthesis for the Korteweg-de Vries equation on an
//! interval by the moment method.
//!
//! * [`spectral`]: eigenpairs of the skew-adjoint operator behind the
//!   slope-jump system and critical-length tests;
//! * [`moment`]: biorthogonal multipliers, control synthesis and a Gramian
//!   minimal-norm oracle;
//! * [`pde`]: finite-difference and modal time-domain solvers;
//! * [`control`]: the jump-to-Neumann transfer, null control and cost sweeps;
//! * [`nonlinear`]: reachability for the nonlinear equation by a fixed point
//!   of the linear reach operator, and a Newton-Picard null-control loop;
//! * [`config`], [`io`] and [`fit`]: run configuration, serialization and
//!   regression helpers used by the command-line tool.

// Comparisons are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod config;
pub mod control;
pub mod error;
pub mod fit;
pub mod io;
pub mod linalg;
pub mod moment;
pub mod nonlinear;
pub mod pde;
pub mod signal;
pub mod spectral;

pub use error::{KdvError, Result};
pub use num_complex::Complex64 as C64;
pub use signal::TimeSignal;
