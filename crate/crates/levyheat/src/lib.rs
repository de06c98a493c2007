//! Numerical laboratory for the stochastic heat equation
//! `dX + AX dt = F(X) dt + dL` on (0,1) with Dirichlet `A = -Δ` and additive
//! compound Poisson noise `L`.
//!
//! * [`spectral`]: eigenbasis, `Ḣ^ρ` norms, semigroup, sine transform.
//! * [`fem`]: P1 elements, projections, the implicit Euler step operator.
//! * [`noise`]: Lévy measure model, jump paths, exact stochastic convolution.
//! * [`solver`]: the linearly implicit Euler scheme and the spectral reference.
//! * [`functional`]: path functionals built from time measures.
//! * [`malliavin`]: the add-one-point difference operator and its identities.
//! * [`harness`]: coupled Monte Carlo error sweeps and rate fits.
//! * [`checks`]: the verification suites behind `malliavin-verify` and `operator-checks`.

pub mod checks;
pub mod error;
pub mod fem;
pub mod functional;
pub mod harness;
pub mod malliavin;
pub mod noise;
pub mod par;
pub mod rng;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
