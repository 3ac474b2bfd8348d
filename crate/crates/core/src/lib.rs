//! The (q, mu, nu)-Boson process and (q, mu, nu)-TASEP.
//!
//! Four independent ways of computing the same q-moments live here:
//! Monte Carlo simulation ([`chains`]), exact evolution of the dual Boson
//! chain in rational arithmetic ([`exact`]), nested contour integrals
//! ([`contour`]) and Fredholm determinants ([`fredholm`]). The building
//! blocks are in [`qseries`] and [`qdist`].
//!
//! Finite formulas are generic over [`Scalar`]; use [`Rational`] when an
//! identity should hold exactly and `f64` otherwise.

pub mod chains;
pub mod contour;
pub mod error;
pub mod exact;
pub mod fredholm;
pub mod qdist;
pub mod qseries;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{parse_rational, Scalar};

/// Arbitrary-precision rational scalar.
pub type Rational = num_rational::BigRational;
/// Complex scalar used by contour and Fredholm code.
pub type CScalar = num_complex::Complex64;

pub use qdist::ModelParams;
pub type FloatParams = qdist::ModelParams<f64>;
pub type ExactParams = qdist::ModelParams<Rational>;




pub type FloatSchedule = chains::ParamSchedule<f64>;
pub type ExactSchedule = chains::ParamSchedule<Rational>;
pub type ExactVector = exact::StateVector<Rational>;
pub type FloatVector = exact::StateVector<f64>;
