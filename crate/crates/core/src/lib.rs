//! Numerical companion to a covering theorem for analytic maps of the unit
//! disk: multiplicity-counted covering areas, growth functions, lifts of
//! circles through branches of the inverse, and the modulus estimates that
//! tie them to a universal radius.

pub mod error;
pub mod coverage;
pub mod funcmodel;
pub mod lifting;
pub mod harness;
pub mod modulus;

pub use error::{Error, Result};
pub use funcmodel::{parse_spec, serialize_spec, ComplexValue, FunctionSpec, HoloMap};
