//! Numerical laboratory for period-doubling renormalization of dissipative
//! Henon-like maps.

pub mod critical;
pub mod dynamics;
pub mod error;
pub mod lab;
pub mod numerics;
pub mod odometer;
pub mod pesin;
pub mod poly;
pub mod real;
pub mod renorm1d;
pub mod renorm2d;

pub use error::{LabError, Result};
pub use real::{DoubleDouble, Precision, Real};
