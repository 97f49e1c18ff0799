pub mod aggregates;
pub mod data;
pub mod estimators;
pub mod io;
pub mod el;
pub mod error;
pub mod linalg;
pub mod model;
pub mod parallel;
pub mod quadrature;
pub mod shift;
pub mod simulation;

pub use error::{Error, Result};
