pub mod error;
pub mod model;
pub mod quadrature;
pub mod resonances;
pub mod discretization;
pub mod dynamics;
pub mod par;
pub mod thermo;
pub mod config;
pub mod io;

pub use error::{Assumption, Error, Result};
