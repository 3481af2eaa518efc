pub mod calibration;
pub mod cvar;
pub mod datagen;
pub mod drpcr;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod seeds;
pub mod simplex;
pub mod solvers;

pub use error::{Error, Result};
