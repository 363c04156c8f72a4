pub mod error;
pub mod lattice;
pub mod pauli;
pub mod divdiff;
pub mod spectral;
pub mod replica;
pub mod dsl;
pub mod disorder;
pub mod model;
pub mod verifier;
pub mod runner;

pub use error::{Error, Result};
