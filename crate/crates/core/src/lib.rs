pub mod continuum;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fastmath;
pub mod kde;
pub mod loss;
pub mod ot;
pub mod potentials;
pub mod sde;
pub mod train;
pub mod velocity;

pub use error::{Error, Result};
