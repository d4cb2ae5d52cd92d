//! Subspace-optimised EDMD surrogates of discrete-time dynamics.

pub mod dictionary;
pub mod dynamics;
pub mod edmd;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod manifold;
pub mod model_io;
pub mod objective;
pub mod optimizer;
pub mod prediction;
pub mod selfcheck;

pub use error::{Error, Result};
