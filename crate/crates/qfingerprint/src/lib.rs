pub mod autoencoder;
pub mod corpus;
pub mod error;
pub mod featurize;
pub mod parse;
mod persist;

pub mod fingerprint;
pub use error::{Error, Result};
