//! Text-to-action generation: a sentence is encoded by an LSTM, and an
//! attention decoder driven by Gaussian noise emits a sequence of upper-body
//! poses. Training pretrains a language/action autoencoder, then plays the
//! generator against a discriminator.

pub mod params;

pub mod cells;
pub mod checkpoint;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod tensor;
pub mod training;

pub use error::{Error, ModelError};
