//! Command-line pipeline: synthesize data, train embeddings, pretrain the
//! autoencoder, train the GAN, then generate, evaluate and export
//! trajectories. Every command takes a resolved [`RunConfig`].

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_evaluate, cmd_export_trajectory, cmd_generate, cmd_pretrain, cmd_synth, cmd_train_embeddings, cmd_train_gan,
};
pub use config::{RunConfig, RunOptions};
pub use error::{CliError, Result};
