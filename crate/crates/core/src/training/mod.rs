//! Autoencoder pretraining, weight transfer, and adversarial training.

mod autoencoder;
mod gan;

pub use autoencoder::{
    autoencoder_forward, autoencoder_loss, pretrain_autoencoder, AutoencoderParams, AutoencoderVars, PretrainResult,
};
pub use gan::{
    gan_step, train_gan, transfer_and_freeze, write_metrics_csv, GanState, StepMetrics, METRICS_HEADER, PROB_EPSILON,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cells::{generate, sample_noise, GeneratorParams, NoiseSequence};
use crate::data::{DatasetRecord, POSE_DIM};
use crate::embedding::{EmbeddingMatrix, Vocabulary};
use crate::encoder::{encode, EncoderParams};
use crate::error::ModelError;
use crate::tensor::{Activation, SeededRng, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: u64, what: String, dump: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(format!("unknown profile `{other}` (expected desk or paper)")),
        }
    }
}

/// Model sizes and optimization settings for both training phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// LSTM hidden size `n`.
    pub hidden: usize,
    /// Noise width `n_z`.
    pub noise_dim: usize,
    /// Word-embedding width `n_e`.
    pub embed_dim: usize,
    /// Pose width `n_x`.
    pub pose_dim: usize,
    /// Generated frames `T_o`.
    pub output_len: usize,
    pub fps: f64,
    pub batch_size: usize,
    pub ae_epochs: usize,
    pub ae_lr: f64,
    pub gan_epochs: usize,
    pub lr_d: f64,
    pub lr_g: f64,
    pub a1: f64,
    pub a2: f64,
    /// Half-width of the uniform init for fresh weights.
    pub init_scale: f64,
    pub activation: Activation,
    /// Also copy the attention weights `W_a, U_a, v_a, b_a` into G at
    /// transfer; otherwise they start fresh like the noise matrices.
    pub transfer_attention: bool,
    /// Largest global gradient norm per update; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// GAN steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl TrainingConfig {
    pub fn desk() -> Self {
        Self {
            hidden: 16,
            noise_dim: 4,
            embed_dim: 8,
            pose_dim: POSE_DIM,
            output_len: 32,
            fps: 10.0,
            batch_size: 8,
            ae_epochs: 500,
            ae_lr: 1e-2,
            gan_epochs: 150,
            lr_d: 3e-4,
            lr_g: 3e-5,
            a1: 1.0,
            a2: 5.0,
            init_scale: 0.2,
            activation: Activation::Tanh,
            transfer_attention: true,
            grad_clip: Some(1.0),
            checkpoint_every: 0,
            seed: 0,
        }
    }

    pub fn paper() -> Self {
        Self {
            hidden: 256,
            noise_dim: 16,
            embed_dim: 64,
            pose_dim: POSE_DIM,
            output_len: 32,
            fps: 10.0,
            batch_size: 32,
            ae_epochs: 250,
            ae_lr: 5e-5,
            gan_epochs: 400,
            lr_d: 2e-6,
            lr_g: 2e-6,
            a1: 1.0,
            a2: 5.0,
            init_scale: 0.08,
            activation: Activation::Sigmoid,
            transfer_attention: false,
            grad_clip: None,
            checkpoint_every: 0,
            seed: 0,
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let sizes = [
            ("hidden", self.hidden),
            ("noise_dim", self.noise_dim),
            ("embed_dim", self.embed_dim),
            ("pose_dim", self.pose_dim),
            ("output_len", self.output_len),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(TrainError::Config(format!("{name} must be positive")));
        }
        let rates = [
            ("fps", self.fps),
            ("ae_lr", self.ae_lr),
            ("lr_d", self.lr_d),
            ("lr_g", self.lr_g),
            ("init_scale", self.init_scale),
        ];
        if let Some((name, v)) = rates.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(TrainError::Config(format!("{name} must be positive, got {v}")));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(TrainError::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if !(self.a1 >= 0.0 && self.a2 >= 0.0) {
            return Err(TrainError::Config("a1 and a2 must be non-negative".into()));
        }
        Ok(())
    }

    /// The sizes a checkpoint must agree with, by name.
    pub fn dimensions(&self) -> [(&'static str, usize); 5] {
        [
            ("hidden", self.hidden),
            ("noise_dim", self.noise_dim),
            ("embed_dim", self.embed_dim),
            ("pose_dim", self.pose_dim),
            ("output_len", self.output_len),
        ]
    }
}

/// An embedded sentence and its pose sequence, ready for training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub id: String,
    pub sentence: String,
    pub embedded: Vec<Tensor>,
    pub action: Vec<Tensor>,
}

/// Embeds every record's sentence. Actions must have `output_len` frames.
pub fn prepare_pairs(
    records: &[DatasetRecord],
    vocab: &Vocabulary,
    embeddings: &EmbeddingMatrix,
    output_len: usize,
) -> Result<Vec<TrainingPair>, TrainError> {
    if records.is_empty() {
        return Err(TrainError::Input("dataset is empty".into()));
    }
    records
        .iter()
        .map(|r| {
            if r.action.len() != output_len {
                return Err(TrainError::Input(format!(
                    "record `{}` has {} frames, expected {output_len}",
                    r.id,
                    r.action.len()
                )));
            }
            let (ids, _) = vocab.encode(&r.sentence);
            let embedded = embeddings
                .embed(&ids)
                .map_err(|e| TrainError::Input(format!("record `{}`: {e}", r.id)))?
                .vectors;
            Ok(TrainingPair {
                id: r.id.clone(),
                sentence: r.sentence_text(),
                embedded,
                action: r.action.to_tensors(),
            })
        })
        .collect()
}

/// Frozen encoder plus generator: everything needed to turn an embedded
/// sentence and a noise sequence into poses.
#[derive(Clone, Debug, PartialEq)]
pub struct Text2Action {
    pub encoder: EncoderParams,
    pub generator: GeneratorParams,
    pub x0: Tensor,
    pub activation: Activation,
    pub output_len: usize,
}

impl Text2Action {
    pub fn noise_dim(&self) -> usize {
        self.generator.cell.noise_dim()
    }

    pub fn encode(&self, embedded: &[Tensor]) -> Result<Vec<Tensor>, ModelError> {
        encode(embedded, &self.encoder, self.activation)
    }

    pub fn generate(&self, embedded: &[Tensor], noise: &NoiseSequence) -> Result<Vec<Tensor>, ModelError> {
        let h = self.encode(embedded)?;
        generate(&h, noise, &self.x0, &self.generator, self.activation)
    }

    pub fn sample(&self, embedded: &[Tensor], rng: &mut SeededRng) -> Result<Vec<Tensor>, ModelError> {
        let z = sample_noise(rng, self.output_len, self.noise_dim());
        self.generate(embedded, &z)
    }
}

/// Shuffled minibatches of indices; the last batch may be short.
pub(crate) fn batches(len: usize, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
