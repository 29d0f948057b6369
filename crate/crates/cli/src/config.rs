//! Run configuration: a flat JSON object holding every training setting plus
//! paths and command options.
//!
//! Values resolve in this order, later sources winning: the profile defaults,
//! the `--config` file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use text2action::data::{SyntheticSpec, NUM_BONES};
use text2action::embedding::SkipGramConfig;
use text2action::training::{Profile, TrainingConfig};

use crate::error::{CliError, Result};

pub const RUN_CONFIG_FILE: &str = "run_config.json";

/// Settings outside the model and optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    /// Output directory for every artifact a command writes.
    pub out: PathBuf,
    /// Dataset file; defaults to `out/dataset.jsonl`.
    pub dataset: Option<PathBuf>,
    /// Embedding file; defaults to `out/embeddings.txt`.
    pub embeddings: Option<PathBuf>,
    /// Autoencoder checkpoint; defaults to `out/autoencoder.ckpt`.
    pub autoencoder: Option<PathBuf>,
    /// GAN checkpoint; defaults to `out/gan.ckpt`.
    pub gan: Option<PathBuf>,
    pub classes: usize,
    pub per_class: usize,
    pub noise: f64,
    pub min_count: usize,
    pub sg_window: usize,
    pub sg_negatives: usize,
    pub sg_epochs: usize,
    pub sg_learning_rate: f64,
    pub sg_seed: u64,
    /// Sentence for `generate`.
    pub sentence: Option<String>,
    /// Samples drawn by `generate`.
    pub samples: usize,
    /// Also write fitted joint trajectories from `generate`.
    pub skeleton: bool,
    /// Generations per sentence in `evaluate`.
    pub eval_samples: usize,
    /// Gaussian smoothing width in frames before skeleton fitting.
    pub smooth_sigma: f64,
    /// Joint speed bound for trajectories, in length units per second.
    pub max_joint_speed: f64,
    /// Bone lengths in chain order: head, left shoulder, upper arm, forearm,
    /// then the right side.
    pub bone_lengths: [f64; NUM_BONES],
    /// Dataset-format file read by `export-trajectory`.
    pub input: Option<PathBuf>,
    /// Record index within `input`.
    pub record: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        let spec = SyntheticSpec::default();
        let sg = SkipGramConfig::default();
        Self {
            out: PathBuf::from("out"),
            dataset: None,
            embeddings: None,
            autoencoder: None,
            gan: None,
            classes: spec.classes,
            per_class: spec.per_class,
            noise: spec.noise,
            min_count: 1,
            sg_window: sg.window,
            sg_negatives: sg.negatives,
            sg_epochs: sg.epochs,
            sg_learning_rate: sg.learning_rate,
            sg_seed: sg.seed,
            sentence: None,
            samples: 3,
            skeleton: false,
            eval_samples: 50,
            smooth_sigma: 1.0,
            max_joint_speed: 1.0,
            bone_lengths: [0.25, 0.2, 0.3, 0.25, 0.2, 0.3, 0.25],
            input: None,
            record: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub training: TrainingConfig,
    pub options: RunOptions,
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("config structs serialize to objects"),
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        Self {
            profile,
            training: TrainingConfig::for_profile(profile),
            options: RunOptions::default(),
        }
    }

    /// Merges the layers, rejecting keys that no setting uses.
    pub fn resolve(profile: Option<Profile>, file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let file_map = match file {
            Some(path) => read_config_file(path)?,
            None => Map::new(),
        };
        let profile = match (profile, file_map.get("profile")) {
            (Some(p), _) => p,
            (None, Some(v)) => {
                serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("profile: {e}")))?
            }
            (None, None) => Profile::default(),
        };
        let mut flat = Self::for_profile(profile).to_flat();
        for (key, value) in file_map.into_iter().chain(overrides.iter().cloned()) {
            if !flat.contains_key(&key) {
                return Err(CliError::Config(format!("unknown config key `{key}`")));
            }
            if key != "profile" {
                flat.insert(key, value);
            }
        }
        let cfg = Self::from_flat(flat)?;
        cfg.training.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// The single flat object written to `run_config.json`.
    pub fn to_flat(&self) -> Map<String, Value> {
        let mut flat = Map::new();
        flat.insert("profile".into(), Value::String(self.profile.to_string()));
        flat.extend(object(serde_json::to_value(&self.training).expect("serializable")));
        flat.extend(object(serde_json::to_value(&self.options).expect("serializable")));
        flat
    }

    pub fn from_flat(mut flat: Map<String, Value>) -> Result<Self> {
        let profile = match flat.remove("profile") {
            Some(v) => serde_json::from_value(v).map_err(|e| CliError::Config(format!("profile: {e}")))?,
            None => Profile::default(),
        };
        let training_keys = object(serde_json::to_value(TrainingConfig::desk()).expect("serializable"));
        let (training, options): (Map<_, _>, Map<_, _>) =
            flat.into_iter().partition(|(k, _)| training_keys.contains_key(k));
        let training = serde_json::from_value(Value::Object(training)).map_err(|e| CliError::Config(e.to_string()))?;
        let options = serde_json::from_value(Value::Object(options)).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self {
            profile,
            training,
            options,
        })
    }

    pub fn out(&self) -> &Path {
        &self.options.out
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.path_or(&self.options.dataset, "dataset.jsonl")
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.path_or(&self.options.embeddings, "embeddings.txt")
    }

    pub fn autoencoder_path(&self) -> PathBuf {
        self.path_or(&self.options.autoencoder, "autoencoder.ckpt")
    }

    pub fn gan_path(&self) -> PathBuf {
        self.path_or(&self.options.gan, "gan.ckpt")
    }

    fn path_or(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.options.out.join(name))
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.options.classes,
            per_class: self.options.per_class,
            noise: self.options.noise,
            length: self.training.output_len,
            fps: self.training.fps,
            seed: self.training.seed,
        }
    }

    pub fn skip_gram(&self) -> SkipGramConfig {
        SkipGramConfig {
            dim: self.training.embed_dim,
            window: self.options.sg_window,
            negatives: self.options.sg_negatives,
            epochs: self.options.sg_epochs,
            learning_rate: self.options.sg_learning_rate,
            seed: self.options.sg_seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Value::Object(self.to_flat())).expect("serializable")
    }

    /// Writes the resolved config as `out/run_config.json`.
    pub fn persist(&self) -> Result<PathBuf> {
        let path = self.out().join(RUN_CONFIG_FILE);
        fs::create_dir_all(self.out()).map_err(|e| CliError::io(self.out(), e))?;
        fs::write(&path, self.to_json() + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

fn read_config_file(path: &Path) -> Result<Map<String, Value>> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Config(format!("{} must hold a JSON object", path.display()))),
        Err(e) => Err(CliError::Config(format!("{}: {e}", path.display()))),
    }
}

/// Parses `KEY=VALUE`, reading the value as JSON and falling back to a string.
pub fn parse_override(s: &str) -> std::result::Result<(String, Value), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}
