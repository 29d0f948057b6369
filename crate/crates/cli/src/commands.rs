//! One function per subcommand. Each reads its inputs from a [`RunConfig`],
//! writes its artifacts into the output directory next to the resolved
//! config, and returns a summary for printing.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use text2action::cells::{DiscriminatorParams, GeneratorParams};
use text2action::checkpoint::{config_hash, Checkpoint};
use text2action::data::{
    fit_to_skeleton, gaussian_smooth, generate_synthetic_dataset, load_dataset, max_joint_speed, mean_first_pose,
    save_dataset, speed_limit, write_trajectory_csv, ActionSequence, DatasetRecord, JointPositions,
};
use text2action::embedding::{tokenize, train_embeddings, EmbeddingMatrix, Vocabulary};
use text2action::encoder::EncoderParams;
use text2action::eval::{evaluate_generations, EvalReport};
use text2action::params::GroupDims;
use text2action::tensor::{AdamConfig, SeededRng, Tensor};
use text2action::training::{
    prepare_pairs, pretrain_autoencoder, train_gan, transfer_and_freeze, write_metrics_csv, AutoencoderParams,
    GanState, StepMetrics, Text2Action, TrainError, TrainingConfig, TrainingPair,
};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const AE_LOSS_FILE: &str = "ae_loss.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.json";
pub const NAN_DUMP_FILE: &str = "nan_dump.json";

const AUTOENCODER_KIND: &str = "autoencoder";
const GAN_KIND: &str = "gan";
const AE_PREFIX: &str = "ae";
const TRAIN_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSummary {
    pub path: PathBuf,
    pub records: usize,
    /// Sentence and record count per class.
    pub classes: Vec<(String, usize)>,
}

impl fmt::Display for SynthSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "wrote {} records to {}", self.records, self.path.display())?;
        for (sentence, count) in &self.classes {
            writeln!(f, "  {count:>4}  {sentence}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSummary {
    pub path: PathBuf,
    pub vocab_size: usize,
    pub dim: usize,
}

impl fmt::Display for EmbeddingSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "wrote {} embeddings of width {} to {}",
            self.vocab_size,
            self.dim,
            self.path.display()
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSummary {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

impl PretrainSummary {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for PretrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "pretrained {} epochs ({} steps); final loss {}",
            self.epoch_losses.len(),
            self.steps,
            self.final_loss()
        )?;
        writeln!(f, "wrote {} and {}", self.checkpoint.display(), self.loss_csv.display())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanSummary {
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub steps: u64,
    pub last: Option<StepMetrics>,
}

impl fmt::Display for GanSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "trained {} GAN steps", self.steps)?;
        if let Some(m) = &self.last {
            write!(
                f,
                "; V_D {:.4} V_G {:.4} y_real {:.3} y_fake {:.3}",
                m.v_d, m.v_g, m.mean_y_real, m.mean_y_fake
            )?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "wrote {} and {}",
            self.checkpoint.display(),
            self.metrics_csv.display()
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateSummary {
    pub samples: Vec<PathBuf>,
    pub trajectories: Vec<PathBuf>,
    pub unknown: Vec<String>,
}

impl fmt::Display for GenerateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.samples.iter().chain(&self.trajectories) {
            writeln!(f, "wrote {}", p.display())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluateSummary {
    pub path: PathBuf,
    pub report: EvalReport,
}

impl fmt::Display for EvaluateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.report;
        writeln!(
            f,
            "accuracy {:.3} diversity {:.4} proximity {:.4}",
            r.accuracy, r.diversity, r.proximity
        )?;
        for c in &r.classes {
            writeln!(
                f,
                "  {:.3} {:.4} {:.4}  {}",
                c.accuracy, c.diversity, c.proximity, c.sentence
            )?;
        }
        writeln!(f, "wrote {}", self.path.display())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySummary {
    pub path: PathBuf,
    pub frames: usize,
    pub max_speed: f64,
}

impl fmt::Display for TrajectorySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "wrote {} frames to {} (peak joint speed {:.4})",
            self.frames,
            self.path.display(),
            self.max_speed
        )
    }
}

/// Writes the synthetic dataset.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthSummary> {
    let records = generate_synthetic_dataset(&cfg.synthetic_spec())?;
    let path = cfg.dataset_path();
    prepare_output(cfg, &[&path])?;
    save_dataset(&records, &path)?;
    let mut classes: Vec<(String, usize)> = Vec::new();
    for r in &records {
        let s = r.sentence_text();
        match classes.iter_mut().find(|(c, _)| *c == s) {
            Some((_, n)) => *n += 1,
            None => classes.push((s, 1)),
        }
    }
    Ok(SynthSummary {
        path,
        records: records.len(),
        classes,
    })
}

/// Trains skip-gram embeddings on the dataset's sentences.
pub fn cmd_train_embeddings(cfg: &RunConfig) -> Result<EmbeddingSummary> {
    let dataset = cfg.dataset_path();
    require(&[&dataset])?;
    let records = load_dataset(&dataset)?;
    let corpus: Vec<Vec<String>> = records.iter().map(|r| r.sentence.clone()).collect();
    let vocab = Vocabulary::build(&corpus, cfg.options.min_count)?;
    let matrix = train_embeddings(&corpus, &vocab, &cfg.skip_gram())?;
    let path = cfg.embeddings_path();
    prepare_output(cfg, &[&path])?;
    matrix.save(&vocab, &path)?;
    Ok(EmbeddingSummary {
        path,
        vocab_size: vocab.len(),
        dim: matrix.dim(),
    })
}

/// Pretrains the autoencoder; writes its checkpoint and per-epoch losses.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PretrainSummary> {
    let (dataset, embeddings) = (cfg.dataset_path(), cfg.embeddings_path());
    require(&[&dataset, &embeddings])?;
    let records = load_dataset(&dataset)?;
    let pairs = training_pairs(cfg, &records)?;
    let x0 = mean_first_pose(&records)?.to_tensor();
    let (checkpoint, loss_csv) = (cfg.autoencoder_path(), cfg.out().join(AE_LOSS_FILE));
    prepare_output(cfg, &[&checkpoint])?;

    let result = pretrain_autoencoder(&pairs, &x0, &cfg.training).map_err(|e| numeric(e, cfg))?;

    let mut ck = base_checkpoint(cfg, AUTOENCODER_KIND);
    ck.insert_group(AE_PREFIX, &result.params);
    ck.insert("x0", x0);
    ck.save(&checkpoint)?;
    write_with(&loss_csv, |w| {
        writeln!(w, "epoch,loss")?;
        for (i, l) in result.epoch_losses.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        Ok(())
    })?;
    Ok(PretrainSummary {
        checkpoint,
        loss_csv,
        epoch_losses: result.epoch_losses,
        steps: result.step_losses.len(),
    })
}

/// Transfers the autoencoder into the GAN, freezes E and trains G and D.
pub fn cmd_train_gan(cfg: &RunConfig) -> Result<GanSummary> {
    let (source, dataset, embeddings) = (cfg.autoencoder_path(), cfg.dataset_path(), cfg.embeddings_path());
    require(&[&source, &dataset, &embeddings])?;
    let ae_ck = load_checkpoint(&source, cfg, AUTOENCODER_KIND)?;
    let ae = ae_ck.group(AE_PREFIX, &AutoencoderParams::for_config(&cfg.training))?;
    let x0 = ae_ck.get("x0")?.clone();
    let records = load_dataset(&dataset)?;
    let pairs = training_pairs(cfg, &records)?;
    let (checkpoint, metrics_csv) = (cfg.gan_path(), cfg.out().join(METRICS_FILE));
    prepare_output(cfg, &[&checkpoint])?;

    let mut rng = SeededRng::new(cfg.training.seed).fork(TRAIN_STREAM);
    let mut state = transfer_and_freeze(&ae, x0, &cfg.training, &mut rng);
    let every = cfg.training.checkpoint_every as u64;
    train_gan(&pairs, &mut state, &cfg.training, &mut rng, |s| {
        if every > 0 && s.step % every == 0 {
            let path = cfg.out().join(format!("gan_step{}.ckpt", s.step));
            gan_checkpoint(cfg, s)
                .save(&path)
                .map_err(|e| TrainError::Input(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    })
    .map_err(|e| numeric(e, cfg))?;

    gan_checkpoint(cfg, &state).save(&checkpoint)?;
    write_with(&metrics_csv, |w| write_metrics_csv(w, &state.metrics))?;
    Ok(GanSummary {
        checkpoint,
        metrics_csv,
        steps: state.step,
        last: state.metrics.last().cloned(),
    })
}

/// Samples `samples` motions for `sentence`, one noise stream per sample.
pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    let tokens = tokenize(cfg.options.sentence.as_deref().unwrap_or(""));
    if tokens.is_empty() {
        return Err(CliError::Input("the sentence is empty".into()));
    }
    if cfg.options.samples == 0 {
        return Err(CliError::Input("samples must be positive".into()));
    }
    let (gan, embeddings) = (cfg.gan_path(), cfg.embeddings_path());
    require(&[&gan, &embeddings])?;
    let model = load_model(cfg)?;
    let (vocab, matrix) = load_embeddings(cfg)?;
    let (ids, unknown) = vocab.encode(&tokens);
    if !unknown.is_empty() {
        warn!("out-of-vocabulary words mapped to unknown: {}", unknown.join(", "));
    }
    let embedded = matrix.embed(&ids)?.vectors;
    prepare_output(cfg, &[])?;

    let mut summary = GenerateSummary {
        samples: Vec::new(),
        trajectories: Vec::new(),
        unknown,
    };
    for i in 0..cfg.options.samples {
        let mut rng = SeededRng::new(cfg.training.seed).fork(i as u64);
        let frames = model.sample(&embedded, &mut rng)?;
        check_finite(cfg, &frames, i)?;
        let action = ActionSequence::from_tensors(&frames, cfg.training.fps)?;
        let record = DatasetRecord {
            id: format!("sample-{i}"),
            sentence: tokens.clone(),
            action,
        };
        let path = cfg.out().join(format!("sample_{i}.jsonl"));
        save_dataset(std::slice::from_ref(&record), &path)?;
        summary.samples.push(path);
        if cfg.options.skeleton {
            let path = cfg.out().join(format!("trajectory_{i}.csv"));
            write_trajectory(cfg, &record.action, &path)?;
            summary.trajectories.push(path);
        }
    }
    Ok(summary)
}

/// Scores `eval_samples` generations per dataset sentence; writes `eval.json`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluateSummary> {
    let (gan, dataset, embeddings) = (cfg.gan_path(), cfg.dataset_path(), cfg.embeddings_path());
    require(&[&gan, &dataset, &embeddings])?;
    let model = load_model(cfg)?;
    let (vocab, matrix) = load_embeddings(cfg)?;
    let records = load_dataset(&dataset)?;
    prepare_output(cfg, &[])?;

    let mut rng = SeededRng::new(cfg.training.seed).fork(EVAL_STREAM);
    let mut generations: Vec<(String, Vec<ActionSequence>)> = Vec::new();
    for r in &records {
        let sentence = r.sentence_text();
        if generations.iter().any(|(s, _)| *s == sentence) {
            continue;
        }
        let embedded = matrix.embed(&vocab.encode(&r.sentence).0)?.vectors;
        let samples = (0..cfg.options.eval_samples)
            .map(|_| {
                let frames = model.sample(&embedded, &mut rng)?;
                Ok(ActionSequence::from_tensors(&frames, cfg.training.fps)?)
            })
            .collect::<Result<Vec<_>>>()?;
        generations.push((sentence, samples));
    }
    let report = evaluate_generations(&records, &generations);
    let path = cfg.out().join(EVAL_FILE);
    write_json(&path, &report)?;
    Ok(EvaluateSummary { path, report })
}

/// Smooths one record, fits it to the skeleton and applies the speed limit.
pub fn cmd_export_trajectory(cfg: &RunConfig) -> Result<TrajectorySummary> {
    let input = cfg.options.input.clone().unwrap_or_else(|| cfg.dataset_path());
    require(&[&input])?;
    let records = load_dataset(&input)?;
    let record = records.get(cfg.options.record).ok_or_else(|| {
        CliError::Input(format!(
            "record {} out of range; {} holds {} records",
            cfg.options.record,
            input.display(),
            records.len()
        ))
    })?;
    let path = cfg.out().join("trajectory.csv");
    prepare_output(cfg, &[])?;
    let trajectory = write_trajectory(cfg, &record.action, &path)?;
    Ok(TrajectorySummary {
        path,
        frames: trajectory.len(),
        max_speed: max_joint_speed(&trajectory, record.action.fps),
    })
}

/// Smoothing, skeleton fitting and speed limiting, in that order.
pub fn robot_trajectory(cfg: &RunConfig, action: &ActionSequence) -> Result<Vec<JointPositions>> {
    let smoothed = gaussian_smooth(action, cfg.options.smooth_sigma)?;
    let joints = smoothed
        .frames
        .iter()
        .map(|f| fit_to_skeleton(f, &cfg.options.bone_lengths))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(speed_limit(&joints, cfg.options.max_joint_speed, action.fps)?)
}

fn write_trajectory(cfg: &RunConfig, action: &ActionSequence, path: &Path) -> Result<Vec<JointPositions>> {
    let trajectory = robot_trajectory(cfg, action)?;
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_trajectory_csv(&mut w, &trajectory, action.fps)?;
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(trajectory)
}

/// Loads the frozen encoder, generator and start pose from the GAN checkpoint.
pub fn load_model(cfg: &RunConfig) -> Result<Text2Action> {
    let path = cfg.gan_path();
    require(&[&path])?;
    let ck = load_checkpoint(&path, cfg, GAN_KIND)?;
    let t = &cfg.training;
    Ok(Text2Action {
        encoder: ck.group("E", &encoder_template(t))?,
        generator: ck.group(
            "G",
            &GeneratorParams::zeros(t.hidden, t.pose_dim, t.pose_dim, t.noise_dim),
        )?,
        x0: ck.get("x0")?.clone(),
        activation: t.activation,
        output_len: t.output_len,
    })
}

/// Loads the embedding file and checks its width against `embed_dim`.
pub fn load_embeddings(cfg: &RunConfig) -> Result<(Vocabulary, EmbeddingMatrix)> {
    let path = cfg.embeddings_path();
    let (vocab, matrix) = EmbeddingMatrix::load(&path)?;
    if matrix.dim() != cfg.training.embed_dim {
        return Err(CliError::Config(format!(
            "embed_dim mismatch: {} holds width {}, config expects {}",
            path.display(),
            matrix.dim(),
            cfg.training.embed_dim
        )));
    }
    Ok((vocab, matrix))
}

fn encoder_template(t: &TrainingConfig) -> EncoderParams {
    EncoderParams::zeros(GroupDims::new(t.hidden, t.embed_dim, 0))
}

fn training_pairs(cfg: &RunConfig, records: &[DatasetRecord]) -> Result<Vec<TrainingPair>> {
    let (vocab, matrix) = load_embeddings(cfg)?;
    Ok(prepare_pairs(records, &vocab, &matrix, cfg.training.output_len)?)
}

fn base_checkpoint(cfg: &RunConfig, kind: &str) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.set_meta("kind", kind);
    ck.set_meta("profile", cfg.profile);
    ck.set_meta("activation", cfg.training.activation);
    let training = serde_json::to_string(&cfg.training).expect("serializable");
    ck.set_meta("config_hash", config_hash(&training));
    for (name, value) in cfg.training.dimensions() {
        ck.set_meta(name, value);
    }
    ck
}

fn gan_checkpoint(cfg: &RunConfig, state: &GanState) -> Checkpoint {
    let mut ck = base_checkpoint(cfg, GAN_KIND);
    ck.set_meta("step", state.step);
    ck.insert_group("E", &state.encoder);
    ck.insert_group("G", &state.generator);
    ck.insert_group("D", &state.discriminator);
    ck.insert_adam("adam_g", &state.adam_g);
    ck.insert_adam("adam_d", &state.adam_d);
    ck.insert("x0", state.x0.clone());
    ck
}

/// Restores a full GAN state, optimizer moments included.
pub fn load_gan_state(cfg: &RunConfig) -> Result<GanState> {
    let path = cfg.gan_path();
    require(&[&path])?;
    let ck = load_checkpoint(&path, cfg, GAN_KIND)?;
    let t = &cfg.training;
    let step = ck
        .meta("step")?
        .parse()
        .map_err(|e| CliError::Input(format!("{}: step: {e}", path.display())))?;
    Ok(GanState {
        encoder: ck.group("E", &encoder_template(t))?,
        generator: ck.group(
            "G",
            &GeneratorParams::zeros(t.hidden, t.pose_dim, t.pose_dim, t.noise_dim),
        )?,
        discriminator: ck.group("D", &DiscriminatorParams::zeros(t.hidden, t.pose_dim, t.noise_dim))?,
        adam_g: ck.adam("adam_g", AdamConfig::with_lr(t.lr_g))?,
        adam_d: ck.adam("adam_d", AdamConfig::with_lr(t.lr_d))?,
        step,
        x0: ck.get("x0")?.clone(),
        metrics: Vec::new(),
    })
}

/// Loads a checkpoint of the given kind whose sizes and activation match.
pub fn load_checkpoint(path: &Path, cfg: &RunConfig, kind: &str) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let found = ck.meta("kind")?;
    if found != kind {
        return Err(CliError::Config(format!(
            "{} is a {found} checkpoint, expected {kind}",
            path.display()
        )));
    }
    ck.check_dimensions(&cfg.training.dimensions())
        .map_err(|e| CliError::Config(format!("dimension mismatch in {}: {e}", path.display())))?;
    let act = ck.meta("activation")?;
    if act != cfg.training.activation.to_string() {
        return Err(CliError::Config(format!(
            "activation mismatch in {}: checkpoint uses {act}, config uses {}",
            path.display(),
            cfg.training.activation
        )));
    }
    Ok(ck)
}

/// Fails with a config error naming every path that does not exist.
pub fn require(paths: &[&Path]) -> Result<()> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(format!("missing inputs: {}", missing.join(", "))))
    }
}

/// Creates the output directory and the parents of `extra`, then persists
/// the resolved config.
fn prepare_output(cfg: &RunConfig, extra: &[&Path]) -> Result<()> {
    for dir in std::iter::once(cfg.out()).chain(extra.iter().filter_map(|p| p.parent())) {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    let path = cfg.persist()?;
    info!("resolved config written to {}", path.display());
    Ok(())
}

/// Maps a non-finite training failure to a dump file and exit code 2.
fn numeric(e: TrainError, cfg: &RunConfig) -> CliError {
    match e {
        TrainError::NonFinite { step, what, dump } => {
            let path = cfg.out().join(NAN_DUMP_FILE);
            if let Err(io) = fs::write(&path, dump + "\n") {
                return CliError::io(&path, io);
            }
            CliError::Numeric {
                what: format!("{what} at step {step}"),
                dump: path,
            }
        }
        other => other.into(),
    }
}

fn check_finite(cfg: &RunConfig, frames: &[Tensor], sample: usize) -> Result<()> {
    if frames.iter().all(|f| f.data().iter().all(|v| v.is_finite())) {
        return Ok(());
    }
    let path = cfg.out().join(NAN_DUMP_FILE);
    let dump = serde_json::json!({
        "sample": sample,
        "frames": frames.iter().map(|f| f.data().iter().map(|v| v.to_string()).collect::<Vec<_>>()).collect::<Vec<_>>(),
    });
    write_json(&path, &dump)?;
    Err(CliError::Numeric {
        what: format!("generated sample {sample}"),
        dump: path,
    })
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}
