//! Adversarial training of G and D with the text encoder frozen.

use std::io::Write;

use log::info;
use serde::Serialize;

use super::{batches, AutoencoderParams, Text2Action, TrainError, TrainingConfig, TrainingPair};
use crate::cells::{sample_noise, DiscriminatorParams, GeneratorParams, NoiseSequence};
use crate::encoder::{encode, EncoderParams};
use crate::error::ModelError;
use crate::params::{accumulate, adam_update, clip_global_norm, ParamGroup};
use crate::tensor::{sigmoid, AdamConfig, AdamState, SeededRng, Tape, Tensor, Var};

/// Reported probabilities are clamped to `[ε, 1 − ε]`; scores outside that
/// band are counted as clamp events.
pub const PROB_EPSILON: f64 = 1e-7;

pub const METRICS_HEADER: &str = "step,V_D,V_G,mean_y_real,mean_y_fake,clamped";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub v_d: f64,
    pub v_g: f64,
    pub mean_y_real: f64,
    pub mean_y_fake: f64,
    /// Probabilities that hit the clamp this step.
    pub clamped: usize,
    /// Clamped `D(x, c)` per batch element.
    pub y_real: Vec<f64>,
    /// Clamped `D(G(z, c), c)` per batch element.
    pub y_fake: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanState {
    /// Frozen text encoder.
    pub encoder: EncoderParams,
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
    pub adam_g: AdamState,
    pub adam_d: AdamState,
    pub step: u64,
    /// Mean first pose, the generator's start input.
    pub x0: Tensor,
    pub metrics: Vec<StepMetrics>,
}

impl GanState {
    pub fn model(&self, cfg: &TrainingConfig) -> Text2Action {
        Text2Action {
            encoder: self.encoder.clone(),
            generator: self.generator.clone(),
            x0: self.x0.clone(),
            activation: cfg.activation,
            output_len: cfg.output_len,
        }
    }
}

/// Builds the GAN from a pretrained autoencoder.
///
/// E is copied and frozen. G takes the text-to-action decoder's cell tensors
/// listed in [`crate::cells::DecoderCellParams::SHARED`] and its pose readout,
/// plus its attention when `cfg.transfer_attention` is set. The noise
/// matrices, any attention left behind, and all of D start from the fresh init.
pub fn transfer_and_freeze(ae: &AutoencoderParams, x0: Tensor, cfg: &TrainingConfig, rng: &mut SeededRng) -> GanState {
    let (n, nx, nz) = (cfg.hidden, cfg.pose_dim, cfg.noise_dim);
    let mut generator = GeneratorParams::init(n, nx, nx, nz, rng, cfg.init_scale);
    let source = ae.t2a.cell.tensors();
    for (name, t) in generator.cell.tensors_mut() {
        if crate::cells::DecoderCellParams::SHARED.contains(&name.as_str()) {
            let (_, src) = source.iter().find(|(s, _)| *s == name).expect("same layout");
            *t = (*src).clone();
        }
    }
    generator.readout = ae.t2a.readout.clone();
    if cfg.transfer_attention {
        generator.attention = ae.t2a.attention.clone();
    }
    let discriminator = DiscriminatorParams::init(n, nx, nz, rng, cfg.init_scale);
    GanState {
        encoder: ae.encoder.clone(),
        generator,
        discriminator,
        adam_g: AdamState::new(AdamConfig::with_lr(cfg.lr_g)),
        adam_d: AdamState::new(AdamConfig::with_lr(cfg.lr_d)),
        step: 0,
        x0,
        metrics: Vec::new(),
    }
}

struct ElementResult {
    y_real: f64,
    y_fake: f64,
    clamped: usize,
    v_d: f64,
    v_g: f64,
    grad_d: DiscriminatorParams,
    grad_g: GeneratorParams,
}

/// One element's contribution to both value functions, scaled by `weight`,
/// with gradients taken against the current (pre-update) D and G.
fn element_terms(
    state: &GanState,
    h: &[Tensor],
    real: &[Tensor],
    noise: &NoiseSequence,
    weight: f64,
    cfg: &TrainingConfig,
) -> Result<ElementResult, ModelError> {
    let act = cfg.activation;
    let mut tape = Tape::new();
    let g = state.generator.bind(&mut tape, true);
    let d = state.discriminator.bind(&mut tape, true);
    let sources: Vec<Var> = h.iter().map(|t| tape.constant(t.clone())).collect();
    let real: Vec<Var> = real.iter().map(|t| tape.constant(t.clone())).collect();
    let z: Vec<Var> = noise.0.iter().map(|t| tape.constant(t.clone())).collect();
    let x0 = tape.constant(state.x0.clone());

    let fake = g.decode(&mut tape, &sources, &z, x0, act)?;
    let s_r = d.logit(&mut tape, &real, &sources, act)?;
    let s_f = d.logit(&mut tape, &fake, &sources, act)?;

    // ln y = ln σ(s) and ln(1 − y) = ln σ(−s) come straight from the logits,
    // so saturated scores keep their gradient.
    let hi = 1.0 - PROB_EPSILON;
    let (p_r, p_f) = (sigmoid(tape.value(s_r).item()), sigmoid(tape.value(s_f).item()));
    let outside = |p: f64| usize::from(!(PROB_EPSILON..=hi).contains(&p));
    let clamped = outside(p_r) + outside(p_f);

    let log_r = tape.log_sigmoid(s_r);
    let neg_f = tape.scale(s_f, -1.0);
    let log_not_f = tape.log_sigmoid(neg_f);
    let log_f = tape.log_sigmoid(s_f);
    let both = tape.add(log_r, log_not_f)?;
    let v_d = tape.sum(both);
    let v_d = tape.scale(v_d, weight);
    let v_g = tape.sum(log_f);
    let v_g = tape.scale(v_g, weight);

    let grad_d = DiscriminatorParams::gradients(&d, &tape.backward(v_d)?);
    let grad_g = GeneratorParams::gradients(&g, &tape.backward(v_g)?);
    Ok(ElementResult {
        y_real: p_r.clamp(PROB_EPSILON, hi),
        y_fake: p_f.clamp(PROB_EPSILON, hi),
        clamped,
        v_d: tape.value(v_d).item(),
        v_g: tape.value(v_g).item(),
        grad_d,
        grad_g,
    })
}

/// One adversarial update: ascend `V_D` for D, then the
/// non-saturating `V_G = mean log D(G(z, c), c)` for G. E is not touched.
pub fn gan_step(
    state: &mut GanState,
    batch: &[&TrainingPair],
    cfg: &TrainingConfig,
    rng: &mut SeededRng,
) -> Result<StepMetrics, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Input("empty batch".into()));
    }
    let weight = 1.0 / batch.len() as f64;
    let nz = state.generator.cell.noise_dim();
    let mut grad_d = DiscriminatorParams::zeros(cfg.hidden, cfg.pose_dim, nz);
    let mut grad_g = GeneratorParams::zeros(cfg.hidden, cfg.pose_dim, cfg.pose_dim, nz);
    let mut metrics = StepMetrics {
        step: state.step,
        v_d: 0.0,
        v_g: 0.0,
        mean_y_real: 0.0,
        mean_y_fake: 0.0,
        clamped: 0,
        y_real: Vec::with_capacity(batch.len()),
        y_fake: Vec::with_capacity(batch.len()),
    };
    for pair in batch {
        let noise = sample_noise(rng, cfg.output_len, nz);
        let h = encode(&pair.embedded, &state.encoder, cfg.activation)?;
        let r = element_terms(state, &h, &pair.action, &noise, weight, cfg)?;
        accumulate(&mut grad_d, &r.grad_d, 1.0);
        accumulate(&mut grad_g, &r.grad_g, 1.0);
        metrics.v_d += r.v_d;
        metrics.v_g += r.v_g;
        metrics.clamped += r.clamped;
        metrics.y_real.push(r.y_real);
        metrics.y_fake.push(r.y_fake);
    }
    metrics.mean_y_real = metrics.y_real.iter().sum::<f64>() * weight;
    metrics.mean_y_fake = metrics.y_fake.iter().sum::<f64>() * weight;

    if !(metrics.v_d.is_finite() && metrics.v_g.is_finite()) {
        let ids: Vec<&str> = batch.iter().map(|p| p.id.as_str()).collect();
        let dump = serde_json::json!({
            "step": state.step,
            "batch": ids,
            "V_D": metrics.v_d.to_string(),
            "V_G": metrics.v_g.to_string(),
            "y_real": metrics.y_real.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
            "y_fake": metrics.y_fake.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
        });
        return Err(TrainError::NonFinite {
            step: state.step,
            what: "value function".into(),
            dump: dump.to_string(),
        });
    }
    if metrics.clamped > 0 {
        log::warn!("step {}: {} probabilities clamped", state.step, metrics.clamped);
    }

    if let Some(max) = cfg.grad_clip {
        clip_global_norm(&mut grad_d, max);
        clip_global_norm(&mut grad_g, max);
    }
    adam_update(&mut state.adam_d, &mut state.discriminator, &grad_d, true)?;
    adam_update(&mut state.adam_g, &mut state.generator, &grad_g, true)?;
    state.step += 1;
    state.metrics.push(metrics.clone());
    Ok(metrics)
}

/// Runs `gan_epochs` epochs of shuffled minibatches. `on_step` sees the state
/// after every step, e.g. to write checkpoints.
pub fn train_gan(
    pairs: &[TrainingPair],
    state: &mut GanState,
    cfg: &TrainingConfig,
    rng: &mut SeededRng,
    mut on_step: impl FnMut(&GanState) -> Result<(), TrainError>,
) -> Result<(), TrainError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::Input("no training pairs".into()));
    }
    for epoch in 0..cfg.gan_epochs {
        for batch in batches(pairs.len(), cfg.batch_size, rng) {
            let items: Vec<&TrainingPair> = batch.iter().map(|&i| &pairs[i]).collect();
            gan_step(state, &items, cfg, rng)?;
            on_step(state)?;
        }
        if (epoch + 1) % 25 == 0 || epoch + 1 == cfg.gan_epochs {
            let m = state.metrics.last().expect("at least one step ran");
            info!(
                "gan epoch {}/{}: V_D {:.4} V_G {:.4} y_real {:.3} y_fake {:.3}",
                epoch + 1,
                cfg.gan_epochs,
                m.v_d,
                m.v_g,
                m.mean_y_real,
                m.mean_y_fake
            );
        }
    }
    Ok(())
}

pub fn write_metrics_csv<W: Write>(out: &mut W, metrics: &[StepMetrics]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for m in metrics {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            m.step, m.v_d, m.v_g, m.mean_y_real, m.mean_y_fake, m.clamped
        )?;
    }
    Ok(())
}
