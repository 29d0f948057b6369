//! Text → action → text autoencoder used to pretrain the encoder and the
//! generator's decoder.

use log::{debug, info};

use super::{batches, TrainError, TrainingConfig, TrainingPair};
use crate::cells::GeneratorParams;
use crate::encoder::EncoderParams;
use crate::error::ModelError;
use crate::params::{accumulate, adam_update, clip_global_norm, composite_group, GroupDims, ParamGroup};
use crate::tensor::{Activation, AdamConfig, AdamState, SeededRng, Tape, Tensor, Var};

composite_group! {
    /// Text encoder `E`, the text-to-action decoder (same layout as G), and
    /// the action-to-text encoder and decoder.
    AutoencoderParams / AutoencoderVars {
        encoder: EncoderParams = "E",
        t2a: GeneratorParams = "T2A",
        a2t_encoder: EncoderParams = "A2T_enc",
        a2t_decoder: GeneratorParams = "A2T_dec",
    }
}

impl AutoencoderParams {
    pub fn zeros(n: usize, ne: usize, nx: usize, nz: usize) -> Self {
        Self {
            encoder: EncoderParams::zeros(GroupDims::new(n, ne, 0)),
            t2a: GeneratorParams::zeros(n, nx, nx, nz),
            a2t_encoder: EncoderParams::zeros(GroupDims::new(n, nx, 0)),
            a2t_decoder: GeneratorParams::zeros(n, ne, ne, nz),
        }
    }

    pub fn for_config(cfg: &TrainingConfig) -> Self {
        Self::zeros(cfg.hidden, cfg.embed_dim, cfg.pose_dim, cfg.noise_dim)
    }

    pub fn init(cfg: &TrainingConfig, rng: &mut SeededRng) -> Self {
        let mut p = Self::for_config(cfg);
        p.init_uniform(rng, cfg.init_scale);
        p
    }
}

impl AutoencoderVars {
    /// Returns `(x̂_1..x̂_{T_o}, e′_1..e′_{T_i})`. Both decoders run free from
    /// their start input (`x0`, and a zero embedding) with zero noise.
    pub fn forward(
        &self,
        tape: &mut Tape,
        e: &[Var],
        x: &[Var],
        x0: Var,
        act: Activation,
    ) -> Result<(Vec<Var>, Vec<Var>), ModelError> {
        if e.is_empty() || x.is_empty() {
            return Err(ModelError::Input("autoencoder needs a sentence and an action".into()));
        }
        let nz = tape.value(self.t2a.cell.h_s).shape()[1];
        let ne = tape.value(self.a2t_decoder.readout.b_x).len();
        let zero_z = tape.constant(Tensor::zeros(&[nz]));

        let h = self.encoder.encode(tape, e, act)?;
        let x_hat = self.t2a.decode(tape, &h, &vec![zero_z; x.len()], x0, act)?;

        let s = self.a2t_encoder.encode(tape, x, act)?;
        let e0 = tape.constant(Tensor::zeros(&[ne]));
        let e_hat = self.a2t_decoder.decode(tape, &s, &vec![zero_z; e.len()], e0, act)?;
        Ok((x_hat, e_hat))
    }
}

/// `(a1/T_o) Σ‖x_t − x̂_t‖² + (a2/T_i) Σ‖e_t − e′_t‖²` on the tape.
pub(crate) fn loss_var(
    tape: &mut Tape,
    x: &[Var],
    x_hat: &[Var],
    e: &[Var],
    e_hat: &[Var],
    a1: f64,
    a2: f64,
) -> Result<Var, ModelError> {
    check_lengths(x.len(), x_hat.len(), e.len(), e_hat.len())?;
    let mut sq = |a: &[Var], b: &[Var]| -> Result<Var, ModelError> {
        let mut terms = Vec::with_capacity(a.len());
        for (&p, &q) in a.iter().zip(b) {
            let d = tape.sub(p, q)?;
            let d2 = tape.mul(d, d)?;
            terms.push(tape.sum(d2));
        }
        Ok(tape.add_all(&terms)?)
    };
    let lx = sq(x, x_hat)?;
    let le = sq(e, e_hat)?;
    let lx = tape.scale(lx, a1 / x.len() as f64);
    let le = tape.scale(le, a2 / e.len() as f64);
    Ok(tape.add(lx, le)?)
}

fn check_lengths(x: usize, x_hat: usize, e: usize, e_hat: usize) -> Result<(), ModelError> {
    if x != x_hat || e != e_hat || x == 0 || e == 0 {
        return Err(ModelError::Input(format!(
            "reconstruction lengths disagree or are empty: x {x} vs x̂ {x_hat}, e {e} vs e′ {e_hat}"
        )));
    }
    Ok(())
}

pub fn autoencoder_forward(
    e: &[Tensor],
    x: &[Tensor],
    x0: &Tensor,
    params: &AutoencoderParams,
    act: Activation,
) -> Result<(Vec<Tensor>, Vec<Tensor>), ModelError> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let ev: Vec<Var> = e.iter().map(|t| tape.constant(t.clone())).collect();
    let xv: Vec<Var> = x.iter().map(|t| tape.constant(t.clone())).collect();
    let x0 = tape.constant(x0.clone());
    let (xh, eh) = vars.forward(&mut tape, &ev, &xv, x0, act)?;
    let read = |vs: Vec<Var>| vs.into_iter().map(|v| tape.value(v).clone()).collect();
    Ok((read(xh), read(eh)))
}

pub fn autoencoder_loss(
    x: &[Tensor],
    x_hat: &[Tensor],
    e: &[Tensor],
    e_hat: &[Tensor],
    a1: f64,
    a2: f64,
) -> Result<f64, ModelError> {
    check_lengths(x.len(), x_hat.len(), e.len(), e_hat.len())?;
    let sq = |a: &[Tensor], b: &[Tensor]| -> Result<f64, ModelError> {
        let mut total = 0.0;
        for (p, q) in a.iter().zip(b) {
            let d = p.sub(q)?;
            total += d.data().iter().map(|v| v * v).sum::<f64>();
        }
        Ok(total)
    };
    Ok(a1 / x.len() as f64 * sq(x, x_hat)? + a2 / e.len() as f64 * sq(e, e_hat)?)
}

/// Loss and gradient of one pair.
pub(crate) fn pair_gradient(
    params: &AutoencoderParams,
    pair: &TrainingPair,
    x0: &Tensor,
    cfg: &TrainingConfig,
) -> Result<(f64, AutoencoderParams), ModelError> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true);
    let e: Vec<Var> = pair.embedded.iter().map(|t| tape.constant(t.clone())).collect();
    let x: Vec<Var> = pair.action.iter().map(|t| tape.constant(t.clone())).collect();
    let x0 = tape.constant(x0.clone());
    let (xh, eh) = vars.forward(&mut tape, &e, &x, x0, cfg.activation)?;
    let loss = loss_var(&mut tape, &x, &xh, &e, &eh, cfg.a1, cfg.a2)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).item(), AutoencoderParams::gradients(&vars, &grads)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainResult {
    pub params: AutoencoderParams,
    /// Mean minibatch loss of each epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
    /// Loss of every optimizer step.
    pub step_losses: Vec<f64>,
}

/// Minimizes the reconstruction loss with Adam over shuffled minibatches.
pub fn pretrain_autoencoder(
    pairs: &[TrainingPair],
    x0: &Tensor,
    cfg: &TrainingConfig,
) -> Result<PretrainResult, TrainError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::Input("no training pairs".into()));
    }
    let mut rng = SeededRng::new(cfg.seed).fork(1);
    let mut params = AutoencoderParams::init(cfg, &mut rng);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.ae_lr));
    let mut epoch_losses = Vec::with_capacity(cfg.ae_epochs);
    let mut step_losses = Vec::new();

    for epoch in 0..cfg.ae_epochs {
        let mut epoch_total = 0.0;
        let mut epoch_batches = 0;
        for batch in batches(pairs.len(), cfg.batch_size, &mut rng) {
            let mut grad = AutoencoderParams::for_config(cfg);
            let mut loss = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &i in &batch {
                let (l, g) = pair_gradient(&params, &pairs[i], x0, cfg)?;
                loss += scale * l;
                accumulate(&mut grad, &g, scale);
            }
            let step = step_losses.len() as u64;
            if !loss.is_finite() {
                let ids: Vec<&str> = batch.iter().map(|&i| pairs[i].id.as_str()).collect();
                return Err(TrainError::NonFinite {
                    step,
                    what: "autoencoder loss".into(),
                    dump: serde_json::json!({ "step": step, "batch": ids, "loss": loss.to_string() }).to_string(),
                });
            }
            if let Some(max) = cfg.grad_clip {
                clip_global_norm(&mut grad, max);
            }
            adam_update(&mut adam, &mut params, &grad, false)?;
            step_losses.push(loss);
            epoch_total += loss;
            epoch_batches += 1;
        }
        let mean = epoch_total / epoch_batches as f64;
        epoch_losses.push(mean);
        debug!("autoencoder epoch {epoch}: loss {mean:.6}");
        if (epoch + 1) % 50 == 0 || epoch + 1 == cfg.ae_epochs {
            info!("autoencoder epoch {}/{}: loss {mean:.6}", epoch + 1, cfg.ae_epochs);
        }
    }
    Ok(PretrainResult {
        params,
        epoch_losses,
        step_losses,
    })
}
