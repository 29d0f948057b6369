//! Attention decoder cell, pose readout, generator and discriminator.
//!
//! The decoder cell is shared by the generator, the discriminator and both
//! decoders of the autoencoder:
//!
//! ```text
//! x'  = W_x' x_prev + U_x' c + H_x' z + b_x'
//! o'  = σ(W_o' x' + U_o' g + b_o')
//! f'  = σ(W_f' x' + U_f' g + b_f')
//! i'  = σ(W_i' x' + U_i' g + b_i')
//! C'  = f' ∘ C'_prev + i' ∘ act(W_c' x' + U_c' g + b_c')
//! g'  = W_g (o' ∘ C') + U_g c + H_s z + b_g
//! ```
//!
//! The new hidden state is an affine readout of the gated cell with no outer
//! nonlinearity. The discriminator runs the same cell with `z = 0`.

use crate::encoder::{gate_preactivation, AttentionMemory, AttentionParams};
use crate::error::ModelError;
use crate::params::{composite_group, param_group, GroupDims, ParamGroup};
use crate::tensor::{Activation, SeededRng, Tape, Tensor, Var};

param_group! {
    /// Decoder cell weights. `input` is the width of the previous-output feed
    /// (poses for G and D, embeddings for the text-side decoder).
    DecoderCellParams / DecoderCellVars (n, input, nz) {
        w_g: "W_g" = [n, n],
        w_o: "W_o'" = [n, n],
        w_c: "W_c'" = [n, n],
        w_f: "W_f'" = [n, n],
        w_i: "W_i'" = [n, n],
        u_g: "U_g" = [n, n],
        u_o: "U_o'" = [n, n],
        u_x: "U_x'" = [n, n],
        u_c: "U_c'" = [n, n],
        u_f: "U_f'" = [n, n],
        u_i: "U_i'" = [n, n],
        w_x: "W_x'" = [n, input],
        h_s: "H_s" = [n, nz],
        h_x: "H_x'" = [n, nz],
        b_g: "b_g" = [n],
        b_o: "b_o'" = [n],
        b_x: "b_x'" = [n],
        b_c: "b_c'" = [n],
        b_f: "b_f'" = [n],
        b_i: "b_i'" = [n],
    }
}

param_group! {
    /// Affine readout `x = W_x g + b_x`; `input` here is the output width.
    ReadoutParams / ReadoutVars (n, out, _nz) {
        w_x: "W_x" = [out, n],
        b_x: "b_x" = [out],
    }
}

param_group! {
    DiscriminatorHeadParams / DiscriminatorHeadVars (n, _input, _nz) {
        w_d: "W_d" = [1, n],
        b_d: "b_d" = [1],
    }
}

composite_group! {
    /// Attention, decoder cell and readout: the generator G, and also the
    /// shape of both autoencoder decoders.
    GeneratorParams / GeneratorVars {
        attention: AttentionParams = "attention",
        cell: DecoderCellParams = "cell",
        readout: ReadoutParams = "readout",
    }
}

composite_group! {
    DiscriminatorParams / DiscriminatorVars {
        attention: AttentionParams = "attention",
        cell: DecoderCellParams = "cell",
        head: DiscriminatorHeadParams = "head",
    }
}

impl DecoderCellParams {
    /// Names of the cell tensors that do not touch the noise input.
    pub const SHARED: &'static [&'static str] = &[
        "W_g", "W_o'", "W_c'", "W_f'", "W_i'", "U_g", "U_o'", "U_x'", "U_c'", "U_f'", "U_i'", "W_x'", "b_g", "b_o'",
        "b_x'", "b_c'", "b_f'", "b_i'",
    ];

    pub fn noise_dim(&self) -> usize {
        self.h_s.shape()[1]
    }
}

impl GeneratorParams {
    /// `out` is the readout width (pose or embedding dimension).
    pub fn zeros(n: usize, input: usize, out: usize, nz: usize) -> Self {
        Self {
            attention: AttentionParams::with_hidden(n),
            cell: DecoderCellParams::zeros(GroupDims::new(n, input, nz)),
            readout: ReadoutParams::zeros(GroupDims::new(n, out, 0)),
        }
    }

    pub fn init(n: usize, input: usize, out: usize, nz: usize, rng: &mut SeededRng, scale: f64) -> Self {
        let mut p = Self::zeros(n, input, out, nz);
        p.init_uniform(rng, scale);
        p
    }
}

impl DiscriminatorParams {
    pub fn zeros(n: usize, nx: usize, nz: usize) -> Self {
        Self {
            attention: AttentionParams::with_hidden(n),
            cell: DecoderCellParams::zeros(GroupDims::new(n, nx, nz)),
            head: DiscriminatorHeadParams::zeros(GroupDims::new(n, 0, 0)),
        }
    }

    pub fn init(n: usize, nx: usize, nz: usize, rng: &mut SeededRng, scale: f64) -> Self {
        let mut p = Self::zeros(n, nx, nz);
        p.init_uniform(rng, scale);
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub g: Tensor,
    pub c: Tensor,
}

impl DecoderState {
    pub fn zeros(n: usize) -> Self {
        Self {
            g: Tensor::zeros(&[n]),
            c: Tensor::zeros(&[n]),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderStateVars {
    pub g: Var,
    pub c: Var,
}

impl DecoderStateVars {
    pub fn zeros(tape: &mut Tape, n: usize) -> Self {
        Self {
            g: tape.constant(Tensor::zeros(&[n])),
            c: tape.constant(Tensor::zeros(&[n])),
        }
    }
}

/// Noise sequence `z_1..z_T`, one standard normal vector per output frame.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSequence(pub Vec<Tensor>);

impl NoiseSequence {
    pub fn zeros(len: usize, nz: usize) -> Self {
        Self(vec![Tensor::zeros(&[nz]); len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn sample_noise(rng: &mut SeededRng, len: usize, nz: usize) -> NoiseSequence {
    NoiseSequence((0..len).map(|_| rng.gaussian(&[nz])).collect())
}

impl DecoderCellVars {
    pub fn step(
        &self,
        tape: &mut Tape,
        state: DecoderStateVars,
        x_prev: Var,
        c: Var,
        z: Var,
        act: Activation,
    ) -> Result<DecoderStateVars, ModelError> {
        let wx = tape.matmul(self.w_x, x_prev)?;
        let uc = tape.matmul(self.u_x, c)?;
        let hz = tape.matmul(self.h_x, z)?;
        let xp = tape.add_all(&[wx, uc, hz, self.b_x])?;
        let g = state.g;

        let o_pre = gate_preactivation(tape, self.w_o, xp, self.u_o, g, self.b_o)?;
        let o = tape.sigmoid(o_pre);
        let f_pre = gate_preactivation(tape, self.w_f, xp, self.u_f, g, self.b_f)?;
        let f = tape.sigmoid(f_pre);
        let i_pre = gate_preactivation(tape, self.w_i, xp, self.u_i, g, self.b_i)?;
        let i = tape.sigmoid(i_pre);
        let cand_pre = gate_preactivation(tape, self.w_c, xp, self.u_c, g, self.b_c)?;
        let cand = tape.activation(cand_pre, act);

        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, cand)?;
        let cell = tape.add(keep, write)?;

        let gated = tape.mul(o, cell)?;
        let wg = tape.matmul(self.w_g, gated)?;
        let ug = tape.matmul(self.u_g, c)?;
        let hs = tape.matmul(self.h_s, z)?;
        let g_new = tape.add_all(&[wg, ug, hs, self.b_g])?;
        Ok(DecoderStateVars { g: g_new, c: cell })
    }
}

impl ReadoutVars {
    pub fn apply(&self, tape: &mut Tape, g: Var) -> Result<Var, ModelError> {
        let wg = tape.matmul(self.w_x, g)?;
        Ok(tape.add(wg, self.b_x)?)
    }
}

impl GeneratorVars {
    /// Free-running decode: each step feeds back the previous output, starting
    /// from `x0`. `noise` sets the output length; pass zero vectors for the
    /// deterministic decoders.
    pub fn decode(
        &self,
        tape: &mut Tape,
        sources: &[Var],
        noise: &[Var],
        x0: Var,
        act: Activation,
    ) -> Result<Vec<Var>, ModelError> {
        if noise.is_empty() {
            return Err(ModelError::Input("noise sequence is empty".into()));
        }
        let memory = AttentionMemory::new(tape, &self.attention, sources)?;
        let n = tape.value(self.cell.b_g).len();
        let mut state = DecoderStateVars::zeros(tape, n);
        let mut x_prev = x0;
        let mut outputs = Vec::with_capacity(noise.len());
        for &z in noise {
            let (c, _) = memory.context(tape, &self.attention, state.g)?;
            state = self.cell.step(tape, state, x_prev, c, z, act)?;
            let x = self.readout.apply(tape, state.g)?;
            outputs.push(x);
            x_prev = x;
        }
        Ok(outputs)
    }
}

impl DiscriminatorVars {
    /// Probability (shape `[1]`) that `poses` is real given the source states.
    pub fn score(&self, tape: &mut Tape, poses: &[Var], sources: &[Var], act: Activation) -> Result<Var, ModelError> {
        let logit = self.logit(tape, poses, sources, act)?;
        Ok(tape.sigmoid(logit))
    }

    /// `W_d g_T + b_d`, the pre-sigmoid score.
    pub fn logit(&self, tape: &mut Tape, poses: &[Var], sources: &[Var], act: Activation) -> Result<Var, ModelError> {
        if poses.is_empty() {
            return Err(ModelError::Input("empty action sequence".into()));
        }
        let memory = AttentionMemory::new(tape, &self.attention, sources)?;
        let n = tape.value(self.cell.b_g).len();
        let nz = tape.value(self.cell.h_s).shape()[1];
        let w = tape.constant(Tensor::zeros(&[nz]));
        let mut state = DecoderStateVars::zeros(tape, n);
        for &x in poses {
            let (c, _) = memory.context(tape, &self.attention, state.g)?;
            state = self.cell.step(tape, state, x, c, w, act)?;
        }
        let logit = tape.matmul(self.head.w_d, state.g)?;
        Ok(tape.add(logit, self.head.b_d)?)
    }
}

/// One decoder-cell step on plain tensors.
pub fn decoder_cell_step(
    state: &DecoderState,
    x_prev: &Tensor,
    c: &Tensor,
    z: &Tensor,
    params: &DecoderCellParams,
    act: Activation,
) -> Result<DecoderState, ModelError> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let s = DecoderStateVars {
        g: tape.constant(state.g.clone()),
        c: tape.constant(state.c.clone()),
    };
    let x = tape.constant(x_prev.clone());
    let c = tape.constant(c.clone());
    let z = tape.constant(z.clone());
    let out = vars.step(&mut tape, s, x, c, z, act)?;
    Ok(DecoderState {
        g: tape.value(out.g).clone(),
        c: tape.value(out.c).clone(),
    })
}

pub fn output_pose(g: &Tensor, params: &ReadoutParams) -> Result<Tensor, ModelError> {
    Ok(params.w_x.matmul(g)?.add(&params.b_x)?)
}

/// Runs G on plain tensors: `x_1..x_T` for encoder states `h` and noise `z`.
pub fn generate(
    h: &[Tensor],
    z: &NoiseSequence,
    x0: &Tensor,
    params: &GeneratorParams,
    act: Activation,
) -> Result<Vec<Tensor>, ModelError> {
    if h.is_empty() {
        return Err(ModelError::Input("no encoder states".into()));
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let sources: Vec<Var> = h.iter().map(|t| tape.constant(t.clone())).collect();
    let noise: Vec<Var> = z.0.iter().map(|t| tape.constant(t.clone())).collect();
    let x0 = tape.constant(x0.clone());
    let xs = vars.decode(&mut tape, &sources, &noise, x0, act)?;
    Ok(xs.into_iter().map(|x| tape.value(x).clone()).collect())
}

/// Runs D on plain tensors. `expected_len` is the model's output length.
pub fn discriminate(
    x: &[Tensor],
    h: &[Tensor],
    params: &DiscriminatorParams,
    expected_len: usize,
    act: Activation,
) -> Result<f64, ModelError> {
    if x.len() != expected_len {
        return Err(ModelError::Input(format!(
            "action sequence has {} frames, expected {expected_len}",
            x.len()
        )));
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let sources: Vec<Var> = h.iter().map(|t| tape.constant(t.clone())).collect();
    let poses: Vec<Var> = x.iter().map(|t| tape.constant(t.clone())).collect();
    let y = vars.score(&mut tape, &poses, &sources, act)?;
    Ok(tape.value(y).item())
}
