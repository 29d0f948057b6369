//! Recurrent text encoder and additive attention.
//!
//! The encoder cell follows the gating equations literally, including the
//! squashing of the cell state through `cell_activation` (sigmoid by default,
//! `tanh` for a conventional LSTM):
//!
//! ```text
//! e'  = W_e' (e + b_e')
//! o   = σ(W_o e' + U_o h + b_o)
//! f   = σ(W_f e' + U_f h + b_f)
//! i   = σ(W_i e' + U_i h + b_i)
//! C   = f ∘ C_prev + i ∘ act(W_c e' + U_c h + b_c)
//! h   = o ∘ act(C)
//! ```
//!
//! Attention scores each source state against the previous decoder state,
//! `β_i = v_aᵀ tanh(W_a g + U_a h_i + b_a)`, and returns the softmax-weighted
//! mix of source states.

use crate::error::ModelError;
use crate::params::{param_group, GroupDims, ParamGroup};
use crate::tensor::{Activation, Tape, Tensor, Var};

param_group! {
    /// Weights of one encoder cell. `input` is the width of the sequence being
    /// encoded (word embeddings for the text encoder, poses for the
    /// action-side encoder of the autoencoder).
    EncoderParams / EncoderVars (n, input, _nz) {
        w_o: "W_o" = [n, n],
        w_c: "W_c" = [n, n],
        w_f: "W_f" = [n, n],
        w_i: "W_i" = [n, n],
        u_o: "U_o" = [n, n],
        u_c: "U_c" = [n, n],
        u_f: "U_f" = [n, n],
        u_i: "U_i" = [n, n],
        w_e: "W_e'" = [n, input],
        b_o: "b_o" = [n],
        b_c: "b_c" = [n],
        b_f: "b_f" = [n],
        b_i: "b_i" = [n],
        b_e: "b_e'" = [input],
    }
}

param_group! {
    AttentionParams / AttentionVars (n, _input, _nz) {
        w_a: "W_a" = [n, n],
        u_a: "U_a" = [n, n],
        v_a: "v_a" = [n],
        b_a: "b_a" = [n],
    }
}

impl EncoderParams {
    pub fn hidden(&self) -> usize {
        self.w_o.shape()[0]
    }

    pub fn input(&self) -> usize {
        self.b_e.len()
    }
}

impl AttentionParams {
    pub fn hidden(&self) -> usize {
        self.v_a.len()
    }

    pub fn with_hidden(n: usize) -> Self {
        Self::zeros(GroupDims::new(n, 0, 0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub h: Tensor,
    pub c: Tensor,
}

impl EncoderState {
    pub fn zeros(n: usize) -> Self {
        Self {
            h: Tensor::zeros(&[n]),
            c: Tensor::zeros(&[n]),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderStateVars {
    pub h: Var,
    pub c: Var,
}

impl EncoderStateVars {
    pub fn zeros(tape: &mut Tape, n: usize) -> Self {
        Self {
            h: tape.constant(Tensor::zeros(&[n])),
            c: tape.constant(Tensor::zeros(&[n])),
        }
    }
}

/// `w·x + u·h + b`
pub(crate) fn gate_preactivation(tape: &mut Tape, w: Var, x: Var, u: Var, h: Var, b: Var) -> Result<Var, ModelError> {
    let wx = tape.matmul(w, x)?;
    let uh = tape.matmul(u, h)?;
    let s = tape.add(wx, uh)?;
    Ok(tape.add(s, b)?)
}

impl EncoderVars {
    pub fn step(
        &self,
        tape: &mut Tape,
        e_t: Var,
        state: EncoderStateVars,
        act: Activation,
    ) -> Result<EncoderStateVars, ModelError> {
        let shifted = tape.add(e_t, self.b_e)?;
        let x = tape.matmul(self.w_e, shifted)?;
        let h = state.h;

        let o_pre = gate_preactivation(tape, self.w_o, x, self.u_o, h, self.b_o)?;
        let o = tape.sigmoid(o_pre);
        let f_pre = gate_preactivation(tape, self.w_f, x, self.u_f, h, self.b_f)?;
        let f = tape.sigmoid(f_pre);
        let i_pre = gate_preactivation(tape, self.w_i, x, self.u_i, h, self.b_i)?;
        let i = tape.sigmoid(i_pre);
        let cand_pre = gate_preactivation(tape, self.w_c, x, self.u_c, h, self.b_c)?;
        let cand = tape.activation(cand_pre, act);

        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, cand)?;
        let c = tape.add(keep, write)?;
        let squashed = tape.activation(c, act);
        let h = tape.mul(o, squashed)?;
        Ok(EncoderStateVars { h, c })
    }

    /// Unrolls the cell from the zero state, returning every hidden state.
    pub fn encode(&self, tape: &mut Tape, inputs: &[Var], act: Activation) -> Result<Vec<Var>, ModelError> {
        if inputs.is_empty() {
            return Err(ModelError::Input("cannot encode an empty sequence".into()));
        }
        let n = tape.value(self.b_o).len();
        let mut state = EncoderStateVars::zeros(tape, n);
        let mut hs = Vec::with_capacity(inputs.len());
        for &x in inputs {
            state = self.step(tape, x, state, act)?;
            hs.push(state.h);
        }
        Ok(hs)
    }
}

/// Source states prepared once per sequence so each decoding step only
/// projects its query.
#[derive(Clone, Copy, Debug)]
pub struct AttentionMemory {
    /// `U_a h_i + ...` for every source row, `[T, n]`
    keys: Var,
    /// source states as columns, `[n, T]`
    values_t: Var,
    len: usize,
}

impl AttentionMemory {
    pub fn new(tape: &mut Tape, p: &AttentionVars, states: &[Var]) -> Result<Self, ModelError> {
        if states.is_empty() {
            return Err(ModelError::Input("attention over an empty state sequence".into()));
        }
        let h = tape.stack_rows(states)?;
        let u_t = tape.transpose(p.u_a)?;
        let keys = tape.matmul(h, u_t)?;
        let values_t = tape.transpose(h)?;
        Ok(Self {
            keys,
            values_t,
            len: states.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Returns `(c_t, α_t)` for the query `g_prev`.
    pub fn context(&self, tape: &mut Tape, p: &AttentionVars, g_prev: Var) -> Result<(Var, Var), ModelError> {
        let wq = tape.matmul(p.w_a, g_prev)?;
        let q = tape.add(wq, p.b_a)?;
        let pre = tape.add_row(self.keys, q)?;
        let act = tape.tanh(pre);
        let scores = tape.matmul(act, p.v_a)?;
        let alpha = tape.softmax(scores)?;
        let c = tape.matmul(self.values_t, alpha)?;
        Ok((c, alpha))
    }
}

/// Context vector together with the attention distribution that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextVector {
    pub c: Tensor,
    pub alpha: Tensor,
}

/// One encoder step on plain tensors.
pub fn encoder_step(
    e_t: &Tensor,
    state: &EncoderState,
    params: &EncoderParams,
    act: Activation,
) -> Result<EncoderState, ModelError> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let e = tape.constant(e_t.clone());
    let s = EncoderStateVars {
        h: tape.constant(state.h.clone()),
        c: tape.constant(state.c.clone()),
    };
    let out = vars.step(&mut tape, e, s, act)?;
    Ok(EncoderState {
        h: tape.value(out.h).clone(),
        c: tape.value(out.c).clone(),
    })
}

/// Encodes a whole sequence on plain tensors, returning `h_1..h_T`.
pub fn encode(sequence: &[Tensor], params: &EncoderParams, act: Activation) -> Result<Vec<Tensor>, ModelError> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let inputs: Vec<Var> = sequence.iter().map(|e| tape.constant(e.clone())).collect();
    let hs = vars.encode(&mut tape, &inputs, act)?;
    Ok(hs.into_iter().map(|h| tape.value(h).clone()).collect())
}

pub fn attention_context(g_prev: &Tensor, h: &[Tensor], params: &AttentionParams) -> Result<ContextVector, ModelError> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let states: Vec<Var> = h.iter().map(|s| tape.constant(s.clone())).collect();
    let memory = AttentionMemory::new(&mut tape, &vars, &states)?;
    let g = tape.constant(g_prev.clone());
    let (c, alpha) = memory.context(&mut tape, &vars, g)?;
    Ok(ContextVector {
        c: tape.value(c).clone(),
        alpha: tape.value(alpha).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sigmoid, SeededRng};

    fn random_encoder(rng: &mut SeededRng, n: usize, ne: usize) -> EncoderParams {
        let mut p = EncoderParams::zeros(GroupDims::new(n, ne, 0));
        for (_, t) in p.tensors_mut() {
            *t = rng.gaussian(t.shape()).scale(0.5);
        }
        p
    }

    fn random_attention(rng: &mut SeededRng, n: usize) -> AttentionParams {
        let mut p = AttentionParams::with_hidden(n);
        for (_, t) in p.tensors_mut() {
            *t = rng.gaussian(t.shape());
        }
        p
    }

    #[test]
    fn zero_parameters_step() {
        let p = EncoderParams::zeros(GroupDims::new(4, 3, 0));
        let s = encoder_step(
            &Tensor::vector(vec![0.7, -1.0, 2.0]),
            &EncoderState::zeros(4),
            &p,
            Activation::Sigmoid,
        )
        .unwrap();
        let expected_h = 0.5 * sigmoid(0.25);
        assert!((expected_h - 0.281089).abs() < 1e-6);
        for (h, c) in s.h.data().iter().zip(s.c.data()) {
            assert!((c - 0.25).abs() < 1e-15);
            assert!((h - expected_h).abs() < 1e-15);
        }
        assert_eq!(s.h.shape(), &[4]);
        assert_eq!(s.c.shape(), &[4]);
    }

    #[test]
    fn hidden_state_is_in_unit_interval() {
        let mut rng = SeededRng::new(3);
        let p = random_encoder(&mut rng, 5, 3);
        let seq: Vec<Tensor> = (0..6).map(|_| rng.gaussian(&[3]).scale(4.0)).collect();
        for h in encode(&seq, &p, Activation::Sigmoid).unwrap() {
            assert!(h.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn single_token_equals_one_step() {
        let mut rng = SeededRng::new(4);
        let p = random_encoder(&mut rng, 4, 3);
        let e = rng.gaussian(&[3]);
        let hs = encode(std::slice::from_ref(&e), &p, Activation::Sigmoid).unwrap();
        let s = encoder_step(&e, &EncoderState::zeros(4), &p, Activation::Sigmoid).unwrap();
        assert_eq!(hs, vec![s.h]);
    }

    #[test]
    fn encoding_is_causal() {
        let mut rng = SeededRng::new(8);
        let p = random_encoder(&mut rng, 4, 3);
        let seq: Vec<Tensor> = (0..5).map(|_| rng.gaussian(&[3])).collect();
        let full = encode(&seq, &p, Activation::Tanh).unwrap();
        for k in 1..=5 {
            assert_eq!(encode(&seq[..k], &p, Activation::Tanh).unwrap(), full[..k]);
        }
    }

    #[test]
    fn empty_sequence_is_an_input_error() {
        let p = EncoderParams::zeros(GroupDims::new(2, 2, 0));
        assert!(matches!(
            encode(&[], &p, Activation::Sigmoid),
            Err(ModelError::Input(_))
        ));
        assert!(matches!(
            attention_context(&Tensor::zeros(&[2]), &[], &AttentionParams::with_hidden(2)),
            Err(ModelError::Input(_))
        ));
    }

    #[test]
    fn wrong_input_width_is_a_shape_error() {
        let p = EncoderParams::zeros(GroupDims::new(4, 3, 0));
        let r = encoder_step(&Tensor::zeros(&[5]), &EncoderState::zeros(4), &p, Activation::Sigmoid);
        assert!(matches!(r, Err(ModelError::Tensor(_))));
    }

    #[test]
    fn single_source_attention() {
        let mut rng = SeededRng::new(1);
        let p = random_attention(&mut rng, 4);
        let h = rng.gaussian(&[4]);
        let ctx = attention_context(&rng.gaussian(&[4]), std::slice::from_ref(&h), &p).unwrap();
        assert_eq!(ctx.alpha.data(), &[1.0]);
        assert!(ctx.c.max_abs_diff(&h) < 1e-15);
    }

    #[test]
    fn identical_sources_give_uniform_weights() {
        let mut rng = SeededRng::new(2);
        let p = random_attention(&mut rng, 4);
        let h = rng.gaussian(&[4]);
        let ctx = attention_context(&rng.gaussian(&[4]), &[h.clone(), h.clone(), h.clone()], &p).unwrap();
        for a in ctx.alpha.data() {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(ctx.c.max_abs_diff(&h) < 1e-12);
    }

    #[test]
    fn zero_score_vector_averages_sources() {
        let mut rng = SeededRng::new(6);
        let mut p = random_attention(&mut rng, 4);
        p.v_a = Tensor::zeros(&[4]);
        let hs: Vec<Tensor> = (0..5).map(|_| rng.gaussian(&[4])).collect();
        let ctx = attention_context(&rng.gaussian(&[4]), &hs, &p).unwrap();
        let mut mean = Tensor::zeros(&[4]);
        for h in &hs {
            mean = mean.add(h).unwrap();
        }
        mean = mean.scale(1.0 / 5.0);
        assert!(ctx.alpha.data().iter().all(|a| (a - 0.2).abs() < 1e-15));
        assert!(ctx.c.max_abs_diff(&mean) < 1e-12);
    }
}
