//! Analytic gradients against central differences for every differentiable
//! piece of the model, at small sizes.

use text2action::cells::{DiscriminatorParams, GeneratorParams};
use text2action::encoder::{AttentionMemory, AttentionParams, EncoderParams};
use text2action::params::{GroupDims, ParamGroup};
use text2action::tensor::{group_gradient_error, Activation, SeededRng, Tape, Tensor, Var};
use text2action::training::AutoencoderParams;

pub const N: usize = 4;
pub const NE: usize = 3;
pub const NX: usize = 6;
pub const NZ: usize = 2;
pub const TI: usize = 3;
pub const TO: usize = 4;
const STEP: f64 = 1e-5;

pub const COMPONENTS: [&str; 7] = [
    "encoder cell",
    "attention",
    "decoder cell + readout",
    "discriminator",
    "autoencoder loss",
    "V_D",
    "V_G",
];

fn randomize<P: ParamGroup>(p: &mut P, rng: &mut SeededRng) {
    for (_, t) in p.tensors_mut() {
        for v in t.data_mut() {
            *v = 0.5 * rng.standard_normal();
        }
    }
}

fn seq(rng: &mut SeededRng, len: usize, dim: usize) -> Vec<Tensor> {
    (0..len).map(|_| rng.gaussian(&[dim])).collect()
}

fn consts(tape: &mut Tape, ts: &[Tensor]) -> Vec<Var> {
    ts.iter().map(|t| tape.constant(t.clone())).collect()
}

/// `Σ_t r_t · v_t` for fixed random weights `r`.
fn project(tape: &mut Tape, vs: &[Var], r: &[Tensor]) -> Var {
    let terms: Vec<Var> = vs
        .iter()
        .zip(r)
        .map(|(&v, w)| {
            let w = tape.constant(w.clone());
            let p = tape.mul(v, w).unwrap();
            tape.sum(p)
        })
        .collect();
    tape.add_all(&terms).unwrap()
}

fn check<P: ParamGroup>(params: &P, loss: impl Fn(&mut Tape, &P::Vars) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true);
    let l = loss(&mut tape, &vars);
    let analytic = P::gradients(&vars, &tape.backward(l).unwrap());
    let value = |p: &P| {
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, false);
        let l = loss(&mut tape, &vars);
        tape.value(l).item()
    };
    group_gradient_error(params, &analytic, value, STEP)
}

fn generator(rng: &mut SeededRng) -> GeneratorParams {
    let mut g = GeneratorParams::zeros(N, NX, NX, NZ);
    randomize(&mut g, rng);
    g
}

fn discriminator(rng: &mut SeededRng) -> DiscriminatorParams {
    let mut d = DiscriminatorParams::zeros(N, NX, NZ);
    randomize(&mut d, rng);
    d
}

/// Relative errors of one random draw, in [`COMPONENTS`] order.
pub fn draw(rng: &mut SeededRng, act: Activation) -> [f64; 7] {
    let e = seq(rng, TI, NE);
    let h = seq(rng, TI, N);
    let x = seq(rng, TO, NX);
    let z = seq(rng, TO, NZ);
    let x0 = rng.gaussian(&[NX]);
    let r_h = seq(rng, TI, N);
    let r_x = seq(rng, TO, NX);

    let mut enc = EncoderParams::zeros(GroupDims::new(N, NE, 0));
    randomize(&mut enc, rng);
    let encoder = check(&enc, |tape, v| {
        let e = consts(tape, &e);
        let hs = v.encode(tape, &e, act).unwrap();
        project(tape, &hs, &r_h)
    });

    let mut att = AttentionParams::zeros(GroupDims::new(N, 0, 0));
    randomize(&mut att, rng);
    let g_prev = rng.gaussian(&[N]);
    let attention = check(&att, |tape, v| {
        let h = consts(tape, &h);
        let g = tape.constant(g_prev.clone());
        let memory = AttentionMemory::new(tape, v, &h).unwrap();
        let (c, _) = memory.context(tape, v, g).unwrap();
        project(tape, &[c], &r_h[..1])
    });

    let gen = generator(rng);
    let decoder = check(&gen, |tape, v| {
        let (h, z) = (consts(tape, &h), consts(tape, &z));
        let x0 = tape.constant(x0.clone());
        let xs = v.decode(tape, &h, &z, x0, act).unwrap();
        project(tape, &xs, &r_x)
    });

    let disc = discriminator(rng);
    let discriminator_err = check(&disc, |tape, v| {
        let (h, x) = (consts(tape, &h), consts(tape, &x));
        let y = v.score(tape, &x, &h, act).unwrap();
        tape.sum(y)
    });

    let mut ae = AutoencoderParams::zeros(N, NE, NX, NZ);
    randomize(&mut ae, rng);
    let (a1, a2) = (1.0, 5.0);
    let autoencoder = check(&ae, |tape, v| {
        let (ev, xv) = (consts(tape, &e), consts(tape, &x));
        let x0 = tape.constant(x0.clone());
        let (xh, eh) = v.forward(tape, &ev, &xv, x0, act).unwrap();
        let mut sq = |a: &[Var], b: &[Var]| {
            let terms: Vec<Var> = a
                .iter()
                .zip(b)
                .map(|(&p, &q)| {
                    let d = tape.sub(p, q).unwrap();
                    let d2 = tape.mul(d, d).unwrap();
                    tape.sum(d2)
                })
                .collect();
            tape.add_all(&terms).unwrap()
        };
        let lx = sq(&xv, &xh);
        let le = sq(&ev, &eh);
        let lx = tape.scale(lx, a1 / TO as f64);
        let le = tape.scale(le, a2 / TI as f64);
        tape.add(lx, le).unwrap()
    });

    // ln σ(s) = ln D and ln σ(−s) = ln(1 − D).
    let v_d = check(&disc, |tape, dv| {
        let gv = gen.bind(tape, false);
        let (h, x, z) = (consts(tape, &h), consts(tape, &x), consts(tape, &z));
        let x0 = tape.constant(x0.clone());
        let fake = gv.decode(tape, &h, &z, x0, act).unwrap();
        let s_r = dv.logit(tape, &x, &h, act).unwrap();
        let s_f = dv.logit(tape, &fake, &h, act).unwrap();
        let log_r = tape.log_sigmoid(s_r);
        let neg = tape.scale(s_f, -1.0);
        let log_nf = tape.log_sigmoid(neg);
        let both = tape.add(log_r, log_nf).unwrap();
        tape.sum(both)
    });
    let v_g = check(&gen, |tape, gv| {
        let dv = disc.bind(tape, false);
        let (h, z) = (consts(tape, &h), consts(tape, &z));
        let x0 = tape.constant(x0.clone());
        let fake = gv.decode(tape, &h, &z, x0, act).unwrap();
        let s_f = dv.logit(tape, &fake, &h, act).unwrap();
        let l = tape.log_sigmoid(s_f);
        tape.sum(l)
    });

    [encoder, attention, decoder, discriminator_err, autoencoder, v_d, v_g]
}

/// Worst relative error per component over `draws` draws, alternating the
/// cell activation between sigmoid and tanh.
pub fn run(draws: usize, seed: u64) -> [f64; 7] {
    let mut rng = SeededRng::new(seed);
    let mut worst = [0.0f64; 7];
    for i in 0..draws {
        let act = if i % 2 == 0 {
            Activation::Sigmoid
        } else {
            Activation::Tanh
        };
        for (w, e) in worst.iter_mut().zip(draw(&mut rng, act)) {
            *w = w.max(e);
        }
    }
    worst
}
