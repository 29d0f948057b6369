//! Named parameter groups.
//!
//! Every learnable block (encoder cell, attention, decoder cell, readouts) is a
//! struct of named tensors implementing [`ParamGroup`]. Composite models nest
//! groups and prefix the child names with a dot, so `"cell.W_o'"` names the
//! same tensor in checkpoints, optimizer state and gradient maps.

use crate::tensor::{AdamState, Gradients, SeededRng, Tape, Tensor, TensorError};

/// Dimensions a leaf group is shaped from. `input` is the width of whatever
/// feeds the group (embedding, pose, or readout target).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupDims {
    pub hidden: usize,
    pub input: usize,
    pub noise: usize,
}

impl GroupDims {
    pub fn new(hidden: usize, input: usize, noise: usize) -> Self {
        Self { hidden, input, noise }
    }
}

pub trait ParamGroup: Clone {
    /// The group's tensors bound as nodes on a tape.
    type Vars: Copy;

    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;
    fn bind(&self, tape: &mut Tape, trainable: bool) -> Self::Vars;
    /// Collects the gradient of each bound tensor into a group of the same shape.
    fn gradients(vars: &Self::Vars, grads: &Gradients) -> Self;

    fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }

    /// Small-uniform init for weights, zeros for biases (names starting `b_`).
    fn init_uniform(&mut self, rng: &mut SeededRng, scale: f64) {
        for (name, t) in self.tensors_mut() {
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            if leaf.starts_with("b_") {
                t.data_mut().fill(0.0);
            } else {
                for v in t.data_mut() {
                    *v = rng.uniform_range(-scale, scale);
                }
            }
        }
    }

    /// First tensor whose shape differs from `expected`, as `(name, got, want)`.
    fn shape_mismatch(&self, expected: &Self) -> Option<(String, Vec<usize>, Vec<usize>)> {
        self.tensors()
            .into_iter()
            .zip(expected.tensors())
            .find(|((_, a), (_, b))| a.shape() != b.shape())
            .map(|((name, a), (_, b))| (name, a.shape().to_vec(), b.shape().to_vec()))
    }

    /// Bitwise equality of every tensor.
    fn bit_identical(&self, other: &Self) -> bool {
        self.tensors().iter().zip(other.tensors()).all(|((na, a), (nb, b))| {
            na == &nb
                && a.shape() == b.shape()
                && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }
}

pub(crate) fn prefixed<T>(prefix: &str, items: Vec<(String, T)>) -> Vec<(String, T)> {
    items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

/// `acc += scale * g`, tensor by tensor.
pub fn accumulate<P: ParamGroup>(acc: &mut P, g: &P, scale: f64) {
    for ((_, a), (_, b)) in acc.tensors_mut().into_iter().zip(g.tensors()) {
        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
            *x += scale * y;
        }
    }
}

/// L2 norm over every tensor of the group.
pub fn global_norm<P: ParamGroup>(g: &P) -> f64 {
    g.tensors()
        .iter()
        .flat_map(|(_, t)| t.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `g` so its global norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm<P: ParamGroup>(g: &mut P, max_norm: f64) -> f64 {
    let norm = global_norm(g);
    if norm > max_norm {
        let k = max_norm / norm;
        for (_, t) in g.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// Adam update of a whole group from a same-shaped gradient group.
pub fn adam_update<P: ParamGroup>(
    state: &mut AdamState,
    params: &mut P,
    grads: &P,
    ascent: bool,
) -> Result<(), TensorError> {
    let entries = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .map(|((name, p), (_, g))| (name, p, g));
    state.step(entries, ascent)
}

/// Declares a leaf parameter group and its tape-bound counterpart.
macro_rules! param_group {
    (
        $(#[$meta:meta])*
        $name:ident / $vars:ident ($h:ident, $i:ident, $z:ident) {
            $( $field:ident : $label:literal = [$($dim:expr),*] ),* $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            $( pub $field: $crate::tensor::Tensor, )*
        }

        #[derive(Clone, Copy, Debug)]
        pub struct $vars {
            $( pub $field: $crate::tensor::Var, )*
        }

        impl $name {
            pub const NAMES: &'static [&'static str] = &[$($label),*];

            #[allow(unused_variables)]
            pub fn zeros(dims: $crate::params::GroupDims) -> Self {
                let $crate::params::GroupDims { hidden: $h, input: $i, noise: $z } = dims;
                Self { $( $field: $crate::tensor::Tensor::zeros(&[$($dim),*]), )* }
            }

            pub fn init(
                dims: $crate::params::GroupDims,
                rng: &mut $crate::tensor::SeededRng,
                scale: f64,
            ) -> Self {
                use $crate::params::ParamGroup;
                let mut p = Self::zeros(dims);
                p.init_uniform(rng, scale);
                p
            }
        }

        impl $crate::params::ParamGroup for $name {
            type Vars = $vars;

            fn tensors(&self) -> Vec<(String, &$crate::tensor::Tensor)> {
                vec![$( ($label.to_string(), &self.$field), )*]
            }

            fn tensors_mut(&mut self) -> Vec<(String, &mut $crate::tensor::Tensor)> {
                vec![$( ($label.to_string(), &mut self.$field), )*]
            }

            fn bind(&self, tape: &mut $crate::tensor::Tape, trainable: bool) -> $vars {
                $vars { $( $field: tape.leaf(self.$field.clone(), trainable), )* }
            }

            fn gradients(vars: &$vars, grads: &$crate::tensor::Gradients) -> Self {
                Self { $( $field: grads.wrt(vars.$field), )* }
            }
        }
    };
}

pub(crate) use param_group;

/// Declares a group made of named child groups.
macro_rules! composite_group {
    (
        $(#[$meta:meta])*
        $name:ident / $vars:ident {
            $( $field:ident : $ty:ty = $label:literal ),* $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            $( pub $field: $ty, )*
        }

        #[derive(Clone, Copy, Debug)]
        pub struct $vars {
            $( pub $field: <$ty as $crate::params::ParamGroup>::Vars, )*
        }

        impl $crate::params::ParamGroup for $name {
            type Vars = $vars;

            fn tensors(&self) -> Vec<(String, &$crate::tensor::Tensor)> {
                let mut out = Vec::new();
                $( out.extend($crate::params::prefixed($label, self.$field.tensors())); )*
                out
            }

            fn tensors_mut(&mut self) -> Vec<(String, &mut $crate::tensor::Tensor)> {
                let mut out = Vec::new();
                $( out.extend($crate::params::prefixed($label, self.$field.tensors_mut())); )*
                out
            }

            fn bind(&self, tape: &mut $crate::tensor::Tape, trainable: bool) -> $vars {
                $vars { $( $field: self.$field.bind(tape, trainable), )* }
            }

            fn gradients(vars: &$vars, grads: &$crate::tensor::Gradients) -> Self {
                Self { $( $field: <$ty as $crate::params::ParamGroup>::gradients(&vars.$field, grads), )* }
            }
        }
    };
}

pub(crate) use composite_group;
