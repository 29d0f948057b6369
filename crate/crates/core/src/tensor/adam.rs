use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

/// Adam optimizer state, keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn from_parts(config: AdamConfig, t: u64, moments: BTreeMap<String, Moments>) -> Self {
        Self { config, t, moments }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> &BTreeMap<String, Moments> {
        &self.moments
    }

    /// One bias-corrected Adam update over `(name, param, grad)` triples.
    ///
    /// With `ascent` set the step follows the gradient instead of opposing it.
    pub fn step<'a>(
        &mut self,
        entries: impl IntoIterator<Item = (String, &'a mut Tensor, &'a Tensor)>,
        ascent: bool,
    ) -> Result<()> {
        let entries: Vec<_> = entries.into_iter().collect();
        for (name, p, g) in &entries {
            if p.shape() != g.shape() {
                return Err(TensorError::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if let Some(mo) = self.moments.get(name) {
                if mo.m.shape() != p.shape() {
                    return Err(TensorError::Shape {
                        op: "adam_step",
                        lhs: p.shape().to_vec(),
                        rhs: mo.m.shape().to_vec(),
                    });
                }
            }
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powf(self.t as f64);
        let bc2 = 1.0 - beta2.powf(self.t as f64);
        let sign = if ascent { 1.0 } else { -1.0 };

        for (name, p, g) in entries {
            let mo = self.moments.entry(name).or_insert_with(|| Moments {
                m: Tensor::zeros(p.shape()),
                v: Tensor::zeros(p.shape()),
            });
            let (m, v) = (mo.m.data_mut(), mo.v.data_mut());
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w += sign * lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
