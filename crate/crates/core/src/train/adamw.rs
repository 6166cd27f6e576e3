use crate::error::{Error, Result};
use crate::net::{layout, NetConfig, ParamSet};

/// Adam with decoupled weight decay.
///
/// One step with learning rate `lr` and decay `wd` updates every scalar as
///
/// ```text
/// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
/// θ ← θ − lr · m̂ / (√v̂ + ε) − wd · θ
/// ```
///
/// with bias-corrected moments `m̂`, `v̂`. The decay term is skipped for
/// normalization gains/biases and the positional encoding.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: ParamSet,
    pub v: ParamSet,
    /// Number of steps taken so far.
    pub t: u64,
    decay: Vec<bool>,
    names: Vec<String>,
}

impl AdamW {
    pub fn new(cfg: &NetConfig) -> Self {
        let layout = layout(cfg);
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: ParamSet::zeros(cfg),
            v: ParamSet::zeros(cfg),
            t: 0,
            decay: layout.iter().map(|(_, k, _)| k.decays()).collect(),
            names: layout.into_iter().map(|(n, _, _)| n).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64, wd: f64) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.m) {
            return Err(Error::Shape(
                "optimizer state, parameters and gradients differ in shape".into(),
            ));
        }
        for (name, g) in self.names.iter().zip(grads.tensors()) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((((p, g), m), v), &decay) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(&self.decay)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let old = p[i];
                let mut new = old - lr * m_hat / (v_hat.sqrt() + eps);
                if decay {
                    new -= wd * old;
                }
                p[i] = new;
            }
        }
        Ok(())
    }
}
