//! The Signal Transformer: a small transformer encoder that maps one
//! force/torque window to a non-negative embedding.
//!
//! ```text
//! x (T×6) ─ linear ─ layernorm ─ + positional ─ encoder × L ─ mean over T
//!         ─ batchnorm ─ linear ─ ReLU ─ embedding (E)
//! ```
//!
//! Each encoder layer is post-norm: multi-head self-attention, residual,
//! layernorm, then a ReLU feed-forward, residual, layernorm. Everything is
//! computed in f64 and differentiated by hand (see [`forward`]).

mod forward;
mod io;
mod ops;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

pub use forward::{ForwardCache, Mode};
pub use io::{load_params, load_params_expecting, read_params, save_params, write_params};

/// Batch-norm running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;
/// Epsilon of both layer norm and batch norm.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub seq_len: usize,
    pub in_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_encoder_layers: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            seq_len: 160,
            in_dim: 6,
            d_model: 16,
            n_heads: 2,
            d_ff: 8,
            n_encoder_layers: 1,
            embed_dim: 256,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(format!("net: {m}")));
        if self.seq_len == 0 || self.in_dim == 0 || self.d_model == 0 || self.d_ff == 0 {
            return fail("seq_len, in_dim, d_model and d_ff must be positive");
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail("d_model must be divisible by n_heads");
        }
        if self.n_encoder_layers == 0 {
            return fail("n_encoder_layers must be positive");
        }
        if self.embed_dim == 0 {
            return fail("embed_dim must be at least 1");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Learnable tensors of one encoder layer. Matrices are row-major
/// `fan_in × fan_out` and applied as `x · W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub ff1_w: Vec<f64>,
    pub ff1_b: Vec<f64>,
    pub ff2_w: Vec<f64>,
    pub ff2_b: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
}

/// Every learnable tensor of the network. Also used for gradients and
/// optimizer moments, which share its shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub input_w: Vec<f64>,
    pub input_b: Vec<f64>,
    pub pos: Vec<f64>,
    pub ln_g: Vec<f64>,
    pub ln_b: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub bn_g: Vec<f64>,
    pub bn_b: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

pub type Gradients = ParamSet;

/// Role of a tensor; decides initialization and weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    /// Linear-layer weight with its fan-in and fan-out.
    Weight {
        fan_in: usize,
        fan_out: usize,
    },
    Bias,
    Positional,
    NormGain,
    NormBias,
}

impl TensorKind {
    /// Normalization parameters and the positional encoding are not decayed.
    pub fn decays(&self) -> bool {
        matches!(self, TensorKind::Weight { .. } | TensorKind::Bias)
    }
}

/// Name, kind and length of every learnable tensor, in the canonical order
/// used by [`ParamSet::tensors`] and the `.stnet` file.
pub fn layout(cfg: &NetConfig) -> Vec<(String, TensorKind, usize)> {
    use TensorKind::*;
    let d = cfg.d_model;
    let w = |fan_in, fan_out| Weight { fan_in, fan_out };
    let mut out = vec![
        ("input_w".to_string(), w(cfg.in_dim, d), cfg.in_dim * d),
        ("input_b".to_string(), Bias, d),
        ("pos".to_string(), Positional, cfg.seq_len * d),
        ("ln_g".to_string(), NormGain, d),
        ("ln_b".to_string(), NormBias, d),
    ];
    for l in 0..cfg.n_encoder_layers {
        let per_layer = [
            ("wq", w(d, d), d * d),
            ("bq", Bias, d),
            ("wk", w(d, d), d * d),
            ("bk", Bias, d),
            ("wv", w(d, d), d * d),
            ("bv", Bias, d),
            ("wo", w(d, d), d * d),
            ("bo", Bias, d),
            ("ln1_g", NormGain, d),
            ("ln1_b", NormBias, d),
            ("ff1_w", w(d, cfg.d_ff), d * cfg.d_ff),
            ("ff1_b", Bias, cfg.d_ff),
            ("ff2_w", w(cfg.d_ff, d), cfg.d_ff * d),
            ("ff2_b", Bias, d),
            ("ln2_g", NormGain, d),
            ("ln2_b", NormBias, d),
        ];
        out.extend(
            per_layer
                .into_iter()
                .map(|(n, k, len)| (format!("layer{l}.{n}"), k, len)),
        );
    }
    out.push(("bn_g".to_string(), NormGain, d));
    out.push(("bn_b".to_string(), NormBias, d));
    out.push(("head_w".to_string(), w(d, cfg.embed_dim), d * cfg.embed_dim));
    out.push(("head_b".to_string(), Bias, cfg.embed_dim));
    out
}

/// Number of learnable scalars; batch-norm running statistics excluded.
///
/// The default configuration has 8520 parameters: 112 for the input
/// projection, 2560 for the positional encoding, 32 for the input layer norm,
/// 1432 for the encoder layer, 32 for batch norm and 4352 for the head.
pub fn param_count(cfg: &NetConfig) -> usize {
    layout(cfg).iter().map(|(_, _, len)| len).sum()
}

impl LayerParams {
    fn tensors(&self) -> [&Vec<f64>; 16] {
        [
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln1_g,
            &self.ln1_b,
            &self.ff1_w,
            &self.ff1_b,
            &self.ff2_w,
            &self.ff2_b,
            &self.ln2_g,
            &self.ln2_b,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.ff1_w,
            &mut self.ff1_b,
            &mut self.ff2_w,
            &mut self.ff2_b,
            &mut self.ln2_g,
            &mut self.ln2_b,
        ]
    }
}

impl ParamSet {
    /// All-zero tensors shaped for `cfg`.
    pub fn zeros(cfg: &NetConfig) -> Self {
        let mut it = layout(cfg).into_iter().map(|(_, _, len)| vec![0.0; len]);
        let mut next = || it.next().expect("layout covers every tensor");
        let input_w = next();
        let input_b = next();
        let pos = next();
        let ln_g = next();
        let ln_b = next();
        let layers = (0..cfg.n_encoder_layers)
            .map(|_| LayerParams {
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                ln1_g: next(),
                ln1_b: next(),
                ff1_w: next(),
                ff1_b: next(),
                ff2_w: next(),
                ff2_b: next(),
                ln2_g: next(),
                ln2_b: next(),
            })
            .collect();
        ParamSet {
            input_w,
            input_b,
            pos,
            ln_g,
            ln_b,
            layers,
            bn_g: next(),
            bn_b: next(),
            head_w: next(),
            head_b: next(),
        }
    }

    /// Tensors in canonical order (see [`layout`]).
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut v = vec![&self.input_w, &self.input_b, &self.pos, &self.ln_g, &self.ln_b];
        for l in &self.layers {
            v.extend(l.tensors());
        }
        v.extend([&self.bn_g, &self.bn_b, &self.head_w, &self.head_b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = vec![
            &mut self.input_w,
            &mut self.input_b,
            &mut self.pos,
            &mut self.ln_g,
            &mut self.ln_b,
        ];
        for l in &mut self.layers {
            v.extend(l.tensors_mut());
        }
        v.extend([&mut self.bn_g, &mut self.bn_b, &mut self.head_w, &mut self.head_b]);
        v
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when both sets have the same tensor count and lengths.
    pub fn same_shape(&self, other: &ParamSet) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0))
    }

    /// FNV-1a over the bit patterns of every scalar.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01B3);
                }
            }
        }
        h
    }
}

/// Network weights plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub config: NetConfig,
    pub weights: ParamSet,
    pub bn_running_mean: Vec<f64>,
    pub bn_running_var: Vec<f64>,
}

impl NetworkParams {
    /// Deterministic initialization from `cfg.seed`: linear weights uniform
    /// in ±sqrt(6 / (fan_in + fan_out)), the positional encoding likewise with
    /// fans (seq_len, d_model), biases zero, norm gains one.
    pub fn init(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = crate::seed::rng(cfg.seed, "net.init");
        let mut weights = ParamSet::zeros(cfg);
        for ((_, kind, _), t) in layout(cfg).iter().zip(weights.tensors_mut()) {
            match *kind {
                TensorKind::Weight { fan_in, fan_out } => fill_glorot(t, fan_in, fan_out, &mut rng),
                TensorKind::Positional => fill_glorot(t, cfg.seq_len, cfg.d_model, &mut rng),
                TensorKind::NormGain => t.fill(1.0),
                TensorKind::Bias | TensorKind::NormBias => t.fill(0.0),
            }
        }
        Ok(Self {
            config: *cfg,
            weights,
            bn_running_mean: vec![0.0; cfg.d_model],
            bn_running_var: vec![1.0; cfg.d_model],
        })
    }

    /// Checks tensor shapes against the config and the running variance.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = layout(&self.config);
        let tensors = self.weights.tensors();
        if expected.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, _, len), t) in expected.iter().zip(tensors) {
            if t.len() != *len {
                return Err(Error::Shape(format!(
                    "{name}: expected {len} values, found {}",
                    t.len()
                )));
            }
        }
        let d = self.config.d_model;
        if self.bn_running_mean.len() != d || self.bn_running_var.len() != d {
            return Err(Error::Shape("batch-norm running statistics".into()));
        }
        if self.bn_running_var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Shape("batch-norm running variance must be positive".into()));
        }
        Ok(())
    }
}

fn fill_glorot<R: Rng>(t: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut R) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    for v in t {
        *v = dist.sample(rng);
    }
}
