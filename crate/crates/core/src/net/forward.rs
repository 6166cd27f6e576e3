//! Forward pass and exact reverse-mode gradients.

use super::ops::{self, NormCache};
use super::{Gradients, LayerParams, NetConfig, NetworkParams, ParamSet, BN_MOMENTUM, NORM_EPS};
use crate::error::{Error, Result};
use crate::signal_io::HapticSignal;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are updated.
    Train,
    /// Running statistics in batch norm; nothing is mutated.
    Infer,
}

#[derive(Clone, Debug)]
struct LayerCache {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    att: Vec<f64>,
    ctx: Vec<f64>,
    ln1: NormCache,
    l1: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    ln2: NormCache,
}

#[derive(Clone, Debug)]
struct SampleCache {
    x: Vec<f64>,
    ln0: NormCache,
    layers: Vec<LayerCache>,
}

/// Activations of a train-mode forward pass, consumed by
/// [`NetworkParams::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    fingerprint: u64,
    samples: Vec<SampleCache>,
    bn: NormCache,
    bn_out: Vec<Vec<f64>>,
    head_pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }

    /// Smallest |pre-activation| over every ReLU in the batch. Finite
    /// difference checks are only meaningful when this is well above the
    /// probe step.
    pub fn min_relu_margin(&self) -> f64 {
        let ff = self
            .samples
            .iter()
            .flat_map(|s| s.layers.iter())
            .flat_map(|l| l.ff_pre.iter());
        let head = self.head_pre.iter().flatten();
        ff.chain(head).fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// Attention matrices of sample `i`, layer `layer` (`heads × t × t`).
    pub fn attention(&self, i: usize, layer: usize) -> &[f64] {
        &self.samples[i].layers[layer].att
    }
}

struct Encoded {
    pooled: Vec<f64>,
    cache: SampleCache,
}

fn check_batch(cfg: &NetConfig, batch: &[HapticSignal]) -> Result<()> {
    for (i, s) in batch.iter().enumerate() {
        if s.rows() != cfg.seq_len || s.channels() != cfg.in_dim {
            return Err(Error::Shape(format!(
                "sample {i} is {}×{}, network expects {}×{}",
                s.rows(),
                s.channels(),
                cfg.seq_len,
                cfg.in_dim
            )));
        }
    }
    Ok(())
}

fn encode_layer(p: &LayerParams, input: Vec<f64>, cfg: &NetConfig) -> (Vec<f64>, LayerCache) {
    let (t, d, f) = (cfg.seq_len, cfg.d_model, cfg.d_ff);
    let q = ops::linear(&input, t, &p.wq, &p.bq, d, d);
    let k = ops::linear(&input, t, &p.wk, &p.bk, d, d);
    let v = ops::linear(&input, t, &p.wv, &p.bv, d, d);
    let (ctx, att) = ops::attention(&q, &k, &v, t, d, cfg.n_heads);
    let mut r1 = ops::linear(&ctx, t, &p.wo, &p.bo, d, d);
    for (a, b) in r1.iter_mut().zip(&input) {
        *a += b;
    }
    let (l1, ln1) = ops::layer_norm(&r1, d, &p.ln1_g, &p.ln1_b, NORM_EPS);
    let ff_pre = ops::linear(&l1, t, &p.ff1_w, &p.ff1_b, d, f);
    let ff_act: Vec<f64> = ff_pre.iter().map(|&v| v.max(0.0)).collect();
    let mut r2 = ops::linear(&ff_act, t, &p.ff2_w, &p.ff2_b, f, d);
    for (a, b) in r2.iter_mut().zip(&l1) {
        *a += b;
    }
    let (out, ln2) = ops::layer_norm(&r2, d, &p.ln2_g, &p.ln2_b, NORM_EPS);
    (
        out,
        LayerCache {
            input,
            q,
            k,
            v,
            att,
            ctx,
            ln1,
            l1,
            ff_pre,
            ff_act,
            ln2,
        },
    )
}

fn encode(w: &ParamSet, cfg: &NetConfig, signal: &HapticSignal) -> Encoded {
    let (t, d) = (cfg.seq_len, cfg.d_model);
    let x = signal.as_slice().to_vec();
    let proj = ops::linear(&x, t, &w.input_w, &w.input_b, cfg.in_dim, d);
    let (mut h, ln0) = ops::layer_norm(&proj, d, &w.ln_g, &w.ln_b, NORM_EPS);
    for (a, b) in h.iter_mut().zip(&w.pos) {
        *a += b;
    }
    let mut layers = Vec::with_capacity(w.layers.len());
    for lp in &w.layers {
        let (out, cache) = encode_layer(lp, h, cfg);
        layers.push(cache);
        h = out;
    }
    let mut pooled = vec![0.0; d];
    for row in h.chunks_exact(d) {
        for (p, v) in pooled.iter_mut().zip(row) {
            *p += v;
        }
    }
    for p in &mut pooled {
        *p /= t as f64;
    }
    Encoded {
        pooled,
        cache: SampleCache { x, ln0, layers },
    }
}

fn head(w: &ParamSet, cfg: &NetConfig, normed: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pre = ops::linear(normed, 1, &w.head_w, &w.head_b, cfg.d_model, cfg.embed_dim);
    let out = pre.iter().map(|&v| v.max(0.0)).collect();
    (out, pre)
}

impl NetworkParams {
    /// Runs the network on a batch.
    ///
    /// Train mode needs at least two samples, normalizes with batch
    /// statistics, updates the running statistics and returns the cache for
    /// [`backward`](Self::backward). Infer mode never mutates `self`; see
    /// [`embed`](Self::embed) for a shared-borrow entry point.
    pub fn forward(&mut self, batch: &[HapticSignal], mode: Mode) -> Result<(Vec<Vec<f64>>, Option<ForwardCache>)> {
        match mode {
            Mode::Train => self.forward_train(batch).map(|(e, c)| (e, Some(c))),
            Mode::Infer => self.embed(batch).map(|e| (e, None)),
        }
    }

    pub fn forward_train(&mut self, batch: &[HapticSignal]) -> Result<(Vec<Vec<f64>>, ForwardCache)> {
        let cfg = self.config;
        check_batch(&cfg, batch)?;
        if batch.len() < 2 {
            return Err(Error::Shape(format!(
                "train-mode batch needs at least 2 samples, got {}",
                batch.len()
            )));
        }
        let d = cfg.d_model;
        let n = batch.len();
        let encoded: Vec<Encoded> = batch.iter().map(|s| encode(&self.weights, &cfg, s)).collect();

        let mut mean = vec![0.0; d];
        for e in &encoded {
            for (m, v) in mean.iter_mut().zip(&e.pooled) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for e in &encoded {
            for c in 0..d {
                let dv = e.pooled[c] - mean[c];
                var[c] += dv * dv;
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();

        let mut xhat = Vec::with_capacity(n * d);
        let mut bn_out = Vec::with_capacity(n);
        let mut embeddings = Vec::with_capacity(n);
        let mut head_pre = Vec::with_capacity(n);
        for e in &encoded {
            let mut row = vec![0.0; d];
            for c in 0..d {
                let h = (e.pooled[c] - mean[c]) * inv_std[c];
                xhat.push(h);
                row[c] = self.weights.bn_g[c] * h + self.weights.bn_b[c];
            }
            let (out, pre) = head(&self.weights, &cfg, &row);
            embeddings.push(out);
            head_pre.push(pre);
            bn_out.push(row);
        }

        let unbias = n as f64 / (n as f64 - 1.0);
        for c in 0..d {
            self.bn_running_mean[c] = (1.0 - BN_MOMENTUM) * self.bn_running_mean[c] + BN_MOMENTUM * mean[c];
            self.bn_running_var[c] = (1.0 - BN_MOMENTUM) * self.bn_running_var[c] + BN_MOMENTUM * var[c] * unbias;
        }

        let cache = ForwardCache {
            fingerprint: self.weights.fingerprint(),
            samples: encoded.into_iter().map(|e| e.cache).collect(),
            bn: NormCache { xhat, inv_std },
            bn_out,
            head_pre,
        };
        Ok((embeddings, cache))
    }

    /// Infer-mode embeddings. Each output depends only on its own input.
    pub fn embed(&self, batch: &[HapticSignal]) -> Result<Vec<Vec<f64>>> {
        check_batch(&self.config, batch)?;
        Ok(batch.iter().map(|s| self.embed_unchecked(s)).collect())
    }

    pub fn embed_one(&self, signal: &HapticSignal) -> Result<Vec<f64>> {
        check_batch(&self.config, std::slice::from_ref(signal))?;
        Ok(self.embed_unchecked(signal))
    }

    fn embed_unchecked(&self, signal: &HapticSignal) -> Vec<f64> {
        let cfg = &self.config;
        let enc = encode(&self.weights, cfg, signal);
        let normed: Vec<f64> = (0..cfg.d_model)
            .map(|c| {
                let h = (enc.pooled[c] - self.bn_running_mean[c]) / (self.bn_running_var[c] + NORM_EPS).sqrt();
                self.weights.bn_g[c] * h + self.weights.bn_b[c]
            })
            .collect();
        head(&self.weights, cfg, &normed).0
    }

    /// Gradients of a scalar loss with respect to every learnable tensor,
    /// given the loss gradient on each embedding of the cached batch.
    pub fn backward(&self, cache: &ForwardCache, d_embeddings: &[Vec<f64>]) -> Result<Gradients> {
        if cache.fingerprint != self.weights.fingerprint() {
            return Err(Error::StaleCache);
        }
        let cfg = &self.config;
        let (d, e_dim) = (cfg.d_model, cfg.embed_dim);
        let n = cache.samples.len();
        if d_embeddings.len() != n || d_embeddings.iter().any(|g| g.len() != e_dim) {
            return Err(Error::Shape(format!("upstream gradient must be {n} × {e_dim}")));
        }
        let w = &self.weights;
        let mut g = ParamSet::zeros(cfg);

        // Head: ReLU then dense.
        let mut d_bn_out = Vec::with_capacity(n);
        for i in 0..n {
            let d_pre: Vec<f64> = d_embeddings[i]
                .iter()
                .zip(&cache.head_pre[i])
                .map(|(&gv, &p)| if p > 0.0 { gv } else { 0.0 })
                .collect();
            let dx = ops::linear_backward(
                &cache.bn_out[i],
                &d_pre,
                1,
                &w.head_w,
                d,
                e_dim,
                &mut g.head_w,
                &mut g.head_b,
            );
            d_bn_out.push(dx);
        }

        // Batch norm over the batch dimension.
        let mut d_pooled = vec![vec![0.0; d]; n];
        for c in 0..d {
            let mut mean_dxhat = 0.0;
            let mut mean_dxhat_xhat = 0.0;
            for i in 0..n {
                let xh = cache.bn.xhat[i * d + c];
                let dy = d_bn_out[i][c];
                g.bn_g[c] += dy * xh;
                g.bn_b[c] += dy;
                let dxh = dy * w.bn_g[c];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xh;
            }
            mean_dxhat /= n as f64;
            mean_dxhat_xhat /= n as f64;
            for i in 0..n {
                let xh = cache.bn.xhat[i * d + c];
                let dxh = d_bn_out[i][c] * w.bn_g[c];
                d_pooled[i][c] = cache.bn.inv_std[c] * (dxh - mean_dxhat - xh * mean_dxhat_xhat);
            }
        }

        for (sample, dp) in cache.samples.iter().zip(&d_pooled) {
            backward_sample(w, cfg, sample, dp, &mut g);
        }
        Ok(g)
    }
}

fn backward_sample(w: &ParamSet, cfg: &NetConfig, s: &SampleCache, d_pooled: &[f64], g: &mut ParamSet) {
    let (t, d, f) = (cfg.seq_len, cfg.d_model, cfg.d_ff);
    // Mean pooling spreads the gradient evenly over time.
    let mut dh: Vec<f64> = (0..t * d).map(|i| d_pooled[i % d] / t as f64).collect();

    for (lc, (lp, lg)) in s.layers.iter().zip(w.layers.iter().zip(g.layers.iter_mut())).rev() {
        let d_r2 = ops::layer_norm_backward(&dh, &lc.ln2, d, &lp.ln2_g, &mut lg.ln2_g, &mut lg.ln2_b);
        let d_act = ops::linear_backward(&lc.ff_act, &d_r2, t, &lp.ff2_w, f, d, &mut lg.ff2_w, &mut lg.ff2_b);
        let d_ff_pre: Vec<f64> = d_act
            .iter()
            .zip(&lc.ff_pre)
            .map(|(&gv, &p)| if p > 0.0 { gv } else { 0.0 })
            .collect();
        let mut d_l1 = ops::linear_backward(&lc.l1, &d_ff_pre, t, &lp.ff1_w, d, f, &mut lg.ff1_w, &mut lg.ff1_b);
        for (a, b) in d_l1.iter_mut().zip(&d_r2) {
            *a += b;
        }
        let d_r1 = ops::layer_norm_backward(&d_l1, &lc.ln1, d, &lp.ln1_g, &mut lg.ln1_g, &mut lg.ln1_b);
        let d_ctx = ops::linear_backward(&lc.ctx, &d_r1, t, &lp.wo, d, d, &mut lg.wo, &mut lg.bo);
        let (dq, dk, dv) = ops::attention_backward(&d_ctx, &lc.q, &lc.k, &lc.v, &lc.att, t, d, cfg.n_heads);
        let mut d_in = d_r1;
        let dxq = ops::linear_backward(&lc.input, &dq, t, &lp.wq, d, d, &mut lg.wq, &mut lg.bq);
        let dxk = ops::linear_backward(&lc.input, &dk, t, &lp.wk, d, d, &mut lg.wk, &mut lg.bk);
        let dxv = ops::linear_backward(&lc.input, &dv, t, &lp.wv, d, d, &mut lg.wv, &mut lg.bv);
        for (i, a) in d_in.iter_mut().enumerate() {
            *a += dxq[i] + dxk[i] + dxv[i];
        }
        dh = d_in;
    }

    // Positional encoding is additive after the input layer norm.
    for (gp, v) in g.pos.iter_mut().zip(&dh) {
        *gp += v;
    }
    let d_proj = ops::layer_norm_backward(&dh, &s.ln0, d, &w.ln_g, &mut g.ln_g, &mut g.ln_b);
    ops::linear_backward(
        &s.x,
        &d_proj,
        t,
        &w.input_w,
        cfg.in_dim,
        d,
        &mut g.input_w,
        &mut g.input_b,
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetworkParams;

    fn cfg() -> NetConfig {
        NetConfig {
            seq_len: 12,
            d_model: 8,
            n_heads: 2,
            d_ff: 4,
            embed_dim: 6,
            seed: 5,
            ..Default::default()
        }
    }

    fn signals(cfg: &NetConfig, n: usize, salt: usize) -> Vec<HapticSignal> {
        (0..n)
            .map(|s| {
                let data = (0..cfg.seq_len * cfg.in_dim)
                    .map(|i| ((i * 31 + (s + salt) * 17) as f64 * 0.173).sin() * 3.0)
                    .collect();
                HapticSignal::with_shape(cfg.seq_len, cfg.in_dim, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn embeddings_are_non_negative() {
        let c = cfg();
        let mut p = NetworkParams::init(&c).unwrap();
        let b = signals(&c, 6, 0);
        let (train, _) = p.forward_train(&b).unwrap();
        let infer = p.embed(&b).unwrap();
        assert!(train.iter().chain(&infer).flatten().all(|&v| v >= 0.0));
        assert!(infer.iter().all(|e| e.len() == c.embed_dim));
    }

    #[test]
    fn infer_is_batch_independent_and_deterministic() {
        let c = cfg();
        let mut p = NetworkParams::init(&c).unwrap();
        p.forward_train(&signals(&c, 5, 9)).unwrap();
        let batch = signals(&c, 32, 0);
        let all = p.embed(&batch).unwrap();
        let alone = p.embed_one(&batch[17]).unwrap();
        for (a, b) in alone.iter().zip(&all[17]) {
            assert!((a - b).abs() <= 1e-12);
        }
        let again = p.embed(&batch).unwrap();
        assert_eq!(all, again);
    }

    #[test]
    fn infer_mutates_nothing_and_train_updates_running_stats() {
        let c = cfg();
        let mut p = NetworkParams::init(&c).unwrap();
        let before = p.clone();
        let (_, cache) = p.forward(&signals(&c, 4, 0), Mode::Infer).unwrap();
        assert!(cache.is_none());
        assert_eq!(p, before);
        p.forward(&signals(&c, 4, 0), Mode::Train).unwrap();
        assert_eq!(p.weights, before.weights);
        assert_ne!(p.bn_running_mean, before.bn_running_mean);
        assert!(p.bn_running_var.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn train_batch_of_one_is_rejected() {
        let c = cfg();
        let mut p = NetworkParams::init(&c).unwrap();
        assert!(matches!(p.forward_train(&signals(&c, 1, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let c = cfg();
        let p = NetworkParams::init(&c).unwrap();
        let bad = HapticSignal::with_shape(c.seq_len - 1, c.in_dim, vec![0.0; (c.seq_len - 1) * c.in_dim]).unwrap();
        assert!(matches!(p.embed_one(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let c = cfg();
        let mut p = NetworkParams::init(&c).unwrap();
        let (emb, cache) = p.forward_train(&signals(&c, 4, 0)).unwrap();
        let zeros: Vec<Vec<f64>> = emb.iter().map(|e| vec![0.0; e.len()]).collect();
        let g = p.backward(&cache, &zeros).unwrap();
        assert!(g.is_zero());
        assert!(g.same_shape(&p.weights));
    }

    #[test]
    fn stale_cache_is_detected() {
        let c = cfg();
        let mut p = NetworkParams::init(&c).unwrap();
        let (emb, cache) = p.forward_train(&signals(&c, 4, 0)).unwrap();
        p.weights.head_b[0] += 1e-3;
        let ones: Vec<Vec<f64>> = emb.iter().map(|e| vec![1.0; e.len()]).collect();
        assert!(matches!(p.backward(&cache, &ones), Err(Error::StaleCache)));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let c = cfg();
        let mut p = NetworkParams::init(&c).unwrap();
        let (_, cache) = p.forward_train(&signals(&c, 3, 0)).unwrap();
        for i in 0..3 {
            for row in cache.attention(i, 0).chunks_exact(c.seq_len) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pooling_averages_the_encoder_output_over_time() {
        // Zero every attention and feed-forward weight: each encoder layer then
        // only applies its two layer norms to the position-augmented input.
        let c = cfg();
        let mut p = NetworkParams::init(&c).unwrap();
        for l in &mut p.weights.layers {
            for t in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.ff1_w, &mut l.ff2_w] {
                t.fill(0.0);
            }
        }
        let s = &signals(&c, 1, 3)[0];
        let enc = encode(&p.weights, &c, s);

        let d = c.d_model;
        let w = &p.weights;
        let proj = ops::linear(s.as_slice(), c.seq_len, &w.input_w, &w.input_b, c.in_dim, d);
        let (normed, _) = ops::layer_norm(&proj, d, &w.ln_g, &w.ln_b, NORM_EPS);
        let mut h: Vec<f64> = normed.iter().zip(&w.pos).map(|(a, b)| a + b).collect();
        let l = &w.layers[0];
        h = ops::layer_norm(&h, d, &l.ln1_g, &l.ln1_b, NORM_EPS).0;
        h = ops::layer_norm(&h, d, &l.ln2_g, &l.ln2_b, NORM_EPS).0;
        for ch in 0..d {
            let mean = (0..c.seq_len).map(|t| h[t * d + ch]).sum::<f64>() / c.seq_len as f64;
            assert!((enc.pooled[ch] - mean).abs() < 1e-12);
        }
    }
}
