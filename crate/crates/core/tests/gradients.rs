//! Analytic gradients through the whole network and the triplet loss,
//! checked against central finite differences.

use haptic_core::net::{NetConfig, NetworkParams, ParamSet};
use haptic_core::train::{batch_all_loss, mine, MinedBatch};
use haptic_core::HapticSignal;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;

fn tiny(seed: u64) -> NetConfig {
    NetConfig {
        seq_len: 8,
        in_dim: 6,
        d_model: 4,
        n_heads: 2,
        d_ff: 3,
        n_encoder_layers: 1,
        embed_dim: 3,
        seed,
    }
}

fn random_batch(cfg: &NetConfig, n: usize, rng: &mut ChaCha8Rng) -> Vec<HapticSignal> {
    (0..n)
        .map(|_| {
            let data = (0..cfg.seq_len * cfg.in_dim)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            HapticSignal::with_shape(cfg.seq_len, cfg.in_dim, data).unwrap()
        })
        .collect()
}

/// Perturbs every parameter a little so biases and gains are not at their
/// symmetric initial values.
fn jitter(p: &mut ParamSet, rng: &mut ChaCha8Rng) {
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

fn loss(params: &NetworkParams, batch: &[HapticSignal], mined: &MinedBatch, margin: f64) -> f64 {
    let mut p = params.clone();
    let (emb, _) = p.forward_train(batch).unwrap();
    batch_all_loss(&emb, mined, margin).loss
}

/// Smallest |hinge| over all triplets, computed directly from embeddings.
fn min_hinge(emb: &[Vec<f64>], mined: &MinedBatch, margin: f64) -> f64 {
    let dist = |i: usize, j: usize| -> f64 {
        emb[i]
            .iter()
            .zip(&emb[j])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut m = f64::INFINITY;
    for a in 0..emb.len() {
        for &p in &mined.positives[a] {
            for &n in &mined.negatives[a] {
                m = m.min((dist(a, p) - dist(a, n) + margin).abs());
            }
        }
    }
    m
}

fn max_relative_error(seed: u64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tiny(seed);
    let mut params = NetworkParams::init(&cfg).unwrap();
    jitter(&mut params.weights, &mut rng);
    let batch = random_batch(&cfg, 4, &mut rng);
    let positions = [
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(0.1, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(1.1, 0.05, 0.0),
    ];
    let mined = mine(&positions, 0.25);
    let margin = 1.0;

    let mut p = params.clone();
    let (emb, cache) = p.forward_train(&batch).unwrap();
    // Skip draws sitting on a ReLU or hinge kink, where finite differences
    // do not estimate the one-sided derivative.
    if cache.min_relu_margin() < 1e-2 || min_hinge(&emb, &mined, margin) < 1e-2 {
        return None;
    }
    let tl = batch_all_loss(&emb, &mined, margin);
    assert!(tl.active > 0);
    let grads = params.backward(&cache, &tl.grad).unwrap();

    let mut worst: f64 = 0.0;
    let n_tensors = params.weights.tensors().len();
    for ti in 0..n_tensors {
        let len = params.weights.tensors()[ti].len();
        for k in 0..len {
            let mut plus = params.clone();
            plus.weights.tensors_mut()[ti][k] += STEP;
            let mut minus = params.clone();
            minus.weights.tensors_mut()[ti][k] -= STEP;
            let numeric = (loss(&plus, &batch, &mined, margin) - loss(&minus, &batch, &mined, margin)) / (2.0 * STEP);
            let analytic = grads.tensors()[ti][k];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    Some(worst)
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut checked = 0;
    let mut seed = 100;
    while checked < 5 {
        if let Some(err) = max_relative_error(seed) {
            assert!(err < 1e-4, "seed {seed}: max relative error {err:e}");
            checked += 1;
        }
        seed += 1;
    }
}

#[test]
fn gradients_are_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = tiny(9);
    let mut params = NetworkParams::init(&cfg).unwrap();
    jitter(&mut params.weights, &mut rng);
    let batch = random_batch(&cfg, 5, &mut rng);
    let positions: Vec<Vector3<f64>> = (0..5).map(|i| Vector3::new(0.2 * i as f64, 0.0, 0.0)).collect();

    let perm = [3, 0, 4, 1, 2];
    let pb: Vec<HapticSignal> = perm.iter().map(|&i| batch[i].clone()).collect();
    let pp: Vec<Vector3<f64>> = perm.iter().map(|&i| positions[i]).collect();

    let run = |batch: &[HapticSignal], pos: &[Vector3<f64>]| {
        let mut p = params.clone();
        let (emb, cache) = p.forward_train(batch).unwrap();
        let tl = batch_all_loss(&emb, &mine(pos, 0.25), 1.0);
        let w = p.backward(&cache, &tl.grad).unwrap();
        (tl.loss, tl.grad, w)
    };
    let (l1, g1, w1) = run(&batch, &positions);
    let (l2, g2, w2) = run(&pb, &pp);
    assert!((l1 - l2).abs() < 1e-12);
    for (k, &i) in perm.iter().enumerate() {
        for (a, b) in g2[k].iter().zip(&g1[i]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    for (a, b) in w1.tensors().iter().zip(w2.tensors()) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-10 * (1.0 + x.abs()));
        }
    }
}
