//! Geometric mining and the Batch-All loss against direct oracles.

use haptic_core::net::NetConfig;
use haptic_core::synth::{generate_world, lawnmower_route, simulate_trial, OdometryNoiseConfig, WorldConfig};
use haptic_core::train::{batch_all_loss, fit, mine, TrainConfig};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D_THR: f64 = 0.25;

/// Positions on a 5 cm lattice so that pairs exactly `D_THR` apart occur.
fn lattice_positions() -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec((0i32..8, 0i32..8, 0i32..2), 1..20).prop_map(|v| {
        v.into_iter()
            .map(|(x, y, z)| Vector3::new(0.05 * x as f64, 0.05 * y as f64, 0.05 * z as f64))
            .collect()
    })
}

fn naive_loss(emb: &[Vec<f64>], pos: &[Vector3<f64>], margin: f64) -> f64 {
    let d = |i: usize, j: usize| {
        emb[i]
            .iter()
            .zip(&emb[j])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut sum = 0.0;
    let mut active = 0usize;
    for a in 0..emb.len() {
        for p in 0..emb.len() {
            if p == a || (pos[a] - pos[p]).norm() > D_THR {
                continue;
            }
            for n in 0..emb.len() {
                if n == a || (pos[a] - pos[n]).norm() <= D_THR {
                    continue;
                }
                let h = d(a, p) - d(a, n) + margin;
                if h > 0.0 {
                    sum += h;
                    active += 1;
                }
            }
        }
    }
    if active == 0 {
        0.0
    } else {
        sum / active as f64
    }
}

fn random_embeddings(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

proptest! {
    #[test]
    fn mining_partitions_every_anchor(pos in lattice_positions()) {
        let m = mine(&pos, D_THR);
        prop_assert_eq!(m.len(), pos.len());
        for a in 0..pos.len() {
            let mut seen = vec![0u8; pos.len()];
            for &p in &m.positives[a] {
                prop_assert!((pos[a] - pos[p]).norm() <= D_THR);
                seen[p] += 1;
            }
            for &n in &m.negatives[a] {
                prop_assert!((pos[a] - pos[n]).norm() > D_THR);
                seen[n] += 1;
            }
            for (i, &s) in seen.iter().enumerate() {
                prop_assert_eq!(s, u8::from(i != a), "index {} for anchor {}", i, a);
            }
        }
    }

    #[test]
    fn loss_matches_triple_loop(pos in lattice_positions(), seed in any::<u64>(), dim in 1usize..6, margin in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = random_embeddings(pos.len(), dim, &mut rng);
        let tl = batch_all_loss(&emb, &mine(&pos, D_THR), margin);
        prop_assert!((tl.loss - naive_loss(&emb, &pos, margin)).abs() < 1e-12);
        prop_assert!(tl.active <= tl.total);
    }
}

#[test]
fn embedding_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pos: Vec<Vector3<f64>> = (0..12)
        .map(|_| Vector3::new(rng.random_range(0.0..0.6), rng.random_range(0.0..0.6), 0.0))
        .collect();
    let emb = random_embeddings(12, 4, &mut rng);
    let mined = mine(&pos, D_THR);
    let margin = 0.2;
    let tl = batch_all_loss(&emb, &mined, margin);
    assert!(tl.active > 0);
    let h = 1e-6;
    for i in 0..12 {
        for k in 0..4 {
            let mut plus = emb.clone();
            plus[i][k] += h;
            let mut minus = emb.clone();
            minus[i][k] -= h;
            let numeric = (naive_loss(&plus, &pos, margin) - naive_loss(&minus, &pos, margin)) / (2.0 * h);
            assert!(
                (numeric - tl.grad[i][k]).abs() < 1e-6,
                "[{i}][{k}] {numeric} vs {}",
                tl.grad[i][k]
            );
        }
    }
}

#[test]
fn training_reduces_the_loss() {
    let wc = WorldConfig::default();
    let world = generate_world(&wc).unwrap();
    let route = lawnmower_route(&wc, 0.6, 0.35);
    let trial = simulate_trial(&world, &route, &OdometryNoiseConfig::none(), 3, "train").unwrap();
    let net = NetConfig {
        embed_dim: 8,
        ..NetConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let result = fit(std::slice::from_ref(&trial), &net, &cfg, |_| {}).unwrap();
    let first = result.log.first().unwrap().mean_loss;
    let last = result.log.last().unwrap().mean_loss;
    assert!(last < first, "loss went from {first} to {last}");

    let again = fit(std::slice::from_ref(&trial), &net, &cfg, |_| {}).unwrap();
    assert_eq!(again.params.weights.fingerprint(), result.params.weights.fingerprint());
}
