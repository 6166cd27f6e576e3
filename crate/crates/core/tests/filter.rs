//! Particle-filter invariants under random states.

use haptic_core::map::{MapEntry, SparseHapticMap};
use haptic_core::mcl::{
    effective_sample_size, foot_world, likelihood_from_distances, log_likelihood_from_distances, normalize, resample,
    systematic_indices, update, MeasurementModelConfig, Particle,
};
use haptic_core::Pose;
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pose() -> impl Strategy<Value = Pose> {
    (prop::array::uniform3(-5.0f64..5.0), prop::array::uniform3(-3.2f64..3.2))
        .prop_map(|(t, [r, p, y])| Pose::new(Vector3::from(t), UnitQuaternion::from_euler_angles(r, p, y)))
}

/// Raw weights spanning many orders of magnitude.
fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0.0f64..1.0, -12i32..1), 2..300)
        .prop_map(|v| v.into_iter().map(|(m, e)| (m + 1e-3) * 10f64.powi(e)).collect())
}

fn particles(w: &[f64]) -> Vec<Particle> {
    w.iter()
        .map(|&weight| Particle {
            pose: Pose::identity(),
            weight,
        })
        .collect()
}

proptest! {
    #[test]
    fn likelihood_is_bounded_and_decreasing(
        d_l in 0.0f64..3.0, d_2d in 0.0f64..0.5, d_e in -0.1f64..0.1, step in 0.0f64..0.2, elevation: bool,
    ) {
        let mm = MeasurementModelConfig { use_elevation: elevation, ..MeasurementModelConfig::default() };
        let l = likelihood_from_distances(d_l, d_2d, d_e, &mm);
        prop_assert!(l > 0.0 && l <= 1.0);
        if d_2d > mm.d_t {
            prop_assert_eq!(l, mm.p_min);
        } else {
            prop_assert!(likelihood_from_distances(d_l + step, d_2d, d_e, &mm) <= l);
            prop_assert!(likelihood_from_distances(d_l, d_2d, d_e.abs() + step, &mm) <= likelihood_from_distances(d_l, d_2d, d_e.abs(), &mm));
            if d_2d + step <= mm.d_t {
                prop_assert!(likelihood_from_distances(d_l, d_2d + step, d_e, &mm) <= l);
            }
            let log = log_likelihood_from_distances(d_l, d_2d, d_e, &mm);
            prop_assert!((log.exp() - l).abs() <= 1e-12);
        }
    }

    #[test]
    fn variants_agree_at_zero_elevation_error(d_l in 0.0f64..3.0, d_2d in 0.0f64..0.5) {
        let t = likelihood_from_distances(d_l, d_2d, 0.0, &MeasurementModelConfig::hl_t());
        let st = likelihood_from_distances(d_l, d_2d, 0.0, &MeasurementModelConfig::hl_st());
        prop_assert_eq!(t, st);
    }

    #[test]
    fn normalized_weights_sum_to_one(w in weights()) {
        let mut ps = particles(&w);
        normalize(&mut ps);
        let sum: f64 = ps.iter().map(|p| p.weight).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        let ess = effective_sample_size(&ps);
        prop_assert!(ess >= 1.0 - 1e-9 && ess <= ps.len() as f64 + 1e-9);
    }

    #[test]
    fn systematic_offspring_within_one_of_expectation(w in weights(), u in 0.0f64..1.0) {
        let mut ps = particles(&w);
        normalize(&mut ps);
        let n = ps.len();
        let norm: Vec<f64> = ps.iter().map(|p| p.weight).collect();
        let idx = systematic_indices(&norm, u / n as f64);
        prop_assert_eq!(idx.len(), n);
        let mut count = vec![0usize; n];
        for i in idx {
            count[i] += 1;
        }
        for (c, w) in count.iter().zip(&norm) {
            prop_assert!((*c as f64 - n as f64 * w).abs() < 1.0 + 1e-9, "{} offspring for n·w = {}", c, n as f64 * w);
        }
    }

    #[test]
    fn resampling_fires_only_below_the_ess_gate(w in weights(), threshold in 0.0f64..1.0, seed: u64) {
        let mut ps = particles(&w);
        normalize(&mut ps);
        let ess = effective_sample_size(&ps);
        let n = ps.len();
        let before = ps.clone();
        let fired = resample(&mut ps, threshold, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(fired, ess < threshold * n as f64);
        prop_assert_eq!(ps.len(), n);
        if fired {
            prop_assert!(ps.iter().all(|p| p.weight == 1.0 / n as f64));
        } else {
            prop_assert_eq!(ps, before);
        }
    }

    #[test]
    fn update_keeps_the_simplex(seed: u64, n in 2usize..60, offset in prop::array::uniform2(-1.0f64..1.0)) {
        let map = SparseHapticMap::new(2, vec![
            MapEntry { xy: [0.0, 0.0], elevation: 0.0, embedding: vec![0.0, 0.0], source_step_id: 0 },
            MapEntry { xy: [0.3, 0.1], elevation: 0.02, embedding: vec![1.0, -1.0], source_step_id: 1 },
        ]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps: Vec<Particle> = (0..n).map(|_| {
            use rand::Rng;
            let t = Vector3::new(rng.random_range(-0.5..0.5) + offset[0], rng.random_range(-0.5..0.5) + offset[1], rng.random_range(-0.05..0.05));
            Particle { pose: Pose::from_translation(t), weight: 1.0 / n as f64 }
        }).collect();
        update(&mut ps, &Vector3::zeros(), &[40.0, -40.0], &map, &MeasurementModelConfig::hl_st()).unwrap();
        let sum: f64 = ps.iter().map(|p| p.weight).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(ps.iter().all(|p| p.weight.is_finite() && p.weight >= 0.0));
    }

    #[test]
    fn foot_world_composes(a in pose(), b in pose(), p in prop::array::uniform3(-1.0f64..1.0)) {
        let p = Vector3::from(p);
        let lhs = foot_world(&a.compose(&b), &p);
        let rhs = foot_world(&a, &foot_world(&b, &p));
        prop_assert!((lhs - rhs).norm() < 1e-9);
        prop_assert!((foot_world(&a.inverse(), &foot_world(&a, &p)) - p).norm() < 1e-9);
    }
}
