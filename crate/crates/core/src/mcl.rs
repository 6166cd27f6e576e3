//! Monte Carlo localization against a sparse haptic map.
//!
//! Each step event moves the particles by the odometry increment (with
//! noise), scores every particle by comparing the step's embedding with the
//! map entry nearest to where that particle places the foot, and resamples
//! when the effective sample size drops.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::map::SparseHapticMap;
use crate::net::NetworkParams;
use crate::pose::Pose;
use crate::seed;
use crate::signal_io::{HapticSignal, Trial};
use crate::trajectory::{TrajectoryLog, TrajectoryRecord};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Particle {
    pub pose: Pose,
    pub weight: f64,
}

/// Measurement model constants. The Gaussian factors are unnormalized
/// (peak 1); normalization constants cancel when weights are normalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementModelConfig {
    pub sigma_l: f64,
    pub sigma_2d: f64,
    pub sigma_e: f64,
    pub d_t: f64,
    pub p_min: f64,
    /// Include the elevation factor (HL-ST); without it the model is HL-T.
    pub use_elevation: bool,
}

impl Default for MeasurementModelConfig {
    fn default() -> Self {
        Self {
            sigma_l: 0.4,
            sigma_2d: 0.4,
            sigma_e: 0.01,
            d_t: 0.25,
            p_min: 0.001,
            use_elevation: true,
        }
    }
}

impl MeasurementModelConfig {
    pub fn hl_t() -> Self {
        Self {
            use_elevation: false,
            ..Self::default()
        }
    }

    pub fn hl_st() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = [self.sigma_l, self.sigma_2d, self.sigma_e, self.p_min]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive {
            return Err(Error::InvalidConfig(
                "measurement sigmas and p_min must be positive".into(),
            ));
        }
        if !(self.d_t.is_finite() && self.d_t >= 0.0) {
            return Err(Error::InvalidConfig("d_t must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MclConfig {
    pub n_particles: usize,
    /// Translation noise stddev per meter of odometry translation, per axis.
    pub trans_noise_per_m: f64,
    /// Yaw noise stddev per radian of odometry yaw change.
    pub yaw_noise_per_rad: f64,
    /// Yaw noise stddev per meter of odometry translation, so straight walks
    /// can still absorb heading drift.
    pub yaw_noise_per_m: f64,
    /// Noise on z, roll and pitch as a fraction of the planar noise.
    pub vertical_noise_ratio: f64,
    /// Resample when ESS < threshold · n.
    pub resample_threshold: f64,
    pub init_sigma_xy: f64,
    pub init_sigma_yaw: f64,
    pub seed: u64,
}

impl Default for MclConfig {
    fn default() -> Self {
        Self {
            n_particles: 500,
            trans_noise_per_m: 0.1,
            yaw_noise_per_rad: 0.05,
            yaw_noise_per_m: 0.02,
            vertical_noise_ratio: 0.2,
            resample_threshold: 0.5,
            init_sigma_xy: 0.1,
            init_sigma_yaw: 0.05,
            seed: 0,
        }
    }
}

impl MclConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::InvalidConfig("n_particles must be at least 2".into()));
        }
        let non_negative = [
            self.trans_noise_per_m,
            self.yaw_noise_per_rad,
            self.yaw_noise_per_m,
            self.vertical_noise_ratio,
            self.init_sigma_xy,
            self.init_sigma_yaw,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0);
        if !non_negative {
            return Err(Error::InvalidConfig(
                "motion and init noise must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.resample_threshold) {
            return Err(Error::InvalidConfig("resample_threshold must be in [0, 1]".into()));
        }
        Ok(())
    }
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
}

/// Applies the odometry increment to every particle, perturbed by zero-mean
/// Gaussian noise whose stddev grows with the size of the increment.
pub fn predict(particles: &mut [Particle], increment: &Pose, cfg: &MclConfig, rng: &mut ChaCha8Rng) {
    let dist = increment.translation.norm();
    let dyaw = increment.yaw().abs();
    let sigma_t = cfg.trans_noise_per_m * dist;
    let sigma_z = cfg.vertical_noise_ratio * sigma_t;
    let sigma_yaw = cfg.yaw_noise_per_rad * dyaw + cfg.yaw_noise_per_m * dist;
    let sigma_rp = cfg.vertical_noise_ratio * sigma_yaw;
    for p in particles.iter_mut() {
        let dt = Vector3::new(gauss(rng, sigma_t), gauss(rng, sigma_t), gauss(rng, sigma_z));
        let (roll, pitch, yaw) = (gauss(rng, sigma_rp), gauss(rng, sigma_rp), gauss(rng, sigma_yaw));
        let noisy = Pose::new(
            increment.translation + dt,
            increment.rotation * UnitQuaternion::from_euler_angles(roll, pitch, yaw),
        );
        p.pose = p.pose.compose(&noisy);
    }
}

/// Foot position in the world frame for a particle pose and a foot position
/// in the body frame.
pub fn foot_world(pose: &Pose, foothold_base: &Vector3<f64>) -> Vector3<f64> {
    pose.transform_point(foothold_base)
}

fn g(d: f64, sigma: f64) -> f64 {
    (-d * d / (2.0 * sigma * sigma)).exp()
}

fn embedding_distance(v: &[f64], w: &[f32]) -> f64 {
    v.iter()
        .zip(w)
        .map(|(a, &b)| {
            let d = a - b as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn log_g(d: f64, sigma: f64) -> f64 {
    -d * d / (2.0 * sigma * sigma)
}

/// Natural log of [`likelihood_from_distances`], finite even where the
/// product of Gaussian factors underflows.
pub fn log_likelihood_from_distances(d_l: f64, d_2d: f64, d_e: f64, mm: &MeasurementModelConfig) -> f64 {
    if d_2d > mm.d_t {
        return mm.p_min.ln();
    }
    let elevation = if mm.use_elevation { log_g(d_e, mm.sigma_e) } else { 0.0 };
    log_g(d_l, mm.sigma_l) + log_g(d_2d, mm.sigma_2d) + elevation
}

/// Measurement likelihood from the three distances, `p_min` when the map
/// match is further than `d_t`.
pub fn likelihood_from_distances(d_l: f64, d_2d: f64, d_e: f64, mm: &MeasurementModelConfig) -> f64 {
    if d_2d > mm.d_t {
        return mm.p_min;
    }
    let elevation = if mm.use_elevation { g(d_e, mm.sigma_e) } else { 1.0 };
    g(d_l, mm.sigma_l) * g(d_2d, mm.sigma_2d) * elevation
}

fn match_distances(
    map: &SparseHapticMap,
    foot: &Vector3<f64>,
    v: &[f64],
    mm: &MeasurementModelConfig,
) -> Result<(f64, f64, f64)> {
    if v.len() != map.embed_dim() {
        return Err(Error::Shape(format!(
            "step embedding has {} components, map has {}",
            v.len(),
            map.embed_dim()
        )));
    }
    let (entry, d_2d) = map.nearest([foot.x, foot.y])?;
    if d_2d > mm.d_t {
        return Ok((0.0, d_2d, 0.0));
    }
    Ok((embedding_distance(v, &entry.embedding), d_2d, foot.z - entry.elevation))
}

/// Likelihood of observing embedding `v` with the foot at `foot` (world).
pub fn likelihood(map: &SparseHapticMap, foot: &Vector3<f64>, v: &[f64], mm: &MeasurementModelConfig) -> Result<f64> {
    let (d_l, d_2d, d_e) = match_distances(map, foot, v, mm)?;
    Ok(likelihood_from_distances(d_l, d_2d, d_e, mm))
}

pub fn log_likelihood(
    map: &SparseHapticMap,
    foot: &Vector3<f64>,
    v: &[f64],
    mm: &MeasurementModelConfig,
) -> Result<f64> {
    let (d_l, d_2d, d_e) = match_distances(map, foot, v, mm)?;
    Ok(log_likelihood_from_distances(d_l, d_2d, d_e, mm))
}

/// Normalizes weights to sum to one. Panics if they sum to zero.
pub fn normalize(particles: &mut [Particle]) {
    let sum: f64 = particles.iter().map(|p| p.weight).sum();
    assert!(sum > 0.0 && sum.is_finite(), "particle weights sum to {sum}");
    for p in particles.iter_mut() {
        p.weight /= sum;
    }
}

/// Multiplies each weight by its particle's likelihood and renormalizes.
/// The product is formed in log space and shifted by its maximum before
/// exponentiating, so tiny likelihoods cannot underflow the whole set to 0.
pub fn update(
    particles: &mut [Particle],
    foothold_base: &Vector3<f64>,
    embedding: &[f64],
    map: &SparseHapticMap,
    mm: &MeasurementModelConfig,
) -> Result<()> {
    let mut logw = Vec::with_capacity(particles.len());
    for p in particles.iter() {
        let foot = foot_world(&p.pose, foothold_base);
        logw.push(p.weight.ln() + log_likelihood(map, &foot, embedding, mm)?);
    }
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(max.is_finite(), "all particle weights are zero");
    for (p, lw) in particles.iter_mut().zip(logw) {
        p.weight = (lw - max).exp();
    }
    normalize(particles);
    Ok(())
}

pub fn effective_sample_size(particles: &[Particle]) -> f64 {
    1.0 / particles.iter().map(|p| p.weight * p.weight).sum::<f64>()
}

/// Systematic resampling with offset `u0 ∈ [0, 1/n)`: returns the parent
/// index of each of the `n` offspring.
pub fn systematic_indices(weights: &[f64], u0: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut i = 0;
    for j in 0..n {
        let u = u0 + j as f64 / n as f64;
        while u >= cum && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

/// Resamples when ESS < `threshold · n`. Returns whether it did.
pub fn resample(particles: &mut Vec<Particle>, threshold: f64, rng: &mut ChaCha8Rng) -> bool {
    let n = particles.len();
    if effective_sample_size(particles) >= threshold * n as f64 {
        return false;
    }
    let weights: Vec<f64> = particles.iter().map(|p| p.weight).collect();
    let u0 = rng.random_range(0.0..1.0 / n as f64);
    let uniform = 1.0 / n as f64;
    *particles = systematic_indices(&weights, u0)
        .into_iter()
        .map(|i| Particle {
            pose: particles[i].pose,
            weight: uniform,
        })
        .collect();
    true
}

/// Weighted mean pose. Quaternions are flipped into the hemisphere of the
/// highest-weight particle before averaging.
pub fn estimate(particles: &[Particle]) -> Pose {
    let best = particles
        .iter()
        .max_by(|a, b| a.weight.total_cmp(&b.weight))
        .expect("non-empty particle set");
    let qb = best.pose.rotation.quaternion().coords;
    let mut t = Vector3::zeros();
    let mut q = nalgebra::Vector4::zeros();
    for p in particles {
        t += p.pose.translation * p.weight;
        let c = p.pose.rotation.quaternion().coords;
        let sign = if c.dot(&qb) < 0.0 { -1.0 } else { 1.0 };
        q += c * (sign * p.weight);
    }
    Pose::new(t, UnitQuaternion::new_normalize(Quaternion::from(q)))
}

/// Particles drawn around `center` with planar Gaussian noise; z, roll and
/// pitch get `vertical_noise_ratio` of the planar spread.
pub fn initialize(center: &Pose, cfg: &MclConfig, rng: &mut ChaCha8Rng) -> Vec<Particle> {
    let w = 1.0 / cfg.n_particles as f64;
    let sz = cfg.vertical_noise_ratio * cfg.init_sigma_xy;
    let srp = cfg.vertical_noise_ratio * cfg.init_sigma_yaw;
    (0..cfg.n_particles)
        .map(|_| {
            let dt = Vector3::new(
                gauss(rng, cfg.init_sigma_xy),
                gauss(rng, cfg.init_sigma_xy),
                gauss(rng, sz),
            );
            let (roll, pitch, yaw) = (gauss(rng, srp), gauss(rng, srp), gauss(rng, cfg.init_sigma_yaw));
            let pose = Pose::new(
                center.translation + dt,
                UnitQuaternion::from_euler_angles(roll, pitch, yaw) * center.rotation,
            );
            Particle { pose, weight: w }
        })
        .collect()
}

/// Replays a trial through the filter and logs one estimate per step.
///
/// Particles start around the first ground-truth pose (or the first odometry
/// pose when the trial carries no truth).
pub fn run_localization(
    trial: &Trial,
    map: &SparseHapticMap,
    params: &NetworkParams,
    cfg: &MclConfig,
    mm: &MeasurementModelConfig,
) -> Result<TrajectoryLog> {
    cfg.validate()?;
    mm.validate()?;
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    if map.embed_dim() != params.config.embed_dim {
        return Err(Error::ConfigMismatch(format!(
            "map embed_dim {} differs from network embed_dim {}",
            map.embed_dim(),
            params.config.embed_dim
        )));
    }
    let first = trial.events.first().ok_or(Error::EmptyTrial)?;
    let signals: Vec<HapticSignal> = trial.events.iter().map(|e| e.signal.clone()).collect();
    let embeddings = params.embed(&signals)?;

    let mut init_rng = seed::rng(cfg.seed, "mcl.init");
    let mut motion_rng = seed::rng(cfg.seed, "mcl.motion");
    let mut resample_rng = seed::rng(cfg.seed, "mcl.resample");
    let mut particles = initialize(&first.truth_pose.unwrap_or(first.odom_pose), cfg, &mut init_rng);

    let mut records = Vec::with_capacity(trial.events.len());
    let mut prev_odom = first.odom_pose;
    for (ev, emb) in trial.events.iter().zip(&embeddings) {
        let increment = prev_odom.between(&ev.odom_pose);
        prev_odom = ev.odom_pose;
        if !increment.is_finite() {
            return Err(Error::InvalidStep {
                step_id: ev.step_id,
                msg: "non-finite odometry increment".into(),
            });
        }
        predict(&mut particles, &increment, cfg, &mut motion_rng);
        update(&mut particles, &ev.foothold_base, emb, map, mm)?;
        let ess = effective_sample_size(&particles);
        let est = estimate(&particles);
        resample(&mut particles, cfg.resample_threshold, &mut resample_rng);
        records.push(TrajectoryRecord {
            timestamp: ev.timestamp,
            step_id: ev.step_id,
            estimate: est,
            truth: ev.truth_pose,
            ess: Some(ess),
        });
    }
    Ok(TrajectoryLog { records })
}
