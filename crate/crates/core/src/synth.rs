//! Deterministic synthetic worlds and walks.
//!
//! A world is a rectangular arena split into Voronoi regions, each with its
//! own base force/torque waveform (three damped sinusoids per channel). The
//! amplitude of every sinusoid is modulated by a smooth random field over the
//! arena, so nearby footholds produce similar signals and distant ones do
//! not. Terrain height is another smooth random field.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::seed;
use crate::signal_io::{HapticSignal, StepEvent, Trial, CHANNELS, WINDOW_LEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignatureConfig {
    /// Damped sinusoids per channel.
    pub components: usize,
    /// Relative amplitude swing produced by the location field.
    pub modulation_scale: f64,
    pub modulation_min_wavelength: f64,
    pub modulation_max_wavelength: f64,
    /// Plane waves summed per modulation field.
    pub modulation_waves: usize,
    /// Peak amplitude of force channels (N) and torque channels (N·m).
    pub force_scale: f64,
    pub torque_scale: f64,
    /// White noise stddev as a fraction of the channel scale.
    pub noise_fraction: f64,
}

impl Default for SignatureConfig {
    fn default() -> Self {
        Self {
            components: 3,
            modulation_scale: 0.5,
            modulation_min_wavelength: 1.5,
            modulation_max_wavelength: 5.0,
            modulation_waves: 4,
            force_scale: 20.0,
            torque_scale: 2.0,
            noise_fraction: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub width: f64,
    pub height: f64,
    pub n_regions: usize,
    pub elevation_amplitude: f64,
    pub elevation_min_wavelength: f64,
    pub elevation_max_wavelength: f64,
    pub signature: SignatureConfig,
    /// Body advance between consecutive touchdowns, meters.
    pub step_length: f64,
    /// Time between consecutive touchdowns, seconds.
    pub step_period: f64,
    /// Largest heading change per touchdown; sharper corners are taken by
    /// turning on the spot over several touchdowns.
    pub max_turn_per_step: f64,
    pub body_height: f64,
    /// Nominal foot offsets from the body center: forward and lateral.
    pub foot_forward: f64,
    pub foot_lateral: f64,
    /// Stddev of foothold placement around the nominal position.
    pub foot_jitter: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width: 3.5,
            height: 7.0,
            n_regions: 8,
            elevation_amplitude: 0.03,
            elevation_min_wavelength: 1.5,
            elevation_max_wavelength: 4.0,
            signature: SignatureConfig::default(),
            step_length: 0.12,
            step_period: 0.5,
            max_turn_per_step: 0.25,
            body_height: 0.45,
            foot_forward: 0.3,
            foot_lateral: 0.2,
            foot_jitter: 0.02,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()) {
            return bad("arena width and height must be positive");
        }
        if self.n_regions == 0 {
            return bad("n_regions must be at least 1");
        }
        if !(self.step_length > 0.0 && self.step_period > 0.0 && self.max_turn_per_step > 0.0) {
            return bad("step_length, step_period and max_turn_per_step must be positive");
        }
        let s = &self.signature;
        if s.components == 0 || s.modulation_waves == 0 {
            return bad("signature needs at least one component and one modulation wave");
        }
        let wl = [
            s.modulation_min_wavelength,
            s.modulation_max_wavelength,
            self.elevation_min_wavelength,
            self.elevation_max_wavelength,
        ];
        if wl.iter().any(|w| !(*w > 0.0)) || s.modulation_min_wavelength > s.modulation_max_wavelength {
            return bad("wavelengths must be positive and ordered");
        }
        if self.elevation_min_wavelength > self.elevation_max_wavelength {
            return bad("wavelengths must be positive and ordered");
        }
        let non_neg = [
            s.modulation_scale,
            s.noise_fraction,
            s.force_scale,
            s.torque_scale,
            self.elevation_amplitude,
            self.foot_jitter,
        ];
        if non_neg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("scales, noise and jitter must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneWave {
    pub k: [f64; 2],
    pub phase: f64,
}

/// Zero-mean, unit-variance smooth random field built from plane waves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothField {
    pub waves: Vec<PlaneWave>,
}

impl SmoothField {
    fn random(n: usize, min_wl: f64, max_wl: f64, rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..n)
            .map(|_| {
                let wl = if min_wl == max_wl {
                    min_wl
                } else {
                    rng.random_range(min_wl..max_wl)
                };
                let dir = rng.random_range(0.0..PI);
                let k = TAU / wl;
                PlaneWave {
                    k: [k * dir.cos(), k * dir.sin()],
                    phase: rng.random_range(0.0..TAU),
                }
            })
            .collect();
        Self { waves }
    }

    pub fn value(&self, xy: [f64; 2]) -> f64 {
        let norm = (2.0 / self.waves.len() as f64).sqrt();
        norm * self
            .waves
            .iter()
            .map(|w| (w.k[0] * xy[0] + w.k[1] * xy[1] + w.phase).cos())
            .sum::<f64>()
    }
}

/// One damped sinusoid: `amplitude · exp(-t / decay) · sin(2π f t / T + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub amplitude: f64,
    /// Cycles per window.
    pub frequency: f64,
    /// Decay time in samples.
    pub decay: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: [f64; 2],
    /// `channels × components`.
    pub components: Vec<Vec<Component>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub regions: Vec<Region>,
    pub elevation: SmoothField,
    /// One field per `(channel, component)`, channel-major.
    pub modulation: Vec<SmoothField>,
}

pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = seed::rng(config.seed, "synth.world");
    let sig = &config.signature;
    let regions = (0..config.n_regions)
        .map(|_| {
            let center = [
                rng.random_range(0.0..config.width),
                rng.random_range(0.0..config.height),
            ];
            let components = (0..CHANNELS)
                .map(|c| {
                    let scale = if c < 3 { sig.force_scale } else { sig.torque_scale };
                    (0..sig.components)
                        .map(|_| Component {
                            amplitude: scale * rng.random_range(0.3..1.0),
                            frequency: rng.random_range(1.0..8.0),
                            decay: rng.random_range(30.0..160.0),
                            phase: rng.random_range(0.0..TAU),
                        })
                        .collect()
                })
                .collect();
            Region { center, components }
        })
        .collect();
    let elevation = SmoothField::random(
        6,
        config.elevation_min_wavelength,
        config.elevation_max_wavelength,
        &mut rng,
    );
    let modulation = (0..CHANNELS * sig.components)
        .map(|_| {
            SmoothField::random(
                sig.modulation_waves,
                sig.modulation_min_wavelength,
                sig.modulation_max_wavelength,
                &mut rng,
            )
        })
        .collect();
    Ok(World {
        config: config.clone(),
        regions,
        elevation,
        modulation,
    })
}

impl World {
    pub fn region_of(&self, xy: [f64; 2]) -> usize {
        let d2 = |c: &[f64; 2]| (c[0] - xy[0]).powi(2) + (c[1] - xy[1]).powi(2);
        let mut best = 0;
        for (i, r) in self.regions.iter().enumerate() {
            if d2(&r.center) < d2(&self.regions[best].center) {
                best = i;
            }
        }
        best
    }

    pub fn elevation_at(&self, xy: [f64; 2]) -> f64 {
        self.config.elevation_amplitude * self.elevation.value(xy)
    }

    /// Noise-free signature at a foothold, row-major `160 × 6`.
    pub fn signature(&self, xy: [f64; 2]) -> Vec<f64> {
        let region = &self.regions[self.region_of(xy)];
        let sig = &self.config.signature;
        let mut out = vec![0.0; WINDOW_LEN * CHANNELS];
        for (c, comps) in region.components.iter().enumerate() {
            for (j, comp) in comps.iter().enumerate() {
                let gain = 1.0 + sig.modulation_scale * self.modulation[c * sig.components + j].value(xy);
                let a = comp.amplitude * gain;
                for t in 0..WINDOW_LEN {
                    let tf = t as f64;
                    out[t * CHANNELS + c] += a
                        * (-tf / comp.decay).exp()
                        * (TAU * comp.frequency * tf / WINDOW_LEN as f64 + comp.phase).sin();
                }
            }
        }
        out
    }

    /// Signature plus white noise.
    pub fn sample_signal(&self, xy: [f64; 2], rng: &mut ChaCha8Rng) -> HapticSignal {
        let sig = &self.config.signature;
        let mut data = self.signature(xy);
        if sig.noise_fraction > 0.0 {
            let nf = Normal::new(0.0, sig.noise_fraction * sig.force_scale).expect("finite");
            let nt = Normal::new(0.0, sig.noise_fraction * sig.torque_scale).expect("finite");
            for (i, v) in data.iter_mut().enumerate() {
                *v += if i % CHANNELS < 3 {
                    nf.sample(rng)
                } else {
                    nt.sample(rng)
                };
            }
        }
        HapticSignal::new(data).expect("signature has window shape")
    }
}

pub fn save_world(world: &World, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(world).expect("world serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_world(path: impl AsRef<Path>) -> Result<World> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Odometry error model. Translation drift is a bias along one random
/// horizontal world direction per trial, proportional to the distance
/// walked; z and yaw drift likewise accumulate with distance and turning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdometryNoiseConfig {
    /// Meters of horizontal drift per meter walked.
    pub drift_per_m: f64,
    /// Meters of vertical drift per meter walked.
    pub z_drift_per_m: f64,
    /// Radians of heading drift per radian turned.
    pub yaw_drift_per_rad: f64,
    /// Per-step white noise on each translation axis, meters.
    pub step_noise_t: f64,
    /// Per-step white noise on heading, radians.
    pub step_noise_yaw: f64,
}

impl Default for OdometryNoiseConfig {
    fn default() -> Self {
        Self {
            drift_per_m: 0.02,
            z_drift_per_m: 0.01,
            yaw_drift_per_rad: 0.02,
            step_noise_t: 0.002,
            step_noise_yaw: 0.002,
        }
    }
}

impl OdometryNoiseConfig {
    pub fn none() -> Self {
        Self {
            drift_per_m: 0.0,
            z_drift_per_m: 0.0,
            yaw_drift_per_rad: 0.0,
            step_noise_t: 0.0,
            step_noise_yaw: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = [
            self.drift_per_m,
            self.z_drift_per_m,
            self.yaw_drift_per_rad,
            self.step_noise_t,
            self.step_noise_yaw,
        ];
        if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidConfig("odometry noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Back-and-forth coverage along the long axis with lines `spacing` apart,
/// kept `margin` from the arena border.
pub fn lawnmower_route(config: &WorldConfig, spacing: f64, margin: f64) -> Vec<[f64; 2]> {
    let mut route = Vec::new();
    let mut x = margin;
    let mut up = true;
    while x <= config.width - margin + 1e-9 {
        let (a, b) = if up {
            (margin, config.height - margin)
        } else {
            (config.height - margin, margin)
        };
        route.push([x, a]);
        route.push([x, b]);
        x += spacing;
        up = !up;
    }
    route
}

/// Uniformly random waypoints at least `margin` inside the arena.
pub fn random_route(config: &WorldConfig, n_waypoints: usize, margin: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    (0..n_waypoints)
        .map(|_| {
            [
                rng.random_range(margin..config.width - margin),
                rng.random_range(margin..config.height - margin),
            ]
        })
        .collect()
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// Body poses every `step` meters along the route polyline, heading along
/// the current segment. At corners the body first turns on the spot in
/// increments of at most `max_turn`.
fn sample_route(route: &[[f64; 2]], step: f64, max_turn: f64) -> Vec<(Vector2<f64>, f64)> {
    let mut out: Vec<(Vector2<f64>, f64)> = Vec::new();
    let mut carry = 0.0;
    for w in route.windows(2) {
        let a = Vector2::new(w[0][0], w[0][1]);
        let b = Vector2::new(w[1][0], w[1][1]);
        let len = (b - a).norm();
        if len == 0.0 {
            continue;
        }
        let dir = (b - a) / len;
        let yaw = dir.y.atan2(dir.x);
        if let Some(&(_, prev)) = out.last() {
            let turn = wrap_angle(yaw - prev);
            let n = (turn.abs() / max_turn).ceil() as usize;
            for i in 1..n {
                out.push((a, wrap_angle(prev + turn * i as f64 / n as f64)));
            }
        }
        let mut s = carry;
        while s < len {
            out.push((a + dir * s, yaw));
            s += step;
        }
        carry = s - len;
    }
    if let (Some(last), Some(&(_, yaw))) = (route.last(), out.last()) {
        if carry > 0.5 * step {
            out.push((Vector2::new(last[0], last[1]), yaw));
        }
    }
    out
}

/// Crawl-gait footfall order: front-left, hind-right, front-right, hind-left.
const FOOT_ORDER: [u8; 4] = [0, 3, 1, 2];

/// Walks a route in `world`, emitting one step event per touchdown.
pub fn simulate_trial(
    world: &World,
    route: &[[f64; 2]],
    odom: &OdometryNoiseConfig,
    seed_value: u64,
    trial_id: &str,
) -> Result<Trial> {
    odom.validate()?;
    let cfg = &world.config;
    for (index, p) in route.iter().enumerate() {
        let inside = (0.0..=cfg.width).contains(&p[0]) && (0.0..=cfg.height).contains(&p[1]);
        if !inside {
            return Err(Error::RouteOutsideArena {
                index,
                x: p[0],
                y: p[1],
            });
        }
    }
    if route.len() < 2 {
        return Err(Error::InvalidConfig("route needs at least two waypoints".into()));
    }
    let body = sample_route(route, cfg.step_length, cfg.max_turn_per_step);
    if body.len() < 2 {
        return Err(Error::InvalidConfig("route is shorter than one step".into()));
    }

    let mut foot_rng = seed::rng(seed_value, "synth.feet");
    let mut signal_rng = seed::rng(seed_value, "synth.signal");
    let mut odom_rng = seed::rng(seed_value, "synth.odom");
    let jitter = Normal::new(0.0, cfg.foot_jitter.max(0.0)).expect("finite");
    let drift_dir = odom_rng.random_range(0.0..TAU);
    let drift_u = Vector3::new(drift_dir.cos(), drift_dir.sin(), 0.0);
    let z_sign = if odom_rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let yaw_sign = if odom_rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let white = |rng: &mut ChaCha8Rng, s: f64| {
        if s > 0.0 {
            Normal::new(0.0, s).expect("finite").sample(rng)
        } else {
            0.0
        }
    };

    let mut events = Vec::with_capacity(body.len());
    let mut prev_truth: Option<Pose> = None;
    let mut odom_pose = Pose::identity();
    for (k, (xy, yaw)) in body.iter().enumerate() {
        let z = cfg.body_height + world.elevation_at([xy.x, xy.y]);
        let truth = Pose::from_translation_yaw(Vector3::new(xy.x, xy.y, z), *yaw);

        let foot_id = FOOT_ORDER[k % 4];
        let fwd = if foot_id < 2 {
            cfg.foot_forward
        } else {
            -cfg.foot_forward
        };
        let lat = if foot_id % 2 == 0 {
            cfg.foot_lateral
        } else {
            -cfg.foot_lateral
        };
        let (s, c) = yaw.sin_cos();
        let mut fx = xy.x + c * fwd - s * lat;
        let mut fy = xy.y + s * fwd + c * lat;
        if cfg.foot_jitter > 0.0 {
            fx += jitter.sample(&mut foot_rng);
            fy += jitter.sample(&mut foot_rng);
        }
        let foothold = Vector3::new(fx, fy, world.elevation_at([fx, fy]));
        let foothold_base = truth.inverse().transform_point(&foothold);
        let signal = world.sample_signal([fx, fy], &mut signal_rng);

        odom_pose = match prev_truth {
            None => truth,
            Some(prev) => {
                let inc = prev.between(&truth);
                let dist = inc.translation.norm();
                let dyaw = inc.yaw().abs();
                let noisy_t = inc.translation
                    + Vector3::new(
                        white(&mut odom_rng, odom.step_noise_t),
                        white(&mut odom_rng, odom.step_noise_t),
                        white(&mut odom_rng, odom.step_noise_t),
                    );
                let dpsi = yaw_sign * odom.yaw_drift_per_rad * dyaw + white(&mut odom_rng, odom.step_noise_yaw);
                let noisy = Pose::new(
                    noisy_t,
                    inc.rotation * nalgebra::UnitQuaternion::from_euler_angles(0.0, 0.0, dpsi),
                );
                let bias =
                    drift_u * (odom.drift_per_m * dist) + Vector3::new(0.0, 0.0, z_sign * odom.z_drift_per_m * dist);
                Pose::from_translation(bias).compose(&odom_pose.compose(&noisy))
            }
        };
        prev_truth = Some(truth);

        events.push(StepEvent {
            step_id: k as u64,
            timestamp: k as f64 * cfg.step_period,
            foot_id,
            signal,
            foothold_base,
            odom_pose,
            truth_pose: Some(truth),
            foothold_world_truth: Some(foothold),
        });
    }
    let mut metadata = std::collections::BTreeMap::new();
    metadata.insert("generator".into(), "synth".into());
    metadata.insert("world_seed".into(), cfg.seed.to_string());
    metadata.insert("trial_seed".into(), seed_value.to_string());
    let trial = Trial {
        trial_id: trial_id.to_string(),
        events,
        metadata,
    };
    trial.validate()?;
    Ok(trial)
}
