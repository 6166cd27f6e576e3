//! Run configuration: every tunable of the pipeline in one flat table.
//!
//! Files hold one `key = value` pair per line; `#` starts a comment. Keys are
//! dotted (`train.epochs`, `mcl.n_particles`). Values are applied on top of
//! the defaults, and command-line overrides on top of the file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use haptic_core::mcl::{MclConfig, MeasurementModelConfig};
use haptic_core::net::NetConfig;
use haptic_core::seed;
use haptic_core::synth::{OdometryNoiseConfig, WorldConfig};
use haptic_core::train::TrainConfig;

/// Measurement-model variant: embeddings only, or embeddings plus the
/// elevation stored with each map entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    HlT,
    HlSt,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::HlT => "hl-t",
            Variant::HlSt => "hl-st",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hl-t" => Ok(Variant::HlT),
            "hl-st" => Ok(Variant::HlSt),
            _ => Err(format!("unknown variant {s:?} (expected hl-t or hl-st)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    /// Localization trials generated next to the mapping trial.
    pub trials: usize,
    /// Lane spacing of the lawnmower mapping route, meters.
    pub map_spacing: f64,
    /// Distance kept from the arena border by every route.
    pub route_margin: f64,
    /// Waypoints per random localization route.
    pub route_waypoints: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            trials: 3,
            map_spacing: 0.3,
            route_margin: 0.35,
            route_waypoints: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    /// Training epochs per size; lower than a full run to keep the sweep
    /// affordable.
    pub epochs: usize,
    pub variant: Variant,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sizes: vec![2, 16, 256],
            epochs: 50,
            variant: Variant::HlT,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub samples: usize,
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            warmup: 200,
        }
    }
}

/// Smallest sample count a bench report may use.
pub const MIN_BENCH_SAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Top-level seed; every stage derives its own stream from it.
    pub seed: u64,
    pub world: WorldConfig,
    pub odom: OdometryNoiseConfig,
    pub gen: GenConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub mcl: MclConfig,
    /// Measurement constants; `use_elevation` is set by the variant.
    pub measurement: MeasurementModelConfig,
    pub variant: Variant,
    pub sweep: SweepConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldConfig::default(),
            odom: OdometryNoiseConfig::default(),
            gen: GenConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            mcl: MclConfig::default(),
            measurement: MeasurementModelConfig::hl_st(),
            variant: Variant::HlSt,
            sweep: SweepConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| anyhow::anyhow!("invalid value {value:?} for {key}: {e}"))
}

pub fn parse_sizes(value: &str) -> Result<Vec<usize>> {
    let sizes = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse::<usize>("sweep.sizes", s))
        .collect::<Result<Vec<_>>>()?;
    if sizes.is_empty() {
        bail!("sweep.sizes must list at least one embedding size");
    }
    Ok(sizes)
}

impl RunConfig {
    /// Sets one dotted key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let w = &mut self.world;
        let s = &mut w.signature;
        match key {
            "seed" => self.seed = parse(key, v)?,

            "world.width" => w.width = parse(key, v)?,
            "world.height" => w.height = parse(key, v)?,
            "world.n_regions" => w.n_regions = parse(key, v)?,
            "world.elevation_amplitude" => w.elevation_amplitude = parse(key, v)?,
            "world.elevation_min_wavelength" => w.elevation_min_wavelength = parse(key, v)?,
            "world.elevation_max_wavelength" => w.elevation_max_wavelength = parse(key, v)?,
            "world.step_length" => w.step_length = parse(key, v)?,
            "world.step_period" => w.step_period = parse(key, v)?,
            "world.max_turn_per_step" => w.max_turn_per_step = parse(key, v)?,
            "world.body_height" => w.body_height = parse(key, v)?,
            "world.foot_forward" => w.foot_forward = parse(key, v)?,
            "world.foot_lateral" => w.foot_lateral = parse(key, v)?,
            "world.foot_jitter" => w.foot_jitter = parse(key, v)?,
            "signature.components" => s.components = parse(key, v)?,
            "signature.modulation_scale" => s.modulation_scale = parse(key, v)?,
            "signature.modulation_min_wavelength" => s.modulation_min_wavelength = parse(key, v)?,
            "signature.modulation_max_wavelength" => s.modulation_max_wavelength = parse(key, v)?,
            "signature.modulation_waves" => s.modulation_waves = parse(key, v)?,
            "signature.force_scale" => s.force_scale = parse(key, v)?,
            "signature.torque_scale" => s.torque_scale = parse(key, v)?,
            "signature.noise_fraction" => s.noise_fraction = parse(key, v)?,

            "odom.drift_per_m" => self.odom.drift_per_m = parse(key, v)?,
            "odom.z_drift_per_m" => self.odom.z_drift_per_m = parse(key, v)?,
            "odom.yaw_drift_per_rad" => self.odom.yaw_drift_per_rad = parse(key, v)?,
            "odom.step_noise_t" => self.odom.step_noise_t = parse(key, v)?,
            "odom.step_noise_yaw" => self.odom.step_noise_yaw = parse(key, v)?,

            "gen.trials" => self.gen.trials = parse(key, v)?,
            "gen.map_spacing" => self.gen.map_spacing = parse(key, v)?,
            "gen.route_margin" => self.gen.route_margin = parse(key, v)?,
            "gen.route_waypoints" => self.gen.route_waypoints = parse(key, v)?,

            "net.d_model" => self.net.d_model = parse(key, v)?,
            "net.n_heads" => self.net.n_heads = parse(key, v)?,
            "net.d_ff" => self.net.d_ff = parse(key, v)?,
            "net.n_encoder_layers" => self.net.n_encoder_layers = parse(key, v)?,
            "net.embed_dim" => self.net.embed_dim = parse(key, v)?,

            "train.d_thr" => self.train.d_thr = parse(key, v)?,
            "train.margin" => self.train.margin = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.lr0" => self.train.lr0 = parse(key, v)?,
            "train.weight_decay0" => self.train.weight_decay0 = parse(key, v)?,

            "mcl.n_particles" => self.mcl.n_particles = parse(key, v)?,
            "mcl.trans_noise_per_m" => self.mcl.trans_noise_per_m = parse(key, v)?,
            "mcl.yaw_noise_per_rad" => self.mcl.yaw_noise_per_rad = parse(key, v)?,
            "mcl.yaw_noise_per_m" => self.mcl.yaw_noise_per_m = parse(key, v)?,
            "mcl.vertical_noise_ratio" => self.mcl.vertical_noise_ratio = parse(key, v)?,
            "mcl.resample_threshold" => self.mcl.resample_threshold = parse(key, v)?,
            "mcl.init_sigma_xy" => self.mcl.init_sigma_xy = parse(key, v)?,
            "mcl.init_sigma_yaw" => self.mcl.init_sigma_yaw = parse(key, v)?,
            "mcl.variant" => self.variant = v.parse().map_err(anyhow::Error::msg)?,

            "measurement.sigma_l" => self.measurement.sigma_l = parse(key, v)?,
            "measurement.sigma_2d" => self.measurement.sigma_2d = parse(key, v)?,
            "measurement.sigma_e" => self.measurement.sigma_e = parse(key, v)?,
            "measurement.d_t" => self.measurement.d_t = parse(key, v)?,
            "measurement.p_min" => self.measurement.p_min = parse(key, v)?,

            "sweep.sizes" => self.sweep.sizes = parse_sizes(v)?,
            "sweep.epochs" => self.sweep.epochs = parse(key, v)?,
            "sweep.variant" => self.sweep.variant = v.parse().map_err(anyhow::Error::msg)?,

            "bench.samples" => self.bench.samples = parse(key, v)?,
            "bench.warmup" => self.bench.warmup = parse(key, v)?,

            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("config line {}: expected `key = value`", i + 1))?;
            self.set(key.trim(), value)
                .with_context(|| format!("config line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text)
            .with_context(|| format!("config {}", path.display()))
    }

    /// Checks every constituent configuration.
    pub fn validate(&self) -> Result<()> {
        self.world_config().validate()?;
        self.odom.validate()?;
        self.net_config().validate()?;
        self.train_config().validate()?;
        self.mcl_config().validate()?;
        self.measurement_config().validate()?;
        let g = &self.gen;
        if !(g.map_spacing > 0.0) || !(g.route_margin >= 0.0) {
            bail!("gen.map_spacing must be positive and gen.route_margin non-negative");
        }
        if 2.0 * g.route_margin >= self.world.width.min(self.world.height) {
            bail!("gen.route_margin leaves no room inside the arena");
        }
        if g.route_waypoints < 2 {
            bail!("gen.route_waypoints must be at least 2");
        }
        if self.sweep.sizes.is_empty() || self.sweep.sizes.contains(&0) {
            bail!("sweep.sizes must be a non-empty list of positive sizes");
        }
        if self.sweep.epochs == 0 {
            bail!("sweep.epochs must be positive");
        }
        if self.bench.samples < MIN_BENCH_SAMPLES {
            bail!("bench.samples must be at least {MIN_BENCH_SAMPLES}");
        }
        Ok(())
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            seed: seed::derive(self.seed, "world"),
            ..self.world.clone()
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            seed: seed::derive(self.seed, "net.init"),
            ..self.net
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: seed::derive(self.seed, "train"),
            ..self.train
        }
    }

    pub fn mcl_config(&self) -> MclConfig {
        MclConfig {
            seed: seed::derive(self.seed, "mcl"),
            ..self.mcl
        }
    }

    pub fn measurement_config(&self) -> MeasurementModelConfig {
        self.measurement_for(self.variant)
    }

    pub fn measurement_for(&self, variant: Variant) -> MeasurementModelConfig {
        MeasurementModelConfig {
            use_elevation: variant == Variant::HlSt,
            ..self.measurement
        }
    }
}
