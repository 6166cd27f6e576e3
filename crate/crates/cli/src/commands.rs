//! Pipeline stages behind the subcommands. Each reads and writes files so
//! the stages can be run one at a time.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::Rng;
use serde::Serialize;

use haptic_core::eval::{ape, ApeSummary};
use haptic_core::map::{build_map, load_map, save_map, SparseHapticMap};
use haptic_core::mcl::run_localization;
use haptic_core::net::{load_params, save_params, NetConfig, NetworkParams};
use haptic_core::seed;
use haptic_core::signal_io::{read_trial, write_trial, Trial};
use haptic_core::synth::{generate_world, lawnmower_route, random_route, save_world, simulate_trial};
use haptic_core::train::{fit, write_loss_log, EpochLog, FitResult};
use haptic_core::trajectory::{odometry_log, read_log, write_log, TrajectoryLog};

use crate::config::{RunConfig, Variant, MIN_BENCH_SAMPLES};

pub const WORLD_FILE: &str = "world.json";
pub const MAPPING_TRIAL_ID: &str = "mapping";

pub fn trial_file(trial_id: &str) -> String {
    format!("{trial_id}.trial.jsonl")
}

pub fn localization_trial_id(k: usize) -> String {
    format!("loc_{k}")
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub seed: u64,
    pub world: PathBuf,
    pub mapping_trial: PathBuf,
    pub localization_trials: Vec<PathBuf>,
    pub steps: Vec<(String, usize)>,
}

/// Generates a world, one lawnmower mapping walk and `gen.trials`
/// random-waypoint localization walks into `out`.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let world = generate_world(&cfg.world_config())?;
    let world_path = out.join(WORLD_FILE);
    save_world(&world, &world_path)?;

    let mut steps = Vec::new();
    let mut write = |trial: &Trial| -> Result<PathBuf> {
        let path = out.join(trial_file(&trial.trial_id));
        write_trial(trial, &path)?;
        steps.push((trial.trial_id.clone(), trial.events.len()));
        Ok(path)
    };

    let route = lawnmower_route(&world.config, cfg.gen.map_spacing, cfg.gen.route_margin);
    let mapping = simulate_trial(
        &world,
        &route,
        &cfg.odom,
        seed::derive(cfg.seed, "trial.mapping"),
        MAPPING_TRIAL_ID,
    )?;
    let mapping_path = write(&mapping)?;

    let mut localization = Vec::new();
    for k in 1..=cfg.gen.trials {
        let id = localization_trial_id(k);
        let mut rng = seed::rng(cfg.seed, &format!("route.{id}"));
        let route = random_route(&world.config, cfg.gen.route_waypoints, cfg.gen.route_margin, &mut rng);
        let trial = simulate_trial(
            &world,
            &route,
            &cfg.odom,
            seed::derive(cfg.seed, &format!("trial.{id}")),
            &id,
        )?;
        localization.push(write(&trial)?);
    }
    Ok(Manifest {
        seed: cfg.seed,
        world: world_path,
        mapping_trial: mapping_path,
        localization_trials: localization,
        steps,
    })
}

/// Loss log path written next to a parameter file.
pub fn loss_log_path(params_path: &Path) -> PathBuf {
    params_path.with_extension("loss.csv")
}

pub fn read_trials(paths: &[PathBuf]) -> Result<Vec<Trial>> {
    paths
        .iter()
        .map(|p| read_trial(p).with_context(|| format!("reading trial {}", p.display())))
        .collect()
}

pub fn train(cfg: &RunConfig, net: &NetConfig, trials: &[Trial], progress: impl FnMut(&EpochLog)) -> Result<FitResult> {
    Ok(fit(trials, net, &cfg.train_config(), progress)?)
}

/// Trains on every step of `data` and writes the parameters to `out` and the
/// per-epoch loss to [`loss_log_path`].
pub fn cmd_train(cfg: &RunConfig, data: &[PathBuf], out: &Path, progress: impl FnMut(&EpochLog)) -> Result<FitResult> {
    cfg.validate()?;
    if data.is_empty() {
        bail!("no training trials given");
    }
    let trials = read_trials(data)?;
    let result = train(cfg, &cfg.net_config(), &trials, progress)?;
    save_params(&result.params, out)?;
    write_loss_log(&result.log, loss_log_path(out))?;
    Ok(result)
}

pub fn cmd_map(trial: &Path, params: &Path, out: &Path) -> Result<SparseHapticMap> {
    let trial = read_trial(trial)?;
    let params = load_params(params)?;
    let map = build_map(&trial, &params)?;
    save_map(&map, out)?;
    Ok(map)
}

pub fn localize(
    cfg: &RunConfig,
    trial: &Trial,
    map: &SparseHapticMap,
    params: &NetworkParams,
    variant: Variant,
) -> Result<TrajectoryLog> {
    Ok(run_localization(
        trial,
        map,
        params,
        &cfg.mcl_config(),
        &cfg.measurement_for(variant),
    )?)
}

pub fn cmd_localize(
    cfg: &RunConfig,
    trial: &Path,
    map: &Path,
    params: &Path,
    variant: Variant,
    out: &Path,
) -> Result<TrajectoryLog> {
    cfg.validate()?;
    let trial = read_trial(trial)?;
    let map = load_map(map)?;
    let params = load_params(params)?;
    let log = localize(cfg, &trial, &map, &params, variant)?;
    write_log(&log, out)?;
    Ok(log)
}

/// Dead-reckoning log of a trial, for comparison with filter output.
pub fn cmd_odometry(trial: &Path, out: &Path) -> Result<TrajectoryLog> {
    let log = odometry_log(&read_trial(trial)?);
    write_log(&log, out)?;
    Ok(log)
}

/// Trial id used in a summary when none is given: the log's file name up to
/// the first dot.
pub fn trial_id_from_path(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.split('.').next().unwrap_or_default().to_string()
}

/// Evaluates a trajectory log; returns the summary and its JSON text.
pub fn cmd_eval(log: &Path, trial_id: Option<&str>, out: Option<&Path>) -> Result<(ApeSummary, String)> {
    let id = trial_id.map(str::to_string).unwrap_or_else(|| trial_id_from_path(log));
    let summary = ape(&read_log(log)?)?;
    let json = summary.to_json(&id);
    if let Some(out) = out {
        fs::write(out, format!("{json}\n")).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok((summary, json))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub embed_dim: usize,
    pub trial_id: String,
    pub t2d_mean: f64,
}

/// Mapping and localization trials of a `gen` output directory.
pub fn gen_trials(dir: &Path) -> Result<(Trial, Vec<Trial>)> {
    let mapping = read_trial(dir.join(trial_file(MAPPING_TRIAL_ID)))?;
    let mut paths = Vec::new();
    for k in 1.. {
        let p = dir.join(trial_file(&localization_trial_id(k)));
        if !p.exists() {
            break;
        }
        paths.push(p);
    }
    if paths.is_empty() {
        bail!("{} holds no localization trials", dir.display());
    }
    Ok((mapping, read_trials(&paths)?))
}

/// For each embedding size: trains on the mapping walk with `sweep.epochs`
/// and the shared seed, builds the map, localizes every trial with
/// `sweep.variant` and records its mean `t_2D`.
pub fn sweep(
    cfg: &RunConfig,
    mapping: &Trial,
    trials: &[Trial],
    mut progress: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &embed_dim in &cfg.sweep.sizes {
        let net = NetConfig {
            embed_dim,
            ..cfg.net_config()
        };
        let mut sized = cfg.clone();
        sized.train.epochs = cfg.sweep.epochs;
        let params = train(&sized, &net, std::slice::from_ref(mapping), |_| {})?.params;
        let map = build_map(mapping, &params)?;
        for trial in trials {
            let summary = ape(&localize(cfg, trial, &map, &params, cfg.sweep.variant)?)?;
            let row = SweepRow {
                embed_dim,
                trial_id: trial.trial_id.clone(),
                t2d_mean: summary.t2d_stats.mean,
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut text = String::from("embed_dim,trial_id,t2d_mean\n");
    for r in rows {
        text.push_str(&format!("{},{},{}\n", r.embed_dim, r.trial_id, r.t2d_mean));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_sweep(cfg: &RunConfig, data: &Path, out: &Path, progress: impl FnMut(&SweepRow)) -> Result<Vec<SweepRow>> {
    let (mapping, trials) = gen_trials(data)?;
    let rows = sweep(cfg, &mapping, &trials, progress)?;
    write_sweep_csv(&rows, out)?;
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub count: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub embed_dim: usize,
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "single-sample inference: {:.3} ± {:.3} ms over {} samples ({} warm-up excluded, embed_dim {})",
            self.mean_ms, self.std_ms, self.count, self.warmup, self.embed_dim
        )
    }
}

/// Times single-sample inference on signals drawn from the synthetic world
/// at random footholds. Sample content depends only on the seed.
pub fn bench(cfg: &RunConfig, params: &NetworkParams) -> Result<BenchReport> {
    cfg.validate()?;
    if params.config.seq_len != haptic_core::signal_io::WINDOW_LEN
        || params.config.in_dim != haptic_core::signal_io::CHANNELS
    {
        bail!(
            "bench needs a network taking {}×{} windows",
            haptic_core::signal_io::WINDOW_LEN,
            haptic_core::signal_io::CHANNELS
        );
    }
    let world = generate_world(&cfg.world_config())?;
    let mut rng = seed::rng(cfg.seed, "bench");
    let (w, h) = (world.config.width, world.config.height);
    let mut times = Vec::with_capacity(cfg.bench.samples);
    let mut sink = 0.0;
    for i in 0..cfg.bench.warmup + cfg.bench.samples {
        let xy = [rng.random_range(0.0..w), rng.random_range(0.0..h)];
        let signal = world.sample_signal(xy, &mut rng);
        let start = Instant::now();
        let v = params.embed_one(&signal)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        sink += v[0];
        if i >= cfg.bench.warmup {
            times.push(elapsed);
        }
    }
    std::hint::black_box(sink);
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    debug_assert!(times.len() >= MIN_BENCH_SAMPLES);
    Ok(BenchReport {
        count: times.len(),
        warmup: cfg.bench.warmup,
        mean_ms: mean,
        std_ms: var.sqrt(),
        embed_dim: params.config.embed_dim,
    })
}

pub fn cmd_bench(cfg: &RunConfig, params: &Path, out: Option<&Path>) -> Result<BenchReport> {
    let report = bench(cfg, &load_params(params)?)?;
    if let Some(out) = out {
        let json = serde_json::to_string_pretty(&report)?;
        fs::write(out, format!("{json}\n")).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(report)
}
