//! Argument parsing and dispatch for the `hloc` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::{parse_sizes, RunConfig, Variant};

#[derive(Parser, Debug)]
#[command(name = "hloc", version, about = "Haptic localization pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Top-level seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Extra `key=value` override; may repeat. Applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic world, a mapping walk and localization walks.
    Gen {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Train the network on one or more trials.
    Train {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long, value_name = "PARAMS")]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        embed_dim: Option<usize>,
    },
    /// Build a sparse haptic map from a mapping trial.
    Map {
        #[arg(long)]
        trial: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, value_name = "HMAP")]
        out: PathBuf,
    },
    /// Replay a trial through the particle filter.
    Localize {
        #[arg(long)]
        trial: PathBuf,
        #[arg(long, required_unless_present = "odometry")]
        map: Option<PathBuf>,
        #[arg(long, required_unless_present = "odometry")]
        params: Option<PathBuf>,
        #[arg(long, value_parser = parse_variant, conflicts_with = "odometry")]
        variant: Option<Variant>,
        /// Write the raw odometry, anchored at the first true pose, instead
        /// of running the filter.
        #[arg(long)]
        odometry: bool,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
    /// Absolute pose error of a trajectory log.
    Eval {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        trial_id: Option<String>,
        /// Summary JSON path; printed to stdout when omitted.
        #[arg(long, value_name = "JSON")]
        out: Option<PathBuf>,
    },
    /// Localization error as a function of the embedding size.
    Sweep {
        /// Directory written by `gen`.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_parser = parse_size_list)]
        sizes: Option<SizeList>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
    /// Time single-sample inference.
    Bench {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_name = "JSON")]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Debug)]
pub struct SizeList(pub Vec<usize>);

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse()
}

fn parse_size_list(s: &str) -> std::result::Result<SizeList, String> {
    parse_sizes(s).map(SizeList).map_err(|e| e.to_string())
}

/// Defaults, then the config file, then command-line values.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::Gen { out, trials } => {
            if let Some(t) = trials {
                cfg.gen.trials = t;
            }
            let manifest = commands::cmd_gen(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&manifest)?);
        }
        Command::Train {
            data,
            out,
            epochs,
            embed_dim,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(d) = embed_dim {
                cfg.net.embed_dim = d;
            }
            let total = cfg.train.epochs;
            let result = commands::cmd_train(&cfg, &data, &out, |e| {
                if e.epoch % 10 == 0 || e.epoch + 1 == total {
                    eprintln!(
                        "epoch {:>4}  loss {:.5}  active {}",
                        e.epoch, e.mean_loss, e.active_triplets
                    );
                }
            })?;
            let last = result.log.last().map(|e| e.mean_loss).unwrap_or(f64::NAN);
            println!(
                "params {}  loss log {}  final loss {last}",
                out.display(),
                commands::loss_log_path(&out).display()
            );
        }
        Command::Map { trial, params, out } => {
            let map = commands::cmd_map(&trial, &params, &out)?;
            println!(
                "map {}  entries {}  embed_dim {}",
                out.display(),
                map.len(),
                map.embed_dim()
            );
        }
        Command::Localize {
            trial,
            map,
            params,
            variant,
            odometry,
            out,
        } => {
            if odometry {
                let log = commands::cmd_odometry(&trial, &out)?;
                println!("log {}  records {}  odometry", out.display(), log.len());
                return Ok(());
            }
            if let Some(v) = variant {
                cfg.variant = v;
            }
            let (map, params) = map.zip(params).expect("clap enforces --map and --params");
            let log = commands::cmd_localize(&cfg, &trial, &map, &params, cfg.variant, &out)?;
            println!(
                "log {}  records {}  variant {}",
                out.display(),
                log.len(),
                cfg.variant.name()
            );
        }
        Command::Eval { log, trial_id, out } => {
            let (_, json) = commands::cmd_eval(&log, trial_id.as_deref(), out.as_deref())?;
            if out.is_none() {
                println!("{json}");
            }
        }
        Command::Sweep {
            data,
            sizes,
            epochs,
            variant,
            out,
        } => {
            if let Some(SizeList(s)) = sizes {
                cfg.sweep.sizes = s;
            }
            if let Some(e) = epochs {
                cfg.sweep.epochs = e;
            }
            if let Some(v) = variant {
                cfg.sweep.variant = v;
            }
            commands::cmd_sweep(&cfg, &data, &out, |r| {
                println!(
                    "embed_dim {:>4}  {}  t2d_mean {:.4}",
                    r.embed_dim, r.trial_id, r.t2d_mean
                );
            })?;
        }
        Command::Bench { params, samples, out } => {
            if let Some(n) = samples {
                cfg.bench.samples = n;
            }
            let report = commands::cmd_bench(&cfg, &params, out.as_deref())?;
            println!("{report}");
        }
    }
    Ok(())
}

/// Exit status for usage errors; runtime failures exit with 1.
pub const USAGE_EXIT: i32 = 2;

/// Parses `args`, runs the command and returns the process exit code.
/// Failures are reported on stderr as a single `error: ...` line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return USAGE_EXIT;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            1
        }
    }
}
