//! Experiment driver for the quantum convolution library. Every command
//! reads one [`config::RunConfig`], applies flag overrides and writes its
//! reports under the output directory.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, OUTPUT_DIR_ENV};

#[derive(Debug, Parser)]
#[command(name = "fqc", version, about = "Channel-uploading quantum convolution experiments")]
pub struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Where reports go; beats the config file.
    #[arg(long, global = true, env = OUTPUT_DIR_ENV)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check shift-rule gradients against finite differences.
    GradCheck(GradCheckArgs),
    /// Time fast against per-channel convolution and train a small classifier.
    BenchConv(BenchConvArgs),
    /// Train the quantum proposal head for each distillation weight.
    TrainQrpn(TrainQrpnArgs),
    /// Tabulate the analytic runtime model.
    CostModel(CostModelArgs),
    /// Write the synthetic rectangle dataset as tensor files.
    SynthData(SynthDataArgs),
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub instances: Option<usize>,
    /// Replace the pi/2 shift, e.g. `pi/3`. For negative controls only.
    #[arg(long, value_parser = parse_angle)]
    pub debug_shift: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchConvArgs {
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// CIFAR-10 binary batch for the training run.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub skip_train: bool,
}

#[derive(Debug, Args)]
pub struct TrainQrpnArgs {
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train the classical teacher instead of loading it.
    #[arg(long)]
    pub train_teacher: bool,
    /// Teacher checkpoint; defaults to `teacher.json` in the output directory.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CostModelArgs {
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub qubits: Option<Vec<usize>>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthDataArgs {
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub max_boxes: Option<usize>,
}

/// Bad flags or configuration: nothing was computed. Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else {
        EXIT_FAILURE
    }
}

/// Accepts plain radians or `pi`, `pi/N`, `K*pi/N`.
pub fn parse_angle(s: &str) -> Result<f64, String> {
    let t = s.trim().to_ascii_lowercase();
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    let (num, den) = match t.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim().parse::<f64>().map_err(|e| format!("{s}: {e}"))?),
        None => (t.as_str(), 1.0),
    };
    let k = match num.strip_suffix("pi") {
        Some("") => 1.0,
        Some(k) => k.trim_end_matches('*').parse::<f64>().map_err(|e| format!("{s}: {e}"))?,
        None => return Err(format!("cannot read `{s}` as an angle")),
    };
    Ok(k * std::f64::consts::PI / den)
}

/// Config file (or defaults), then flags. Validation happens here so that
/// an invalid run never starts.
pub fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| UsageError(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::GradCheck(a) => {
            set(&mut cfg.grad_check.instances, a.instances);
            set(&mut cfg.grad_check.shift, a.debug_shift);
        }
        Command::BenchConv(a) => {
            set(&mut cfg.bench.channels, a.channels.clone());
            set(&mut cfg.bench.reps, a.reps);
            set(&mut cfg.bench.train.samples, a.samples);
            set(&mut cfg.bench.train.epochs, a.epochs);
            if a.dataset.is_some() {
                cfg.bench.train.dataset = a.dataset.clone();
            }
            cfg.bench.skip_train |= a.skip_train;
        }
        Command::TrainQrpn(a) => {
            set(&mut cfg.qrpn.gammas, a.gammas.clone());
            set(&mut cfg.qrpn.epochs, a.epochs);
            cfg.qrpn.train_teacher |= a.train_teacher;
            if a.teacher.is_some() {
                cfg.qrpn.teacher = a.teacher.clone();
            }
        }
        Command::CostModel(a) => {
            set(&mut cfg.cost.channels, a.channels.clone());
            set(&mut cfg.cost.qubits, a.qubits.clone());
            set(&mut cfg.cost.delta, a.delta);
            set(&mut cfg.cost.rho, a.rho);
        }
        Command::SynthData(a) => {
            set(&mut cfg.synth.samples, a.samples);
            set(&mut cfg.synth.image_size, a.image_size);
            set(&mut cfg.synth.max_boxes, a.max_boxes);
        }
    }
    cfg.validate().map_err(|e| UsageError(format!("{e:#}")))?;
    Ok(cfg)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::GradCheck(_) => commands::grad_check::run(&cfg).map(|_| ()),
        Command::BenchConv(_) => commands::bench_conv::run(&cfg).map(|_| ()),
        Command::TrainQrpn(_) => commands::train_qrpn::run(&cfg).map(|_| ()),
        Command::CostModel(_) => commands::cost_model::run(&cfg).map(|_| ()),
        Command::SynthData(_) => commands::synth_data::run(&cfg).map(|_| ()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn angles_parse() {
        assert_eq!(parse_angle("0.5").unwrap(), 0.5);
        assert_eq!(parse_angle("pi").unwrap(), PI);
        assert_eq!(parse_angle("pi/3").unwrap(), PI / 3.0);
        assert_eq!(parse_angle("2*pi/3").unwrap(), 2.0 * PI / 3.0);
        assert!(parse_angle("tau").is_err());
    }

    #[test]
    fn flags_beat_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 4\noutput_dir = \"a\"\n[qrpn]\nepochs = 3\n").unwrap();
        let cli = Cli::try_parse_from([
            "fqc",
            "--config",
            p.to_str().unwrap(),
            "--output-dir",
            "b",
            "train-qrpn",
            "--epochs",
            "5",
            "--gammas",
            "0,0.3",
        ])
        .unwrap();
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.output_dir, PathBuf::from("b"));
        assert_eq!(cfg.qrpn.epochs, 5);
        assert_eq!(cfg.qrpn.gammas, vec![0.0, 0.3]);
    }

    #[test]
    fn bad_config_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        let cli = Cli::try_parse_from(["fqc", "--config", p.to_str().unwrap(), "cost-model"]).unwrap();
        for text in ["[cost]\ndelta = 1.5\n", "[cost]\ndelt = 0.1\n"] {
            std::fs::write(&p, text).unwrap();
            let err = resolve_config(&cli).unwrap_err();
            assert_eq!(exit_code(&err), EXIT_USAGE);
        }
    }
}
