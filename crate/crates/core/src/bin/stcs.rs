use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use stcs::harness::{cmd_bench, cmd_generate, cmd_run, cmd_se, cmd_sweep, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "stcs", version, about = "Structured turbo compressed sensing for massive MIMO-OFDM channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write one synthetic channel, its observations and the operator descriptor.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Write the little-endian binary format instead of text.
        #[arg(long)]
        binary: bool,
    },
    /// Run Monte-Carlo trials for every (algorithm, m, snr) cell.
    Run(Common),
    /// Mean NMSE over the snr x m grid.
    Sweep(Common),
    /// State evolution next to simulation.
    Se(Common),
    /// Per-iteration wall time as N grows.
    Bench(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set snr_db=10,30`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    snr_db: Option<String>,
    #[arg(long)]
    m: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Exit nonzero on failed trials or oscillating state evolution.
    #[arg(long)]
    strict: bool,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

impl Common {
    fn config(&self) -> stcs::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let flags = [
            ("algorithms", &self.algorithm),
            ("trials", &self.trials),
            ("base_seed", &self.seed),
            ("snr_db", &self.snr_db),
            ("m", &self.m),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| stcs::Error::InvalidParameter(format!("--set expects KEY=VALUE, got `{o}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(dir: &Path, name: &str, content: &str) -> stcs::Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, content)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn execute(command: &Command) -> stcs::Result<bool> {
    match command {
        Command::Generate { common, binary } => {
            let cfg = common.config()?;
            let out = cmd_generate(&cfg, &common.out, *binary)?;
            println!("wrote {}", out.channel_path.display());
            println!("wrote {}", out.observation_path.display());
            println!("wrote {}", out.operator_path.display());
            Ok(true)
        }
        Command::Run(common) => {
            let cfg = common.config()?;
            let report = cmd_run(&cfg)?;
            write(&common.out, "config.txt", &cfg.to_text())?;
            write(&common.out, "trials.csv", &report.trials_csv())?;
            write(&common.out, "summary.csv", &report.summary_csv())?;
            write(&common.out, "trials.jsonl", &report.trials_jsonl()?)?;
            print!("{}", report.summary_csv());
            Ok(!common.strict || report.failed() == 0)
        }
        Command::Sweep(common) => {
            let cfg = common.config()?;
            let report = cmd_sweep(&cfg)?;
            write(&common.out, "config.txt", &cfg.to_text())?;
            write(&common.out, "sweep.csv", &report.to_csv())?;
            print!("{}", report.to_csv());
            for v in &report.monotonicity_violations {
                println!("monotonicity: {v}");
            }
            Ok(!common.strict || report.failed == 0)
        }
        Command::Se(common) => {
            let cfg = common.config()?;
            let report = cmd_se(&cfg)?;
            write(&common.out, "config.txt", &cfg.to_text())?;
            write(&common.out, "se_trajectory.csv", &report.trajectory_csv())?;
            write(&common.out, "se_overlay.csv", &report.overlay_csv())?;
            write(&common.out, "se_summary.csv", &report.summary_csv())?;
            print!("{}", report.summary_csv());
            let bad = report
                .comparisons
                .iter()
                .any(|c| c.se.oscillation || c.sim.failed > 0);
            Ok(!common.strict || !bad)
        }
        Command::Bench(common) => {
            let cfg = common.config()?;
            let report = cmd_bench(&cfg)?;
            write(&common.out, "bench.csv", &report.to_csv())?;
            print!("{}", report.to_csv());
            Ok(true)
        }
    }
}

fn verbosity(command: &Command) -> u8 {
    match command {
        Command::Generate { common, .. } => common.verbose,
        Command::Run(c) | Command::Sweep(c) | Command::Se(c) | Command::Bench(c) => c.verbose,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match verbosity(&cli.command) {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            error!("strict mode: some trials failed or state evolution oscillated");
            ExitCode::from(2)
        }
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
