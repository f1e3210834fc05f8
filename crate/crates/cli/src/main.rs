use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use peakon_core::config::RunConfig;
use peakon_core::export;
use peakon_core::scenario::{
    blowup_scan, compare_oracle, export_checkpoints, lipschitz_experiment, reduction_check,
    run_scenario, RunStatus,
};

#[derive(Parser, Debug)]
#[command(
    name = "peakon",
    version,
    about = "Lagrangian solver for the two-component cubic peakon system"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; defaults apply to every missing field.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// `key.path=value`, applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for the parallel sections.
    #[arg(long, env = "PEAKON_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the configured scenario; exit 0 at the horizon, 2 on collapse.
    Run(Common),
    /// Sufficient-condition scan plus a run toward the predicted collapse.
    BlowupScan {
        #[command(flatten)]
        common: Common,
        /// Use the built-in collapse setup as the base configuration.
        #[arg(long)]
        preset: bool,
    },
    /// Data-to-solution distances for bumped initial data.
    Lipschitz(Common),
    /// Reduction identity for the forq / nonlocal-forq scenarios.
    ReduceCheck(Common),
    /// Agreement with the Eulerian spectral reference.
    CompareOracle(Common),
    /// Snapshots from a checkpoint file written by `run`.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Times to export (default: every checkpoint).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        times: Vec<f64>,
    },
}

fn load(common: &Common, base: RunConfig) -> Result<RunConfig> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => base.to_toml(),
    };
    let mut cfg = RunConfig::from_toml_str(&text, &common.overrides)?;
    if let Some(o) = &common.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn setup_workers(common: &Common) -> Result<()> {
    if let Some(n) = common.workers {
        anyhow::ensure!(n > 0, "--workers must be positive");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn prepare(common: &Common, base: RunConfig) -> Result<RunConfig> {
    setup_workers(common)?;
    let cfg = load(common, base)?;
    fs::create_dir_all(&cfg.output.dir)
        .with_context(|| format!("creating {}", cfg.output.dir.display()))?;
    fs::write(cfg.output.dir.join("config.resolved.toml"), cfg.to_toml())?;
    eprintln!("# resolved configuration\n{}", cfg.to_toml());
    Ok(cfg)
}

fn json_out<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    export::write_json(BufWriter::new(File::create(path)?), value)?;
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<RunStatus> {
    match cli.command {
        Command::Run(common) => {
            let cfg = prepare(&common, RunConfig::default())?;
            let out = run_scenario(&cfg, Some(&cfg.output.dir))?;
            println!("{}", serde_json::to_string_pretty(&out.summary)?);
            Ok(out.summary.status)
        }
        Command::BlowupScan { common, preset } => {
            let base = if preset {
                RunConfig::blowup_preset()
            } else {
                RunConfig::default()
            };
            let cfg = prepare(&common, base)?;
            let scan = blowup_scan(&cfg)?;
            let dir = &cfg.output.dir;
            let mut rows = vec![scan.chosen];
            rows.extend(scan.probes.iter().copied());
            export::write_conditions(
                BufWriter::new(File::create(dir.join("conditions.tsv"))?),
                &rows,
            )?;
            if let Some(r) = &scan.rate {
                export::write_rate_samples(
                    BufWriter::new(File::create(dir.join("rates.tsv"))?),
                    &r.samples,
                )?;
            }
            json_out(
                &dir.join("blowup_scan.json"),
                &serde_json::json!({
                    "chosen": scan.chosen,
                    "horizon": scan.horizon,
                    "termination": scan.termination,
                    "bound_respected": scan.bound_respected,
                    "worst_n_inv": scan.rate.as_ref().map(|r| r.worst_n_inv),
                    "worst_m": scan.rate.as_ref().map(|r| r.worst_m),
                    "worst_blupr": scan.rate.as_ref().and_then(|r| r.worst_blupr),
                    "worst_blupy": scan.rate.as_ref().and_then(|r| r.worst_blupy),
                }),
            )?;
            Ok(match scan.termination.bracket() {
                Some(_) => RunStatus::Collapse,
                None => RunStatus::Horizon,
            })
        }
        Command::Lipschitz(common) => {
            let cfg = prepare(&common, RunConfig::default())?;
            let report = lipschitz_experiment(&cfg)?;
            json_out(&cfg.output.dir.join("lipschitz.json"), &report)?;
            Ok(RunStatus::Horizon)
        }
        Command::ReduceCheck(common) => {
            let cfg = prepare(&common, RunConfig::default())?;
            let report = reduction_check(&cfg)?;
            json_out(&cfg.output.dir.join("reduction.json"), &report)?;
            Ok(RunStatus::Horizon)
        }
        Command::CompareOracle(common) => {
            let cfg = prepare(&common, RunConfig::default())?;
            let levels = compare_oracle(&cfg)?;
            json_out(&cfg.output.dir.join("oracle.json"), &levels)?;
            Ok(RunStatus::Horizon)
        }
        Command::Export {
            common,
            checkpoint,
            times,
        } => {
            let cfg = prepare(&common, RunConfig::default())?;
            let files = export_checkpoints(&cfg, &checkpoint, &times, &cfg.output.dir)?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(RunStatus::Horizon)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(status) => ExitCode::from(status.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
