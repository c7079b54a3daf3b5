use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plumeshine::config::PipelineConfig;
use plumeshine::error::CliError;
use plumeshine::pipeline::{self, Resolution};
use plumeshine::service;
use plumeshine_core::tree_models::Family;

#[derive(Parser)]
#[command(name = "plumeshine", version, about = "Plume-shine dose tables, tree-ensemble surrogates and a reference service")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// `key: value` config file; missing keys take full-scale defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding every table, model and report.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Worker threads for data generation and training (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Low-resolution table from the point-kernel quadrature.
    Generate,
    /// Seeded train/test split of the low- or high-resolution table.
    Split {
        #[arg(value_parser = parse_resolution)]
        table: Resolution,
    },
    /// PCHIP densification of the low-resolution training rows.
    Densify,
    /// Fit forest and/or boosted models on the chosen training sets.
    Train {
        #[arg(long, value_parser = parse_family)]
        family: Option<Family>,
        #[arg(long, value_parser = parse_resolution)]
        on: Option<Resolution>,
    },
    /// Metrics, whisker statistics and error samples.
    Evaluate,
    /// Radionuclide-conditional permutation importance.
    Importance,
    /// Exhaustive feature-subset ablation.
    Ablate {
        #[arg(long, value_parser = parse_family)]
        family: Option<Family>,
    },
    /// Dose-versus-distance tables with PCHIP checks.
    Profile,
    /// Every stage from generation to ablation.
    Pipeline,
    /// HTTP service.
    Serve,
}

fn parse_resolution(s: &str) -> Result<Resolution, String> {
    s.parse().map_err(|e: CliError| e.to_string())
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: plumeshine_core::tree_models::ModelError| e.to_string())
}

fn families(f: Option<Family>) -> Vec<Family> {
    f.map_or(Family::ALL.to_vec(), |f| vec![f])
}

fn run(cli: Cli) -> Result<(), CliError> {
    let c = &cli.common;
    if let Some(n) = c.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    let cfg = PipelineConfig::load(c.config.as_deref(), c.seed)?;
    let out = &c.out;
    match cli.cmd {
        Cmd::Generate => pipeline::generate(&cfg, out).map(drop),
        Cmd::Split { table } => pipeline::split(&cfg, table, out),
        Cmd::Densify => pipeline::densify(&cfg, out).map(drop),
        Cmd::Train { family, on } => {
            let res = on.map_or(Resolution::ALL.to_vec(), |r| vec![r]);
            pipeline::train(&cfg, &families(family), &res, out)
        }
        Cmd::Evaluate => {
            let entries = pipeline::evaluate(&cfg, &Family::ALL, out)?;
            print!("{}", plumeshine_core::evaluation::metrics_csv(&entries));
            Ok(())
        }
        Cmd::Importance => pipeline::importance(&cfg, &Family::ALL, out),
        Cmd::Ablate { family } => pipeline::ablate(&cfg, &families(family), out),
        Cmd::Profile => pipeline::profile(&cfg, out).map(drop),
        Cmd::Pipeline => pipeline::run_all(&cfg, out),
        Cmd::Serve => {
            let state = service::load_state(&cfg, out)?;
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| CliError::Service(e.to_string()))?;
            rt.block_on(service::serve(state, cfg.service.addr))
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_env_filter(
        tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
    ).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::FAILURE
        }
    }
}
