//! `ionfocus`: run the single-ion source simulations from a TOML config and
//! write result bundles (resolved config, CSV tables, SVG plots, summary).

mod bundle;
mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ionfocus::config::RunConfig;

use bundle::Bundle;
use error::CliError;

#[derive(Parser)]
#[command(name = "ionfocus", version, about = "Deterministic single-ion source simulation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; omitted sections take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Calibration file written by `calibrate`, applied over the config.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Directory for the result bundle.
    #[arg(long, default_value = "ionfocus-out")]
    out_dir: PathBuf,
    /// Override a config value, e.g. --set beamline.lens_voltage_v=140.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved config and exit without running.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the einzel lens and tabulate its on-axis field.
    SolveLens(Common),
    /// Fit the axial and RF models and locate the lens; writes calibration.toml.
    Calibrate(Common),
    /// Extract ions through the beam line and record their arrival.
    Extract(Common),
    /// Knife-edge scan at the razor plane with an error-function fit.
    KnifeEdge(Common),
    /// Spot size against lens voltage.
    FocalScan(Common),
    /// Spot size against beam displacement in the lens.
    DisplacementScan(Common),
    /// Crystal reduction trials.
    Reduce(Common),
    /// Deflection-voltage scan of the hit rate through an aperture.
    Align(Common),
    /// Fit a knife-edge scan table from a CSV file.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Scan table CSV with columns position, shots, hits.
        #[arg(long)]
        input: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SolveLens(_) => "solve-lens",
            Command::Calibrate(_) => "calibrate",
            Command::Extract(_) => "extract",
            Command::KnifeEdge(_) => "knife-edge",
            Command::FocalScan(_) => "focal-scan",
            Command::DisplacementScan(_) => "displacement-scan",
            Command::Reduce(_) => "reduce",
            Command::Align(_) => "align",
            Command::Analyze { .. } => "analyze",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::SolveLens(c)
            | Command::Calibrate(c)
            | Command::Extract(c)
            | Command::KnifeEdge(c)
            | Command::FocalScan(c)
            | Command::DisplacementScan(c)
            | Command::Reduce(c)
            | Command::Align(c) => c,
            Command::Analyze { common, .. } => common,
        }
    }
}

fn read(path: &PathBuf, what: &str) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{what} {}: {e}", path.display())))
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut layers = Vec::new();
    if let Some(p) = &common.config {
        layers.push((p.display().to_string(), read(p, "config")?));
    }
    if let Some(p) = &common.calibration {
        layers.push((p.display().to_string(), read(p, "calibration")?));
    }
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let refs: Vec<(&str, &str)> = layers.iter().map(|(n, t)| (n.as_str(), t.as_str())).collect();
    Ok(RunConfig::resolve_layers(&refs, &overrides)?)
}

fn run(command: &Command) -> Result<(), CliError> {
    let common = command.common();
    let config = resolve(common)?;
    if common.print_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    if common.workers > 0 {
        // ignore the error if a pool already exists (only possible in tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(common.workers).build_global();
    }
    let mut out = Bundle::create(&common.out_dir, &config)?;
    let results = match command {
        Command::SolveLens(_) => commands::solve_lens_cmd(&config, &mut out)?,
        Command::Calibrate(_) => commands::calibrate_cmd(&config, &mut out)?,
        Command::Extract(_) => commands::extract_cmd(&config, &mut out)?,
        Command::KnifeEdge(_) => commands::knife_edge_cmd(&config, &mut out)?,
        Command::FocalScan(_) => commands::focal_scan_cmd(&config, &mut out)?,
        Command::DisplacementScan(_) => commands::displacement_scan_cmd(&config, &mut out)?,
        Command::Reduce(_) => commands::reduce_cmd(&config, &mut out)?,
        Command::Align(_) => commands::align_cmd(&config, &mut out)?,
        Command::Analyze { input, .. } => commands::analyze_cmd(&config, input, &mut out)?,
    };
    out.finish(command.name(), &config, results)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = e.record(cli.command.name());
            let text = serde_json::to_string_pretty(&record).expect("record serialises");
            eprintln!("{text}");
            let dir = &cli.command.common().out_dir;
            if std::fs::create_dir_all(dir).is_ok() {
                let _ = std::fs::write(dir.join("error.json"), text + "\n");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
