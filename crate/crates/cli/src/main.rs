mod compare;
mod runner;

use chloros::network::validate;
use chloros::scenario::{Mode, Scenario};
use chloros::switching::SwitchMode;
use chloros::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use runner::{execute, write_json, RunConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Chlorine control experiments on water distribution networks.
#[derive(Debug, Parser)]
#[command(name = "chloros", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scenario file and report every problem found.
    Validate {
        #[arg(long)]
        scenario: String,
    },
    /// Open-loop plant simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// CSV of inputs with one `u_<node>` column per booster and one row
        /// per quality step; every booster at its lower bound otherwise.
        #[arg(long)]
        inputs: Option<PathBuf>,
    },
    /// Closed-loop experiment.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "centralized")]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = OnOff::On)]
        zones: OnOff,
        #[arg(long, value_enum, default_value_t = Switching::Off)]
        switching: Switching,
        /// Quality steps of a soft switch; the scenario's value otherwise.
        #[arg(long)]
        ts: Option<usize>,
    },
    /// Compare two run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// First quality step of the injection window.
        #[arg(long, default_value_t = 200)]
        from: usize,
        /// End (exclusive) of the injection window.
        #[arg(long, default_value_t = 288)]
        to: usize,
        /// Also write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario TOML file, or `builtin:benchmark16` / `builtin:burst_loop`.
    #[arg(long)]
    scenario: String,
    /// Number of Monte Carlo realizations, seeded `seed..seed + mc`.
    #[arg(long, default_value_t = 1)]
    mc: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switching {
    Off,
    Hard,
    Linear,
    MinTime,
}

fn load_scenario(spec: &str) -> Result<Scenario> {
    match spec {
        "builtin:benchmark16" => Ok(Scenario::benchmark16()),
        "builtin:burst_loop" => Ok(Scenario::burst_loop(SwitchMode::Linear, 24)),
        path => Scenario::load(Path::new(path)),
    }
}

fn read_inputs(path: &Path, scenario: &Scenario) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let cols = scenario
        .network
        .boosters
        .iter()
        .map(|b| {
            let name = format!("u_{}", b.node_id);
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Config(format!("{}: missing column {name}", path.display())))
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut u = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = cols
            .iter()
            .map(|&c| {
                rec[c]
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("{}: row {}: {e}", path.display(), n + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        u.push(row);
    }
    Ok(u)
}

fn run_config(common: &Common, mode: Mode) -> Result<RunConfig> {
    if common.mc == 0 {
        return Err(Error::Config("--mc must be at least 1".into()));
    }
    Ok(RunConfig {
        scenario_label: common.scenario.clone(),
        scenario: load_scenario(&common.scenario)?,
        mode,
        zones: true,
        switching: None,
        switch_steps: None,
        seeds: (common.seed..common.seed + common.mc).collect(),
        out: common.out.clone(),
        inputs: None,
    })
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { scenario } => {
            let sc = load_scenario(&scenario)?;
            let report = validate(&sc.network);
            if report.is_empty() {
                println!("{scenario}: ok");
                Ok(())
            } else {
                Err(Error::InvalidNetwork(report.to_string()))
            }
        }
        Command::Simulate { common, inputs } => {
            let mut cfg = run_config(&common, Mode::Simulate)?;
            if let Some(path) = inputs {
                cfg.inputs = Some(read_inputs(&path, &cfg.scenario)?);
            }
            execute(&cfg)
        }
        Command::Run { common, mode, zones, switching, ts } => {
            let mut cfg = run_config(&common, mode)?;
            cfg.zones = zones == OnOff::On;
            cfg.switching = match switching {
                Switching::Off => None,
                Switching::Hard => Some(SwitchMode::Hard),
                Switching::Linear => Some(SwitchMode::Linear),
                Switching::MinTime => Some(SwitchMode::MinTime),
            };
            cfg.switch_steps = ts;
            execute(&cfg)
        }
        Command::Compare { a, b, from, to, out } => {
            let report = compare::compare(&a, &b, from, to)?;
            print!("{report}");
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CHLOROS_LOG", "warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
