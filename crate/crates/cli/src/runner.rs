//! Experiment runners behind `simulate` and `run`, and the files they write.

use chloros::distributed::run_drfmpc_with;
use chloros::network::NodeId;
use chloros::plant::simulate::{simulate, PlantTrajectory};
use chloros::rfmpc::{run_hierarchy, ControllerLog, ControllerViews, Experiment, Metrics};
use chloros::scenario::{Mode, Scenario};
use chloros::switching::{supervise, SupervisorConfig, SwitchMode};
use chloros::uncertainty::{sample_realization, Realization};
use chloros::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario_label: String,
    pub scenario: Scenario,
    pub mode: Mode,
    pub zones: bool,
    pub switching: Option<SwitchMode>,
    pub switch_steps: Option<usize>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Open-loop inputs for simulate mode, `[step][booster]`.
    pub inputs: Option<Vec<Vec<f64>>>,
}

/// Extra per-run artefacts besides the CSV log.
enum Extra {
    None,
    Messages(String),
    Supervisor(String),
    Schedule(String),
}

struct RunOutput {
    seed: u64,
    csv: Vec<u8>,
    metrics: Metrics,
    extra: Extra,
    wall_s: f64,
    cycle_wall_s: Vec<f64>,
}

#[derive(Serialize)]
struct SeedMetrics<'a> {
    seed: u64,
    metrics: &'a Metrics,
}

#[derive(Serialize)]
struct Aggregate {
    runs: usize,
    violating_runs: usize,
    total_violations: usize,
    max_violation: f64,
    mean_injection_mass: f64,
    mean_energy_cost: f64,
    zone_iters_max: usize,
    degraded_steps: usize,
    non_optimal_steps: usize,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    scenario: &'a str,
    mode: Mode,
    zones: bool,
    switching: Option<SwitchMode>,
    switch_steps: Option<usize>,
    seeds: Vec<u64>,
    aggregate: Aggregate,
    runs: Vec<SeedMetrics<'a>>,
}

#[derive(Serialize)]
struct SeedTiming {
    seed: u64,
    wall_s: f64,
    cycles: usize,
    cycle_mean_s: f64,
    cycle_max_s: f64,
}

#[derive(Serialize)]
struct TimingFile {
    total_wall_s: f64,
    runs: Vec<SeedTiming>,
}

pub fn log_file_name(seed: u64) -> String {
    format!("log_seed{seed}.csv")
}

/// Runs every seed and writes the CSV logs, `metrics.json`, `timing.json`
/// and the mode's extra artefacts into `cfg.out`.
pub fn execute(cfg: &RunConfig) -> Result<()> {
    cfg.scenario.check(cfg.mode, cfg.switching.is_some())?;
    if cfg.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    std::fs::create_dir_all(&cfg.out)?;
    let started = Instant::now();
    let outputs = match (cfg.mode, cfg.switching) {
        (Mode::Simulate, _) => run_simulate(cfg)?,
        (Mode::Centralized, Some(mode)) => run_switching(cfg, mode)?,
        (Mode::Centralized, None) => run_centralized(cfg)?,
        (Mode::Distributed, _) => run_distributed(cfg)?,
        (Mode::Hierarchy, _) => run_hier(cfg)?,
    };
    let total = started.elapsed().as_secs_f64();

    for o in &outputs {
        std::fs::write(cfg.out.join(log_file_name(o.seed)), &o.csv)?;
        let (name, body) = match &o.extra {
            Extra::None => continue,
            Extra::Messages(s) => (format!("messages_seed{}.jsonl", o.seed), s),
            Extra::Supervisor(s) => (format!("supervisor_seed{}.json", o.seed), s),
            Extra::Schedule(s) => (format!("schedule_seed{}.json", o.seed), s),
        };
        std::fs::write(cfg.out.join(name), body)?;
    }
    let n = outputs.len();
    let aggregate = Aggregate {
        runs: n,
        violating_runs: outputs.iter().filter(|o| o.metrics.violation_count > 0).count(),
        total_violations: outputs.iter().map(|o| o.metrics.violation_count).sum(),
        max_violation: outputs.iter().map(|o| o.metrics.max_violation).fold(0.0, f64::max),
        mean_injection_mass: outputs.iter().map(|o| o.metrics.injection_mass).sum::<f64>() / n as f64,
        mean_energy_cost: outputs.iter().map(|o| o.metrics.energy_cost).sum::<f64>() / n as f64,
        zone_iters_max: outputs.iter().map(|o| o.metrics.zone_iters_max).max().unwrap_or(0),
        degraded_steps: outputs.iter().map(|o| o.metrics.degraded_steps).sum(),
        non_optimal_steps: outputs.iter().map(|o| o.metrics.non_optimal_steps).sum(),
    };
    log::info!(
        "{} runs, {} with violations, max violation {:.3e} mg/L",
        aggregate.runs,
        aggregate.violating_runs,
        aggregate.max_violation
    );
    let metrics = MetricsFile {
        scenario: &cfg.scenario_label,
        mode: cfg.mode,
        zones: cfg.zones,
        switching: cfg.switching,
        switch_steps: cfg.switching.map(|_| supervisor_config(cfg, SwitchMode::Hard).map(|s| s.switch_steps)).transpose()?,
        seeds: outputs.iter().map(|o| o.seed).collect(),
        aggregate,
        runs: outputs.iter().map(|o| SeedMetrics { seed: o.seed, metrics: &o.metrics }).collect(),
    };
    write_json(&cfg.out.join("metrics.json"), &metrics)?;
    let timing = TimingFile {
        total_wall_s: total,
        runs: outputs
            .iter()
            .map(|o| SeedTiming {
                seed: o.seed,
                wall_s: o.wall_s,
                cycles: o.cycle_wall_s.len(),
                cycle_mean_s: o.cycle_wall_s.iter().sum::<f64>() / o.cycle_wall_s.len().max(1) as f64,
                cycle_max_s: o.cycle_wall_s.iter().copied().fold(0.0, f64::max),
            })
            .collect(),
    };
    write_json(&cfg.out.join("timing.json"), &timing)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn realization(cfg: &RunConfig, seed: u64) -> Result<Realization> {
    let set = cfg.scenario.uncertainty_set()?;
    Ok(sample_realization(&set, cfg.scenario.network.demand_profiles.len(), seed))
}

fn loop_options(cfg: &RunConfig) -> chloros::rfmpc::LoopOptions {
    let mut o = cfg.scenario.controller;
    o.use_zones = cfg.zones;
    o
}

fn finish(seed: u64, log: &ControllerLog, extra: Extra, started: Instant) -> Result<RunOutput> {
    Ok(RunOutput {
        seed,
        csv: log.csv_bytes(!log.agents.is_empty())?,
        metrics: log.metrics(),
        extra,
        wall_s: started.elapsed().as_secs_f64(),
        cycle_wall_s: log.cycle_wall_s.clone(),
    })
}

fn run_centralized(cfg: &RunConfig) -> Result<Vec<RunOutput>> {
    let sc = &cfg.scenario;
    let exp = Experiment::new(&sc.network, sc.schedule()?, sc.pricing(), sc.uncertainty_set()?, sc.task(), loop_options(cfg))?;
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let started = Instant::now();
            let log = exp.run(&realization(cfg, seed)?)?;
            finish(seed, &log, Extra::None, started)
        })
        .collect()
}

fn run_distributed(cfg: &RunConfig) -> Result<Vec<RunOutput>> {
    let sc = &cfg.scenario;
    let schedule = sc.schedule()?;
    let set = sc.uncertainty_set()?;
    let options = loop_options(cfg);
    let views = ControllerViews::build(&sc.network, &schedule, &set, &options.envelope, 0)?;
    let (tariff, partition, task) = (sc.pricing(), sc.partition(), sc.task());
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let started = Instant::now();
            let out = run_drfmpc_with(&sc.network, &views, &schedule, &tariff, &partition, &task, &realization(cfg, seed)?, options)?;
            finish(seed, &out.log, Extra::Messages(out.trace_jsonl()?), started)
        })
        .collect()
}

fn run_hier(cfg: &RunConfig) -> Result<Vec<RunOutput>> {
    let sc = &cfg.scenario;
    let tariff = sc.tariff.clone().ok_or_else(|| Error::Scenario("hierarchy mode requires the [tariff] section".into()))?;
    let (task, set) = (sc.task(), sc.uncertainty_set()?);
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let started = Instant::now();
            let out = run_hierarchy(&sc.network, &tariff, &task, &set, &realization(cfg, seed)?, loop_options(cfg), sc.hierarchy)?;
            let plans: Vec<serde_json::Value> = out
                .plans
                .iter()
                .map(|(h, p)| serde_json::json!({ "hydraulic_step": h, "plan": p }))
                .collect();
            let body = serde_json::to_string_pretty(&serde_json::json!({
                "energy_cost": out.schedule.energy_cost(&sc.network, &tariff, 0),
                "schedule": out.schedule,
                "plans": plans,
            }))?;
            finish(seed, &out.log, Extra::Schedule(body + "\n"), started)
        })
        .collect()
}

fn supervisor_config(cfg: &RunConfig, mode: SwitchMode) -> Result<SupervisorConfig> {
    let mut sup = cfg
        .scenario
        .supervisor
        .clone()
        .ok_or_else(|| Error::Scenario("switching requires the [supervisor] section".into()))?;
    sup.mode = mode;
    if let Some(ts) = cfg.switch_steps {
        sup.switch_steps = ts;
    }
    Ok(sup)
}

fn run_switching(cfg: &RunConfig, mode: SwitchMode) -> Result<Vec<RunOutput>> {
    let sc = &cfg.scenario;
    let sup = supervisor_config(cfg, mode)?;
    let (schedule, set, tariff) = (sc.schedule()?, sc.uncertainty_set()?, sc.pricing());
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let started = Instant::now();
            let (log, slog) = supervise(&sc.network, &schedule, &tariff, &set, &realization(cfg, seed)?, &sup, loop_options(cfg))?;
            let body = serde_json::to_string_pretty(&slog)? + "\n";
            finish(seed, &log, Extra::Supervisor(body), started)
        })
        .collect()
}

/// Open loop: the given inputs, or every booster held at its lower bound.
fn run_simulate(cfg: &RunConfig) -> Result<Vec<RunOutput>> {
    let sc = &cfg.scenario;
    let net = &sc.network;
    let steps = net.time_grid.steps_quality();
    let u = match &cfg.inputs {
        Some(u) => u.clone(),
        None => vec![net.boosters.iter().map(|b| b.u_min).collect(); steps],
    };
    let (schedule, tariff) = (sc.schedule()?, sc.pricing());
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let started = Instant::now();
            let traj = simulate(net, &schedule, &tariff, &u, Some(&realization(cfg, seed)?))?;
            let csv = traj.csv_bytes()?;
            Ok(RunOutput {
                seed,
                csv,
                metrics: plant_metrics(net, &traj),
                extra: Extra::None,
                wall_s: started.elapsed().as_secs_f64(),
                cycle_wall_s: Vec::new(),
            })
        })
        .collect()
}

fn plant_metrics(net: &chloros::network::Network, traj: &PlantTrajectory) -> Metrics {
    let violation: Vec<f64> = traj
        .y
        .iter()
        .map(|y| {
            y.iter()
                .zip(&net.monitored)
                .map(|(v, m)| (m.y_min - v).max(v - m.y_max).max(0.0))
                .fold(0.0, f64::max)
        })
        .collect();
    let dt_h = net.time_grid.dt_quality_h();
    let sums: Vec<(NodeId, f64)> = traj
        .booster_ids
        .iter()
        .enumerate()
        .map(|(j, id)| (*id, traj.u.iter().map(|u| u[j]).sum::<f64>() * dt_h))
        .collect();
    Metrics {
        steps: traj.steps(),
        violation_count: violation.iter().filter(|v| **v > chloros::rfmpc::VIOLATION_TOL).count(),
        max_violation: violation.iter().copied().fold(0.0, f64::max),
        injection_mass: traj.injected_mass(),
        injection_setpoint_sum: sums,
        energy_cost: traj.energy_cost.last().copied().unwrap_or(0.0),
        zone_iters_max: 0,
        degraded_steps: 0,
        non_optimal_steps: 0,
    }
}
