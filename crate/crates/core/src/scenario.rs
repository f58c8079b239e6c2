//! Scenario files: one TOML document holding the network and every
//! controller setting a run needs.

use crate::benchmark::{build_benchmark16, build_burst_loop};
use crate::distributed::ZonePartition;
use crate::error::{Error, Result};
use crate::network::{validate, with_events_until, Network};
use crate::plant::hydraulics::{demand_tracking_schedule, hourly_demand, optimize_pump_schedule, HydraulicSchedule, Tariff};
use crate::rfmpc::{HierarchyOptions, LoopOptions, MpcTask};
use crate::switching::{burst_loop_supervisor, SupervisorConfig, SwitchMode};
use crate::uncertainty::{UncertaintyConfig, UncertaintySet};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Open-loop plant simulation.
    Simulate,
    Centralized,
    Distributed,
    /// Pump re-planning on top of the centralized quality controller.
    Hierarchy,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "simulate" => Ok(Mode::Simulate),
            "centralized" => Ok(Mode::Centralized),
            "distributed" => Ok(Mode::Distributed),
            "hierarchy" => Ok(Mode::Hierarchy),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected simulate, centralized, distributed or hierarchy)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Simulate => "simulate",
            Mode::Centralized => "centralized",
            Mode::Distributed => "distributed",
            Mode::Hierarchy => "hierarchy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub network: Network,
    /// Hourly energy prices. Required by hierarchy mode; without it the
    /// other modes follow demand with the cheapest pumps and report energy
    /// in kWh.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tariff: Option<Tariff>,
    #[serde(default)]
    pub uncertainty: UncertaintyConfig,
    /// Control task; derived from the network bounds when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<MpcTask>,
    #[serde(default)]
    pub controller: LoopOptions,
    #[serde(default)]
    pub hierarchy: HierarchyOptions,
    /// Agent zones; one zone per booster when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<ZonePartition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supervisor: Option<SupervisorConfig>,
}

impl Scenario {
    pub fn new(network: Network) -> Scenario {
        Scenario {
            schema_version: SCHEMA_VERSION,
            network,
            tariff: None,
            uncertainty: UncertaintyConfig::default(),
            task: None,
            controller: LoopOptions::default(),
            hierarchy: HierarchyOptions::default(),
            partition: None,
            supervisor: None,
        }
    }

    pub fn benchmark16() -> Scenario {
        Scenario {
            tariff: Some(Tariff::benchmark()),
            partition: Some(ZonePartition::benchmark()),
            ..Scenario::new(build_benchmark16())
        }
    }

    /// Small loop whose first pipe bursts at step 100, supervised by a
    /// normal and an emergency strategy.
    pub fn burst_loop(mode: SwitchMode, switch_steps: usize) -> Scenario {
        let net = build_burst_loop();
        let supervisor = burst_loop_supervisor(&net, mode, switch_steps);
        Scenario {
            tariff: Some(Tariff::benchmark()),
            uncertainty: UncertaintyConfig::zero(),
            task: supervisor.strategies.iter().find(|s| s.id == supervisor.initial).map(|s| s.task.clone()),
            supervisor: Some(supervisor),
            ..Scenario::new(net)
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Scenario> {
        let sc: Scenario = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        if sc.schema_version != SCHEMA_VERSION {
            return Err(Error::Scenario(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                sc.schema_version
            )));
        }
        Ok(sc)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml_str(&text).map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// Checks the network and that every section `mode` needs is present.
    pub fn check(&self, mode: Mode, switching: bool) -> Result<()> {
        let report = validate(&self.network);
        if !report.is_empty() {
            return Err(Error::InvalidNetwork(report.to_string()));
        }
        if mode == Mode::Hierarchy && self.tariff.is_none() {
            return Err(Error::Scenario("hierarchy mode requires the [tariff] section".into()));
        }
        if switching && self.supervisor.is_none() {
            return Err(Error::Scenario("switching requires the [supervisor] section".into()));
        }
        if switching && mode != Mode::Centralized {
            return Err(Error::Config(format!("switching runs in centralized mode, not {mode}")));
        }
        if let Some(t) = &self.tariff {
            t.validate()?;
        }
        if mode == Mode::Distributed {
            self.partition().resolve(&self.network)?;
        }
        self.task().validate()?;
        self.uncertainty_set().map(|_| ())
    }

    pub fn task(&self) -> MpcTask {
        self.task.clone().unwrap_or_else(|| MpcTask::from_network(&self.network))
    }

    pub fn partition(&self) -> ZonePartition {
        self.partition.clone().unwrap_or_else(|| ZonePartition::per_booster(&self.network))
    }

    pub fn uncertainty_set(&self) -> Result<UncertaintySet> {
        self.uncertainty.build(&self.network)
    }

    /// Tariff used for scheduling and cost accounting.
    pub fn pricing(&self) -> Tariff {
        self.tariff.clone().unwrap_or_else(|| Tariff::flat(1.0))
    }

    /// Pump schedule for the fixed-schedule modes: energy-optimal under the
    /// tariff, or demand-tracking without one.
    pub fn schedule(&self) -> Result<HydraulicSchedule> {
        let known = with_events_until(&self.network, Some(0))?;
        let demand = hourly_demand(&known);
        match &self.tariff {
            Some(t) => optimize_pump_schedule(&known, &demand, t),
            None => demand_tracking_schedule(&known, &demand),
        }
    }
}
