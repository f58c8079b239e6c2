//! Robustly feasible MPC: window QP, safety-zone iteration and the
//! receding-horizon loop.

pub mod assemble;
pub mod closed_loop;
pub mod hierarchy;
pub mod log;
pub mod task;
pub mod zones;

pub use assemble::{assemble_qp, MpcQp, RowKind};
pub use hierarchy::{run_hierarchy, HierarchyOptions, HierarchyOutcome};
pub use closed_loop::{run_receding_horizon, BankPredictor, Controller, ControllerView, ControllerViews, CycleResult, Experiment, LoopOptions};
pub use log::{AgentColumns, ControllerLog, Metrics, StepDecision, VIOLATION_TOL};
pub use task::{MpcTask, SafetyZones};
pub use zones::{iterate_safety_zones, lipschitz_zones_offline, solve_plain, DEFAULT_PROBES, AdditiveBand, RobustPredictor, ZoneOutcome, ZoneSettings, ZoneStatus};
