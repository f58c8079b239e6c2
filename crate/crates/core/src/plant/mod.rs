//! Ground-truth plant: hydraulics, pump scheduling and chlorine quality.

pub mod hydraulics;
pub mod quality;
pub mod simulate;

pub use hydraulics::{demand_tracking_schedule, hourly_demand, optimize_pump_schedule, solve_flows, HydraulicSchedule, Tariff};
pub use quality::QualityState;
pub use simulate::{simulate, Hydraulics, Plant, PlantTrajectory};
