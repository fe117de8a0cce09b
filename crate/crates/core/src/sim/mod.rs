//! Scenario-driven closed-loop simulator, metrics and exports.

mod engine;
mod export;
mod log;
mod nominal;
mod scenario;

pub use engine::run;
pub use export::{export, read_log, sweep, write_plot_script, SeedOutcome, SweepSummary, TICKS_HEADER};
pub use log::{
    metrics, min_gap, station_occupancy, Calibration, Events, IterationRecord, Metrics, MonitorEvent, ReturnEvent,
    RobotIterationEntry, SimLog, Status, TickRecord,
};
pub use nominal::{NominalPlan, NominalPlanner};
pub use scenario::{
    load_scenario, Ablation, ChargerConfig, ChargerMotion, Horizons, NominalConfig, RobotConfig, RobotSpec, Scenario,
};
