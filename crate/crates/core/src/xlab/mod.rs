//! Experiment orchestration: checkpoint sweeps, correlation analysis and setup sweeps.

mod correlate;
mod setup;
mod sweep;

pub use correlate::{correlate, CorrelationReport};
pub use setup::{columns, group_points, setup_sweep, Axis, Group, SetupSweepReport};
pub use sweep::{
    downstream_ppl, evaluate_checkpoint, read_points, run_sweep, MetricKind, Setup, SweepData,
    SweepPoint, SweepSpec, SweepWorld, DOWNSTREAM_TARGET, POINTS_FILE, SPEC_FILE,
};
