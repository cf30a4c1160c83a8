//! Command-line entry points, run configuration, the binary snapshot
//! format and CSV diagnostics.

mod commands;
mod config;
mod snapshot;

pub use commands::{
    cmd_infer, cmd_roundtrip, cmd_simulate, cmd_sweep, fit_sine, load_triple, CheckLine,
    InferReport, RoundtripOutcome, RoundtripReport, SimulateReport, SineFit, SweepReport, SweepRow,
};
pub use config::{GTableProtocol, RoundtripThresholds, RunConfig};
pub use snapshot::{read_snapshot, write_snapshot, Snapshot, SnapshotData, SnapshotKind, MAGIC};
