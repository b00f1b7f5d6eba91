//! Experiment protocols and Cost-of-Transport evaluation.

pub mod cot;
pub mod pid;
pub mod protocol;
pub mod report;
mod scripted;
pub mod telemetry;
mod tracking;

pub use cot::{cot, instantaneous_cot, DEFAULT_SPEED_FLOOR};
pub use pid::{pid_heading, wrap_angle, HeadingPid, PidGains};
pub use protocol::{
    default_course, detect_spikes, local_maxima, required_yaw_rate, run_circle, run_course, run_lateral, run_protocol,
    run_straight_line, straight_line_sweep, EvalConfig, EvalSetup, Protocol, ProtocolRun, CIRCLE_VX, LATERAL_SPEED,
    REFERENCE_RADII, STRAIGHT_SPEED_RANGE, SWEEP_TERRAINS,
};
pub use report::{
    annotations_for, compare, compare_sets, write_cot_vs_speed, Annotation, Comparison, ComparisonRow,
    ExperimentReport, PathDeviation, PolicySource, SpikeMark, TrackingErrors, CIRCLE_REFERENCE, HARDWARE_FLAG,
};
pub use scripted::ScriptedWheelPolicy;
pub use telemetry::{
    read_telemetry_csv, telemetry_csv_bytes, telemetry_hash, telemetry_header, write_telemetry_csv, TelemetryRecord,
};
pub use tracking::{tracking_score, TrackingScore};
