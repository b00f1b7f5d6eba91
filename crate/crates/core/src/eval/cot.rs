//! Mechanical cost of transport.

use crate::error::{Error, Result};

use super::telemetry::TelemetryRecord;

/// Default lower bound on the mean horizontal speed, m/s.
pub const DEFAULT_SPEED_FLOOR: f64 = 0.05;

/// Aggregate CoT of a window: the mean of `Σ_j [τ_j θ̇_j]⁺` over the window,
/// divided by `m g` times the mean horizontal speed.
pub fn cot(window: &[TelemetryRecord], total_mass: f64, g: f64, speed_floor: f64) -> Result<f64> {
    if !(total_mass > 0.0 && g > 0.0) {
        return Err(Error::Config(format!("CoT needs positive mass and gravity, got {total_mass} and {g}")));
    }
    if window.is_empty() {
        return Err(Error::UndefinedCot { speed: 0.0, floor: speed_floor });
    }
    let n = window.len() as f64;
    let speed = window.iter().map(|r| r.speed).sum::<f64>() / n;
    if !(speed > speed_floor) {
        return Err(Error::UndefinedCot { speed, floor: speed_floor });
    }
    let power = window.iter().map(TelemetryRecord::positive_power).sum::<f64>() / n;
    Ok(power / (total_mass * g * speed))
}

/// Per-tick CoT, one value per record. The speed in each denominator is
/// bounded below by `speed_floor` so that stops read as large, finite values.
pub fn instantaneous_cot(window: &[TelemetryRecord], total_mass: f64, g: f64, speed_floor: f64) -> Vec<f64> {
    let floor = speed_floor.max(f64::MIN_POSITIVE);
    window.iter().map(|r| r.positive_power() / (total_mass * g * r.speed.max(floor))).collect()
}
