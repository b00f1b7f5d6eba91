use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::MorphologyTag;

use super::protocol::Protocol;

/// Marks every published number carried by a report.
pub const HARDWARE_FLAG: &str = "hardware, not reproducible";

/// Where the evaluated policy came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicySource {
    pub checkpoint: Option<String>,
    /// Training iterations behind the policy.
    pub iteration: Option<u64>,
    pub train_seed: Option<u64>,
    /// Configuration echo of the training run.
    pub train: Option<serde_json::Value>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingErrors {
    pub vx_mae: f64,
    pub vy_mae: f64,
    pub wz_mae: f64,
    pub planar_rmse: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathDeviation {
    pub mean: f64,
    pub max: f64,
    pub bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeMark {
    pub turn_time_s: f64,
    pub peak_times_s: Vec<f64>,
}

/// Published hardware context. Never compared against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub context: String,
    /// Hip-yaw morphology.
    pub flores: Option<f64>,
    /// Hip-roll reference robot.
    pub baseline: Option<f64>,
    /// Reported ratio of the two CoTs.
    pub ratio: Option<f64>,
    pub flag: String,
}

fn note(context: &str, flores: Option<f64>, baseline: Option<f64>, ratio: Option<f64>) -> Annotation {
    Annotation { context: context.into(), flores, baseline, ratio, flag: HARDWARE_FLAG.into() }
}

/// Hardware CoT of the two robots while circling at 0.4 m/s, by radius.
pub const CIRCLE_REFERENCE: [(f64, f64, f64); 4] =
    [(0.5, 0.24, 0.646), (1.0, 0.18, 0.507), (1.5, 0.149, 0.418), (2.0, 0.139, 0.4)];

pub fn annotations_for(protocol: &Protocol) -> Vec<Annotation> {
    match protocol {
        Protocol::StraightLine { .. } => vec![note(
            "hardware CoT against speed over 0.5-1.5 m/s on paved, grass, discrete and gravel ground; \
             trend reference only, no values transcribed",
            None,
            None,
            None,
        )],
        Protocol::Lateral { .. } => {
            vec![note("hardware lateral walking at a commanded 0.5 m/s", Some(0.3614), Some(0.6995), None)]
        }
        Protocol::Circle { radius, .. } => CIRCLE_REFERENCE
            .iter()
            .filter(|(r, _, _)| (r - radius).abs() < 1e-9)
            .map(|&(r, f, b)| note(&format!("hardware circling at 0.4 m/s, radius {r} m"), Some(f), Some(b), None))
            .collect(),
        Protocol::Course { .. } => vec![note(
            "hardware path following with seven 90 degree turns: hip-yaw CoT approximately 70% of hip-roll CoT \
             at each turning point",
            None,
            None,
            Some(0.7),
        )],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol_id: String,
    pub protocol: Protocol,
    pub morphology: MorphologyTag,
    pub total_mass: f64,
    /// Evaluation seed.
    pub seed: u64,
    pub source: PolicySource,
    pub build: String,
    pub complete: bool,
    pub flags: Vec<String>,
    pub ticks: usize,
    pub window_start_s: f64,
    pub cot: f64,
    pub mean_speed: f64,
    pub mean_positive_power: f64,
    pub tracking: TrackingErrors,
    pub path: Option<PathDeviation>,
    /// One value per control tick of the whole run.
    pub instantaneous_cot: Vec<f64>,
    pub turn_times_s: Vec<f64>,
    pub spikes: Vec<SpikeMark>,
    pub annotations: Vec<Annotation>,
    pub telemetry_sha256: String,
    pub config: serde_json::Value,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    /// `time,cot` rows, one per tick.
    pub fn write_cot_series<W: Write>(&self, out: W, dt: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "cot"])?;
        for (i, c) in self.instantaneous_cot.iter().enumerate() {
            w.write_record([((i + 1) as f64 * dt).to_string(), c.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("CoT series", e))?;
        Ok(())
    }
}

/// `terrain,speed,cot,complete` rows for straight-line reports.
pub fn write_cot_vs_speed<W: Write>(reports: &[ExperimentReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["morphology", "terrain", "speed", "cot", "complete"])?;
    for r in reports {
        if let Protocol::StraightLine { speed, terrain } = &r.protocol {
            w.write_record([
                r.morphology.as_str().to_string(),
                terrain.as_str().to_string(),
                speed.to_string(),
                r.cot.to_string(),
                r.complete.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("CoT-vs-speed table", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub protocol: Protocol,
    pub morphology_a: MorphologyTag,
    pub morphology_b: MorphologyTag,
    pub seed_a: u64,
    pub seed_b: u64,
    pub budget_a: Option<u64>,
    pub budget_b: Option<u64>,
    pub cot_a: f64,
    pub cot_b: f64,
    /// `cot_a / cot_b`.
    pub ratio: f64,
    pub complete: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

/// Pairs two reports of the same protocol.
pub fn compare(a: &ExperimentReport, b: &ExperimentReport) -> Result<Comparison> {
    compare_sets(std::slice::from_ref(a), std::slice::from_ref(b))
}

/// Pairs reports position by position; every pair must share its protocol.
pub fn compare_sets(a: &[ExperimentReport], b: &[ExperimentReport]) -> Result<Comparison> {
    if a.len() != b.len() {
        return Err(Error::Config(format!("cannot pair {} reports with {}", a.len(), b.len())));
    }
    let rows = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            if x.protocol != y.protocol {
                return Err(Error::ProtocolMismatch(x.protocol.describe(), y.protocol.describe()));
            }
            Ok(ComparisonRow {
                protocol: x.protocol.clone(),
                morphology_a: x.morphology,
                morphology_b: y.morphology,
                seed_a: x.seed,
                seed_b: y.seed,
                budget_a: x.source.iteration,
                budget_b: y.source.iteration,
                cot_a: x.cot,
                cot_b: y.cot,
                ratio: x.cot / y.cot,
                complete: x.complete && y.complete,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison { rows })
}

impl Comparison {
    /// Plain-text table, one line per pair.
    pub fn to_table(&self) -> String {
        let mut s =
            String::from("protocol\tmorph_a\tseed_a\tbudget_a\tcot_a\tmorph_b\tseed_b\tbudget_b\tcot_b\tratio\n");
        let budget = |b: Option<u64>| b.map_or_else(|| "-".to_string(), |v| v.to_string());
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.4}\t{}\t{}\t{}\t{:.4}\t{:.4}{}\n",
                r.protocol.describe(),
                r.morphology_a.as_str(),
                r.seed_a,
                budget(r.budget_a),
                r.cot_a,
                r.morphology_b.as_str(),
                r.seed_b,
                budget(r.budget_b),
                r.cot_b,
                r.ratio,
                if r.complete { "" } else { "\tincomplete" }
            ));
        }
        s
    }
}
