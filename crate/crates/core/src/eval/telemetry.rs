use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{Command, Env};
use crate::error::{Error, Result};
use crate::morphology::{canonical_joint_order, Leg, NUM_JOINTS, NUM_WHEELS};

/// State of the robot after one control tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub time: f64,
    /// Joint torques applied during the last physics substep, N·m.
    pub torques: [f64; NUM_JOINTS],
    pub joint_velocities: [f64; NUM_JOINTS],
    pub position: [f64; 3],
    /// Horizontal speed of the base in the body frame, m/s.
    pub speed: f64,
    pub heading: f64,
    pub command: Command,
    pub contacts: [bool; NUM_WHEELS],
}

impl TelemetryRecord {
    /// Reads the record for the tick that just ended.
    pub fn capture(env: &Env) -> Self {
        let s = env.state();
        let v = env.base_velocity();
        Self {
            time: env.step_count() as f64 * env.config().control_dt,
            torques: *env.last_torques(),
            joint_velocities: std::array::from_fn(|j| s.joint_velocities[j]),
            position: [s.base_position.x, s.base_position.y, s.base_position.z],
            speed: v.x.hypot(v.y),
            heading: s.heading(),
            command: env.command(),
            contacts: env.wheel_contacts(),
        }
    }

    /// `Σ_j [τ_j θ̇_j]⁺`, W.
    pub fn positive_power(&self) -> f64 {
        self.torques.iter().zip(&self.joint_velocities).map(|(t, w)| (t * w).max(0.0)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.torques
            .iter()
            .chain(&self.joint_velocities)
            .chain(&self.position)
            .chain([&self.time, &self.speed, &self.heading])
            .chain([&self.command.vx, &self.command.vy, &self.command.wz])
            .all(|v| v.is_finite())
    }
}

pub fn telemetry_header() -> Vec<String> {
    let joints = canonical_joint_order();
    let mut h = vec!["time".to_string()];
    h.extend(joints.iter().map(|j| format!("tau_{j}")));
    h.extend(joints.iter().map(|j| format!("dq_{j}")));
    h.extend(["x", "y", "z", "speed", "heading", "vx_cmd", "vy_cmd", "wz_cmd"].map(String::from));
    h.extend(Leg::ALL.iter().map(|l| format!("contact_{}", l.prefix())));
    h
}

pub fn write_telemetry_csv<W: Write>(records: &[TelemetryRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(telemetry_header())?;
    let mut row = Vec::with_capacity(telemetry_header().len());
    for r in records {
        row.clear();
        row.push(r.time.to_string());
        row.extend(r.torques.iter().map(f64::to_string));
        row.extend(r.joint_velocities.iter().map(f64::to_string));
        row.extend(r.position.iter().map(f64::to_string));
        row.extend([r.speed, r.heading, r.command.vx, r.command.vy, r.command.wz].map(|v| v.to_string()));
        row.extend(r.contacts.iter().map(|&c| u8::from(c).to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("telemetry", e))?;
    Ok(())
}

pub fn telemetry_csv_bytes(records: &[TelemetryRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_telemetry_csv(records, &mut buf).expect("writing to memory cannot fail");
    buf
}

pub fn read_telemetry_csv<R: Read>(input: R) -> Result<Vec<TelemetryRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let expected = telemetry_header();
    if rd.headers()?.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Shape("telemetry header does not match the fixed column order".into()));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Shape(format!("telemetry column {i} is not a number")))
        };
        let mut k = 0;
        let mut next = || {
            k += 1;
            num(k - 1)
        };
        let time = next()?;
        let mut torques = [0.0; NUM_JOINTS];
        for t in &mut torques {
            *t = next()?;
        }
        let mut joint_velocities = [0.0; NUM_JOINTS];
        for w in &mut joint_velocities {
            *w = next()?;
        }
        let position = [next()?, next()?, next()?];
        let speed = next()?;
        let heading = next()?;
        let command = Command::new(next()?, next()?, next()?);
        let mut contacts = [false; NUM_WHEELS];
        for c in &mut contacts {
            *c = next()? != 0.0;
        }
        out.push(TelemetryRecord { time, torques, joint_velocities, position, speed, heading, command, contacts });
    }
    Ok(out)
}

/// Hex SHA-256 of the telemetry CSV; equal hashes mean byte-identical logs.
pub fn telemetry_hash(records: &[TelemetryRecord]) -> String {
    hex_digest(&telemetry_csv_bytes(records))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
