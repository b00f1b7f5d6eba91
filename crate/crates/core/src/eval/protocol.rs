//! Experiment protocols: constant-command runs, circles and a waypoint course.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::sync::Arc;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::env::{Command, Env, EnvConfig, RandomizationConfig};
use crate::error::{Error, Result};
use crate::learn::{ActorCritic, Checkpoint, Policy, BUILD_ID};
use crate::morphology::{MorphologyParams, MorphologyTag};
use crate::physics::{SimState, TerrainKind};
use crate::seed::rng_for;

use super::cot::{cot, instantaneous_cot, DEFAULT_SPEED_FLOOR};
use super::pid::{pid_heading, HeadingPid, PidGains};
use super::report::{annotations_for, ExperimentReport, PathDeviation, PolicySource, SpikeMark, TrackingErrors};
use super::telemetry::{telemetry_hash, TelemetryRecord};

pub const STRAIGHT_SPEED_RANGE: [f64; 2] = [0.5, 1.5];
pub const LATERAL_SPEED: f64 = 0.5;
pub const CIRCLE_VX: f64 = 0.4;
/// Radii with published hardware measurements.
pub const REFERENCE_RADII: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

/// Outdoor ground types of the straight-line experiments and the terrain kind
/// standing in for each.
pub const SWEEP_TERRAINS: [(&str, TerrainKind); 3] =
    [("paved", TerrainKind::Flat), ("grass", TerrainKind::FrictionPatch), ("gravel", TerrainKind::Discrete)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Protocol {
    StraightLine {
        speed: f64,
        terrain: TerrainKind,
    },
    Lateral {
        speed: f64,
    },
    Circle {
        radius: f64,
        vx: f64,
    },
    /// Waypoints are given in the start frame: x forward, y left, origin at
    /// the spawn position.
    Course {
        waypoints: Vec<[f64; 2]>,
        speed: f64,
    },
}

/// Rectangular slalom with 2 m legs and seven 90° turns.
pub fn default_course() -> Vec<[f64; 2]> {
    vec![[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [4.0, 2.0], [4.0, 0.0], [6.0, 0.0], [6.0, 2.0], [8.0, 2.0], [8.0, 0.0]]
}

/// Yaw rate of steady circular motion.
pub fn required_yaw_rate(vx: f64, radius: f64) -> f64 {
    vx / radius
}

impl Protocol {
    pub fn straight_line(speed: f64, terrain: TerrainKind) -> Result<Self> {
        let p = Protocol::StraightLine { speed, terrain };
        p.check()?;
        Ok(p)
    }

    pub fn lateral(speed: f64) -> Result<Self> {
        let p = Protocol::Lateral { speed };
        p.check()?;
        Ok(p)
    }

    pub fn circle(radius: f64) -> Result<Self> {
        let p = Protocol::Circle { radius, vx: CIRCLE_VX };
        p.check()?;
        Ok(p)
    }

    pub fn course(waypoints: Vec<[f64; 2]>, speed: f64) -> Result<Self> {
        let p = Protocol::Course { waypoints, speed };
        p.check()?;
        Ok(p)
    }

    pub fn id(&self) -> &'static str {
        match self {
            Protocol::StraightLine { .. } => "straight",
            Protocol::Lateral { .. } => "lateral",
            Protocol::Circle { .. } => "circle",
            Protocol::Course { .. } => "course",
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Protocol::StraightLine { speed, terrain } => format!("straight {speed} m/s on {}", terrain.as_str()),
            Protocol::Lateral { speed } => format!("lateral {speed} m/s"),
            Protocol::Circle { radius, vx } => format!("circle r = {radius} m at {vx} m/s"),
            Protocol::Course { waypoints, speed } => format!("course of {} waypoints at {speed} m/s", waypoints.len()),
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self {
            Protocol::StraightLine { speed, .. } => {
                let [lo, hi] = STRAIGHT_SPEED_RANGE;
                if !(lo..=hi).contains(speed) {
                    return bad(format!("straight-line speed {speed} m/s outside [{lo}, {hi}]"));
                }
            }
            Protocol::Lateral { speed } => {
                if !(speed.is_finite() && *speed != 0.0) {
                    return bad(format!("lateral speed {speed} must be finite and non-zero"));
                }
            }
            Protocol::Circle { radius, vx } => {
                if !(radius.is_finite() && *radius > 0.0) || !(vx.is_finite() && *vx > 0.0) {
                    return bad(format!("circle needs positive radius and speed, got {radius} and {vx}"));
                }
            }
            Protocol::Course { waypoints, speed } => {
                if waypoints.len() < 2 {
                    return bad("a course needs at least two waypoints".into());
                }
                if waypoints.windows(2).any(|w| w[0] == w[1]) {
                    return bad("consecutive course waypoints coincide".into());
                }
                if !(speed.is_finite() && *speed > 0.0) {
                    return bad(format!("course speed {speed} must be positive"));
                }
            }
        }
        Ok(())
    }

    /// True for circle radii without a hardware reference value.
    pub fn non_reference_radius(&self) -> bool {
        matches!(self, Protocol::Circle { radius, .. } if !REFERENCE_RADII.iter().any(|r| (r - radius).abs() < 1e-9))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Length of straight-line and lateral runs, s.
    pub duration_s: f64,
    /// Initial period left out of the aggregate window, s.
    pub settle_s: f64,
    pub speed_floor: f64,
    pub pid: PidGains,
    /// Bound on the commanded yaw rate, rad/s.
    pub max_yaw_rate: f64,
    /// Heading correction per metre of radial error on circles, rad/m.
    pub radial_gain: f64,
    /// Mean radial deviation above which a circle is flagged, m.
    pub max_radial_deviation: f64,
    pub laps: f64,
    /// Heading correction per metre of cross-track error on the course, rad/m.
    pub cross_track_gain: f64,
    /// A waypoint counts as reached within this distance, m.
    pub waypoint_tolerance: f64,
    pub course_timeout_s: f64,
    /// Half-width of the window searched for CoT peaks around a turn, s.
    pub spike_window_s: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            duration_s: 10.0,
            settle_s: 1.0,
            speed_floor: DEFAULT_SPEED_FLOOR,
            pid: PidGains::default(),
            max_yaw_rate: 2.0,
            radial_gain: 1.0,
            max_radial_deviation: 0.25,
            laps: 1.0,
            cross_track_gain: 1.0,
            waypoint_tolerance: 0.25,
            course_timeout_s: 90.0,
            spike_window_s: 1.0,
        }
    }
}

impl EvalConfig {
    pub fn check(&self) -> Result<()> {
        self.pid.check()?;
        let positive = [
            ("duration_s", self.duration_s),
            ("speed_floor", self.speed_floor),
            ("max_yaw_rate", self.max_yaw_rate),
            ("max_radial_deviation", self.max_radial_deviation),
            ("laps", self.laps),
            ("waypoint_tolerance", self.waypoint_tolerance),
            ("course_timeout_s", self.course_timeout_s),
            ("spike_window_s", self.spike_window_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.settle_s >= 0.0) || !(self.radial_gain >= 0.0) || !(self.cross_track_gain >= 0.0) {
            return Err(Error::Config("settle time and path gains must be non-negative".into()));
        }
        Ok(())
    }
}

/// Robot, environment and provenance of the policy under test.
#[derive(Clone, Debug)]
pub struct EvalSetup {
    pub tag: MorphologyTag,
    pub params: MorphologyParams,
    /// Base configuration; randomization and command sampling are switched off
    /// for every run.
    pub env: EnvConfig,
    pub seed: u64,
    pub source: PolicySource,
}

impl EvalSetup {
    pub fn new(tag: MorphologyTag, params: MorphologyParams, env: EnvConfig, seed: u64) -> Self {
        Self { tag, params, env, seed, source: PolicySource::default() }
    }

    /// Setup and actor restored from a checkpoint's configuration echo.
    pub fn from_checkpoint(ckpt: &Checkpoint, path: Option<String>, seed: u64) -> Result<(Self, ActorCritic<f32>)> {
        let echo = ckpt.echo()?;
        let model = ckpt.to_model()?;
        let setup = Self {
            tag: echo.morphology,
            params: echo.morphology_params.clone(),
            env: echo.env.clone(),
            seed,
            source: PolicySource {
                checkpoint: path,
                iteration: Some(ckpt.iteration),
                train_seed: Some(ckpt.seed),
                train: Some(serde_json::to_value(&echo)?),
            },
        };
        Ok((setup, model))
    }

    pub fn env_for(&self, protocol: &Protocol, duration_s: f64) -> EnvConfig {
        let mut c = self.env.clone();
        c.randomization = RandomizationConfig::disabled();
        c.command_resample_s = 0.0;
        c.spawn_yaw = [0.0, 0.0];
        c.episode_length_s = duration_s;
        if let Protocol::StraightLine { terrain, .. } = protocol {
            c.terrain.kind = *terrain;
        }
        c
    }
}

/// A finished run: the report and the per-tick log it was computed from.
#[derive(Clone, Debug)]
pub struct ProtocolRun {
    pub report: ExperimentReport,
    pub telemetry: Vec<TelemetryRecord>,
}

enum Tracker {
    Constant(Command),
    Circle { centre: Vector2<f64>, radius: f64, vx: f64 },
    Course { points: Vec<Vector2<f64>>, segment: usize, speed: f64, turns: Vec<f64>, done: bool },
}

fn planar(s: &SimState) -> Vector2<f64> {
    Vector2::new(s.base_position.x, s.base_position.y)
}

impl Tracker {
    fn new(protocol: &Protocol, start: &SimState) -> Self {
        let p0 = planar(start);
        let psi = start.heading();
        let (sn, cs) = psi.sin_cos();
        let to_world = |[x, y]: [f64; 2]| p0 + Vector2::new(cs * x - sn * y, sn * x + cs * y);
        match protocol {
            Protocol::StraightLine { speed, .. } => Tracker::Constant(Command::new(*speed, 0.0, 0.0)),
            Protocol::Lateral { speed } => Tracker::Constant(Command::new(0.0, *speed, 0.0)),
            Protocol::Circle { radius, vx } => {
                Tracker::Circle { centre: to_world([0.0, *radius]), radius: *radius, vx: *vx }
            }
            Protocol::Course { waypoints, speed } => Tracker::Course {
                points: waypoints.iter().map(|&w| to_world(w)).collect(),
                segment: 0,
                speed: *speed,
                turns: Vec::new(),
                done: false,
            },
        }
    }

    fn finished(&self) -> bool {
        matches!(self, Tracker::Course { done: true, .. })
    }

    /// Command for the coming tick; on the course this also advances the
    /// active segment and records turn times.
    fn command(&mut self, s: &SimState, time: f64, pid: &mut HeadingPid, cfg: &EvalConfig, dt: f64) -> Command {
        let yaw = |w: f64| w.clamp(-cfg.max_yaw_rate, cfg.max_yaw_rate);
        match self {
            Tracker::Constant(c) => *c,
            Tracker::Circle { centre, radius, vx } => {
                let (c, r) = (*centre, *radius);
                let target = |st: &SimState| {
                    let d = planar(st) - c;
                    d.y.atan2(d.x) + FRAC_PI_2 + (cfg.radial_gain * (d.norm() - r)).atan()
                };
                let w = required_yaw_rate(*vx, r) + pid_heading(pid, target, s, dt);
                Command::new(*vx, 0.0, yaw(w))
            }
            Tracker::Course { points, segment, speed, turns, done } => {
                let p = planar(s);
                while (p - points[*segment + 1]).norm() <= cfg.waypoint_tolerance {
                    if *segment + 2 == points.len() {
                        *done = true;
                        return Command::default();
                    }
                    *segment += 1;
                    turns.push(time);
                }
                let (a, b) = (points[*segment], points[*segment + 1]);
                let u = (b - a).normalize();
                let gain = cfg.cross_track_gain;
                let target = |st: &SimState| {
                    let d = planar(st) - a;
                    let cross = u.x * d.y - u.y * d.x;
                    u.y.atan2(u.x) - (gain * cross).atan()
                };
                let err = super::pid::wrap_angle(target(s) - s.heading());
                let w = pid_heading(pid, target, s, dt);
                // slow down while the heading is off, stopping beyond 90°
                Command::new(*speed * err.cos().max(0.0), 0.0, yaw(w))
            }
        }
    }

    /// Distance from the reference path, where one exists.
    fn deviation(&self, s: &SimState) -> Option<f64> {
        let p = planar(s);
        match self {
            Tracker::Constant(_) => None,
            Tracker::Circle { centre, radius, .. } => Some(((p - centre).norm() - radius).abs()),
            Tracker::Course { points, segment, .. } => {
                let (a, b) = (points[*segment], points[(*segment + 1).min(points.len() - 1)]);
                let u = (b - a).normalize();
                let d = p - a;
                Some((u.x * d.y - u.y * d.x).abs())
            }
        }
    }
}

/// Indices `i` with `s[i-1] < s[i] >= s[i+1]`.
pub fn local_maxima(series: &[f64]) -> Vec<usize> {
    (1..series.len().saturating_sub(1)).filter(|&i| series[i] > series[i - 1] && series[i] >= series[i + 1]).collect()
}

/// Local maxima of `series` (one value per tick of length `dt`, the first
/// ending at `dt`) within `window_s` of each turn time.
pub fn detect_spikes(series: &[f64], dt: f64, turn_times: &[f64], window_s: f64) -> Vec<SpikeMark> {
    let peaks = local_maxima(series);
    turn_times
        .iter()
        .map(|&t| SpikeMark {
            turn_time_s: t,
            peak_times_s: peaks
                .iter()
                .map(|&i| (i + 1) as f64 * dt)
                .filter(|pt| (pt - t).abs() <= window_s + 1e-9)
                .collect(),
        })
        .collect()
}

/// Runs one protocol to completion, a fall or its time limit.
pub fn run_protocol(
    policy: &mut dyn Policy,
    setup: &EvalSetup,
    protocol: &Protocol,
    cfg: &EvalConfig,
) -> Result<ProtocolRun> {
    protocol.check()?;
    cfg.check()?;
    let duration = match protocol {
        Protocol::StraightLine { .. } | Protocol::Lateral { .. } => cfg.duration_s,
        Protocol::Circle { radius, vx } => cfg.settle_s + cfg.laps * TAU * radius / vx,
        Protocol::Course { .. } => cfg.course_timeout_s,
    };
    let env_cfg = setup.env_for(protocol, duration);
    let robot = Arc::new(setup.tag.build(&setup.params)?);
    let mass = robot.total_mass();
    let terrain = Arc::new(env_cfg.terrain.build()?);
    let mut env = Env::new(robot, terrain, env_cfg.clone(), rng_for(setup.seed, "eval", 0))?;
    let dt = env_cfg.control_dt;
    let g = env_cfg.physics.gravity;

    let mut pid = HeadingPid::new(cfg.pid)?;
    let mut tracker = Tracker::new(protocol, env.state());
    let mut telemetry = Vec::new();
    let mut body_rates = Vec::new();
    let mut deviations = Vec::new();
    let mut flags = Vec::new();
    let mut complete = true;
    loop {
        let time = env.step_count() as f64 * dt;
        let cmd = tracker.command(env.state(), time, &mut pid, cfg, dt);
        if tracker.finished() {
            break;
        }
        env.set_command(Some(cmd));
        let action = policy.act(&env)?;
        let out = env.step(&action);
        let rec = TelemetryRecord::capture(&env);
        let v = env.base_velocity();
        body_rates.push([v.x, v.y, env.state().base_angular_velocity.z]);
        deviations.push(tracker.deviation(env.state()));
        telemetry.push(rec);
        if out.terminated {
            complete = false;
            let why = if out.diverged { "simulation diverged" } else { "fell" };
            flags.push(format!("incomplete: {why} at t = {:.2} s", telemetry.len() as f64 * dt));
            break;
        }
        if out.truncated {
            if matches!(tracker, Tracker::Course { .. }) {
                complete = false;
                flags.push(format!("incomplete: course not finished within {duration} s"));
            }
            break;
        }
    }

    let first = telemetry.iter().position(|r| r.time > cfg.settle_s + 1e-9).unwrap_or(telemetry.len());
    let window = &telemetry[first..];
    let aggregate = cot(window, mass, g, cfg.speed_floor)?;
    let n = window.len() as f64;
    let mean_speed = window.iter().map(|r| r.speed).sum::<f64>() / n;
    let mean_power = window.iter().map(TelemetryRecord::positive_power).sum::<f64>() / n;

    let mut tracking = TrackingErrors::default();
    for (r, b) in window.iter().zip(&body_rates[first..]) {
        tracking.vx_mae += (b[0] - r.command.vx).abs() / n;
        tracking.vy_mae += (b[1] - r.command.vy).abs() / n;
        tracking.wz_mae += (b[2] - r.command.wz).abs() / n;
        tracking.planar_rmse += ((b[0] - r.command.vx).powi(2) + (b[1] - r.command.vy).powi(2)) / n;
    }
    tracking.planar_rmse = tracking.planar_rmse.sqrt();

    let devs: Vec<f64> = deviations[first..].iter().flatten().copied().collect();
    let path = (!devs.is_empty()).then(|| PathDeviation {
        mean: devs.iter().sum::<f64>() / devs.len() as f64,
        max: devs.iter().copied().fold(0.0, f64::max),
        bound: matches!(protocol, Protocol::Circle { .. }).then_some(cfg.max_radial_deviation),
    });
    if let (Protocol::Circle { .. }, Some(p)) = (protocol, &path) {
        if p.mean > cfg.max_radial_deviation {
            flags.push(format!("path not held: mean radial deviation {:.3} m", p.mean));
        }
    }
    if protocol.non_reference_radius() {
        flags.push("non-reference radius: no hardware value".into());
    }

    let series = instantaneous_cot(&telemetry, mass, g, cfg.speed_floor);
    let turn_times = match &tracker {
        Tracker::Course { turns, .. } => turns.clone(),
        _ => Vec::new(),
    };
    let spikes = detect_spikes(&series, dt, &turn_times, cfg.spike_window_s);
    for s in spikes.iter().filter(|s| s.peak_times_s.is_empty()) {
        flags.push(format!("no CoT peak within {} s of the turn at {:.2} s", cfg.spike_window_s, s.turn_time_s));
    }

    let report = ExperimentReport {
        protocol_id: protocol.id().to_string(),
        protocol: protocol.clone(),
        morphology: setup.tag,
        total_mass: mass,
        seed: setup.seed,
        source: setup.source.clone(),
        build: BUILD_ID.to_string(),
        complete,
        flags,
        ticks: telemetry.len(),
        window_start_s: cfg.settle_s,
        cot: aggregate,
        mean_speed,
        mean_positive_power: mean_power,
        tracking,
        path,
        instantaneous_cot: series,
        turn_times_s: turn_times,
        spikes,
        annotations: annotations_for(protocol),
        telemetry_sha256: telemetry_hash(&telemetry),
        config: serde_json::json!({
            "morphology_params": setup.params,
            "env": env_cfg,
            "eval": cfg,
        }),
    };
    Ok(ProtocolRun { report, telemetry })
}

pub fn run_straight_line(
    policy: &mut dyn Policy,
    setup: &EvalSetup,
    terrain: TerrainKind,
    speed: f64,
    cfg: &EvalConfig,
) -> Result<ProtocolRun> {
    run_protocol(policy, setup, &Protocol::straight_line(speed, terrain)?, cfg)
}

pub fn run_lateral(policy: &mut dyn Policy, setup: &EvalSetup, speed: f64, cfg: &EvalConfig) -> Result<ProtocolRun> {
    run_protocol(policy, setup, &Protocol::lateral(speed)?, cfg)
}

pub fn run_circle(policy: &mut dyn Policy, setup: &EvalSetup, radius: f64, cfg: &EvalConfig) -> Result<ProtocolRun> {
    run_protocol(policy, setup, &Protocol::circle(radius)?, cfg)
}

pub fn run_course(
    policy: &mut dyn Policy,
    setup: &EvalSetup,
    waypoints: Vec<[f64; 2]>,
    speed: f64,
    cfg: &EvalConfig,
) -> Result<ProtocolRun> {
    run_protocol(policy, setup, &Protocol::course(waypoints, speed)?, cfg)
}

/// Straight-line runs over every speed and terrain kind, terrain-major.
pub fn straight_line_sweep(
    policy: &mut dyn Policy,
    setup: &EvalSetup,
    speeds: &[f64],
    terrains: &[TerrainKind],
    cfg: &EvalConfig,
) -> Result<Vec<ProtocolRun>> {
    let mut out = Vec::with_capacity(speeds.len() * terrains.len());
    for &t in terrains {
        for &s in speeds {
            out.push(run_straight_line(policy, setup, t, s, cfg)?);
        }
    }
    Ok(out)
}
