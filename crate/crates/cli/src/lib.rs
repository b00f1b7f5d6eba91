//! Command-line front end: training, protocol evaluation, deterministic
//! replay, report comparison and artifact inspection.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use wheelleg_core::env::{Env, EnvConfig};
use wheelleg_core::eval::{
    compare_sets, default_course, run_protocol, telemetry_hash, write_cot_vs_speed, write_telemetry_csv, EvalConfig,
    EvalSetup, ExperimentReport, Protocol, ProtocolRun, ScriptedWheelPolicy, TelemetryRecord, CIRCLE_VX, LATERAL_SPEED,
    SWEEP_TERRAINS,
};
use wheelleg_core::learn::{Checkpoint, DeterministicPolicy, Policy, TrainConfig, TrainSetup, Trainer, BUILD_ID};
use wheelleg_core::seed::derive_seed;
use wheelleg_core::{MorphologyParams, MorphologyTag, TerrainKind};

/// Environment variable holding the log filter, e.g. `debug`.
pub const LOG_ENV: &str = "WHEELLEG_LOG";

#[derive(Debug, Parser)]
#[command(name = "wheelleg", version, about = "Wheel-legged quadruped training and efficiency evaluation")]
pub struct Cli {
    /// Worker threads for environment stepping; 1 gives the strictest determinism.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy and write checkpoints plus a learning curve.
    Train(TrainArgs),
    /// Run one evaluation protocol and write its report and telemetry.
    Eval(EvalArgs),
    /// Roll out a checkpoint deterministically and print the telemetry hash.
    Replay(ReplayArgs),
    /// Pair reports of the same protocols and tabulate CoT ratios.
    Compare(CompareArgs),
    /// Summarize a checkpoint, report or morphology file.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Morphology {
    Flores,
    Baseline,
}

impl From<Morphology> for MorphologyTag {
    fn from(m: Morphology) -> Self {
        match m {
            Morphology::Flores => MorphologyTag::Flores,
            Morphology::Baseline => MorphologyTag::Baseline,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProtocolKind {
    /// Constant forward speed on one terrain.
    Straight,
    /// Straight-line runs over every speed and ground type.
    Sweep,
    Lateral,
    Circle,
    /// Waypoint course with seven 90 degree turns.
    Course,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub morphology: Morphology,
    /// Morphology parameter file; built-in estimates otherwise.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Environment configuration file.
    #[arg(long)]
    pub env_config: Option<PathBuf>,
    /// Training configuration file; flags below override it.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Flat-ground velocity-tracking task with tracking rewards only.
    #[arg(long, conflicts_with = "env_config")]
    pub toy: bool,
    #[arg(long)]
    pub envs: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Terrain kind: flat, slope, stairs, discrete or friction-patch.
    #[arg(long)]
    pub terrain: Option<TerrainKind>,
    #[arg(long)]
    pub no_randomization: bool,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub protocol: ProtocolKind,
    #[arg(long, required_unless_present = "scripted")]
    pub checkpoint: Option<PathBuf>,
    /// Drive the wheels with a hand-written controller instead of a checkpoint.
    #[arg(long, requires = "morphology")]
    pub scripted: bool,
    /// Morphology for scripted runs.
    #[arg(long, value_enum)]
    pub morphology: Option<Morphology>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Circle radius in metres.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Forward speed for straight and course runs, lateral speed for lateral runs.
    #[arg(long)]
    pub speed: Option<f64>,
    /// Terrain for straight-line runs.
    #[arg(long)]
    pub terrain: Option<TerrainKind>,
    /// Speeds of a sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.75, 1.0, 1.25, 1.5])]
    pub speeds: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Evaluation configuration file; flags below override it.
    #[arg(long)]
    pub eval_config: Option<PathBuf>,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub laps: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Control ticks to record; one full episode by default.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Telemetry CSV; a JSON description is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Report file or directory of reports.
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Checkpoint, report JSON or morphology TOML.
    #[arg(required_unless_present = "morphology")]
    pub path: Option<PathBuf>,
    /// Describe a built-in morphology.
    #[arg(long, value_enum)]
    pub morphology: Option<Morphology>,
}

/// Parses `argv` (program name first) and runs the command, returning the
/// process exit status. Usage errors exit with 2, runtime failures with 1.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            if e.is::<UsageError>() {
                2
            } else {
                1
            }
        }
    }
}

/// Invalid flag combination detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Joins the error chain, skipping causes already quoted by their parent.
pub fn error_chain(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.ends_with(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    msg
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

pub fn execute(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build().context("building the worker pool")?;
    pool.install(|| match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Replay(a) => replay(a),
        Command::Compare(a) => compare(a),
        Command::Inspect(a) => inspect(a),
    })
}

fn load_params(path: Option<&Path>) -> Result<MorphologyParams> {
    match path {
        Some(p) => Ok(MorphologyParams::load(p)?),
        None => Ok(MorphologyParams::default()),
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn train(a: TrainArgs) -> Result<()> {
    let tag = MorphologyTag::from(a.morphology);
    let params = load_params(a.params.as_deref())?;
    let mut env = match (&a.env_config, a.toy) {
        (Some(p), _) => EnvConfig::load(p)?,
        (None, true) => EnvConfig::toy_tracking(),
        (None, false) => EnvConfig::default(),
    };
    if let Some(t) = a.terrain {
        env.terrain.kind = t;
    }
    if a.no_randomization {
        env.randomization = wheelleg_core::env::RandomizationConfig::disabled();
    }
    let mut cfg = match &a.train_config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_toml_str(&text)?
        }
        None if a.toy => TrainConfig::toy(),
        None => TrainConfig::default(),
    };
    if let Some(n) = a.envs {
        cfg.num_envs = n;
    }
    if let Some(n) = a.iters {
        cfg.iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(k) = a.checkpoint_every {
        cfg.checkpoint_every = k;
    }
    let setup = TrainSetup::new(tag, params, env);
    let mut trainer = Trainer::new(&setup, cfg)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(
        &a.out.join("run.json"),
        &json!({ "build": BUILD_ID, "seed": trainer.config().seed, "echo": trainer.echo() }),
    )?;
    let total = trainer.config().iterations;
    let every = (total / 20).max(1);
    let outcome = trainer.run(Some(&a.out), |s| {
        if s.curve.iteration % every == 0 || s.curve.iteration == total {
            log::info!(
                "iteration {}/{}: reward {:.3}, falls {:.2}, lr {:.2e}",
                s.curve.iteration,
                total,
                s.curve.mean_reward,
                s.fall_fraction,
                s.update.learning_rate
            );
        }
    })?;
    for p in &outcome.checkpoints {
        println!("{}", p.display());
    }
    Ok(())
}

fn eval_config(a: &EvalArgs) -> Result<EvalConfig> {
    let mut cfg = match &a.eval_config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => EvalConfig::default(),
    };
    if let Some(d) = a.duration {
        cfg.duration_s = d;
    }
    if let Some(l) = a.laps {
        cfg.laps = l;
    }
    cfg.check()?;
    Ok(cfg)
}

fn protocols(a: &EvalArgs) -> Result<Vec<Protocol>> {
    let terrain = a.terrain.unwrap_or(TerrainKind::Flat);
    Ok(match a.protocol {
        ProtocolKind::Straight => {
            let Some(speed) = a.speed else { return Err(usage("--protocol straight needs --speed")) };
            vec![Protocol::straight_line(speed, terrain).map_err(|e| usage(format!("--speed: {e}")))?]
        }
        ProtocolKind::Sweep => {
            let terrains: Vec<TerrainKind> = match a.terrain {
                Some(t) => vec![t],
                None => SWEEP_TERRAINS.iter().map(|(_, t)| *t).collect(),
            };
            let mut v = Vec::new();
            for t in terrains {
                for &s in &a.speeds {
                    v.push(Protocol::straight_line(s, t).map_err(|e| usage(format!("--speeds: {e}")))?);
                }
            }
            v
        }
        ProtocolKind::Lateral => {
            vec![Protocol::lateral(a.speed.unwrap_or(LATERAL_SPEED)).map_err(|e| usage(format!("--speed: {e}")))?]
        }
        ProtocolKind::Circle => {
            let Some(r) = a.radius else { return Err(usage("--protocol circle needs --radius")) };
            vec![Protocol::circle(r).map_err(|e| usage(format!("--radius: {e}")))?]
        }
        ProtocolKind::Course => vec![Protocol::course(default_course(), a.speed.unwrap_or(CIRCLE_VX))
            .map_err(|e| usage(format!("--speed: {e}")))?],
    })
}

/// File stem naming one run, e.g. `circle_r0.5_seed3`.
pub fn run_stem(p: &Protocol, seed: u64) -> String {
    let detail = match p {
        Protocol::StraightLine { speed, terrain } => format!("_{}_v{speed}", terrain.as_str()),
        Protocol::Lateral { speed } => format!("_v{speed}"),
        Protocol::Circle { radius, .. } => format!("_r{radius}"),
        Protocol::Course { speed, .. } => format!("_v{speed}"),
    };
    format!("{}{detail}_seed{seed}", p.id())
}

fn save_run(out: &Path, run: &ProtocolRun, dt: f64) -> Result<PathBuf> {
    let stem = run_stem(&run.report.protocol, run.report.seed);
    let report = out.join(format!("{stem}.report.json"));
    run.report.save(&report)?;
    let tel = out.join(format!("{stem}.telemetry.csv"));
    let f = std::fs::File::create(&tel).with_context(|| format!("creating {}", tel.display()))?;
    write_telemetry_csv(&run.telemetry, std::io::BufWriter::new(f))?;
    let series = out.join(format!("{stem}.cot.csv"));
    let f = std::fs::File::create(&series).with_context(|| format!("creating {}", series.display()))?;
    run.report.write_cot_series(std::io::BufWriter::new(f), dt)?;
    Ok(report)
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = eval_config(&a)?;
    let protocols = protocols(&a)?;
    let (setup, mut policy): (EvalSetup, Box<dyn Policy>) = match (&a.checkpoint, a.scripted) {
        (Some(path), false) => {
            let ckpt = Checkpoint::load(path).context("--checkpoint")?;
            let (setup, model) = EvalSetup::from_checkpoint(&ckpt, Some(path.display().to_string()), a.seed)?;
            (setup, Box::new(DeterministicPolicy::new(model)))
        }
        (_, true) => {
            let tag = MorphologyTag::from(a.morphology.expect("clap requires --morphology"));
            let params = load_params(a.params.as_deref())?;
            let env = EnvConfig::default();
            let policy = ScriptedWheelPolicy::new(tag, &params, &env);
            (EvalSetup::new(tag, params, env, a.seed), Box::new(policy))
        }
        (None, false) => return Err(usage("--checkpoint is required unless --scripted is given")),
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let dt = setup.env.control_dt;
    let mut reports = Vec::new();
    for p in &protocols {
        log::info!("running {}", p.describe());
        let run = run_protocol(policy.as_mut(), &setup, p, &cfg)?;
        for f in &run.report.flags {
            log::warn!("{}: {f}", p.describe());
        }
        let path = save_run(&a.out, &run, dt)?;
        println!(
            "{}\tcot {:.4}\t{}",
            path.display(),
            run.report.cot,
            if run.report.complete { "complete" } else { "incomplete" }
        );
        reports.push(run.report);
    }
    if a.protocol == ProtocolKind::Sweep {
        let p = a.out.join(format!("sweep_seed{}.cot_vs_speed.csv", a.seed));
        let f = std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        write_cot_vs_speed(&reports, std::io::BufWriter::new(f))?;
        println!("{}", p.display());
    }
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint).context("--checkpoint")?;
    let echo = ckpt.echo()?;
    let setup = TrainSetup::new(echo.morphology, echo.morphology_params.clone(), echo.env.clone());
    let env_seed = derive_seed(a.seed, "replay", 0);
    let mut env = Env::seeded(setup.robot()?, setup.terrain()?, setup.env.clone(), env_seed)?;
    let mut policy = DeterministicPolicy::new(ckpt.to_model()?);
    let steps = a.steps.unwrap_or_else(|| setup.env.episode_steps());
    let mut telemetry: Vec<TelemetryRecord> = Vec::with_capacity(steps);
    for _ in 0..steps {
        let action = policy.act(&env)?;
        let out = env.step(&action);
        telemetry.push(TelemetryRecord::capture(&env));
        if out.done() {
            break;
        }
    }
    let hash = telemetry_hash(&telemetry);
    if let Some(path) = &a.out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_telemetry_csv(&telemetry, std::io::BufWriter::new(f))?;
        write_json(
            &path.with_extension("json"),
            &json!({
                "build": BUILD_ID,
                "seed": a.seed,
                "env_seed": env_seed,
                "checkpoint": a.checkpoint.display().to_string(),
                "iteration": ckpt.iteration,
                "ticks": telemetry.len(),
                "telemetry_sha256": hash,
                "echo": echo,
            }),
        )?;
    }
    println!("{hash}");
    Ok(())
}

fn load_reports(path: &Path) -> Result<Vec<ExperimentReport>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".report.json"))
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("no *.report.json files in {}", path.display());
        }
        files.iter().map(|f| Ok(ExperimentReport::load(f)?)).collect()
    } else {
        Ok(vec![ExperimentReport::load(path)?])
    }
}

fn compare(a: CompareArgs) -> Result<()> {
    let ra = load_reports(&a.a)?;
    let rb = load_reports(&a.b)?;
    let cmp = compare_sets(&ra, &rb)?;
    print!("{}", cmp.to_table());
    if let Some(out) = &a.out {
        write_json(
            out,
            &json!({
                "build": BUILD_ID,
                "a": a.a.display().to_string(),
                "b": a.b.display().to_string(),
                "seeds_a": ra.iter().map(|r| r.seed).collect::<Vec<_>>(),
                "seeds_b": rb.iter().map(|r| r.seed).collect::<Vec<_>>(),
                "comparison": cmp,
            }),
        )?;
    }
    Ok(())
}

fn describe_model(tag: MorphologyTag, params: &MorphologyParams) -> Result<Value> {
    let model = tag.build(params)?;
    Ok(json!({
        "morphology": tag.as_str(),
        "total_mass": model.total_mass(),
        "links": model.links.len(),
        "joints": model.joint_order(),
        "params": params,
    }))
}

fn inspect(a: InspectArgs) -> Result<()> {
    let summary = match (&a.path, a.morphology) {
        (None, Some(m)) => describe_model(m.into(), &MorphologyParams::default())?,
        (Some(path), m) => {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            if bytes.starts_with(wheelleg_core::learn::CHECKPOINT_MAGIC) {
                let ckpt = Checkpoint::from_bytes(&bytes)?;
                let params: usize = ckpt.tensors.iter().map(|t| t.data.len()).sum();
                json!({
                    "kind": "checkpoint",
                    "morphology": ckpt.morphology.as_str(),
                    "seed": ckpt.seed,
                    "iteration": ckpt.iteration,
                    "parameters": params,
                    "tensors": ckpt.tensors.iter().map(|t| format!("{} {}x{}", t.name, t.rows, t.cols)).collect::<Vec<_>>(),
                    "echo": ckpt.echo()?,
                })
            } else if path.extension().is_some_and(|e| e == "toml") {
                let params = MorphologyParams::load(path)?;
                describe_model(m.map_or(MorphologyTag::Flores, Into::into), &params)?
            } else {
                let r = ExperimentReport::load(path)?;
                json!({
                    "kind": "report",
                    "protocol": r.protocol.describe(),
                    "morphology": r.morphology.as_str(),
                    "seed": r.seed,
                    "build": r.build,
                    "complete": r.complete,
                    "flags": r.flags,
                    "cot": r.cot,
                    "mean_speed": r.mean_speed,
                    "ticks": r.ticks,
                    "annotations": r.annotations,
                    "telemetry_sha256": r.telemetry_sha256,
                })
            }
        }
        (None, None) => bail!("inspect needs a path or --morphology"),
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
