//! Command-line front end: configuration loading, trajectory and metrics
//! emission, and the four subcommands.
//!
//! Configuration is layered: built-in defaults, then a flat `key = value`
//! file given with `--config`, then `--set key=value` overrides, then the
//! dedicated flags. Unknown keys are rejected rather than ignored.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::scenarios::{
    bench_steppers, build_scene, run_mpc_trial, run_simulation, sample_task, MpcRunConfig, Scene,
    SceneOptions, SimTrace, StepperChoice, TaskKind,
};
use crate::validate;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "cfstep",
    about = "Closed-form multi-contact stepping, QP baseline, and contact-implicit MPC"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll a scene forward under its default control and emit a CSV trajectory.
    Simulate(RunArgs),
    /// Run seeded closed-loop MPC trials and emit metrics.
    Mpc(RunArgs),
    /// Re-solve a recorded rollout with both steppers and compare times.
    Bench(RunArgs),
    /// Run the randomized cross-validation suites.
    Validate(RunArgs),
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Scene name: sliding_cube, falling_cube, sphere_two_planes,
    /// push_boxes, or fingertips_box.
    #[arg(long)]
    pub scene: Option<String>,
    /// Velocity solver: cf, cf_extended, or qp.
    #[arg(long)]
    pub stepper: Option<String>,
    /// Number of simulation steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Trial seeds, comma separated or a `start..end` range.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Inline override, repeatable: --set mpc.horizon=6
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Task family for mpc: rotation, flipping, in_air, trifinger_like.
    #[arg(long)]
    pub task: Option<String>,
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scene: String,
    pub stepper: StepperChoice,
    pub task: TaskKind,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub scene_options: SceneOptions,
    pub mpc: MpcRunConfig,
    pub bench_repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: "sliding_cube".into(),
            stepper: StepperChoice::Cf,
            task: TaskKind::Rotation,
            steps: 500,
            seeds: vec![0],
            scene_options: SceneOptions::default(),
            mpc: MpcRunConfig::default(),
            bench_repeats: 3,
        }
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key '{key}' expects a number, got '{value}'")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key '{key}' expects an integer, got '{value}'")))
}

/// Parses `0,3,7` or `0..10` (end exclusive).
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let start: u64 = a
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad seed range start '{a}'")))?;
        let end: u64 = b
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad seed range end '{b}'")))?;
        if end <= start {
            return Err(Error::Config(format!("empty seed range '{text}'")));
        }
        return Ok((start..end).collect());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad seed '{}'", s.trim())))
        })
        .collect()
}

impl RunConfig {
    /// Applies one configuration entry. Unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "scene" => self.scene = value.to_string(),
            "stepper" => self.stepper = value.parse()?,
            "task" => self.task = value.parse()?,
            "steps" => self.steps = parse_usize(key, value)?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "bench.repeats" => self.bench_repeats = parse_usize(key, value)?,
            "scene.n_cubes" => self.scene_options.n_cubes = parse_usize(key, value)?,
            "scene.k" => self.scene_options.k = Some(parse_f64(key, value)?),
            "scene.d" => self.scene_options.d = Some(parse_f64(key, value)?),
            "scene.h" => self.scene_options.h = Some(parse_f64(key, value)?),
            "scene.margin" => self.scene_options.margin = Some(parse_f64(key, value)?),
            "scene.mu" => self.scene_options.mu = Some(parse_f64(key, value)?),
            "mpc.horizon" => self.mpc.horizon = parse_usize(key, value)?,
            "mpc.k_model" => self.mpc.k_model = parse_f64(key, value)?,
            "mpc.gamma" => self.mpc.gamma = parse_f64(key, value)?,
            "mpc.max_iters" => self.mpc.optimize.max_iters = parse_usize(key, value)?,
            "mpc.initial_step" => self.mpc.optimize.initial_step = parse_f64(key, value)?,
            "mpc.u_bound" => {
                let b = parse_f64(key, value)?;
                if !(b > 0.0) {
                    return Err(Error::Config(format!("mpc.u_bound must be positive, got {b}")));
                }
                self.mpc.optimize.u_min = -b;
                self.mpc.optimize.u_max = b;
            }
            "mpc.w_contact" => self.mpc.costs.w_contact = parse_f64(key, value)?,
            "mpc.w_grasp" => self.mpc.costs.w_grasp = parse_f64(key, value)?,
            "mpc.w_control" => self.mpc.costs.w_control = parse_f64(key, value)?,
            "mpc.w_final_pos" => self.mpc.costs.w_final_pos = parse_f64(key, value)?,
            "mpc.w_final_quat" => self.mpc.costs.w_final_quat = parse_f64(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown configuration key '{other}'")));
            }
        }
        Ok(())
    }

    /// Loads `key = value` lines; `#` starts a comment, blank lines ignored.
    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key = value", path.display(), lineno + 1))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Resolves defaults, config file, inline overrides, then flags.
    pub fn from_args(args: &RunArgs) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = &args.config {
            cfg.apply_file(path)?;
        }
        for entry in &args.overrides {
            let (key, value) = entry.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects key=value, got '{entry}'"))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        if let Some(scene) = &args.scene {
            cfg.scene = scene.clone();
        }
        if let Some(stepper) = &args.stepper {
            cfg.stepper = stepper.parse()?;
        }
        if let Some(task) = &args.task {
            cfg.task = task.parse()?;
        }
        if let Some(steps) = args.steps {
            cfg.steps = steps;
        }
        if let Some(seeds) = &args.seeds {
            cfg.seeds = parse_seeds(seeds)?;
        }
        if cfg.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(cfg)
    }

    pub fn build_scene(&self) -> Result<Scene> {
        build_scene(&self.scene, &self.scene_options)
    }
}

fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Writes one row per executed step: step index, time, post-step state
/// (position then scalar-first quaternion per object, then robot
/// coordinates), the applied control, and the solve time in milliseconds.
pub fn emit_trajectory<W: Write>(scene: &Scene, trace: &SimTrace, mut w: W) -> Result<()> {
    let mut header = vec!["step".to_string(), "time_s".to_string()];
    for o in 0..scene.layout.n_objects {
        for c in ["px", "py", "pz", "qw", "qx", "qy", "qz"] {
            header.push(format!("obj{o}_{c}"));
        }
    }
    for r in 0..scene.layout.n_robot {
        header.push(format!("r{r}"));
    }
    for u in 0..scene.n_controls() {
        header.push(format!("u{u}"));
    }
    header.push("solve_ms".into());
    writeln!(w, "{}", header.join(","))?;

    for step in 0..trace.controls.len() {
        let mut row = vec![step.to_string(), fmt9((step as f64 + 1.0) * trace.h)];
        let state = &trace.states[step + 1];
        for flat in state.to_flat().iter() {
            row.push(fmt9(*flat));
        }
        for u in trace.controls[step].iter() {
            row.push(fmt9(*u));
        }
        row.push(fmt9(trace.solve_seconds[step] * 1e3));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct TrialMetrics {
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    pub final_pos_err: f64,
    pub final_quat_err: f64,
    pub mean_solve_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct MpcMetrics {
    pub scene: String,
    pub task: String,
    pub trials: Vec<TrialMetrics>,
    pub success_rate: f64,
    pub mean_final_pos_err: f64,
    pub std_final_pos_err: f64,
    pub mean_final_quat_err: f64,
    pub std_final_quat_err: f64,
    pub mean_solve_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct BenchMetrics {
    pub scene: String,
    pub steps: usize,
    pub repeats: usize,
    pub mean_contact_rows: f64,
    pub cf_mean_ms: f64,
    pub cf_min_ms: f64,
    pub qp_mean_ms: f64,
    pub qp_min_ms: f64,
    pub speedup: f64,
}

#[derive(Debug, Serialize)]
pub struct SuiteMetrics {
    pub name: String,
    pub cases: usize,
    pub worst: f64,
    pub tol: f64,
    pub passed: bool,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}

fn task_name(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Rotation => "rotation",
        TaskKind::Flipping => "flipping",
        TaskKind::InAir => "in_air",
        TaskKind::TrifingerLike => "trifinger_like",
    }
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

/// Runs one subcommand; returns the process exit code.
pub fn execute(command: &Command) -> Result<i32> {
    match command {
        Command::Simulate(args) => {
            let cfg = RunConfig::from_args(args)?;
            let scene = cfg.build_scene()?;
            let trace = run_simulation(&scene, cfg.stepper, cfg.steps)?;
            let mut csv = Vec::new();
            emit_trajectory(&scene, &trace, &mut csv)?;
            write_output(&args.out, &String::from_utf8_lossy(&csv))?;
            eprintln!(
                "simulated {} for {} steps with {} ({} contact rows mean, {:.4} ms mean solve)",
                scene.name,
                cfg.steps,
                cfg.stepper,
                trace.contact_rows.iter().sum::<usize>() as f64 / cfg.steps.max(1) as f64,
                trace.solve_seconds.iter().sum::<f64>() * 1e3 / cfg.steps.max(1) as f64,
            );
            Ok(0)
        }
        Command::Mpc(args) => {
            let cfg = RunConfig::from_args(args)?;
            let scene = cfg.build_scene()?;
            let mut trials = Vec::new();
            for &seed in &cfg.seeds {
                let (initial, task) = sample_task(&scene, cfg.task, seed)?;
                let record = run_mpc_trial(&scene, &initial, &task, &cfg.mpc)?;
                eprintln!(
                    "seed {seed}: {} after {} steps, pos err {:.4}, quat err {:.4}, {:.2} ms/step",
                    if record.success { "success" } else { "no success" },
                    record.steps,
                    record.final_pos_err,
                    record.final_quat_err,
                    record.mean_solve_ms,
                );
                trials.push(TrialMetrics {
                    seed,
                    success: record.success,
                    steps: record.steps,
                    final_pos_err: record.final_pos_err,
                    final_quat_err: record.final_quat_err,
                    mean_solve_ms: record.mean_solve_ms,
                });
            }
            let pos: Vec<f64> = trials.iter().map(|t| t.final_pos_err).collect();
            let quat: Vec<f64> = trials.iter().map(|t| t.final_quat_err).collect();
            let solve: Vec<f64> = trials.iter().map(|t| t.mean_solve_ms).collect();
            let (mean_pos, std_pos) = mean_std(&pos);
            let (mean_quat, std_quat) = mean_std(&quat);
            let metrics = MpcMetrics {
                scene: scene.name.clone(),
                task: task_name(cfg.task).into(),
                success_rate: trials.iter().filter(|t| t.success).count() as f64
                    / trials.len() as f64,
                trials,
                mean_final_pos_err: mean_pos,
                std_final_pos_err: std_pos,
                mean_final_quat_err: mean_quat,
                std_final_quat_err: std_quat,
                mean_solve_ms: mean_std(&solve).0,
            };
            write_output(&args.out, &format!("{}\n", serde_json::to_string_pretty(&metrics)?))?;
            Ok(0)
        }
        Command::Bench(args) => {
            let mut cfg = RunConfig::from_args(args)?;
            if args.scene.is_none() && args.config.is_none() && cfg.scene == "sliding_cube" {
                // benchmark default is the many-contact pushing scene
                cfg.scene = "push_boxes".into();
            }
            if args.steps.is_none() {
                cfg.steps = 50;
            }
            let scene = cfg.build_scene()?;
            let report = bench_steppers(&scene, cfg.steps, cfg.bench_repeats)?;
            let metrics = BenchMetrics {
                scene: scene.name.clone(),
                steps: report.steps,
                repeats: cfg.bench_repeats,
                mean_contact_rows: report.mean_rows,
                cf_mean_ms: report.cf_mean_ms,
                cf_min_ms: report.cf_min_ms,
                qp_mean_ms: report.qp_mean_ms,
                qp_min_ms: report.qp_min_ms,
                speedup: report.speedup,
            };
            eprintln!(
                "{}: cf {:.4} ms, qp {:.4} ms over {} rows mean, speedup {:.1}x",
                scene.name, report.cf_mean_ms, report.qp_mean_ms, report.mean_rows, report.speedup,
            );
            write_output(&args.out, &format!("{}\n", serde_json::to_string_pretty(&metrics)?))?;
            Ok(0)
        }
        Command::Validate(args) => {
            // accept shared flags for uniformity; validation is self-contained
            let _ = RunConfig::from_args(args)?;
            let reports = validate::run_all()?;
            let mut all_passed = true;
            let mut lines = String::new();
            for r in &reports {
                println!("{r}");
                lines.push_str(&format!("{r}\n"));
                all_passed &= r.passed;
            }
            if let Some(path) = &args.out {
                let metrics: Vec<SuiteMetrics> = reports
                    .iter()
                    .map(|r| SuiteMetrics {
                        name: r.name.clone(),
                        cases: r.cases,
                        worst: r.worst,
                        tol: r.tol,
                        passed: r.passed,
                    })
                    .collect();
                std::fs::write(path, serde_json::to_string_pretty(&metrics)?)?;
            }
            Ok(if all_passed { 0 } else { 1 })
        }
    }
}

/// Maps an error to the conventional exit code: configuration and argument
/// problems exit 2, runtime failures exit 1.
pub fn error_exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}
