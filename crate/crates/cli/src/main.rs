//! `jpu`: checkers, cost model, demos and benchmark behind one binary.
//!
//! Every subcommand prints one JSON document (`"schema": 1`) to stdout, or to
//! `--out`. Exit codes: 0 success, 1 failed check or runtime error, 2 usage
//! error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jpu_core::defaults;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Parser)]
#[command(name = "jpu", version, about = "Stage identities, cost model, joint upsampling and JPU studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Write the JSON document to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print a short human-readable summary to stdout instead of JSON.
    #[arg(long, global = true)]
    pretty: bool,
    /// Drop wall-clock fields so repeated runs are byte-identical.
    #[arg(long, global = true)]
    no_timing: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the stage-identity equivalence suite.
    Equiv(EquivArgs),
    /// Analytic MAC / parameter / activation cost of a ResNet backbone.
    Cost(CostArgs),
    /// Plant a random affine map and recover it by joint upsampling.
    JointupDemo(JointupArgs),
    /// Train bilinear and JPU students on the synthetic teacher task.
    TrainDemo(TrainArgs),
    /// Time dilated versus stride+JPU forward passes.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DTypeArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EquivArgs {
    /// Random cases per identity family.
    #[arg(long, default_value_t = defaults::EQUIV_CASES)]
    pub cases: usize,
    #[arg(long, default_value_t = defaults::EQUIV_SEED)]
    pub seed: u64,
    /// Element type; selects the default tolerance (1e-12 for f64, 1e-5 for f32).
    #[arg(long, value_enum, default_value_t = DTypeArg::F64)]
    pub dtype: DTypeArg,
    /// Override the max-abs tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CostModeArg {
    /// Output stride 8 with dilated conv4/conv5.
    Dilated,
    /// Output stride 32 plus JPU.
    Jpu,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CostArgs {
    /// Backbone preset: resnet50 or resnet101.
    #[arg(long, default_value = "resnet101")]
    pub backbone: String,
    #[arg(long, value_enum, default_value_t = CostModeArg::Dilated)]
    pub mode: CostModeArg,
    /// Input height and width.
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [defaults::COST_INPUT.0, defaults::COST_INPUT.1])]
    pub input: Vec<usize>,
    /// JPU width (its output width is four times this).
    #[arg(long, default_value_t = defaults::COST_JPU_WIDTH)]
    pub jpu_width: usize,
    /// Report both modes and the dilated / jpu ratio table.
    #[arg(long)]
    pub compare: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct JointupArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = defaults::TRAIN_SEEDS)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = defaults::TRAIN_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = defaults::TRAIN_LR)]
    pub lr: f64,
    /// JPU width of the student.
    #[arg(long, default_value_t = defaults::EXPERIMENT_WIDTH)]
    pub width: usize,
    /// Square input size (multiple of 32).
    #[arg(long, default_value_t = defaults::TRAIN_INPUT.0)]
    pub input: usize,
    /// Images per seed; the last quarter is held out.
    #[arg(long, default_value_t = defaults::TRAIN_SAMPLES)]
    pub samples: usize,
    /// Directory for `.jt` snapshots of the trained JPU students.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value_t = defaults::BENCH_REPEATS)]
    pub repeats: usize,
    #[arg(long, default_value_t = defaults::BENCH_WARMUP)]
    pub warmup: usize,
    /// Input height and width.
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [defaults::BENCH_INPUT.0, defaults::BENCH_INPUT.1])]
    pub input: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Result of one subcommand.
pub struct Outcome {
    pub report: Value,
    pub summary: String,
    pub ok: bool,
}

/// Keys holding wall-clock measurements, removed by `--no-timing`.
const TIMING_KEYS: [&str; 2] = ["speedup", "stride_jpu_faster"];

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("_ms") && !TIMING_KEYS.contains(&k.as_str()));
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn run(cli: &Cli) -> Result<Outcome, jpu_core::Error> {
    let start = std::time::Instant::now();
    let (name, mut out) = match &cli.command {
        Command::Equiv(a) => ("equiv", commands::equiv(a)?),
        Command::Cost(a) => ("cost", commands::cost(a)?),
        Command::JointupDemo(a) => ("jointup-demo", commands::jointup_demo(a)?),
        Command::TrainDemo(a) => ("train-demo", commands::train_demo(a)?),
        Command::Bench(a) => ("bench", commands::bench(a)?),
    };
    let mut doc = serde_json::json!({
        "schema": 1,
        "command": name,
        "ok": out.ok,
        "elapsed_ms": start.elapsed().as_secs_f64() * 1e3,
    });
    if let (Value::Object(d), Value::Object(r)) = (&mut doc, std::mem::take(&mut out.report)) {
        d.extend(r);
    }
    if cli.no_timing {
        strip_timing(&mut doc);
    }
    out.report = doc;
    Ok(out)
}

fn exit_code(e: &jpu_core::Error) -> u8 {
    use jpu_core::Error::*;
    match e {
        UnknownPreset(_) | InvalidConfig(_) | InvalidRange { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match run(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("jpu: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let text = serde_json::to_string_pretty(&out.report).expect("reports serialize") + "\n";
    if let Some(path) = &cli.out {
        if let Err(e) = std::fs::write(path, &text) {
            eprintln!("jpu: {}: {e}", path.display());
            return ExitCode::from(1);
        }
    } else if !cli.pretty {
        print!("{text}");
    }
    if cli.pretty {
        println!("{}", out.summary);
    }
    if out.ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
