use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use advdistill::experiment::{
    cmd_baseline, cmd_compare, cmd_compress, cmd_eval, cmd_gradcheck, cmd_sweep_d, cmd_train_teacher, ExperimentConfig,
    Outcome, RunOptions, RunStatus,
};
use advdistill::gradcheck::SUITE_TOLERANCE;

#[derive(Parser)]
#[command(name = "advdistill", version, about = "Adversarial teacher-student network compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write into <out>/<command>, replacing earlier results.
    #[arg(long)]
    overwrite: bool,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train the teacher on labels.
    TrainTeacher(Common),
    /// Adversarial compression of the teacher into the student.
    Compress(Common),
    /// Train the student with the configured baseline loss.
    Baseline(Common),
    /// Test error, parameter count and FLOPs of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rank discriminator architectures by student test error.
    SweepD(Common),
    /// Teacher, student and every compression method on one task.
    Compare(Common),
    /// Check tape gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(path: &Option<PathBuf>) -> advdistill::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn report(outcome: &Outcome) -> ExitCode {
    for run in &outcome.runs {
        match run.status {
            RunStatus::Ok => println!(
                "{} seed {}: test error {}",
                run.method,
                run.seed,
                run.final_test_err.map_or("n/a".to_string(), |e| format!("{:.2}%", 100.0 * e))
            ),
            RunStatus::Aborted => {
                eprintln!("{} seed {}: aborted: {}", run.method, run.seed, run.error.as_deref().unwrap_or(""))
            }
        }
    }
    if let Some(table) = &outcome.table {
        print!("\n{}", table.markdown());
    }
    println!("results in {}", outcome.dir.display());
    if outcome.aborted() > 0 {
        eprintln!("{} of {} runs aborted", outcome.aborted(), outcome.runs.len());
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(command: Command) -> advdistill::Result<ExitCode> {
    let grid = |c: Common, f: fn(&ExperimentConfig, &RunOptions) -> advdistill::Result<Outcome>| {
        let cfg = load(&c.config)?;
        let opts = RunOptions { seed: c.seed, out: c.out, overwrite: c.overwrite, jobs: c.jobs };
        Ok(report(&f(&cfg, &opts)?))
    };
    match command {
        Command::TrainTeacher(c) => grid(c, cmd_train_teacher),
        Command::Compress(c) => grid(c, cmd_compress),
        Command::Baseline(c) => grid(c, cmd_baseline),
        Command::SweepD(c) => grid(c, cmd_sweep_d),
        Command::Compare(c) => grid(c, cmd_compare),
        Command::Eval { checkpoint, config } => {
            let r = cmd_eval(&load(&config)?, &checkpoint)?;
            println!("network: {}", r.network);
            println!("test error: {:.2}%", 100.0 * r.test_err);
            println!("params: {}", r.params);
            println!("flops: {}", r.flops);
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { seed } => {
            let r = cmd_gradcheck(seed)?;
            println!("{r}");
            Ok(if r.passed(SUITE_TOLERANCE) { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
