//! Config-driven experiments behind the `advdistill` binary.
//!
//! Every command reads an [`ExperimentConfig`], writes into a fresh
//! timestamped directory under the output root (or a fixed one with
//! `overwrite`), and leaves per run a `summary.json` echoing the resolved
//! configuration, a `metrics.csv`, and a checkpoint. A run that aborts keeps
//! its summary with `status = "aborted"`; the others carry on.

mod config;
mod table;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{config_err, dim_err, Error, Result};
use crate::gradcheck::{oracle_suite, SuiteReport, SUITE_NETWORKS, SUITE_ROUNDS};
use crate::nn::{load_checkpoint, make_discriminator, save_checkpoint, Network, NetworkSpec};
use crate::train::{
    d_input_width, error_rate, run_baseline, run_compression, train_teacher, BaselineConfig, BaselineKind,
    CompressionConfig, LoopConfig, RunMetrics,
};

pub use config::{
    CompareConfig, DatasetConfig, DatasetKind, ExperimentConfig, GridConfig, Method, NetworkChoice, StudentConfig, SweepConfig,
    TeacherConfig,
};
pub use table::{median, Table, TableRow};

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the configured seed list with this single seed.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Write into `<out>/<command>`, replacing earlier results.
    pub overwrite: bool,
    /// Worker threads for independent runs; 0 means 1.
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Aborted,
}

/// Contents of `summary.json`. Contains nothing run-time dependent, so a
/// rerun with the same seed reproduces it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub method: String,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub network: String,
    pub params: u64,
    /// Forward-pass FLOPs per sample.
    pub flops: u64,
    pub teacher_params: Option<u64>,
    pub teacher_flops: Option<u64>,
    pub discriminator: Option<String>,
    pub discriminator_params: Option<u64>,
    pub final_train_err: Option<f64>,
    pub final_test_err: Option<f64>,
    pub final_d_accuracy: Option<f64>,
    pub config: ExperimentConfig,
}

/// Result of one command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub runs: Vec<RunSummary>,
    pub table: Option<Table>,
}

impl Outcome {
    pub fn aborted(&self) -> usize {
        self.runs.iter().filter(|r| r.status == RunStatus::Aborted).count()
    }
}

/// Output of `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub network: String,
    pub test_err: f64,
    pub params: u64,
    pub flops: u64,
}

fn apply(cfg: &ExperimentConfig, opts: &RunOptions) -> ExperimentConfig {
    let mut cfg = cfg.clone();
    if let Some(s) = opts.seed {
        cfg.seeds = vec![s];
    }
    if let Some(out) = &opts.out {
        cfg.out_dir = out.clone();
    }
    cfg
}

/// `<root>/<command>` when overwriting, otherwise a new
/// `<root>/<command>-<unix seconds>[-n]`.
pub fn prepare_dir(root: &Path, command: &str, overwrite: bool) -> Result<PathBuf> {
    let dir = if overwrite {
        let dir = root.join(command);
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        dir
    } else {
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or_default();
        let base = root.join(format!("{command}-{stamp}"));
        let mut dir = base.clone();
        let mut n = 1;
        while dir.exists() {
            dir = PathBuf::from(format!("{}-{n}", base.display()));
            n += 1;
        }
        dir
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn par_map<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

struct Context {
    cfg: ExperimentConfig,
    train: Dataset,
    test: Dataset,
    teacher_spec: NetworkSpec,
    student_spec: NetworkSpec,
}

impl Context {
    fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let (train, test) = cfg.dataset.load()?;
        let shape = train.sample_shape().to_vec();
        let teacher_spec = cfg.teacher.network.resolve(&shape, train.classes())?;
        let student_spec = cfg.student.network.resolve(&shape, train.classes())?;
        Ok(Self { cfg, train, test, teacher_spec, student_spec })
    }

    fn loop_for(&self, seed: u64) -> LoopConfig {
        LoopConfig { seed, ..self.cfg.training.clone() }
    }
}

#[derive(Debug, Clone)]
struct TeacherRun {
    network: Network,
    metrics: RunMetrics,
}

fn check_shape(net: &Network, ds: &Dataset) -> Result<()> {
    if net.spec().input_shape[..] != *ds.sample_shape() {
        return dim_err(format!(
            "checkpoint {} expects samples {:?}, dataset has {:?}",
            net.spec().name,
            net.spec().input_shape,
            ds.sample_shape()
        ));
    }
    Ok(())
}

fn obtain_teacher(ctx: &Context, seed: u64) -> Result<TeacherRun> {
    if let Some(path) = &ctx.cfg.teacher.checkpoint {
        let network = load_checkpoint(path)?;
        check_shape(&network, &ctx.train)?;
        let metrics = RunMetrics {
            final_train_err: error_rate(&network, &ctx.train)?,
            final_test_err: Some(error_rate(&network, &ctx.test)?),
            ..Default::default()
        };
        return Ok(TeacherRun { network, metrics });
    }
    let lp = LoopConfig { seed, ..ctx.cfg.teacher.training.clone() };
    let t = train_teacher(ctx.teacher_spec.clone(), &ctx.train, Some(&ctx.test), &ctx.cfg.teacher.optimizer, &lp)?;
    Ok(TeacherRun { network: t.network, metrics: t.metrics })
}

/// Teachers keyed by run seed; a single shared teacher sits under every seed.
fn teachers(ctx: &Context, seeds: &[u64], jobs: usize) -> Result<BTreeMap<u64, std::result::Result<TeacherRun, String>>> {
    if ctx.cfg.teacher.per_seed && ctx.cfg.teacher.checkpoint.is_none() {
        let runs = par_map(jobs, seeds, |&s| obtain_teacher(ctx, s).map_err(|e| e.to_string()))?;
        Ok(seeds.iter().copied().zip(runs).collect())
    } else {
        let shared = obtain_teacher(ctx, ctx.cfg.teacher.training.seed).map_err(|e| e.to_string());
        Ok(seeds.iter().map(|&s| (s, shared.clone())).collect())
    }
}

#[derive(Debug, Clone)]
enum Job {
    Teacher,
    Baseline(BaselineConfig),
    Compress(CompressionConfig),
}

#[derive(Debug, Clone)]
struct JobSpec {
    method: String,
    subdir: PathBuf,
    seed: u64,
    job: Job,
}

fn flops(spec: &NetworkSpec) -> u64 {
    spec.estimate_flops().unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Runs one job and writes its artifacts into `dir`.
fn execute(ctx: &Context, command: &str, teacher: &std::result::Result<TeacherRun, String>, job: &JobSpec, dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(dir)?;
    let (spec, d_spec) = match &job.job {
        Job::Teacher => (ctx.teacher_spec.clone(), None),
        Job::Baseline(_) => (ctx.student_spec.clone(), None),
        Job::Compress(c) => {
            let width = d_input_width(&ctx.teacher_spec, &ctx.student_spec, c.d_input)?;
            (ctx.student_spec.clone(), Some(make_discriminator(width, &c.d_hidden)?))
        }
    };
    let mut summary = RunSummary {
        command: command.to_string(),
        method: job.method.clone(),
        seed: job.seed,
        status: RunStatus::Ok,
        error: None,
        network: spec.name.clone(),
        params: spec.count_params(),
        flops: flops(&spec),
        teacher_params: Some(ctx.teacher_spec.count_params()),
        teacher_flops: Some(flops(&ctx.teacher_spec)),
        discriminator: d_spec.as_ref().map(|d| d.name.clone()),
        discriminator_params: d_spec.as_ref().map(NetworkSpec::count_params),
        final_train_err: None,
        final_test_err: None,
        final_d_accuracy: None,
        config: ctx.cfg.clone(),
    };
    let result: Result<(Network, RunMetrics)> = (|| {
        let teacher = teacher.as_ref().map_err(|e| Error::Contract(format!("teacher unavailable: {e}")))?;
        let lp = ctx.loop_for(job.seed);
        match &job.job {
            Job::Teacher => Ok((teacher.network.clone(), teacher.metrics.clone())),
            Job::Baseline(b) => {
                let t = run_baseline(b, Some(&teacher.network), spec.clone(), &ctx.train, Some(&ctx.test), &ctx.cfg.optimizer, &lp)?;
                Ok((t.network, t.metrics))
            }
            Job::Compress(c) => {
                let r = run_compression(&teacher.network, spec.clone(), &ctx.train, Some(&ctx.test), &ctx.cfg.optimizer, &lp, c)?;
                Ok((r.student, r.metrics))
            }
        }
    })();
    match result {
        Ok((net, metrics)) => {
            summary.final_train_err = Some(metrics.final_train_err);
            summary.final_test_err = metrics.final_test_err;
            summary.final_d_accuracy = metrics.final_d_accuracy();
            metrics.save_csv(&dir.join("metrics.csv"))?;
            save_checkpoint(&net, &dir.join("model.ckpt"))?;
        }
        Err(e) => {
            summary.status = RunStatus::Aborted;
            summary.error = Some(e.to_string());
        }
    }
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn run_jobs(ctx: &Context, command: &str, dir: &Path, jobs: &[JobSpec], workers: usize) -> Result<Vec<RunSummary>> {
    let seeds: Vec<u64> = ctx.cfg.seeds.clone();
    let teachers = teachers(ctx, &seeds, workers)?;
    par_map(workers, jobs, |j| execute(ctx, command, &teachers[&j.seed], j, &dir.join(&j.subdir)))?.into_iter().collect()
}

fn seed_dir(seed: u64) -> String {
    format!("seed-{seed}")
}

fn write_table(dir: &Path, table: &Table) -> Result<()> {
    std::fs::write(dir.join("table.md"), table.markdown())?;
    std::fs::write(dir.join("table.csv"), table.csv()?)?;
    Ok(())
}

/// Trains the configured teacher on labels and writes `teacher.ckpt`,
/// `metrics.csv` and `summary.json`.
pub fn cmd_train_teacher(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let mut cfg = apply(cfg, opts);
    if let Some(s) = opts.seed {
        cfg.teacher.training.seed = s;
    }
    cfg.teacher.checkpoint = None;
    let ctx = Context::new(cfg)?;
    let dir = prepare_dir(&ctx.cfg.out_dir, "train-teacher", opts.overwrite)?;
    let seed = ctx.cfg.teacher.training.seed;
    let spec = &ctx.teacher_spec;
    let mut summary = RunSummary {
        command: "train-teacher".into(),
        method: Method::SupervisedTeacher.as_str().into(),
        seed,
        status: RunStatus::Ok,
        error: None,
        network: spec.name.clone(),
        params: spec.count_params(),
        flops: flops(spec),
        teacher_params: None,
        teacher_flops: None,
        discriminator: None,
        discriminator_params: None,
        final_train_err: None,
        final_test_err: None,
        final_d_accuracy: None,
        config: ctx.cfg.clone(),
    };
    match obtain_teacher(&ctx, seed) {
        Ok(t) => {
            save_checkpoint(&t.network, &dir.join("teacher.ckpt"))?;
            t.metrics.save_csv(&dir.join("metrics.csv"))?;
            summary.final_train_err = Some(t.metrics.final_train_err);
            summary.final_test_err = t.metrics.final_test_err;
        }
        Err(e) => {
            summary.status = RunStatus::Aborted;
            summary.error = Some(e.to_string());
        }
    }
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(Outcome { dir, runs: vec![summary], table: None })
}

/// Adversarial compression of the teacher into the student, once per seed,
/// or once per seed and regularizer when `grid.regularizers` is set.
pub fn cmd_compress(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let ctx = Context::new(apply(cfg, opts))?;
    let dir = prepare_dir(&ctx.cfg.out_dir, "compress", opts.overwrite)?;
    let grid = &ctx.cfg.grid.regularizers;
    let mut jobs = Vec::new();
    if grid.is_empty() {
        for &seed in &ctx.cfg.seeds {
            jobs.push(JobSpec {
                method: Method::Adversarial.as_str().into(),
                subdir: PathBuf::from(seed_dir(seed)),
                seed,
                job: Job::Compress(ctx.cfg.compression.clone()),
            });
        }
        let runs = run_jobs(&ctx, "compress", &dir, &jobs, opts.jobs)?;
        return Ok(Outcome { dir, runs, table: None });
    }
    for &reg in grid {
        for &seed in &ctx.cfg.seeds {
            jobs.push(JobSpec {
                method: reg.as_str().into(),
                subdir: PathBuf::from(reg.as_str()).join(seed_dir(seed)),
                seed,
                job: Job::Compress(CompressionConfig { regularizer: reg, ..ctx.cfg.compression.clone() }),
            });
        }
    }
    let runs = run_jobs(&ctx, "compress", &dir, &jobs, opts.jobs)?;
    let seeds = ctx.cfg.seeds.len();
    let spec = &ctx.student_spec;
    let table = Table {
        seeds: ctx.cfg.seeds.clone(),
        rows: grid
            .iter()
            .enumerate()
            .map(|(i, reg)| TableRow {
                label: reg.as_str().into(),
                network: spec.name.clone(),
                params: spec.count_params(),
                flops: flops(spec),
                per_seed: runs[i * seeds..(i + 1) * seeds].iter().map(|r| r.final_test_err).collect(),
            })
            .collect(),
    };
    write_table(&dir, &table)?;
    Ok(Outcome { dir, runs, table: Some(table) })
}

/// The configured baseline on the student architecture, once per seed.
pub fn cmd_baseline(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let ctx = Context::new(apply(cfg, opts))?;
    let dir = prepare_dir(&ctx.cfg.out_dir, "baseline", opts.overwrite)?;
    let b = ctx.cfg.baseline.clone();
    let jobs: Vec<JobSpec> = ctx
        .cfg
        .seeds
        .iter()
        .map(|&seed| JobSpec { method: b.kind.as_str().into(), subdir: PathBuf::from(seed_dir(seed)), seed, job: Job::Baseline(b.clone()) })
        .collect();
    let runs = run_jobs(&ctx, "baseline", &dir, &jobs, opts.jobs)?;
    Ok(Outcome { dir, runs, table: None })
}

/// Top-1 test error, parameter count and per-sample FLOPs of a checkpoint.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let (_, test) = cfg.dataset.load()?;
    let net = load_checkpoint(checkpoint)?;
    check_shape(&net, &test)?;
    Ok(EvalReport {
        network: net.spec().name.clone(),
        test_err: error_rate(&net, &test)?,
        params: net.count_params(),
        flops: net.estimate_flops(&net.spec().input_shape)?,
    })
}

/// One compression run per discriminator candidate and seed, ranked by
/// median student test error.
pub fn cmd_sweep_d(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let ctx = Context::new(apply(cfg, opts))?;
    let candidates = &ctx.cfg.sweep.candidates;
    if candidates.len() < 2 {
        return config_err(format!("sweep.candidates needs at least two entries, got {}", candidates.len()));
    }
    let width = d_input_width(&ctx.teacher_spec, &ctx.student_spec, ctx.cfg.compression.d_input)?;
    let d_specs = candidates.iter().map(|h| make_discriminator(width, h)).collect::<Result<Vec<_>>>()?;
    let dir = prepare_dir(&ctx.cfg.out_dir, "sweep-d", opts.overwrite)?;
    let mut jobs = Vec::new();
    for (i, hidden) in candidates.iter().enumerate() {
        for &seed in &ctx.cfg.seeds {
            jobs.push(JobSpec {
                method: format!("candidate-{i}"),
                subdir: PathBuf::from(format!("candidate-{i}")).join(seed_dir(seed)),
                seed,
                job: Job::Compress(CompressionConfig { d_hidden: hidden.clone(), ..ctx.cfg.compression.clone() }),
            });
        }
    }
    let runs = run_jobs(&ctx, "sweep-d", &dir, &jobs, opts.jobs)?;
    let seeds = ctx.cfg.seeds.len();
    let mut table = Table {
        seeds: ctx.cfg.seeds.clone(),
        rows: d_specs
            .iter()
            .enumerate()
            .map(|(i, d)| TableRow {
                label: format!("candidate-{i}"),
                network: d.name.clone(),
                params: d.count_params(),
                flops: flops(d),
                per_seed: runs[i * seeds..(i + 1) * seeds].iter().map(|r| r.final_test_err).collect(),
            })
            .collect(),
    };
    table.sort_by_error();
    write_table(&dir, &table)?;
    Ok(Outcome { dir, runs, table: Some(table) })
}

/// Supervised teacher, supervised student, logit L2, soft-target
/// distillation and adversarial compression on one task.
pub fn cmd_compare(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let ctx = Context::new(apply(cfg, opts))?;
    let methods = ctx.cfg.compare.methods.clone();
    if methods.is_empty() {
        return config_err("compare.methods must name at least one method");
    }
    let dir = prepare_dir(&ctx.cfg.out_dir, "compare", opts.overwrite)?;
    let mut jobs = Vec::new();
    for m in &methods {
        let job = match m {
            Method::SupervisedTeacher => Job::Teacher,
            Method::SupervisedStudent => Job::Baseline(BaselineConfig { kind: BaselineKind::Supervised, ..ctx.cfg.baseline.clone() }),
            Method::L2Logits => Job::Baseline(BaselineConfig { kind: BaselineKind::L2Logits, ..ctx.cfg.baseline.clone() }),
            Method::Kd => Job::Baseline(BaselineConfig { kind: BaselineKind::Kd, ..ctx.cfg.baseline.clone() }),
            Method::Adversarial => Job::Compress(ctx.cfg.compression.clone()),
        };
        for &seed in &ctx.cfg.seeds {
            jobs.push(JobSpec {
                method: m.as_str().into(),
                subdir: PathBuf::from(m.as_str()).join(seed_dir(seed)),
                seed,
                job: job.clone(),
            });
        }
    }
    let runs = run_jobs(&ctx, "compare", &dir, &jobs, opts.jobs)?;
    let seeds = ctx.cfg.seeds.len();
    let table = Table {
        seeds: ctx.cfg.seeds.clone(),
        rows: methods
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let spec = if *m == Method::SupervisedTeacher { &ctx.teacher_spec } else { &ctx.student_spec };
                TableRow {
                    label: m.as_str().into(),
                    network: spec.name.clone(),
                    params: spec.count_params(),
                    flops: flops(spec),
                    per_seed: runs[i * seeds..(i + 1) * seeds].iter().map(|r| r.final_test_err).collect(),
                }
            })
            .collect(),
    };
    write_table(&dir, &table)?;
    Ok(Outcome { dir, runs, table: Some(table) })
}

/// Runs the randomized gradient oracle suite.
pub fn cmd_gradcheck(seed: u64) -> Result<SuiteReport> {
    oracle_suite(seed, SUITE_ROUNDS, SUITE_NETWORKS)
}
