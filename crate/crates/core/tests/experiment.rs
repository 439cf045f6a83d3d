//! Experiment commands, run directories and the command-line front end.

use std::path::{Path, PathBuf};
use std::process::Command;

use advdistill::data::{encode_idx, IdxArray};
use advdistill::experiment::*;
use advdistill::nn::{load_checkpoint, preset, save_checkpoint, InitPolicy, Network};
use advdistill::train::{rng_stream, BaselineKind, OptimizerConfig};
use advdistill::Error;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_advdistill"))
}

/// Desk optimizers with short student runs.
fn quick(seeds: Vec<u64>, steps: usize, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.teacher.optimizer = OptimizerConfig::sgd(0.01, 0.9);
    cfg.teacher.training.steps = 600;
    cfg.optimizer = OptimizerConfig::adam(0.01);
    cfg.training.steps = steps;
    cfg.seeds = seeds;
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn overwrite() -> RunOptions {
    RunOptions { overwrite: true, ..Default::default() }
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn missing_dataset_path_names_the_key() {
    let text = "[dataset]\nkind = \"idx\"\n";
    let err = ExperimentConfig::from_toml(text).unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("dataset.manifest")), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let out = bin().args(["train-teacher", "--config"]).arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset.manifest"));
}

#[test]
fn config_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    std::fs::write(&path, "seeds = [0]\n\n[training]\nstepz = 3\n").unwrap();
    let out = bin().args(["compress", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 4") && stderr.contains("stepz"), "{stderr}");
}

#[test]
fn train_teacher_writes_three_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let run = |extra: &[&str]| {
        let out = bin().arg("train-teacher").arg("--out").arg(dir.path()).args(extra).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["--overwrite"]);
    let first = dir.path().join("train-teacher");
    let mut names: Vec<String> =
        std::fs::read_dir(&first).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["metrics.csv", "summary.json", "teacher.ckpt"]);
    let summary = read(&first.join("summary.json"));

    run(&["--overwrite", "--seed", "0"]);
    assert_eq!(read(&first.join("summary.json")), summary);

    let parsed: RunSummary = serde_json::from_str(&summary).unwrap();
    assert_eq!(parsed.status, RunStatus::Ok);
    assert_eq!(parsed.config, ExperimentConfig { out_dir: dir.path().to_path_buf(), ..Default::default() });
    let net = load_checkpoint(first.join("teacher.ckpt")).unwrap();
    assert_eq!(parsed.params, net.count_params());
}

#[test]
fn reruns_without_overwrite_never_touch_earlier_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(vec![0], 5, dir.path());
    let mut cfg = cfg;
    cfg.teacher.training.steps = 5;
    let a = cmd_train_teacher(&cfg, &RunOptions::default()).unwrap();
    let b = cmd_train_teacher(&cfg, &RunOptions::default()).unwrap();
    assert_ne!(a.dir, b.dir);
    assert!(a.dir.join("summary.json").exists() && b.dir.join("summary.json").exists());
    let name = b.dir.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("train-teacher-"), "{name}");
}

#[test]
fn eval_of_random_ten_class_student_is_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.blobs.classes = 10;
    cfg.dataset.blobs.test_per_class = 300;
    cfg.dataset.blobs.separation = 0.0;
    let spec = preset("student-mlp", &[8], 10).unwrap();
    let mut errs = Vec::new();
    for seed in 0..5 {
        let net = Network::build(spec.clone(), InitPolicy::GlorotUniform, &mut rng_stream(seed, 1)).unwrap();
        let path = dir.path().join(format!("s{seed}.ckpt"));
        save_checkpoint(&net, &path).unwrap();
        let report = cmd_eval(&cfg, &path).unwrap();
        assert_eq!(report.params, spec.count_params());
        assert_eq!(report.params, net.count_params());
        assert_eq!(report.flops, spec.estimate_flops().unwrap());
        errs.push(report.test_err);
    }
    for e in &errs {
        assert!((e - 0.9).abs() <= 0.03, "errors {errs:?}");
    }
}

#[test]
fn eval_rejects_mismatched_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let net = Network::build(preset("student-mlp", &[5], 4).unwrap(), InitPolicy::GlorotUniform, &mut rng_stream(0, 1)).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&net, &path).unwrap();
    let err = cmd_eval(&ExperimentConfig::default(), &path).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)), "{err}");
    std::fs::write(&path, b"junk").unwrap();
    assert!(cmd_eval(&ExperimentConfig::default(), &path).is_err());

    let out = bin().args(["eval", "--checkpoint"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_cli_prints_error_params_and_flops() {
    let dir = tempfile::tempdir().unwrap();
    let net = Network::build(preset("teacher-mlp", &[8], 4).unwrap(), InitPolicy::GlorotUniform, &mut rng_stream(0, 1)).unwrap();
    let path = dir.path().join("t.ckpt");
    save_checkpoint(&net, &path).unwrap();
    let out = bin().args(["eval", "--checkpoint"]).arg(&path).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("test error:"), "{stdout}");
    assert!(stdout.contains(&format!("params: {}", net.count_params())), "{stdout}");
    assert!(stdout.contains(&format!("flops: {}", net.estimate_flops(&[8]).unwrap())), "{stdout}");
}

#[test]
fn ten_seed_compress_records_each_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick((0..10).collect(), 20, dir.path());
    let out = cmd_compress(&cfg, &RunOptions { jobs: 2, ..overwrite() }).unwrap();
    assert_eq!(out.runs.len(), 10);
    assert_eq!(out.aborted(), 0);
    for seed in 0..10u64 {
        let run_dir = out.dir.join(format!("seed-{seed}"));
        assert!(run_dir.join("metrics.csv").exists());
        assert!(run_dir.join("model.ckpt").exists());
        let s: RunSummary = serde_json::from_str(&read(&run_dir.join("summary.json"))).unwrap();
        assert_eq!(s.seed, seed);
        assert_eq!(s.discriminator.as_deref(), Some("discriminator-128fc-256fc-128fc"));
    }
}

#[test]
fn regularizer_grid_runs_every_kind() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(vec![0, 1], 30, dir.path());
    cfg.grid.regularizers = advdistill::losses::RegularizerKind::ALL.to_vec();
    let out = cmd_compress(&cfg, &overwrite()).unwrap();
    assert_eq!(out.runs.len(), 8);
    let table = out.table.unwrap();
    let labels: Vec<&str> = table.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["none", "l1", "l2", "adversarial_samples"]);
    assert!(out.dir.join("table.md").exists());
    assert!(out.dir.join("l1/seed-1/summary.json").exists());
}

#[test]
fn baseline_command_runs_configured_kind() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(vec![3], 30, dir.path());
    cfg.baseline.kind = BaselineKind::Kd;
    let out = cmd_baseline(&cfg, &overwrite()).unwrap();
    assert_eq!(out.runs[0].method, "kd");
    assert_eq!(out.runs[0].seed, 3);
    assert!(out.dir.join("seed-3/model.ckpt").exists());
}

#[test]
fn sweep_bookkeeping_and_duplicate_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(vec![0, 1, 2], 30, dir.path());
    cfg.sweep.candidates = vec![vec![16, 16], vec![16, 16]];
    let out = cmd_sweep_d(&cfg, &overwrite()).unwrap();
    assert_eq!(out.runs.len(), 6);
    let table = out.table.unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.rows[0].median_error(), table.rows[1].median_error());
    assert_eq!(table.rows[0].per_seed, table.rows[1].per_seed);

    cfg.sweep.candidates.truncate(1);
    let err = cmd_sweep_d(&cfg, &overwrite()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn single_unit_discriminator_ranks_below_default_capacity() {
    let dir = tempfile::tempdir().unwrap();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/blobs.toml");
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    cfg.seeds = (0..5).collect();
    cfg.out_dir = dir.path().to_path_buf();
    cfg.sweep.candidates = vec![vec![1], vec![128, 256, 128]];
    let table = cmd_sweep_d(&cfg, &overwrite()).unwrap().table.unwrap();
    let median_of = |label: &str| table.rows.iter().find(|r| r.network.ends_with(label)).unwrap().median_error().unwrap();
    let (tiny, wide) = (median_of("-1fc"), median_of("-128fc-256fc-128fc"));
    assert!(tiny > wide, "median error with [1] {tiny} not above [128, 256, 128] {wide}");
}

#[test]
fn compare_table_schema_and_capacity_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(vec![0, 1, 2], 300, dir.path());
    let out = cmd_compare(&cfg, &RunOptions { jobs: 2, ..overwrite() }).unwrap();
    let table = out.table.unwrap();
    let labels: Vec<&str> = table.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, Method::ALL.map(|m| m.as_str()));
    assert_eq!(table.header(), ["method", "network", "test_err_median", "params", "flops", "seed_0", "seed_1", "seed_2"]);
    let row = |m: Method| table.rows.iter().find(|r| r.label == m.as_str()).unwrap();
    assert_eq!(row(Method::Adversarial).params, row(Method::SupervisedStudent).params);
    assert_eq!(row(Method::Adversarial).flops, row(Method::SupervisedStudent).flops);
    assert!(row(Method::SupervisedTeacher).params > row(Method::SupervisedStudent).params);
    assert!(row(Method::SupervisedTeacher).median_error().unwrap() <= row(Method::SupervisedStudent).median_error().unwrap());
    let md = read(&out.dir.join("table.md"));
    assert_eq!(md.lines().filter(|l| l.starts_with("| ")).count(), 6);
    let csv = read(&out.dir.join("table.csv"));
    assert_eq!(csv.lines().count(), 6);

    let mut subset = cfg.clone();
    subset.compare.methods = vec![Method::Kd, Method::SupervisedStudent];
    let out = cmd_compare(&subset, &overwrite()).unwrap();
    let labels: Vec<String> = out.table.unwrap().rows.into_iter().map(|r| r.label).collect();
    assert_eq!(labels, ["kd", "supervised_student"]);
}

fn write_idx(dir: &Path, name: &str, arr: &IdxArray) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, encode_idx(arr)).unwrap();
    path
}

/// Two-class 8×8 images: the bright half is the label.
fn halves(n: usize, seed: u8) -> (IdxArray, IdxArray) {
    let mut pixels = Vec::with_capacity(n * 64);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        for y in 0..8 {
            for x in 0..8 {
                let noise = ((i * 64 + y * 8 + x) as u8).wrapping_mul(37).wrapping_add(seed) % 60;
                let bright = (x < 4) == (label == 0);
                pixels.push(if bright { 180 + noise } else { noise });
            }
        }
        labels.push(label as u8);
    }
    (IdxArray { dims: vec![n, 8, 8], data: pixels }, IdxArray { dims: vec![n], data: labels })
}

#[test]
fn idx_dataset_resolves_through_data_dir() {
    let data = tempfile::tempdir().unwrap();
    let (ti, tl) = halves(64, 1);
    let (vi, vl) = halves(32, 2);
    write_idx(data.path(), "train-images", &ti);
    write_idx(data.path(), "train-labels", &tl);
    write_idx(data.path(), "test-images", &vi);
    write_idx(data.path(), "test-labels", &vl);
    std::fs::write(
        data.path().join("halves.manifest"),
        "# two-class halves\ntrain_images = train-images\ntrain_labels = train-labels\ntest_images = test-images\ntest_labels = test-labels\nclasses = 2\n",
    )
    .unwrap();

    let work = tempfile::tempdir().unwrap();
    let config = work.path().join("idx.toml");
    std::fs::write(
        &config,
        "[dataset]\nkind = \"idx\"\nmanifest = \"halves.manifest\"\n\n[teacher]\nnetwork = \"teacher-cnn\"\n\n[teacher.training]\nsteps = 10\nbatch_size = 16\n\n[student]\nnetwork = \"student-cnn\"\n\n[training]\nsteps = 5\nbatch_size = 16\n",
    )
    .unwrap();
    let out = bin()
        .args(["compress", "--overwrite", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(work.path())
        .env("ADVDISTILL_DATA_DIR", data.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s: RunSummary = serde_json::from_str(&read(&work.path().join("compress/seed-0/summary.json"))).unwrap();
    assert_eq!(s.network, "student-cnn");
    assert_eq!(s.discriminator.as_deref(), Some("discriminator-128fc-256fc-128fc"));

    let missing = bin()
        .args(["compress", "--overwrite", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(work.path())
        .env("ADVDISTILL_DATA_DIR", work.path())
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn gradcheck_command_passes() {
    let out = bin().arg("gradcheck").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}
