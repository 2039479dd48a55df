//! End-to-end checks of the command-line surface: the full pipeline on a
//! small synthetic dataset, determinism of artifacts, and the exit-code
//! contract (0 success, 1 argument error, 2 I/O or format error).

use std::path::Path;
use std::process::{Command, Output};

fn l2mu(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l2mu"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_quick_config(dir: &Path) {
    std::fs::write(
        dir.join("quick.conf"),
        "# small setup for pipeline tests\n\
         epochs = 2\n\
         batch_size = 16\n\
         n_expand = 4\n\
         n_fuse = 12\n\
         n_harm = 6\n\
         n_u = 8\n\
         n_h = 8\n\
         d = 2\n\
         n_classes = 3\n",
    )
    .unwrap();
}

#[test]
fn full_pipeline_runs_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_quick_config(dir);

    let out = assert_ok(&l2mu(
        dir,
        &["synth", "--out", "data.l2md", "--classes", "3", "--per-class", "20", "--seed", "5"],
    ));
    assert!(out.contains("samples=60"));

    // Dataset generation is deterministic per seed.
    assert_ok(&l2mu(
        dir,
        &["synth", "--out", "data2.l2md", "--classes", "3", "--per-class", "20", "--seed", "5"],
    ));
    assert_eq!(
        std::fs::read(dir.join("data.l2md")).unwrap(),
        std::fs::read(dir.join("data2.l2md")).unwrap()
    );

    // Training twice with the same seed gives byte-identical checkpoints.
    for name in ["a.l2mu", "b.l2mu"] {
        let out = assert_ok(&l2mu(
            dir,
            &[
                "train", "--config", "quick.conf", "--data", "data.l2md", "--out", name,
                "--seed", "7",
            ],
        ));
        assert!(out.contains("epoch=1 train_loss="));
        assert!(out.contains("test_acc="));
    }
    let a = std::fs::read(dir.join("a.l2mu")).unwrap();
    let b = std::fs::read(dir.join("b.l2mu")).unwrap();
    assert_eq!(a, b, "same seed, different checkpoints");

    // Progress went to the log file too.
    let log = std::fs::read_to_string(dir.join("a.l2mu.log")).unwrap();
    assert!(log.contains("epoch=2 train_loss="));

    // Thread count must not change the artifact.
    let out = assert_ok(&l2mu(
        dir,
        &[
            "train", "--config", "quick.conf", "--data", "data.l2md", "--out", "c.l2mu",
            "--seed", "7", "--threads", "8",
        ],
    ));
    assert!(out.contains("checkpoint=c.l2mu"));
    let c = std::fs::read(dir.join("c.l2mu")).unwrap();
    assert_eq!(a, c, "thread count changed the checkpoint");

    let out = assert_ok(&l2mu(
        dir,
        &["prune", "--checkpoint", "a.l2mu", "--out", "pruned.l2mu", "--sparsity", "0.5"],
    ));
    assert!(out.contains("reduction_pct=50.00"));

    let out = assert_ok(&l2mu(
        dir,
        &[
            "finetune", "--config", "quick.conf", "--checkpoint", "pruned.l2mu", "--data",
            "data.l2md", "--out", "tuned.l2mu", "--seed", "7",
        ],
    ));
    assert!(out.contains("nonzero="));
    assert!(out.contains("synops_per_sample="));

    let out = assert_ok(&l2mu(
        dir,
        &[
            "eval", "--config", "quick.conf", "--checkpoint", "tuned.l2mu", "--data",
            "data.l2md", "--seed", "7", "--split", "test",
        ],
    ));
    assert!(out.contains("split=test"));
    assert!(out.contains("accuracy="));
    assert!(out.contains("confusion_row_2="));

    let out = assert_ok(&l2mu(
        dir,
        &[
            "bench", "--checkpoint", "tuned.l2mu", "--data", "data.l2md", "--count", "110",
            "--hist", "hist.csv",
        ],
    ));
    assert!(out.contains("inferences=100"));
    let hist = std::fs::read_to_string(dir.join("hist.csv")).unwrap();
    assert!(hist.starts_with("bin_start_ms,count\n"));

    let out = assert_ok(&l2mu(
        dir,
        &[
            "report", "--checkpoint", "tuned.l2mu", "--data", "data.l2md", "--count", "110",
            "--energy-mj", "153.9", "--seed", "7",
        ],
    ));
    let mut lines = out.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("variant,nonzero_params,footprint_bytes,accuracy"));
    assert!(header.ends_with("mean_energy_mj,edp_mj_s"));
    assert!(lines.next().unwrap().starts_with("leaky,"));
}

#[test]
fn help_prints_usage_and_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    for flag in ["help", "--help", "-h"] {
        let out = l2mu(tmp.path(), &[flag]);
        assert_eq!(out.status.code(), Some(0));
        assert!(String::from_utf8_lossy(&out.stdout).contains("COMMANDS"));
    }
}

#[test]
fn numeric_checks_pass_by_default() {
    let tmp = tempfile::tempdir().unwrap();
    let out = assert_ok(&l2mu(tmp.path(), &["gradcheck"]));
    assert!(out.contains("max_rel_error="));
    let out = assert_ok(&l2mu(tmp.path(), &["lmucheck", "--d", "12"]));
    assert!(out.contains("nrmse="));

    // A memory too small for three harmonics must fail the check: exit 1.
    let out = l2mu(tmp.path(), &["lmucheck", "--d", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes_follow_the_error_taxonomy() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // Argument errors → 1, with usage on stderr.
    for args in [
        &["frobnicate"][..],
        &["train", "--bogus", "x"][..],
        &[][..],
        &["synth"][..],                        // missing --out
        &["eval", "--checkpoint"][..],         // flag without value
        &["synth", "--out", "d.l2md", "--variant", "quantум"][..],
    ] {
        let out = l2mu(dir, args);
        assert_eq!(out.status.code(), Some(1), "args {args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("USAGE"), "args {args:?}");
    }

    // Unknown config key → 1.
    std::fs::write(dir.join("bad.conf"), "epochz = 3\n").unwrap();
    let out = l2mu(dir, &["synth", "--config", "bad.conf", "--out", "d.l2md"]);
    assert_eq!(out.status.code(), Some(1));

    // I/O and format errors → 2.
    let out = l2mu(dir, &["eval", "--checkpoint", "missing.l2mu", "--data", "missing.l2md"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(dir.join("junk.l2mu"), b"LLMU not a checkpoint").unwrap();
    std::fs::write(dir.join("junk.l2md"), b"junk").unwrap();
    let out = l2mu(dir, &["eval", "--checkpoint", "junk.l2mu", "--data", "junk.l2md"]);
    assert_eq!(out.status.code(), Some(2));

    let out = l2mu(dir, &["prepare", "--accel", "no_dir", "--gyro", "no_dir", "--out", "x.l2md"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn prepare_builds_a_cache_from_raw_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // Two subjects, two whitelisted activities, 85/90 step streams.
    let mut accel = String::new();
    let mut gyro = String::new();
    for subject in [1600, 1601] {
        for activity in ["F", "G"] {
            for t in 0..85 {
                accel.push_str(&format!("{subject},{activity},{t},0.1,0.2,0.3;\n"));
            }
            for t in 0..90 {
                gyro.push_str(&format!("{subject},{activity},{t},-0.1,-0.2,-0.3;\n"));
            }
        }
    }
    std::fs::write(dir.join("accel.txt"), accel).unwrap();
    std::fs::write(dir.join("gyro.txt"), gyro).unwrap();
    std::fs::write(dir.join("pick.conf"), "whitelist = F,G\n").unwrap();

    let out = assert_ok(&l2mu(
        dir,
        &[
            "prepare", "--config", "pick.conf", "--accel", "accel.txt", "--gyro", "gyro.txt",
            "--out", "cache.l2md",
        ],
    ));
    // 2 subjects × 2 activities × floor(85/40) windows.
    assert!(out.contains("samples=8"), "{out}");
    assert!(dir.join("cache.l2md").exists());

    // Preparation is deterministic for fixed inputs.
    assert_ok(&l2mu(
        dir,
        &[
            "prepare", "--config", "pick.conf", "--accel", "accel.txt", "--gyro", "gyro.txt",
            "--out", "cache2.l2md",
        ],
    ));
    assert_eq!(
        std::fs::read(dir.join("cache.l2md")).unwrap(),
        std::fs::read(dir.join("cache2.l2md")).unwrap()
    );
}

#[test]
fn subject_split_flow_trains_from_three_caches() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // Five subjects so the subject-level split has something to cut.
    let mut accel = String::new();
    let mut gyro = String::new();
    for subject in 0..5 {
        for (activity, base) in [("F", 0.2_f32), ("G", -0.4)] {
            for t in 0..120 {
                let v = base + (t % 7) as f32 * 0.1;
                accel.push_str(&format!("{subject},{activity},{t},{v},{v},{v};\n"));
                gyro.push_str(&format!("{subject},{activity},{t},{},{},{};\n", -v, -v, -v));
            }
        }
    }
    std::fs::write(dir.join("accel.txt"), accel).unwrap();
    std::fs::write(dir.join("gyro.txt"), gyro).unwrap();
    std::fs::write(
        dir.join("subj.conf"),
        "whitelist = F,G\nsplit_by_subject = true\nepochs = 1\nbatch_size = 8\n\
         n_expand = 2\nn_fuse = 6\nn_harm = 4\nn_u = 4\nn_h = 4\nd = 2\nn_classes = 2\n",
    )
    .unwrap();

    let out = assert_ok(&l2mu(
        dir,
        &[
            "prepare", "--config", "subj.conf", "--accel", "accel.txt", "--gyro", "gyro.txt",
            "--out", "cache.l2md", "--seed", "4",
        ],
    ));
    assert!(out.contains("train_samples="), "{out}");
    for name in ["cache.train.l2md", "cache.val.l2md", "cache.test.l2md"] {
        assert!(dir.join(name).exists(), "{name} missing");
    }

    let out = assert_ok(&l2mu(
        dir,
        &[
            "train", "--config", "subj.conf", "--train-data", "cache.train.l2md",
            "--val-data", "cache.val.l2md", "--test-data", "cache.test.l2md",
            "--out", "subj.l2mu", "--seed", "4",
        ],
    ));
    assert!(out.contains("test_acc="), "{out}");
}

#[test]
fn normalize_input_standardizes_the_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("norm.conf"), "normalize_input = true\n").unwrap();
    assert_ok(&l2mu(
        dir,
        &[
            "synth", "--config", "norm.conf", "--out", "norm.l2md", "--classes", "2",
            "--per-class", "30", "--seed", "6",
        ],
    ));
    let samples = l2mu::data::read_cache(&dir.join("norm.l2md")).unwrap();
    for c in 0..l2mu::data::CHANNELS {
        let values: Vec<f64> = samples
            .iter()
            .flat_map(|s| (0..s.window.steps()).map(move |t| s.window.row(t)[c] as f64))
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        assert!(mean.abs() < 1e-3, "channel {c} mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-3, "channel {c} std {}", var.sqrt());
    }
}
