use std::fs;
use std::path::Path;
use std::process::Command;

use kfl::output::{read_trace, Manifest, Status, TRACE};

fn kfl(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_kfl")).args(args).output().expect("binary runs");
    out.status.code().expect("exit code")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn config_errors_exit_2_without_creating_a_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cases = [
        ("simulate", "dxx = 0.1\n"),
        ("simulate", "dx = -0.02\n"),
        ("probe", "kind = \"wave\"\n"),
        ("fit", "source = \"missing\"\n"),
        ("vapp", "gamma = [0.3]\n"),
    ];
    for (i, (sub, body)) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("c{i}.toml"), body);
        assert_eq!(kfl(&[sub, "--config", arg(&cfg), "--out", arg(&out)]), 2, "{sub}: {body}");
        assert!(!out.exists(), "{sub}: {body} created a directory");
    }
    let absent = tmp.path().join("absent.toml");
    assert_eq!(kfl(&["wave", "--config", arg(&absent), "--out", arg(&out)]), 2);
    assert!(!out.exists());
}

#[test]
fn spectral_check_writes_its_identities() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s.toml", "adjoint_pairs = 5\n");
    let out = tmp.path().join("run");
    assert_eq!(kfl(&["spectral-check", "--config", arg(&cfg), "--out", arg(&out)]), 0);
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.status, Status::Complete);
    assert!(out.join("fits/spectral.json").exists());
    assert!(m.headline["adjoint_max_error"] < 1e-8);
    assert!(m.headline["m_e0_residual"] < 1e-5);
    assert!(m.verify(&out).is_empty());
}

#[test]
fn runtime_abort_exits_3_and_points_at_the_last_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    // A u-form step with dt = 5 overshoots the unit interval within a few steps.
    let body = "formulation = \"u\"\ncourant = 1e6\ndt_max = 5.0\nt_end = 50.0\ncheckpoint_period = 2.0\n";
    let cfg = write_config(tmp.path(), "abort.toml", body);
    let out = tmp.path().join("run");
    assert_eq!(kfl(&["simulate", "--config", arg(&cfg), "--out", arg(&out)]), 3);
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.status, Status::Failed);
    assert!(m.error.as_deref().unwrap_or("").contains("invariant"));
    let ck = m.checkpoint.expect("checkpoint pointer");
    assert!(out.join(ck).exists());
}

#[test]
fn resumed_and_repeated_runs_reproduce_the_straight_run() {
    let tmp = tempfile::tempdir().unwrap();
    // Same checkpoint cadence in both, so the step sequences coincide.
    let base = "dx = 0.04\nt_end = 1000.0\nsnapshot_times = [100.0, 1000.0]\ncheckpoint_period = 100.0\n";
    let full = write_config(tmp.path(), "full.toml", base);
    let half = write_config(
        tmp.path(),
        "half.toml",
        "dx = 0.04\nt_end = 500.0\nsnapshot_times = [100.0, 1000.0]\ncheckpoint_period = 100.0\n",
    );
    let straight = tmp.path().join("straight");
    let again = tmp.path().join("again");
    let partial = tmp.path().join("partial");
    let resumed = tmp.path().join("resumed");
    assert_eq!(kfl(&["simulate", "--config", arg(&full), "--out", arg(&straight)]), 0);
    assert_eq!(kfl(&["simulate", "--config", arg(&full), "--out", arg(&again)]), 0);
    assert_eq!(kfl(&["simulate", "--config", arg(&half), "--out", arg(&partial)]), 0);
    let ck = partial.join("checkpoints/ckpt_t500.json");
    assert!(ck.exists());
    assert_eq!(kfl(&["resume", "--config", arg(&full), "--from", arg(&ck), "--out", arg(&resumed)]), 0);

    let a = Manifest::load(&straight).unwrap();
    let b = Manifest::load(&again).unwrap();
    let r = Manifest::load(&resumed).unwrap();
    assert_eq!(a.config_hash, b.config_hash);
    for (key, value) in &a.headline {
        assert!((value - b.headline[key]).abs() <= 1e-12 * value.abs().max(1.0), "{key}");
    }
    let sigma = |m: &Manifest| m.headline["sigma[s=0.5]"];
    assert!((sigma(&a) - sigma(&r)).abs() <= 1e-9);
    assert!(r.resumed_from.is_some());

    let rows = read_trace(&straight.join(TRACE)).unwrap();
    assert!(rows.len() >= 100);
    assert_eq!(rows, read_trace(&resumed.join(TRACE)).unwrap());
    assert_eq!(
        fs::read(straight.join("snapshots/t1000.csv")).unwrap(),
        fs::read(resumed.join("snapshots/t1000.csv")).unwrap()
    );
}

#[test]
fn resume_rejects_a_checkpoint_from_other_numerics() {
    let tmp = tempfile::tempdir().unwrap();
    let half = write_config(tmp.path(), "half.toml", "dx = 0.08\nt_end = 20.0\ncheckpoint_period = 10.0\n");
    let other = write_config(tmp.path(), "other.toml", "dx = 0.04\nt_end = 40.0\n");
    let partial = tmp.path().join("partial");
    assert_eq!(kfl(&["simulate", "--config", arg(&half), "--out", arg(&partial)]), 0);
    let ck = partial.join("checkpoints/ckpt_t10.json");
    let out = tmp.path().join("resumed");
    assert_eq!(kfl(&["resume", "--config", arg(&other), "--resume", arg(&ck), "--out", arg(&out)]), 2);
    assert!(!out.exists());
}

#[test]
fn report_aggregates_runs_and_detects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let wave_cfg = write_config(tmp.path(), "wave.toml", "");
    let wave = tmp.path().join("wave");
    assert_eq!(kfl(&["wave", "--config", arg(&wave_cfg), "--out", arg(&wave)]), 0);

    let empty = write_config(tmp.path(), "empty.toml", "");
    let out = tmp.path().join("empty_report");
    assert_eq!(kfl(&["report", "--config", arg(&empty), "--out", arg(&out)]), 0);
    assert_eq!(Manifest::load(&out).unwrap().headline["runs"], 0.0);

    let cfg = write_config(tmp.path(), "report.toml", "runs = [\"wave\"]\n");
    let out = tmp.path().join("report");
    assert_eq!(kfl(&["report", "--config", arg(&cfg), "--out", arg(&out)]), 0);
    assert!(out.join("report.json").exists());

    fs::write(wave.join("wave.csv"), "tampered\n").unwrap();
    assert_eq!(kfl(&["report", "--config", arg(&cfg), "--out", arg(&out)]), 3);
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.status, Status::Failed);
    assert!(m.error.unwrap().contains("digest"));
}
