use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const SMALL: &str = "\
[hardware]
channels = 2
luns_per_channel = 2
blocks_per_lun = 32
pages_per_block = 32

[workload]
threads = w,r
w.generator = random_writer
w.ios = 3000
r.generator = random_reader
r.count = 1000
r.ios = 2000
r.depends_on = w
precondition = sequential
";

fn flashsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flashsim")).args(args).env_remove("FLASHSIM_OUT").output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("small.ini");
    fs::write(&path, text).unwrap();
    path
}

fn digest(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_shipped_presets() {
    for name in ["slc-small", "mlc-small", "fifo-baseline", "priority-reads", "open-interface-on"] {
        let o = flashsim(&["validate", "--config", name]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
        let file = format!("{}/../core/presets/{name}.ini", env!("CARGO_MANIFEST_DIR"));
        assert_eq!(flashsim(&["validate", "--config", &file]).status.code(), Some(0));
    }
}

#[test]
fn unknown_key_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[hardwre]\nchannels = 4\n");
    let out = dir.path().join("out");
    let o = flashsim(&["run", "--config", cfg.to_str().unwrap(), "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("hardwre.channels"), "{}", stderr(&o));
    assert_eq!(stderr(&o).trim().lines().count(), 1);
    assert!(!out.exists());
}

#[test]
fn missing_file_and_bad_flags_exit_one() {
    assert_eq!(flashsim(&["validate", "--config", "/nonexistent/x.ini"]).status.code(), Some(1));
    assert_eq!(flashsim(&["run", "--config", "slc-small"]).status.code(), Some(1));
    assert_eq!(flashsim(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn identical_runs_give_identical_digests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    let mut digests = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = flashsim(&["run", "--config", cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        digests.push((digest(&out.join("trace.csv")), digest(&out.join("metrics.csv"))));
    }
    assert_eq!(digests[0], digests[1]);
    let out = dir.path().join("c");
    flashsim(&["run", "--config", cfg, "--seed", "8", "--out", out.to_str().unwrap()]);
    assert_ne!(digest(&out.join("trace.csv")), digests[0].0);
}

#[test]
fn config_echo_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let first = dir.path().join("first");
    flashsim(&["run", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", first.to_str().unwrap()]);
    let echo = first.join("config_resolved");
    let second = dir.path().join("second");
    let o = flashsim(&["run", "--config", echo.to_str().unwrap(), "--seed", "3", "--out", second.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["trace.csv", "metrics.csv", "config_resolved"] {
        assert_eq!(digest(&first.join(f)), digest(&second.join(f)), "{f}");
    }
}

#[test]
fn out_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = Command::new(env!("CARGO_BIN_EXE_flashsim"))
        .args(["run", "--config", cfg.to_str().unwrap()])
        .env("FLASHSIM_OUT", dir.path().join("env"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("env/trace.csv").exists());
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = flashsim(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--param",
        "controller.greediness_K",
        "--values",
        "1,2,4",
        "--seeds",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("small/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[0].starts_with("controller.greediness_K,1,0,OK"));
    assert!(rows[5].starts_with("controller.greediness_K,4,1,OK"));
    for v in ["1", "2", "4"] {
        for s in ["0", "1"] {
            let cell = out.join(format!("small/controller.greediness_K={v}/seed={s}"));
            for f in ["trace.csv", "metrics.csv", "config_resolved"] {
                assert!(cell.join(f).exists(), "{}", cell.join(f).display());
            }
        }
    }
}

#[test]
fn unresolvable_sweep_parameter_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let args = |param: &'static str, values: &'static str| {
        vec![
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--param",
            param,
            "--values",
            values,
            "--out",
            out.to_str().unwrap(),
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>()
    };
    for (param, values) in [("controller.greediness", "1,2"), ("controller.greediness_K", "1,x")] {
        let a = args(param, values);
        let o = flashsim(&a.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(o.status.code(), Some(1));
        assert!(stderr(&o).contains(param), "{}", stderr(&o));
    }
    assert!(!out.exists());
}

#[test]
fn failed_cell_is_marked_and_sweep_continues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    // 1 KiB of controller RAM cannot hold the page map.
    let o = flashsim(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--param",
        "hardware.ram_bytes",
        "--values",
        "1024,67108864",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let csv = fs::read_to_string(out.join("small/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(rows[0].starts_with("hardware.ram_bytes,1024,0,FAILED"));
    assert!(rows[1].starts_with("hardware.ram_bytes,67108864,0,OK"));
}
