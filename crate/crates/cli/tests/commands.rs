//! End-to-end runs of the binary: exit codes, guidance identity, and replay.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "steps = 4\nbatch_size = 2\nn_blocks = 1\nn_heads = 2\nembed_dim = 16\nffn_dim = 32\nflow_hidden = 16\nflow_blocks = 1\ntime_freq_dim = 8\n";

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tokenflow-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tokenflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tokenflow")).args(args).env("TOKENFLOW_WORKERS", "1").output().unwrap()
}

fn ok(args: &[&str]) {
    let out = tokenflow(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Corpus and a four-step checkpoint under `dir`.
fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let corpus = dir.join("corpus");
    let config = dir.join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    ok(&["make-corpus", "--out", s(&corpus), "--count", "12", "--seed", "3"]);
    let run = dir.join("run");
    ok(&["train", "--config", s(&config), "--corpus", s(&corpus), "--out", s(&run)]);
    (corpus, run)
}

#[test]
fn exit_codes_distinguish_config_numeric_and_io_failures() {
    let dir = scratch("codes");
    let corpus = dir.join("corpus");
    ok(&["make-corpus", "--out", s(&corpus), "--count", "6"]);

    let bad_key = dir.join("bad.toml");
    std::fs::write(&bad_key, "learning_rate = 0.1\n").unwrap();
    let out = tokenflow(&["train", "--config", s(&bad_key), "--corpus", s(&corpus), "--out", s(&dir.join("a"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let missing = tokenflow(&["train", "--corpus", s(&dir.join("nowhere")), "--out", s(&dir.join("b"))]);
    assert_eq!(missing.status.code(), Some(4));

    let diverge = dir.join("diverge.toml");
    std::fs::write(&diverge, format!("{TINY}lr = 1e30\nwarmup_steps = 0\nsteps = 20\n").replace("steps = 4\n", "")).unwrap();
    let out = tokenflow(&["train", "--config", s(&diverge), "--corpus", s(&corpus), "--out", s(&dir.join("c"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let again = tokenflow(&["make-corpus", "--out", s(&corpus), "--count", "6"]);
    assert_eq!(again.status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn unit_guidance_scale_matches_no_guidance_byte_for_byte() {
    let dir = scratch("guidance");
    let (corpus, run) = trained(&dir);
    let ckpt = run.join("checkpoint.json");
    let common = ["generate", "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--instance", "0", "--instance", "1", "--max-len", "12"];
    let (a, b) = (dir.join("unit"), dir.join("none"));
    ok(&[&common[..], &["--out", s(&a), "--cfg-scale", "1.0"]].concat());
    ok(&[&common[..], &["--out", s(&b), "--no-guidance"]].concat());
    let mut files: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).filter(|n| n.to_string_lossy().ends_with(".csv")).collect();
    files.sort();
    assert_eq!(files.len(), 2);
    for f in files {
        assert_eq!(std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap(), "{f:?}");
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn replay_reproduces_a_training_run() {
    let dir = scratch("replay");
    let (_, run) = trained(&dir);
    let again = dir.join("again");
    ok(&["replay", "--manifest", s(&run.join("run_manifest.json")), "--out", s(&again)]);
    assert_eq!(std::fs::read(run.join("checkpoint.json")).unwrap(), std::fs::read(again.join("checkpoint.json")).unwrap());
    assert_eq!(std::fs::read(run.join("metrics.csv")).unwrap(), std::fs::read(again.join("metrics.csv")).unwrap());
    let _ = std::fs::remove_dir_all(&dir);
}
