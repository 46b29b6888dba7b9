#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use crashfl_core::corpus::{generate_corpus, default_mix, CorpusManifest};

pub fn crashfl(args: &[&str]) -> Output {
    crashfl_env(args, &[])
}

/// Runs the binary with a clean `CRASHFL_*` environment plus `env`.
pub fn crashfl_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_crashfl"));
    cmd.args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("CRASHFL_") {
            cmd.env_remove(k);
        }
    }
    cmd.envs(env.iter().copied());
    cmd.output().expect("binary runs")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn corpus(dir: &Path, seed: u64, n: usize) -> CorpusManifest {
    generate_corpus(seed, n, &default_mix(), dir).expect("corpus generates")
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}
