#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

pub struct Run {
    pub code: i32,
    pub stderr: String,
    pub out: PathBuf,
}

impl Run {
    pub fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.out.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    pub fn json(&self, name: &str) -> Value {
        serde_json::from_str(&self.read(name)).unwrap()
    }
}

/// Writes `config` into `dir` and runs the binary on it.
pub fn run(dir: &Path, command: &str, config: &str, extra: &[&str]) -> Run {
    let cfg = dir.join(format!("{command}.cfg"));
    std::fs::write(&cfg, config).unwrap();
    run_file(&cfg, command, &dir.join(format!("out-{command}-{}", extra.join("").replace('-', ""))), extra)
}

pub fn run_file(cfg: &Path, command: &str, out: &Path, extra: &[&str]) -> Run {
    let o = Command::new(env!("CARGO_BIN_EXE_layerpot"))
        .arg(command)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap();
    Run {
        code: o.status.code().unwrap_or(-1),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
        out: out.to_path_buf(),
    }
}

pub fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}
