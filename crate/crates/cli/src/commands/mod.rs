pub mod analysis;
pub mod solve;
pub mod sweep;
pub mod verify;

use std::path::PathBuf;

use serde_json::Value;

use crate::config::Config;
use crate::output::{int, Obj};

pub struct Ctx {
    pub cfg: Config,
    pub out: PathBuf,
    pub threads: usize,
    pub auto_project: bool,
}

impl Ctx {
    /// Fields shared by every report.
    pub fn header(&self, command: &str) -> Obj {
        Obj::new()
            .put("command", command)
            .put("version", env!("CARGO_PKG_VERSION"))
            .put("threads", int(self.threads))
    }
}

/// Observed convergence orders `log(r₀/r₁)/log(h₀/h₁)`, `"n/a"` for the first level.
pub fn orders(h: &[f64], r: &[f64]) -> Vec<Value> {
    let mut out = vec![Value::from("n/a")];
    for k in 1..r.len() {
        let o = (r[k - 1] / r[k]).ln() / (h[k - 1] / h[k]).ln();
        out.push(if o.is_finite() { crate::output::num(o) } else { Value::from("n/a") });
    }
    out.truncate(r.len());
    out
}
