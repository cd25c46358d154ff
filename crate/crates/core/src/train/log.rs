use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One row of the training log. Gate fields are `None` for models without a gate.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub expert_loss: f64,
    pub gate_mse: Option<f64>,
    pub gate_penalty: Option<f64>,
    /// Entropy of `mean_gate`.
    pub gate_entropy: Option<f64>,
    /// Gate vector averaged over every sample of the epoch.
    pub mean_gate: Option<Vec<f64>>,
}

pub fn log_header(k: usize) -> String {
    let mut h = String::from("epoch,expert_loss,gate_mse,gate_penalty,gate_entropy");
    for i in 1..=k {
        write!(h, ",mean_g_{i}").unwrap();
    }
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl EpochLog {
    pub fn csv_row(&self, k: usize) -> String {
        let mut row = format!(
            "{},{:?},{},{},{}",
            self.epoch,
            self.expert_loss,
            opt(self.gate_mse),
            opt(self.gate_penalty),
            opt(self.gate_entropy)
        );
        for i in 0..k {
            row.push(',');
            row.push_str(&opt(self.mean_gate.as_ref().map(|g| g[i])));
        }
        row
    }
}

pub fn log_csv(logs: &[EpochLog], k: usize) -> String {
    let mut out = log_header(k);
    out.push('\n');
    for l in logs {
        out.push_str(&l.csv_row(k));
        out.push('\n');
    }
    out
}

pub fn write_log_csv(path: &Path, logs: &[EpochLog], k: usize) -> Result<()> {
    std::fs::write(path, log_csv(logs, k)).map_err(|e| Error::io(path, e))
}
