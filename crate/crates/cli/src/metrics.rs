//! Metrics rows, the CSV contract, and the per-method summary.
//!
//! The CSV layout is pinned: UNIX newlines, decimal points, booleans as
//! `true`/`false`. Everything except `wall_time_s` is deterministic for a
//! given (config, seed).

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const CSV_HEADER: &str = "seed,method,env,sim_epochs_total,sim_epochs_jacobian,\
sim_epochs_training,sim_epochs_evaluation,train_iters,reached_target,wall_time_s";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("write {path}: {source}")]
    Io { path: String, #[source] source: std::io::Error },
    #[error("parse metrics csv: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub method: String,
    pub env: String,
    pub sim_epochs_total: u64,
    pub sim_epochs_jacobian: u64,
    pub sim_epochs_training: u64,
    pub sim_epochs_evaluation: u64,
    pub train_iters: u64,
    pub reached_target: bool,
    pub wall_time_s: f64,
}

impl MetricsRow {
    fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.method,
            self.env,
            self.sim_epochs_total,
            self.sim_epochs_jacobian,
            self.sim_epochs_training,
            self.sim_epochs_evaluation,
            self.train_iters,
            self.reached_target,
            self.wall_time_s
        )
    }
}

pub fn metrics_csv_string(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<(), MetricsError> {
    let text = metrics_csv_string(rows);
    let mut f = std::fs::File::create(path)
        .map_err(|e| MetricsError::Io { path: path.display().to_string(), source: e })?;
    f.write_all(text.as_bytes())
        .map_err(|e| MetricsError::Io { path: path.display().to_string(), source: e })
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| MetricsError::Parse("empty file".into()))?;
    if header != CSV_HEADER {
        return Err(MetricsError::Parse(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 10 {
            return Err(MetricsError::Parse(format!("row {}: {} fields", i + 2, parts.len())));
        }
        let num = |s: &str| -> Result<u64, MetricsError> {
            s.parse().map_err(|_| MetricsError::Parse(format!("row {}: bad int {s:?}", i + 2)))
        };
        rows.push(MetricsRow {
            seed: num(parts[0])?,
            method: parts[1].to_string(),
            env: parts[2].to_string(),
            sim_epochs_total: num(parts[3])?,
            sim_epochs_jacobian: num(parts[4])?,
            sim_epochs_training: num(parts[5])?,
            sim_epochs_evaluation: num(parts[6])?,
            train_iters: num(parts[7])?,
            reached_target: match parts[8] {
                "true" => true,
                "false" => false,
                other => {
                    return Err(MetricsError::Parse(format!("row {}: bad bool {other:?}", i + 2)))
                }
            },
            wall_time_s: parts[9]
                .parse()
                .map_err(|_| MetricsError::Parse(format!("row {}: bad float", i + 2)))?,
        });
    }
    Ok(rows)
}

/// Zero out the wall-time column; wall time is explicitly excluded from the
/// determinism contract, everything else must be byte-identical.
pub fn metrics_csv_normalized(text: &str) -> String {
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            out.push_str(line);
        } else {
            match line.rfind(',') {
                Some(pos) => {
                    out.push_str(&line[..pos]);
                    out.push_str(",0");
                }
                None => out.push_str(line),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 when n < 2.
    pub std: f64,
}

pub fn stat_of(values: &[f64]) -> Stat {
    let n = values.len();
    if n == 0 {
        return Stat::default();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Stat { mean, std: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Stat { mean, std: var.sqrt() }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MethodSummary {
    pub seeds: usize,
    pub reached_target: usize,
    pub train_iters: Stat,
    pub sim_epochs_total: Stat,
    pub sim_epochs_jacobian: Stat,
    pub sim_epochs_training: Stat,
    pub sim_epochs_evaluation: Stat,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub env: String,
    pub seeds: Vec<u64>,
    pub deps: Option<MethodSummary>,
    pub linear: Option<MethodSummary>,
}

pub fn summarize(rows: &[MetricsRow], env: &str, seeds: &[u64]) -> Summary {
    let method_summary = |id: &str| -> Option<MethodSummary> {
        let subset: Vec<&MetricsRow> = rows.iter().filter(|r| r.method == id).collect();
        if subset.is_empty() {
            return None;
        }
        let pick = |f: &dyn Fn(&MetricsRow) -> u64| -> Stat {
            stat_of(&subset.iter().map(|r| f(r) as f64).collect::<Vec<f64>>())
        };
        Some(MethodSummary {
            seeds: subset.len(),
            reached_target: subset.iter().filter(|r| r.reached_target).count(),
            train_iters: pick(&|r| r.train_iters),
            sim_epochs_total: pick(&|r| r.sim_epochs_total),
            sim_epochs_jacobian: pick(&|r| r.sim_epochs_jacobian),
            sim_epochs_training: pick(&|r| r.sim_epochs_training),
            sim_epochs_evaluation: pick(&|r| r.sim_epochs_evaluation),
        })
    };
    Summary {
        schema_version: 1,
        env: env.to_string(),
        seeds: seeds.to_vec(),
        deps: method_summary("deps"),
        linear: method_summary("linear"),
    }
}
