use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const TRACE_COLUMNS: [&str; 6] = [
    "iteration",
    "simulated_time",
    "loss",
    "grad_norm_sq",
    "consensus_error",
    "diverged",
];

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// The configured target loss was reached.
    Converged,
    /// All iterations ran without reaching the target.
    BudgetExhausted,
    Diverged,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::BudgetExhausted => "budget_exhausted",
            RunStatus::Diverged => "diverged",
        }
    }

    /// Process exit code: 0 converged, 2 budget exhausted, 3 diverged.
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Converged => 0,
            RunStatus::BudgetExhausted => 2,
            RunStatus::Diverged => 3,
        }
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "converged" => Ok(RunStatus::Converged),
            "budget_exhausted" => Ok(RunStatus::BudgetExhausted),
            "diverged" => Ok(RunStatus::Diverged),
            _ => Err(Error::Config(format!("unknown run status {s:?}"))),
        }
    }
}

/// One recorded iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub simulated_time: f64,
    /// `f(x_bar)`.
    pub loss: f64,
    /// `|grad f(x_bar)|^2`.
    pub grad_norm_sq: f64,
    /// `sum_i |x_i - x_bar|^2`.
    pub consensus_error: f64,
    pub diverged: bool,
}

/// Identifies a run inside sweeps and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub algorithm: String,
    pub tau: usize,
    pub c: f64,
    pub n: usize,
    pub seed: u64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub meta: TraceMeta,
    /// Single-line JSON echo of the configuration.
    pub config_json: String,
    pub status: RunStatus,
    pub rows: Vec<TraceRow>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl RunTrace {
    pub fn final_row(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    fn write_row(out: &mut String, r: &TraceRow, with_time: bool) {
        let _ = write!(out, "{}", r.iteration);
        if with_time {
            let _ = write!(out, ",{}", fmt_f64(r.simulated_time));
        }
        let _ = writeln!(
            out,
            ",{},{},{},{}",
            fmt_f64(r.loss),
            fmt_f64(r.grad_norm_sq),
            fmt_f64(r.consensus_error),
            u8::from(r.diverged)
        );
    }

    /// CSV text: `#`-prefixed header lines, the column line, then rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# oldsgd trace");
        let _ = writeln!(
            out,
            "# meta: {}",
            serde_json::to_string(&self.meta).expect("meta serialises")
        );
        let _ = writeln!(out, "# seed: {}", self.meta.seed);
        let _ = writeln!(out, "# status: {}", self.status);
        let _ = writeln!(out, "# config: {}", self.config_json);
        let _ = writeln!(out, "{}", TRACE_COLUMNS.join(","));
        for r in &self.rows {
            Self::write_row(&mut out, r, true);
        }
        out
    }

    /// The optimisation columns only (no header, no simulated time). Two
    /// algorithms that produce the same iterates produce the same text.
    pub fn optimization_csv(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            Self::write_row(&mut out, r, false);
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Config(format!("malformed trace: {msg}"));
        let mut meta = None;
        let mut status = None;
        let mut config_json = String::new();
        let mut rows = Vec::new();
        let mut seen_columns = false;
        for line in text.lines() {
            if let Some(h) = line.strip_prefix("# ") {
                if let Some(m) = h.strip_prefix("meta: ") {
                    meta = Some(serde_json::from_str(m).map_err(|e| bad(e.to_string()))?);
                } else if let Some(s) = h.strip_prefix("status: ") {
                    status = Some(s.parse()?);
                } else if let Some(c) = h.strip_prefix("config: ") {
                    config_json = c.to_string();
                }
                continue;
            }
            if !seen_columns {
                if line != TRACE_COLUMNS.join(",") {
                    return Err(bad(format!("unexpected column line {line:?}")));
                }
                seen_columns = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != TRACE_COLUMNS.len() {
                return Err(bad(format!("row {line:?} has {} fields", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            rows.push(TraceRow {
                iteration: f[0].parse().map_err(|e| bad(format!("{:?}: {e}", f[0])))?,
                simulated_time: num(f[1])?,
                loss: num(f[2])?,
                grad_norm_sq: num(f[3])?,
                consensus_error: num(f[4])?,
                diverged: f[5] == "1",
            });
        }
        Ok(Self {
            meta: meta.ok_or_else(|| bad("missing meta header".into()))?,
            config_json,
            status: status.ok_or_else(|| bad("missing status header".into()))?,
            rows,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunTrace {
        RunTrace {
            meta: TraceMeta {
                algorithm: "oldsgd".into(),
                tau: 5,
                c: 1.0,
                n: 4,
                seed: 9,
                alpha: 0.01,
            },
            config_json: "{}".into(),
            status: RunStatus::BudgetExhausted,
            rows: vec![
                TraceRow {
                    iteration: 0,
                    simulated_time: 0.0,
                    loss: 1.0 / 3.0,
                    grad_norm_sq: 0.1,
                    consensus_error: 0.0,
                    diverged: false,
                },
                TraceRow {
                    iteration: 5,
                    simulated_time: 5.0,
                    loss: 0.2,
                    grad_norm_sq: 1e-300,
                    consensus_error: 2.5,
                    diverged: true,
                },
            ],
        }
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let t = sample();
        let csv = t.to_csv();
        assert!(csv.contains("iteration,simulated_time,loss,grad_norm_sq,consensus_error,diverged"));
        assert_eq!(RunTrace::parse(&csv).unwrap(), t);
    }

    #[test]
    fn atomic_write_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        sample().write(&p).unwrap();
        assert_eq!(RunTrace::load(&p).unwrap(), sample());
    }
}
