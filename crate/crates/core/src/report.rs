//! Run reports: per-seed metrics with mean and population standard
//! deviation, serialized as JSON for machines and aligned columns for
//! humans, plus the CSV tables emitted by the sweep and ablation commands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OddaError, Result};

/// Per-seed values of one metric for one method, with summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub metric: String,
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `values`.
    pub std: f64,
    pub hyperparameters: serde_json::Value,
}

impl RunReport {
    pub fn new(
        method: impl Into<String>,
        metric: impl Into<String>,
        seeds: Vec<u64>,
        values: Vec<f64>,
        hyperparameters: serde_json::Value,
    ) -> Self {
        assert_eq!(seeds.len(), values.len());
        let (mean, std) = mean_std(&values);
        Self {
            method: method.into(),
            metric: metric.into(),
            seeds,
            values,
            mean,
            std,
            hyperparameters,
        }
    }
}

/// Arithmetic mean and population sigma.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Human-readable aligned table for a list of reports.
pub fn render_text(reports: &[RunReport]) -> String {
    let mut out = String::new();
    let name_w = reports.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    out.push_str(&format!("{:name_w$}  {:>8}  {:>8}  per-seed\n", "method", "mean", "std"));
    for r in reports {
        let per_seed: Vec<String> = r.values.iter().map(|v| format!("{v:.4}")).collect();
        out.push_str(&format!(
            "{:name_w$}  {:>8.4}  {:>8.4}  [{}]\n",
            r.method,
            r.mean,
            r.std,
            per_seed.join(", ")
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Noise-sweep table: methods x p_n matrix of mean macro-F1
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub p_n_values: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub means: Vec<f64>,
}

impl SweepTable {
    /// CSV matrix, one row per method, one column per noise level. Values
    /// print in shortest round-trip form so parsing recovers them exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for p in &self.p_n_values {
            out.push_str(&format!(",p_n={p}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.method);
            for v in &row.means {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| OddaError::Data("empty sweep table".into()))?;
        let mut cols = header.split(',');
        if cols.next() != Some("method") {
            return Err(OddaError::Data("sweep table must start with a `method` column".into()));
        }
        let p_n_values: Vec<f64> = cols
            .map(|c| {
                c.strip_prefix("p_n=")
                    .ok_or_else(|| OddaError::Data(format!("bad sweep column `{c}`")))?
                    .parse()
                    .map_err(|e| OddaError::Data(format!("bad noise level in `{c}`: {e}")))
            })
            .collect::<Result<_>>()?;
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split(',');
            let method = parts
                .next()
                .ok_or_else(|| OddaError::Data("missing method cell".into()))?
                .to_string();
            let means: Vec<f64> = parts
                .map(|v| v.parse().map_err(|e| OddaError::Data(format!("bad value `{v}`: {e}"))))
                .collect::<Result<_>>()?;
            if means.len() != p_n_values.len() {
                return Err(OddaError::Data(format!(
                    "row `{method}` has {} values for {} noise levels",
                    means.len(),
                    p_n_values.len()
                )));
            }
            rows.push(SweepRow { method, means });
        }
        Ok(Self { p_n_values, rows })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path)?)
    }
}

// ---------------------------------------------------------------------------
// Ablation grid: (tau, alpha, m) cells carrying full per-seed reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateCell {
    pub tau: f64,
    pub alpha: f64,
    pub m: usize,
    pub report: RunReport,
    pub best: bool,
}

/// CSV with per-seed columns so each cell's report reconstructs exactly.
pub fn ablate_to_csv(cells: &[AblateCell]) -> String {
    let seeds: &[u64] = cells.first().map(|c| c.report.seeds.as_slice()).unwrap_or(&[]);
    let mut out = String::from("tau,alpha,m,mean,std,best");
    for s in seeds {
        out.push_str(&format!(",seed_{s}"));
    }
    out.push('\n');
    for cell in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            cell.tau, cell.alpha, cell.m, cell.report.mean, cell.report.std, cell.best
        ));
        for v in &cell.report.values {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn parse_ablate_csv(text: &str, method: &str, metric: &str) -> Result<Vec<AblateCell>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| OddaError::Data("empty ablation table".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 6 || cols[..6] != ["tau", "alpha", "m", "mean", "std", "best"] {
        return Err(OddaError::Data("unexpected ablation table header".into()));
    }
    let seeds: Vec<u64> = cols[6..]
        .iter()
        .map(|c| {
            c.strip_prefix("seed_")
                .ok_or_else(|| OddaError::Data(format!("bad seed column `{c}`")))?
                .parse()
                .map_err(|e| OddaError::Data(format!("bad seed column `{c}`: {e}")))
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 + seeds.len() {
            return Err(OddaError::Data(format!("short ablation row `{line}`")));
        }
        let num = |i: usize| -> Result<f64> {
            parts[i].parse().map_err(|e| OddaError::Data(format!("bad cell `{}`: {e}", parts[i])))
        };
        let values: Vec<f64> =
            (6..parts.len()).map(num).collect::<Result<_>>()?;
        let report = RunReport::new(method, metric, seeds.clone(), values, serde_json::Value::Null);
        // mean/std columns must agree with the recomputed statistics
        if (report.mean - num(3)?).abs() > 1e-9 || (report.std - num(4)?).abs() > 1e-9 {
            return Err(OddaError::Data(format!("inconsistent statistics in row `{line}`")));
        }
        cells.push(AblateCell {
            tau: num(0)?,
            alpha: num(1)?,
            m: parts[2]
                .parse()
                .map_err(|e| OddaError::Data(format!("bad m `{}`: {e}", parts[2])))?,
            report,
            best: parts[5] == "true",
        });
    }
    Ok(cells)
}
