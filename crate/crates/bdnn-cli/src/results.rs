//! Versioned results CSV shared by every command.

use std::io::Write;
use std::path::Path;

use anyhow::Context;
use bdnn::Metrics;

pub const SCHEMA_VERSION: u32 = 1;

pub const HEADER: &str = "schema_version,command,method,d1,m,n,seed,epsilon,objective,best_bound,\
                          gap_percent,status,wall_secs,accuracy,precision,recall,f1";

/// One machine-readable run record.
#[derive(Debug, Clone)]
pub struct ResultsRow {
    pub command: String,
    pub method: String,
    pub d1: usize,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub objective: Option<f64>,
    pub best_bound: Option<f64>,
    pub gap_percent: Option<f64>,
    pub status: String,
    pub wall_secs: f64,
    pub metrics: Option<Metrics>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

impl ResultsRow {
    pub fn to_csv_line(&self) -> String {
        let (acc, prec, rec, f1) = match &self.metrics {
            Some(m) => (
                format!("{}", m.accuracy),
                format!("{}", m.precision),
                format!("{}", m.recall),
                format!("{}", m.f1),
            ),
            None => Default::default(),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.3},{},{},{},{}",
            SCHEMA_VERSION,
            self.command,
            self.method,
            self.d1,
            self.m,
            self.n,
            self.seed,
            self.epsilon,
            opt(self.objective),
            opt(self.best_bound),
            opt(self.gap_percent),
            self.status,
            self.wall_secs,
            acc,
            prec,
            rec,
            f1
        )
    }
}

/// Appends rows, writing the header when the file is new or empty.
pub fn append_rows(path: &Path, rows: &[ResultsRow]) -> anyhow::Result<()> {
    let need_header = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening results file {}", path.display()))?;
    if need_header {
        writeln!(file, "{HEADER}")?;
    }
    for row in rows {
        writeln!(file, "{}", row.to_csv_line())?;
    }
    Ok(())
}
