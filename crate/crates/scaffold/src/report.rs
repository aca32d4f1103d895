//! Per-epoch CSV logs and line-JSON metric reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use scaffold_core::metrics::{CorefReport, Prf};
use scaffold_core::train::EpochStats;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const LOG_HEADER: &str = "epoch,primary_loss,scaffold_loss,dev_metric";

/// One CSV row; floats use the shortest representation that reads back
/// exactly.
pub fn log_row(stats: &EpochStats, dev_metric: Option<f64>) -> String {
    let dev = dev_metric.map(|m| m.to_string()).unwrap_or_default();
    format!("{},{},{},{}", stats.epoch, stats.primary_loss, stats.scaffold_loss, dev)
}

pub struct EpochLog {
    out: Option<BufWriter<File>>,
    rows: Vec<String>,
}

impl EpochLog {
    pub fn create(path: Option<&Path>) -> Result<Self> {
        let out = match path {
            Some(p) => {
                let mut w = BufWriter::new(File::create(p).map_err(|e| AppError::io(p, e))?);
                writeln!(w, "{LOG_HEADER}").map_err(|e| AppError::io(p, e))?;
                Some(w)
            }
            None => None,
        };
        Ok(EpochLog { out, rows: Vec::new() })
    }

    pub fn push(&mut self, stats: &EpochStats, dev_metric: Option<f64>) -> Result<()> {
        let row = log_row(stats, dev_metric);
        if let Some(w) = &mut self.out {
            writeln!(w, "{row}").and_then(|_| w.flush()).map_err(|e| AppError::Data(e.to_string()))?;
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricLine {
    pub metric: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recall: Option<f64>,
    pub f1: f64,
}

impl MetricLine {
    pub fn from_prf(metric: &str, p: &Prf) -> Self {
        MetricLine { metric: metric.into(), precision: Some(p.precision), recall: Some(p.recall), f1: p.f1 }
    }
}

pub fn srl_report(p: &Prf) -> Vec<MetricLine> {
    vec![MetricLine::from_prf("srl", p)]
}

pub fn coref_report(r: &CorefReport) -> Vec<MetricLine> {
    vec![
        MetricLine::from_prf("muc", &r.muc),
        MetricLine::from_prf("b_cubed", &r.b_cubed),
        MetricLine::from_prf("ceaf_phi4", &r.ceaf_phi4),
        MetricLine { metric: "conll_average".into(), precision: None, recall: None, f1: r.average_f1 },
    ]
}

pub fn render(lines: &[MetricLine]) -> String {
    lines.iter().map(|l| serde_json::to_string(l).expect("metric lines serialize") + "\n").collect()
}
