//! Report output: JSON always available, plus an aligned text table and CSV.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::capacity::CapacityReport;
use crate::error::{BenchError, Result};
use crate::recovery::RecoveryReport;
use crate::static_sweep::StaticReport;
use crate::streaming::StreamingReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Text,
    Csv,
}

impl FromStr for Format {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "text" | "txt" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            _ => Err(BenchError::preset(format!("unknown report format {s:?} (json, text, csv)"))),
        }
    }
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Text => "txt",
            Format::Csv => "csv",
        }
    }
}

/// A report table: header plus string cells.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| -> String {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn pct_opt(x: Option<f64>) -> String {
    x.map(pct).unwrap_or_else(|| "n/a".into())
}

fn pm(mean: f64, ci: f64) -> String {
    format!("{:+.2} ± {:.2}", 100.0 * mean, 100.0 * ci)
}

pub trait Report: Serialize {
    fn table(&self) -> Table;

    /// Lines printed above the table in text output.
    fn preamble(&self) -> String {
        String::new()
    }

    fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn to_text(&self) -> String {
        let mut out = self.preamble();
        out.push_str(&self.table().to_text());
        out
    }
}

impl Report for StaticReport {
    fn preamble(&self) -> String {
        format!("{} ({}; {} base, {} queries, R@{}), seed {}\n", self.preset, self.dataset, self.n_base, self.n_queries, self.k, self.seed)
    }

    fn table(&self) -> Table {
        let mut t = Table::new(&["variant", "n_probe", "rerank", "recall%", "qps", "bits/vec"]);
        for r in &self.rows {
            t.push(vec![
                r.variant.clone(),
                r.n_probe.to_string(),
                r.rerank_depth.to_string(),
                pct(r.recall),
                format!("{:.0}", r.qps),
                r.bits_per_vec.to_string(),
            ]);
        }
        t
    }
}

impl Report for StreamingReport {
    fn preamble(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} ({}, {} order; L={}, n_probe={}, {} queries; IVF-TQ {} bits/vec, IVF-PQ {} bits/vec)",
            self.preset, self.dataset, self.order, self.n_lists, self.n_probe, self.n_queries, self.tq_bits_per_vec, self.pq_bits_per_vec
        );
        let _ = writeln!(out, "delta IVF-TQ      {} pp", pm(s.delta_ivf_tq.mean, s.delta_ivf_tq.ci95));
        let _ = writeln!(out, "delta PQ stale    {} pp", pm(s.delta_pq_stale.mean, s.delta_pq_stale.ci95));
        if let Some(r) = &s.delta_pq_retrain {
            let _ = writeln!(out, "delta PQ retrain  {} pp", pm(r.mean, r.ci95));
        }
        let _ = writeln!(out, "final gap TQ-PQ   {} pp", pm(s.final_gap.mean, s.final_gap.ci95));
        if let Some(m) = s.max_abs_retrain_minus_stale {
            let _ = writeln!(out, "max |retrain - stale| {:.2} pp", 100.0 * m);
        }
        out
    }

    fn table(&self) -> Table {
        let mut t = Table::new(&["seed", "n", "ivf_tq%", "pq_stale%", "pq_retrain%", "retrain_secs"]);
        for run in &self.runs {
            for r in &run.rows {
                t.push(vec![
                    run.seed.to_string(),
                    r.cumulative_n.to_string(),
                    pct(r.recall.ivf_tq),
                    pct(r.recall.pq_stale),
                    pct_opt(r.recall.pq_retrain),
                    r.cumulative_retrain_secs.pq_retrain.map(|s| format!("{s:.1}")).unwrap_or_else(|| "n/a".into()),
                ]);
            }
        }
        t
    }
}

impl Report for CapacityReport {
    fn preamble(&self) -> String {
        format!(
            "{} ({}; database {}, training samples {}, {} queries, PQ {} bits/vec)\n",
            self.preset, self.dataset, self.n_database, self.n_train, self.n_queries, self.pq_bits_per_vec
        )
    }

    fn table(&self) -> Table {
        let mut t = Table::new(&["seed", "prefix%", "random%", "full%", "B-A pp", "C-B pp", "SE pp"]);
        for s in &self.seeds {
            t.push(vec![
                s.seed.to_string(),
                pct(s.variants[0].recall),
                pct(s.variants[1].recall),
                pct(s.variants[2].recall),
                format!("{:+.2}", 100.0 * s.bias),
                format!("{:+.2}", 100.0 * s.capacity),
                format!("{:.2}", 100.0 * s.standard_error),
            ]);
        }
        t
    }
}

impl Report for RecoveryReport {
    fn preamble(&self) -> String {
        format!(
            "{} ({}; L={}, n_probe={}, rerank depth {}, {} queries)\n",
            self.preset, self.dataset, self.n_lists, self.n_probe, self.rerank_depth, self.n_queries
        )
    }

    fn table(&self) -> Table {
        let mut t = Table::new(&["seed", "arm", "recall%", "recall_rr%", "refreshes", "maint_secs", "retrain_secs"]);
        for s in &self.seeds {
            for a in &s.arms {
                t.push(vec![
                    s.seed.to_string(),
                    a.arm.clone(),
                    pct(a.recall_no_rerank),
                    pct_opt(a.recall_rerank),
                    a.refresh_calls.to_string(),
                    format!("{:.1}", a.maintenance_secs),
                    format!("{:.1}", a.retrain_secs),
                ]);
            }
        }
        t
    }
}

pub fn render<R: Report>(report: &R, format: Format) -> Result<String> {
    match format {
        Format::Json => report.to_json(),
        Format::Text => Ok(report.to_text()),
        Format::Csv => report.table().to_csv(),
    }
}

/// Writes `report` to `path` in `format`.
pub fn emit_report<R: Report>(report: &R, format: Format, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, render(report, format)?)?;
    Ok(())
}
