use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExperimentResult;
use crate::error::{DpsuError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl ReportFormat {
    /// `.md` is Markdown, `.csv` is CSV, anything else JSON.
    pub fn from_path(path: &Path) -> ReportFormat {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("md" | "markdown") => ReportFormat::Markdown,
            Some("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

impl FromStr for ReportFormat {
    type Err = DpsuError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(DpsuError::invalid(format!("unknown report format `{other}`"))),
        }
    }
}

pub fn render_report(result: &ExperimentResult, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(result)?;
            s.push('\n');
            s
        }
        ReportFormat::Csv => render_csv(result),
        ReportFormat::Markdown => render_markdown(result),
    })
}

pub fn emit_report(result: &ExperimentResult, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_report(result, format)?).map_err(|e| DpsuError::io(path, e))
}

fn finite_or_empty(x: f64) -> String {
    if x.is_finite() { x.to_string() } else { String::new() }
}

/// Long format, one row per cell.
fn render_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("mechanism,epsilon,delta0,alpha,passes,mean,sd\n");
    for c in &result.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.cell.mechanism,
            c.cell.epsilon,
            c.cell.delta0,
            c.cell.alpha,
            c.cell.passes,
            finite_or_empty(c.mean),
            finite_or_empty(c.sd),
        );
    }
    out
}

/// One table per (ε, α, passes): rows are mechanisms, columns Δ0.
fn render_markdown(result: &ExperimentResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Released set sizes\n");
    let _ = writeln!(out, "> {}\n", result.label);
    let seeds: Vec<String> = result.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(
        out,
        "users: {}, items: {}, delta: {}, seeds: {}\n",
        result.n_users,
        result.n_items,
        result.delta,
        seeds.join(", ")
    );

    let mut blocks: Vec<(f64, f64, u32)> = Vec::new();
    let mut mechanisms = Vec::new();
    let mut delta0s = Vec::new();
    for c in &result.cells {
        let key = (c.cell.epsilon, c.cell.alpha, c.cell.passes);
        if !blocks.contains(&key) {
            blocks.push(key);
        }
        if !mechanisms.contains(&c.cell.mechanism) {
            mechanisms.push(c.cell.mechanism);
        }
        if !delta0s.contains(&c.cell.delta0) {
            delta0s.push(c.cell.delta0);
        }
    }

    for (eps, alpha, passes) in blocks {
        let _ = writeln!(out, "## epsilon = {eps}, alpha = {alpha}, passes = {passes}\n");
        let header: Vec<String> = delta0s.iter().map(|d| format!("delta0 = {d}")).collect();
        let _ = writeln!(out, "| mechanism | {} |", header.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(delta0s.len()));
        for m in &mechanisms {
            let row: Vec<String> = delta0s
                .iter()
                .map(|&d| match result.cell(*m, eps, d, alpha, passes) {
                    Some(c) if c.error.is_none() => format!("{:.1} ± {:.1}", c.mean, c.sd),
                    Some(_) => "error".to_string(),
                    None => String::new(),
                })
                .collect();
            let _ = writeln!(out, "| {m} | {} |", row.join(" | "));
        }
        out.push('\n');
    }
    out
}
