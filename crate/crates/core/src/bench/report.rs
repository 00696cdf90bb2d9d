use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::explain::Tool;
use crate::metrics::{summarize_with, PdcBreakdown, StdKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    Ok,
    /// The tool or the mask extraction found no mask that keeps the label.
    NoExplanation,
    /// Flat saliency: every mutant scored the same.
    EmptyExplanation,
    OracleUnavailable,
    ToolError,
}

impl RowStatus {
    /// Rows that still carry a score. Failed explanations score zero so
    /// summaries are not biased towards the easy images.
    pub fn is_scored(self) -> bool {
        matches!(
            self,
            RowStatus::Ok | RowStatus::NoExplanation | RowStatus::EmptyExplanation
        )
    }
}

/// One (tool, image) attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub tool: Tool,
    /// 1-based manifest data row.
    pub row: usize,
    pub image: String,
    pub status: RowStatus,
    pub reason: Option<String>,
    /// `None` only for oracle and tool errors.
    pub breakdown: Option<PdcBreakdown>,
    /// Queries seen by the oracle, explainer and extraction together.
    pub queries: u64,
    pub extraction_rounds: usize,
    pub mask_pixels: Option<usize>,
    /// The mask alone, occluded as the tool verified it, is still classified
    /// as the target.
    pub repasses: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(values: &[f64], kind: StdKind) -> Option<Stat> {
        summarize_with(values, kind)
            .ok()
            .map(|(mean, std)| Stat { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSummary {
    pub tool: Tool,
    pub rows: usize,
    /// Rows that entered the statistics.
    pub scored: usize,
    pub failures: usize,
    pub count: Option<Stat>,
    pub dc: Option<Stat>,
    pub pdc: Option<Stat>,
}

/// Everything in here is a function of the manifest, config and oracle;
/// wall times are kept out so reruns produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tools: Vec<Tool>,
    pub budget: usize,
    pub seed: u64,
    pub s: f64,
    pub b: f64,
    pub connectivity: u8,
    pub step: f64,
    pub std: StdKind,
    pub oracle: Option<String>,
    pub manifest_rows: usize,
    /// Rows whose manifest label is not the positive label.
    pub negatives_skipped: usize,
    /// Positive rows the oracle does not classify as positive.
    pub false_negatives: Vec<usize>,
    pub rows: Vec<ReportRow>,
    pub summaries: Vec<ToolSummary>,
}

pub(crate) fn summarize_rows(rows: &[ReportRow], tools: &[Tool], kind: StdKind) -> Vec<ToolSummary> {
    tools
        .iter()
        .map(|&tool| {
            let mine: Vec<&ReportRow> = rows.iter().filter(|r| r.tool == tool).collect();
            let scored: Vec<PdcBreakdown> = mine.iter().filter_map(|r| r.breakdown).collect();
            let pick = |f: fn(&PdcBreakdown) -> f64| -> Vec<f64> { scored.iter().map(f).collect() };
            ToolSummary {
                tool,
                rows: mine.len(),
                scored: scored.len(),
                failures: mine.iter().filter(|r| r.status != RowStatus::Ok).count(),
                count: Stat::of(&pick(|b| b.count as f64), kind),
                dc: Stat::of(&pick(|b| b.dc), kind),
                pdc: Stat::of(&pick(|b| b.pdc), kind),
            }
        })
        .collect()
}

impl RunReport {
    /// Summaries rebuilt from the rows; equal to `summaries` for any report
    /// this crate writes.
    pub fn recompute_summaries(&self) -> Vec<ToolSummary> {
        summarize_rows(&self.rows, &self.tools, self.std)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status != RowStatus::Ok).count()
    }

    /// 0 when every row succeeded, 2 when the oracle was unreachable for
    /// every row, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failures() == 0 {
            0
        } else if self.rows.iter().all(|r| r.status == RowStatus::OracleUnavailable) {
            2
        } else {
            3
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `tool, rows, failures, count, dc, pdc` with `mean ± std` cells.
    pub fn table_csv(&self) -> String {
        let cell = |s: Option<Stat>| match s {
            Some(s) => format!("{:.4} ± {:.4}", s.mean, s.std),
            None => "n/a".to_string(),
        };
        let mut out = String::from("tool,rows,failures,count,dc,pdc\n");
        for t in &self.summaries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                t.tool,
                t.rows,
                t.failures,
                cell(t.count),
                cell(t.dc),
                cell(t.pdc)
            );
        }
        out
    }
}
