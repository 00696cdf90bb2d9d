use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::manifest::load_row_mask;
use super::report::{summarize_rows, ReportRow, RowStatus, RunReport};
use super::{BenchError, Manifest, ManifestRow, RunConfig};
use crate::explain::{explain_with_segmentation, ExplainError, ExplainerConfig, Target, Tool};
use crate::extract::extract_minimal_mask;
use crate::imaging::io::load_image;
use crate::imaging::{BinaryMask, Connectivity, Image, Occluder};
use crate::metrics::{pdc, PdcBreakdown};
use crate::mutants::segment_image;
use crate::oracle::{CountingOracle, Oracle};

/// Wall time of one (tool, image) attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub tool: Tool,
    pub row: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub timings: Vec<Timing>,
}

/// Builds the oracle named in `config` and runs the benchmark.
pub fn run(manifest: &Manifest, config: &RunConfig) -> Result<RunOutcome, BenchError> {
    config.validate()?;
    let spec = config
        .oracle
        .as_ref()
        .ok_or_else(|| BenchError::Config("no oracle configured".into()))?;
    let oracle = spec.build(config.retries)?;
    run_with_oracle(manifest, config, oracle.as_ref())
}

enum ImageResult {
    FalseNegative(usize),
    Rows(Vec<(ReportRow, Timing)>),
}

/// Every tool on every positive manifest row.
///
/// Rows the oracle does not label positive are skipped and listed as false
/// negatives. Images run in parallel; the report is ordered by tool, then
/// manifest row.
pub fn run_with_oracle(
    manifest: &Manifest,
    config: &RunConfig,
    oracle: &dyn Oracle,
) -> Result<RunOutcome, BenchError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| BenchError::Config(e.to_string()))?;
    let positives: Vec<(usize, &ManifestRow)> = manifest
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.label == config.positive_label)
        .map(|(i, r)| (i + 1, r))
        .collect();
    let results: Vec<Result<ImageResult, BenchError>> = pool.install(|| {
        positives
            .par_iter()
            .map(|&(row, entry)| run_image(row, entry, config, oracle))
            .collect()
    });

    let mut false_negatives = Vec::new();
    let mut per_image = Vec::new();
    for r in results {
        match r? {
            ImageResult::FalseNegative(row) => false_negatives.push(row),
            ImageResult::Rows(rows) => per_image.push(rows),
        }
    }
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for (t, _) in config.tools.iter().enumerate() {
        for image_rows in &per_image {
            let (row, timing) = image_rows[t].clone();
            rows.push(row);
            timings.push(timing);
        }
    }
    let summaries = summarize_rows(&rows, &config.tools, config.std);
    let report = RunReport {
        tools: config.tools.clone(),
        budget: config.budget,
        seed: config.seed,
        s: config.pdc.s,
        b: config.pdc.b,
        connectivity: match config.connectivity {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        },
        step: config.extraction.step,
        std: config.std,
        oracle: config.oracle.as_ref().map(|o| o.to_string()),
        manifest_rows: manifest.len(),
        negatives_skipped: manifest.len() - positives.len(),
        false_negatives,
        rows,
        summaries,
    };
    Ok(RunOutcome { report, timings })
}

fn run_image(
    row: usize,
    entry: &ManifestRow,
    config: &RunConfig,
    oracle: &dyn Oracle,
) -> Result<ImageResult, BenchError> {
    let image = load_image(&entry.image)?;
    let hpe = load_row_mask(row, &entry.mask)?;
    if hpe.shape() != image.shape() {
        return Err(BenchError::BadMask {
            row,
            reason: format!("mask is {:?}, image is {:?}", hpe.shape(), image.shape()),
        });
    }
    let original = match oracle.classify(&image) {
        Ok(p) => p,
        Err(e) => {
            let status = if e.is_unavailable() {
                RowStatus::OracleUnavailable
            } else {
                RowStatus::ToolError
            };
            let rows = config
                .tools
                .iter()
                .map(|&tool| {
                    let r = failure(tool, row, entry, status, e.to_string(), 0);
                    (r, Timing { tool, row, seconds: 0.0 })
                })
                .collect();
            return Ok(ImageResult::Rows(rows));
        }
    };
    if original.label != config.positive_label {
        return Ok(ImageResult::FalseNegative(row));
    }
    let segmentation = if config.tools.iter().any(|t| t.needs_segmentation()) {
        Some(segment_image(&image, config.tool_params.segments).map_err(ExplainError::from))
    } else {
        None
    };
    let rows = config
        .tools
        .iter()
        .map(|&tool| {
            let start = Instant::now();
            let r = match &segmentation {
                Some(Err(e)) if tool.needs_segmentation() => {
                    failure(tool, row, entry, RowStatus::ToolError, e.to_string(), 0)
                }
                seg => {
                    let seg = seg.as_ref().and_then(|s| s.as_ref().ok());
                    attempt(tool, row, entry, &image, &hpe, seg, &original.label, config, oracle)
                }
            };
            let seconds = start.elapsed().as_secs_f64();
            (r, Timing { tool, row, seconds })
        })
        .collect();
    Ok(ImageResult::Rows(rows))
}

fn failure(tool: Tool, row: usize, entry: &ManifestRow, status: RowStatus, reason: String, queries: u64) -> ReportRow {
    ReportRow {
        tool,
        row,
        image: entry.name.clone(),
        status,
        reason: Some(reason),
        breakdown: status.is_scored().then_some(PdcBreakdown::EMPTY),
        queries,
        extraction_rounds: 0,
        mask_pixels: None,
        repasses: None,
    }
}

fn error_status(e: &ExplainError) -> RowStatus {
    match e {
        ExplainError::NoExplanation(_) => RowStatus::NoExplanation,
        ExplainError::Oracle(o) if o.is_unavailable() => RowStatus::OracleUnavailable,
        _ => RowStatus::ToolError,
    }
}

#[allow(clippy::too_many_arguments)]
fn attempt(
    tool: Tool,
    row: usize,
    entry: &ManifestRow,
    image: &Image,
    hpe: &BinaryMask,
    segmentation: Option<&crate::mutants::Segmentation>,
    target: &str,
    config: &RunConfig,
    oracle: &dyn Oracle,
) -> ReportRow {
    let counted = CountingOracle::new(oracle);
    let cfg = ExplainerConfig {
        budget: config.budget,
        seed: config.seed,
        // The label is already known from the false-negative filter.
        target: Target::Label(target.to_string()),
        occlusion: None,
    };
    let explanation = match explain_with_segmentation(tool, image, &counted, &cfg, &config.tool_params, segmentation) {
        Ok(e) => e,
        Err(e) => return failure(tool, row, entry, error_status(&e), e.to_string(), counted.query_count()),
    };
    let (mask, occlusion, rounds) = match (explanation.mask, explanation.mask_occlusion) {
        (Some(mask), Some(occlusion)) => (mask, occlusion, 0),
        _ if explanation.saliency.is_flat() => {
            return failure(
                tool,
                row,
                entry,
                RowStatus::EmptyExplanation,
                "saliency is constant".into(),
                counted.query_count(),
            )
        }
        _ => match extract_minimal_mask(&explanation.saliency, image, &counted, target, &config.extraction) {
            Ok(x) => (x.mask, config.extraction.occlusion, x.rounds),
            Err(e) => {
                return failure(tool, row, entry, error_status(&e), e.to_string(), counted.query_count())
            }
        },
    };
    let queries = counted.query_count();
    // Checked against the raw oracle so the audit does not count against the
    // tool.
    let repasses = Occluder::new(image, occlusion, segmentation)
        .and_then(|o| o.apply(&mask))
        .ok()
        .and_then(|m| oracle.classify(&m).ok())
        .map(|p| p.label == target);
    let scored = pdc(&mask, hpe, config.pdc, config.connectivity);
    match scored {
        Ok(breakdown) => ReportRow {
            tool,
            row,
            image: entry.name.clone(),
            status: RowStatus::Ok,
            reason: None,
            breakdown: Some(breakdown),
            queries,
            extraction_rounds: rounds,
            mask_pixels: Some(mask.count()),
            repasses,
        },
        Err(e) => failure(tool, row, entry, RowStatus::ToolError, e.to_string(), queries),
    }
}

/// Writes `report.json`, `table.csv` and `timings.csv` into `dir`.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<(), BenchError> {
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|source| BenchError::Write {
            path: path.display().to_string(),
            source,
        })
    };
    fs::create_dir_all(dir).map_err(|source| BenchError::Write {
        path: dir.display().to_string(),
        source,
    })?;
    write("report.json", outcome.report.to_json())?;
    write("table.csv", outcome.report.table_csv())?;
    let mut timings = String::from("tool,row,seconds\n");
    for t in &outcome.timings {
        timings.push_str(&format!("{},{},{:.6}\n", t.tool, t.row, t.seconds));
    }
    write("timings.csv", timings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{ingest, synth_dataset, ConfigOverrides, SynthParams};
    use crate::oracle::{ConstantOracle, OracleError, Prediction};

    fn dataset(count: usize) -> (tempfile::TempDir, Manifest) {
        let dir = tempfile::tempdir().unwrap();
        let params = SynthParams {
            count,
            height: 32,
            width: 32,
            blob_min: 8,
            blob_max: 12,
            seed: 11,
        };
        let manifest = ingest(&synth_dataset(&params, dir.path()).unwrap()).unwrap();
        (dir, manifest)
    }

    fn config(text: &str) -> RunConfig {
        RunConfig::from_overrides(ConfigOverrides::parse(text).unwrap()).unwrap()
    }

    #[test]
    fn rise_run_respects_budget() {
        let (_dir, manifest) = dataset(3);
        let cfg = config("tools = [\"rise\"]\nbudget = 100\noracle = \"blob:8:0.8\"\n");
        let out = run(&manifest, &cfg).unwrap();
        let report = &out.report;
        assert_eq!(report.summaries.len(), 1);
        assert_eq!(report.rows.len(), 3);
        for r in &report.rows {
            assert!(r.queries as usize <= 100 + r.extraction_rounds, "{r:?}");
        }
        assert_eq!(report.recompute_summaries(), report.summaries);
        assert_eq!(out.timings.len(), 3);
    }

    #[test]
    fn all_tools_rows_and_determinism() {
        let (_dir, manifest) = dataset(2);
        let cfg = config("budget = 300\noracle = \"blob:8:0.8\"\nworkers = 2\n");
        let a = run(&manifest, &cfg).unwrap().report;
        assert_eq!(a.rows.len(), 4 * 2);
        let order: Vec<(Tool, usize)> = a.rows.iter().map(|r| (r.tool, r.row)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        for r in a.rows.iter().filter(|r| r.status == RowStatus::Ok) {
            assert_eq!(r.repasses, Some(true), "{r:?}");
        }
        let b = run(&manifest, &config("budget = 300\noracle = \"blob:8:0.8\"\nworkers = 1\n")).unwrap().report;
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn false_negatives_are_skipped() {
        let (_dir, manifest) = dataset(2);
        let cfg = config("tools = [\"rex\"]\nbudget = 50\n");
        let out = run_with_oracle(&manifest, &cfg, &ConstantOracle::new("no_tumor", 0.9)).unwrap();
        assert_eq!(out.report.false_negatives, [1, 2]);
        assert!(out.report.rows.is_empty());
        assert_eq!(out.report.exit_code(), 0);
    }

    struct Down;

    impl Oracle for Down {
        fn classify(&self, _: &Image) -> Result<Prediction, OracleError> {
            Err(OracleError::Unavailable("connection refused".into()))
        }

        fn query_count(&self) -> u64 {
            0
        }
    }

    #[test]
    fn unreachable_oracle_fills_rows() {
        let (_dir, manifest) = dataset(2);
        let cfg = config("tools = [\"rise\", \"lime\"]\nbudget = 50\n");
        let report = run_with_oracle(&manifest, &cfg, &Down).unwrap().report;
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows.iter().all(|r| r.status == RowStatus::OracleUnavailable && r.breakdown.is_none()));
        assert_eq!(report.exit_code(), 2);
        assert!(report.summaries.iter().all(|s| s.pdc.is_none()));
    }

    #[test]
    fn missing_oracle_is_a_config_error() {
        let (_dir, manifest) = dataset(1);
        assert!(matches!(run(&manifest, &config("")), Err(BenchError::Config(_))));
    }

    #[test]
    fn outputs_written() {
        let (dir, manifest) = dataset(1);
        let cfg = config("tools = [\"rex\"]\nbudget = 200\noracle = \"blob:8:0.8\"\n");
        let out = run(&manifest, &cfg).unwrap();
        let target = dir.path().join("out");
        write_outputs(&out, &target).unwrap();
        let json = fs::read_to_string(target.join("report.json")).unwrap();
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, out.report);
        assert!(fs::read_to_string(target.join("table.csv")).unwrap().starts_with("tool,rows"));
        assert_eq!(fs::read_to_string(target.join("timings.csv")).unwrap().lines().count(), 2);
    }
}
