use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{AggregateRow, RunOutcome};
use crate::error::Result;
use crate::matrix::format_f64;
use crate::spectral::SpectralReport;

/// One JSON object per successful run, in outcome order.
pub fn records_jsonl(outcomes: &[RunOutcome]) -> Result<String> {
    let mut out = String::new();
    for rec in outcomes.iter().filter_map(|o| o.result.as_ref().ok()) {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    Ok(out)
}

/// `kind,r_tot,b,runs,median_initial_loss,median_final_loss,median_improvement,`
/// followed by the spectral row schema filled with per-config medians.
pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = format!(
        "kind,r_tot,b,runs,median_initial_loss,median_final_loss,median_improvement,{}\n",
        SpectralReport::CSV_HEADER
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.kind,
            r.r_tot,
            r.b,
            r.runs,
            format_f64(r.median_initial_loss),
            format_f64(r.median_final_loss),
            format_f64(r.median_improvement),
            r.matrix_id(),
            format_f64(r.median_stable_rank),
            format_f64(r.median_effective_rank),
            format_f64(r.median_count_1pct),
            format_f64(r.median_energy),
            format_f64(r.median_block_gini),
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub records: PathBuf,
    pub aggregate: PathBuf,
}

/// Writes `records.jsonl` and `aggregate.csv` under `dir`, creating it.
pub fn write_outputs(
    dir: &Path,
    outcomes: &[RunOutcome],
    rows: &[AggregateRow],
) -> Result<OutputPaths> {
    fs::create_dir_all(dir)?;
    let paths = OutputPaths {
        records: dir.join("records.jsonl"),
        aggregate: dir.join("aggregate.csv"),
    };
    fs::write(&paths.records, records_jsonl(outcomes)?)?;
    fs::write(&paths.aggregate, aggregate_csv(rows))?;
    Ok(paths)
}
