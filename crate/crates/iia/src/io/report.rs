//! Tabular result files: metric tables as CSV plus Markdown, and CSV dumps of
//! randomization reports. All writes go to a temporary file first and are
//! renamed into place, so readers never observe a half-written report.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::sanity::RandomizationReport;

/// One evaluated number: which model and method produced it, what it measures,
/// and which class the attribution explained.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub model: String,
    pub method: String,
    pub metric: String,
    /// How the explained class was chosen, e.g. `predicted` or `ground_truth`.
    pub class_selector: String,
    pub value: f64,
}

fn rename_into_place(tmp: &Path, target: &Path) -> Result<()> {
    std::fs::rename(tmp, target)?;
    Ok(())
}

fn tmp_path(target: &Path) -> PathBuf {
    let mut name = target.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    target.with_file_name(name)
}

/// Write a metric table as `<base>.csv` and `<base>.md`; returns both paths.
/// The CSV keeps full precision; the Markdown table rounds to two decimals.
pub fn write_report(records: &[MetricRecord], base: &Path) -> Result<(PathBuf, PathBuf)> {
    let csv_path = base.with_extension("csv");
    let md_path = base.with_extension("md");
    if let Some(parent) = base.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }

    let csv_tmp = tmp_path(&csv_path);
    {
        let mut writer = csv::Writer::from_path(&csv_tmp)?;
        writer.write_record(["model", "method", "metric", "class_selector", "value"])?;
        for r in records {
            writer.write_record([
                r.model.as_str(),
                r.method.as_str(),
                r.metric.as_str(),
                r.class_selector.as_str(),
                &r.value.to_string(),
            ])?;
        }
        writer.flush()?;
    }
    rename_into_place(&csv_tmp, &csv_path)?;

    let mut md = String::from("| model | method | metric | class | value |\n|---|---|---|---|---|\n");
    for r in records {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {:.2} |\n",
            r.model, r.method, r.metric, r.class_selector, r.value
        ));
    }
    let md_tmp = tmp_path(&md_path);
    std::fs::write(&md_tmp, md)?;
    rename_into_place(&md_tmp, &md_path)?;

    Ok((csv_path, md_path))
}

/// Dump a randomization report as CSV: one row per step with its correlation
/// statistics. When the run also trained a permuted-label twin, its test
/// accuracy repeats in the last column.
pub fn sanity_report_csv(report: &RandomizationReport, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = tmp_path(path);
    {
        let mut writer = csv::Writer::from_path(&tmp)?;
        writer.write_record([
            "mode",
            "step",
            "label",
            "rho_mean",
            "rho_std",
            "rho_median",
            "degenerate",
            "permuted_test_accuracy",
        ])?;
        let accuracy = report
            .permuted_test_accuracy
            .map(|a| a.to_string())
            .unwrap_or_default();
        for (i, step) in report.steps.iter().enumerate() {
            writer.write_record([
                report.mode.name(),
                &i.to_string(),
                &step.label,
                &step.rho_mean.to_string(),
                &step.rho_std.to_string(),
                &step.rho_median.to_string(),
                &step.degenerate.to_string(),
                &accuracy,
            ])?;
        }
        writer.flush()?;
    }
    rename_into_place(&tmp, path)
}
