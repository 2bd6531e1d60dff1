//! CSV and text output. Everything written here is a pure function of the
//! report contents, so identical runs give byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rhomap_core::metrics::{aggregate, MeanStd, ReportRow, SummaryRow, RPE_TARGET_PCT};
use serde::Serialize;

use crate::experiments::ExperimentReport;
use crate::{HarnessError, Result};

#[derive(Debug, Serialize)]
struct SummaryRecord<'a> {
    combo_id: &'a str,
    model_id: &'a str,
    n: usize,
    mae_ms_mean: f64,
    mae_ms_std: Option<f64>,
    mape_pct_mean: f64,
    mape_pct_std: Option<f64>,
    re_ms_mean: f64,
    re_ms_std: Option<f64>,
    rpe_pct_mean: f64,
    rpe_pct_std: Option<f64>,
    rpe_below_target: bool,
}

fn sorted_rows(rows: &[ReportRow]) -> Vec<ReportRow> {
    let mut v = rows.to_vec();
    v.sort_by(|a, b| {
        (&a.combo_id, &a.model_id, &a.subject_id).cmp(&(&b.combo_id, &b.model_id, &b.subject_id))
    });
    v
}

fn write_csv<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| rhomap_core::Error::io(path, e))?;
    Ok(())
}

pub fn write_rows_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_csv(path, sorted_rows(rows))
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?)
}

pub fn write_summary_csv(path: &Path, summary: &[SummaryRow]) -> Result<()> {
    write_csv(
        path,
        summary.iter().map(|s| SummaryRecord {
            combo_id: &s.combo_id,
            model_id: &s.model_id,
            n: s.rpe_pct.n,
            mae_ms_mean: s.mae_ms.mean,
            mae_ms_std: s.mae_ms.std,
            mape_pct_mean: s.mape_pct.mean,
            mape_pct_std: s.mape_pct.std,
            re_ms_mean: s.re_ms.mean,
            re_ms_std: s.re_ms.std,
            rpe_pct_mean: s.rpe_pct.mean,
            rpe_pct_std: s.rpe_pct.std,
            rpe_below_target: s.meets_rpe_target(),
        }),
    )
}

fn cell(m: &MeanStd) -> String {
    match m.std {
        Some(s) => format!("{:.2} ± {:.2}", m.mean, s),
        None => format!("{:.2}", m.mean),
    }
}

/// Model x combo grids of mean ± std for each metric.
pub fn summary_text(summary: &[SummaryRow]) -> String {
    let mut combos: Vec<&str> = summary.iter().map(|s| s.combo_id.as_str()).collect();
    combos.sort_unstable();
    combos.dedup();
    let mut models: Vec<&str> = summary.iter().map(|s| s.model_id.as_str()).collect();
    models.sort_unstable();
    models.dedup();
    let metrics: [(&str, fn(&SummaryRow) -> &MeanStd); 4] = [
        ("MAE (ms)", |s| &s.mae_ms),
        ("MAPE (%)", |s| &s.mape_pct),
        ("RE (ms)", |s| &s.re_ms),
        ("RPE (%)", |s| &s.rpe_pct),
    ];
    let mut out = String::new();
    for (name, get) in metrics {
        let _ = writeln!(out, "{name}");
        let _ = write!(out, "{:<16}", "model");
        for c in &combos {
            let _ = write!(out, "{c:>18}");
        }
        out.push('\n');
        for m in &models {
            let _ = write!(out, "{m:<16}");
            for c in &combos {
                let text = summary
                    .iter()
                    .find(|s| s.combo_id == *c && s.model_id == *m)
                    .map(|s| {
                        let mark = if name.starts_with("RPE") && s.meets_rpe_target() { "*" } else { " " };
                        format!("{}{mark}", cell(get(s)))
                    })
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, "{text:>18}");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    let _ = writeln!(out, "* mean RPE below the {RPE_TARGET_PCT}% target");
    out
}

fn report_text(rep: &ExperimentReport, summary: &[SummaryRow]) -> String {
    let mut out = format!("{}\n\n", rep.name);
    out.push_str(&summary_text(summary));
    if !rep.best.is_empty() {
        out.push_str("\nbest learned model per combo (lowest mean RPE)\n");
        for b in &rep.best {
            let _ = writeln!(
                out,
                "  {:<8} {:<14} RPE {:.2}%  (nlls_2pt {:.2}%)  {}",
                b.combo_id,
                b.model_id,
                b.rpe_mean_pct,
                b.nlls_rpe_mean_pct,
                if b.meets_target { "below target" } else { "ABOVE TARGET" }
            );
        }
    }
    if rep.comparisons.iter().any(|c| c.holds.is_some()) {
        out.push_str("\nexpected directions\n");
        for c in rep.comparisons.iter().filter(|c| c.holds.is_some()) {
            let status = if c.holds == Some(true) { "ok" } else { "WARN" };
            let _ = writeln!(
                out,
                "  {:<4} {:<8} {:<30} ({} {:.2}%, {} {:.2}%)",
                status, c.combo_id, c.expectation, c.left_model, c.left_rpe_pct, c.right_model, c.right_rpe_pct
            );
        }
    }
    if !rep.checks.is_empty() {
        out.push_str("\nchecks\n");
        for c in &rep.checks {
            let _ = writeln!(out, "  {:<4} {}", if c.passed { "ok" } else { "FAIL" }, c.name);
        }
    }
    out
}

/// Writes `<name>_rows.csv`, `<name>_summary.csv`, `<name>_summary.txt` and,
/// when present, comparison, best-model and oracle tables. Returns the
/// written paths in order.
pub fn emit_report(reports: &[ExperimentReport], dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() || reports.iter().all(|r| r.rows.is_empty()) {
        return Err(rhomap_core::Error::NothingToReport.into());
    }
    std::fs::create_dir_all(dir).map_err(|e| rhomap_core::Error::io(dir, e))?;
    let mut written = Vec::new();
    for rep in reports {
        let summary = rep.summary()?;
        let path = |suffix: &str| dir.join(format!("{}_{suffix}", rep.name));

        let p = path("rows.csv");
        write_rows_csv(&p, &rep.rows)?;
        written.push(p);
        let p = path("summary.csv");
        write_summary_csv(&p, &summary)?;
        written.push(p);
        if !rep.comparisons.is_empty() {
            let p = path("comparison.csv");
            write_csv(&p, &rep.comparisons)?;
            written.push(p);
        }
        if !rep.best.is_empty() {
            let p = path("best.csv");
            write_csv(&p, &rep.best)?;
            written.push(p);
        }
        if !rep.oracle_rows.is_empty() {
            let p = path("oracle.csv");
            write_rows_csv(&p, &rep.oracle_rows)?;
            written.push(p);
        }
        let p = path("summary.txt");
        std::fs::write(&p, report_text(rep, &summary)).map_err(|e| rhomap_core::Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

/// Recomputes a summary from one or more row CSVs.
pub fn summarize_rows_files(paths: &[PathBuf]) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_rows_csv(p)?);
    }
    if rows.is_empty() {
        return Err(HarnessError::Core(rhomap_core::Error::NothingToReport));
    }
    Ok(aggregate(&rows)?)
}
