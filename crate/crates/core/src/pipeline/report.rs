use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ensure_parent, read_json, write_json, ExperimentReport, PipelineError};
use crate::fairness_eval::MeanSd;

const REPORT_JSON: &str = "report.json";

fn pm(m: &Option<MeanSd>) -> String {
    match m {
        Some(m) => format!("{:.3} ± {:.3}", m.mean, m.sd),
        None => "n/a".into(),
    }
}

/// Plain-text comparison table, CIs, sign tests and checks.
pub fn render_report(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let seeds: Vec<String> = report.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(
        out,
        "Seeds: {} ({} runs per condition); augmentation mode: {}",
        seeds.join(", "),
        report.seeds.len(),
        report.augmentation_mode.as_str()
    );
    let _ = writeln!(out);

    let mut header = vec!["Model".to_string(), "Overall".to_string()];
    header.extend(report.groups.iter().map(|g| format!("Acc {g}")));
    header.push("Bias Gap".into());
    let mut rows = vec![header];
    for s in &report.summaries {
        let mut row = vec![s.condition.display_name().to_string(), pm(&s.overall)];
        row.extend(report.groups.iter().map(|g| s.groups.get(g).map(pm).unwrap_or_else(|| "n/a".into())));
        row.push(pm(&s.bias_gap));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Values are mean ± sample sd over seeds. Gaps come from unrounded group accuracies, so a gap recomputed from the rounded columns can differ in the last digit."
    );
    let _ = writeln!(
        out,
        "Example: accuracies 0.986 and 0.913 give exactly 0.073 here, even where another table lists 0.072 for that pair."
    );

    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Per-seed overall accuracy with {}% percentile bootstrap interval:",
        report.ci_level * 100.0
    );
    for c in &report.cells {
        match (&c.eval, &c.error) {
            (Some(e), _) => {
                let _ = writeln!(
                    out,
                    "  seed {:<4} {:<9} {:.4} [{:.4}, {:.4}]  gap {}  synthetic {}",
                    c.seed,
                    c.condition.as_str(),
                    e.metrics.overall.accuracy(),
                    e.overall_ci.0,
                    e.overall_ci.1,
                    e.metrics.bias_gap.map(|g| format!("{g:.4}")).unwrap_or_else(|| "n/a".into()),
                    e.n_synthetic
                );
            }
            (None, err) => {
                let _ = writeln!(
                    out,
                    "  seed {:<4} {:<9} FAILED: {}",
                    c.seed,
                    c.condition.as_str(),
                    err.as_deref().unwrap_or("unknown error")
                );
            }
        }
    }

    if !report.sign_tests.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "Paired sign tests against the baseline:");
        for t in &report.sign_tests {
            let result = match (t.p_value, &t.note) {
                (Some(p), _) => format!("p = {p:.4}"),
                (None, Some(n)) => format!("not computed ({n})"),
                (None, None) => "not computed".into(),
            };
            let _ = writeln!(out, "  {:<9} {:<9} n={:<3} {result}", t.other.as_str(), t.metric, t.n_pairs);
        }
    }

    let _ = writeln!(out);
    let _ = writeln!(out, "Checks:");
    for c in &report.checks {
        let _ = writeln!(out, "  [{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    out
}

fn csv_err(path: &Path, e: csv::Error) -> PipelineError {
    PipelineError::Json {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write `report.txt`, `report.json` and the plot-ready CSVs into `dir`.
pub fn write_report_files(dir: &Path, report: &ExperimentReport) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(REPORT_JSON), report)?;
    let text = dir.join("report.txt");
    ensure_parent(&text)?;
    fs::write(&text, render_report(report))?;

    let s = |x: &str| x.to_string();
    let mut header = vec![s("seed"), s("condition"), s("overall"), s("ci_low"), s("ci_high")];
    header.extend(report.groups.iter().map(|g| format!("acc_{g}")));
    header.extend([s("bias_gap"), s("n_synthetic"), s("test_hash"), s("error")]);
    let rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            let mut row = vec![c.seed.to_string(), s(c.condition.as_str())];
            match &c.eval {
                Some(e) => {
                    row.extend([
                        e.metrics.overall.accuracy().to_string(),
                        e.overall_ci.0.to_string(),
                        e.overall_ci.1.to_string(),
                    ]);
                    row.extend(report.groups.iter().map(|g| opt(e.metrics.accuracy(g.as_str()))));
                    row.extend([opt(e.metrics.bias_gap), e.n_synthetic.to_string(), e.test_hash.clone(), String::new()]);
                }
                None => {
                    row.extend(std::iter::repeat_n(String::new(), 3 + report.groups.len() + 3));
                    row.push(c.error.clone().unwrap_or_default());
                }
            }
            row
        })
        .collect();
    write_csv(&dir.join("cells.csv"), &header, &rows)?;

    let mut group_rows = Vec::new();
    let mut overall_rows = Vec::new();
    let mut gap_rows = Vec::new();
    for sm in &report.summaries {
        let name = s(sm.condition.as_str());
        let cols = |m: &Option<MeanSd>| match m {
            Some(m) => [m.mean.to_string(), m.sd.to_string()],
            None => [String::new(), String::new()],
        };
        for (g, m) in &sm.groups {
            let [mean, sd] = cols(m);
            group_rows.push(vec![name.clone(), g.to_string(), mean, sd]);
        }
        let [mean, sd] = cols(&sm.overall);
        overall_rows.push(vec![name.clone(), mean, sd]);
        let [mean, sd] = cols(&sm.bias_gap);
        gap_rows.push(vec![name, mean, sd]);
    }
    write_csv(
        &dir.join("plot_group_accuracy.csv"),
        &[s("condition"), s("group"), s("mean"), s("sd")],
        &group_rows,
    )?;
    write_csv(&dir.join("plot_overall_accuracy.csv"), &[s("condition"), s("mean"), s("sd")], &overall_rows)?;
    write_csv(&dir.join("plot_bias_gap.csv"), &[s("condition"), s("mean"), s("sd")], &gap_rows)?;
    Ok(())
}

/// Re-render the report files from a previous run's `report.json`.
pub fn rerender_report(dir: &Path) -> Result<ExperimentReport, PipelineError> {
    let path = dir.join(REPORT_JSON);
    if !path.exists() {
        return Err(PipelineError::MissingArtifact {
            path,
            stage: "experiment",
        });
    }
    let report: ExperimentReport = read_json(&path)?;
    write_report_files(dir, &report)?;
    Ok(report)
}
