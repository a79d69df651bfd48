use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Result};
use coco_core::{EvaluationReport, MeanStd, Method};
use serde::Serialize;

use crate::commands::{methods_in, RunManifest};

/// One row of the summary table: per-side consistency, size and coverage,
/// each as mean ± std over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: Method,
    pub seeds: usize,
    pub concept_consistency: MeanStd,
    pub concept_size: MeanStd,
    pub concept_coverage: Option<MeanStd>,
    pub label_consistency: MeanStd,
    pub label_size: MeanStd,
    pub label_coverage: Option<MeanStd>,
}

fn stat(reports: &[&EvaluationReport], f: impl Fn(&EvaluationReport) -> f64) -> MeanStd {
    let xs: Vec<f64> = reports.iter().map(|r| f(r)).collect();
    MeanStd::of(&xs).expect("at least one report")
}

fn opt_stat(reports: &[&EvaluationReport], f: impl Fn(&EvaluationReport) -> Option<f64>) -> Option<MeanStd> {
    let xs: Option<Vec<f64>> = reports.iter().map(|r| f(r)).collect();
    xs.and_then(|xs| MeanStd::of(&xs))
}

/// Aggregates every method found in the manifests.
pub fn summarize(manifests: &[RunManifest]) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    let methods: Vec<Method> =
        Method::ALL.into_iter().filter(|m| manifests.iter().any(|x| methods_in(x).contains(m))).collect();
    for method in methods {
        let reports: Vec<&EvaluationReport> = manifests
            .iter()
            .flat_map(|m| m.seeds.values())
            .filter_map(|e| e.reports.get(method.as_str()))
            .collect();
        rows.push(ReportRow {
            method,
            seeds: reports.len(),
            concept_consistency: stat(&reports, |r| r.concepts.consistency),
            concept_size: stat(&reports, |r| r.concepts.mean_size),
            concept_coverage: opt_stat(&reports, |r| r.concepts.coverage),
            label_consistency: stat(&reports, |r| r.labels.consistency),
            label_size: stat(&reports, |r| r.labels.mean_size),
            label_coverage: opt_stat(&reports, |r| r.labels.coverage),
        });
    }
    if rows.is_empty() {
        bail!("no evaluation reports found in the given manifests");
    }
    Ok(rows)
}

fn cell(x: &Option<MeanStd>) -> String {
    x.map_or_else(|| "n/a".to_string(), |m| m.to_string())
}

pub fn render_table(rows: &[ReportRow]) -> String {
    let header = ["Method", "C Const.", "C Size", "C Cov.", "Y Const.", "Y Size", "Y Cov."];
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.method.to_string(),
                r.concept_consistency.to_string(),
                r.concept_size.to_string(),
                cell(&r.concept_coverage),
                r.label_consistency.to_string(),
                r.label_size.to_string(),
                cell(&r.label_coverage),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..7)
        .map(|i| body.iter().map(|r| r[i].chars().count()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    line(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().iter().map(String::as_str).collect(), &mut out);
    for r in &body {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

pub fn write_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method", "seeds",
        "concept_consistency_mean", "concept_consistency_std",
        "concept_size_mean", "concept_size_std",
        "concept_coverage_mean", "concept_coverage_std",
        "label_consistency_mean", "label_consistency_std",
        "label_size_mean", "label_size_std",
        "label_coverage_mean", "label_coverage_std",
    ])?;
    let pair = |m: Option<MeanStd>| match m {
        Some(m) => [m.mean.to_string(), m.std.to_string()],
        None => [String::new(), String::new()],
    };
    for r in rows {
        let mut rec = vec![r.method.to_string(), r.seeds.to_string()];
        for m in [
            Some(r.concept_consistency),
            Some(r.concept_size),
            r.concept_coverage,
            Some(r.label_consistency),
            Some(r.label_size),
            r.label_coverage,
        ] {
            rec.extend(pair(m));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
