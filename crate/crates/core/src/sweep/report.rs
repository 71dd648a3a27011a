use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{DimValue, Dimension, RunConfig, SpaceSpec};
use super::runner::RunResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Markdown, ReportFormat::Json];

    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "report.csv",
            ReportFormat::Markdown => "report.md",
            ReportFormat::Json => "report.json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" | "markdown_tables" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::usage(format!("unknown report format `{other}`"))),
        }
    }
}

/// One scored configuration as written to `scores.jsonl`. Holds nothing that
/// varies between identical reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub manifest_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub total_tokens: u64,
    pub cost_usd: f64,
    pub incomplete: bool,
}

impl ResultRow {
    pub fn from_result(r: &RunResult, manifest_hash: &str, seed: u64) -> Self {
        ResultRow {
            manifest_hash: manifest_hash.to_string(),
            seed,
            config: r.config.clone(),
            precision: r.prf.precision,
            recall: r.prf.recall,
            f1: r.prf.f1,
            tp: r.counts.tp,
            fp: r.counts.fp,
            fn_: r.counts.fn_,
            total_tokens: r.usage.total_tokens,
            cost_usd: r.usage.total_cost_usd,
            incomplete: r.incomplete,
        }
    }
}

pub fn rows_to_jsonl(rows: &[ResultRow]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
        .collect()
}

pub fn rows_from_jsonl(text: &str, source: &str) -> Result<Vec<ResultRow>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(source, format!("line {}", i + 1), e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub model: String,
    /// Per value; `None` when that configuration was not scored.
    pub f1: Vec<Option<f64>>,
    pub delta: Vec<Option<f64>>,
}

/// F1 of each value of one dimension with every other dimension at the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub dimension: Dimension,
    pub values: Vec<DimValue>,
    pub rows: Vec<DeltaRow>,
    /// Mean and sample standard deviation of F1 across models, per value.
    pub mean_sd: Vec<Option<(f64, f64)>>,
}

fn mean_sd(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, sd))
}

fn models_of(rows: &[ResultRow]) -> Vec<String> {
    let mut models: Vec<String> = Vec::new();
    for r in rows {
        if !models.contains(&r.config.model) {
            models.push(r.config.model.clone());
        }
    }
    models
}

pub fn delta_tables(rows: &[ResultRow], baseline: &RunConfig) -> Vec<DeltaTable> {
    let by_label: HashMap<String, f64> = rows.iter().map(|r| (r.config.label(), r.f1)).collect();
    let models = models_of(rows);
    let mut tables = Vec::new();
    for dim in Dimension::ALL {
        let mut values: Vec<DimValue> = Vec::new();
        for r in rows {
            let v = r.config.get(dim);
            let probe = RunConfig {
                model: r.config.model.clone(),
                ..baseline.with(v)
            };
            if probe == r.config && !values.contains(&v) {
                values.push(v);
            }
        }
        if values.is_empty() {
            continue;
        }
        // canonical value order; values outside the standard space go last
        let canonical = SpaceSpec::full(Vec::new()).values(dim);
        values.sort_by_key(|v| canonical.iter().position(|c| c == v).unwrap_or(usize::MAX));
        let mut table_rows = Vec::new();
        for model in &models {
            let base = RunConfig {
                model: model.clone(),
                ..baseline.clone()
            };
            let base_f1 = by_label.get(&base.label()).copied();
            let f1: Vec<Option<f64>> = values.iter().map(|v| by_label.get(&base.with(*v).label()).copied()).collect();
            let delta = f1.iter().map(|f| Some((*f)? - base_f1?)).collect();
            table_rows.push(DeltaRow {
                model: model.clone(),
                f1,
                delta,
            });
        }
        let mean_sd = (0..values.len())
            .map(|i| mean_sd(&table_rows.iter().filter_map(|r| r.f1[i]).collect::<Vec<_>>()))
            .collect();
        tables.push(DeltaTable {
            dimension: dim,
            values,
            rows: table_rows,
            mean_sd,
        });
    }
    tables
}

/// Baseline, OFAT choice, best and worst configuration of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model: String,
    pub baseline: Option<ResultRow>,
    pub ofat: Option<ResultRow>,
    pub best: ResultRow,
    pub worst: ResultRow,
}

/// Per model: the baseline row, the given OFAT row, and the best (ties toward
/// the baseline) and worst rows present.
pub fn comparisons(rows: &[ResultRow], baseline: &RunConfig, ofat: &[RunConfig]) -> Vec<Comparison> {
    let find = |cfg: &RunConfig| rows.iter().find(|r| &r.config == cfg).cloned();
    models_of(rows)
        .into_iter()
        .map(|model| {
            let base = RunConfig {
                model: model.clone(),
                ..baseline.clone()
            };
            let of_model: Vec<&ResultRow> = rows.iter().filter(|r| r.config.model == model).collect();
            let mut best = of_model[0];
            let mut worst = of_model[0];
            for r in &of_model[1..] {
                if r.f1 > best.f1 || (r.f1 == best.f1 && r.config.deviations(&base) < best.config.deviations(&base)) {
                    best = r;
                }
                if r.f1 < worst.f1 {
                    worst = r;
                }
            }
            Comparison {
                baseline: find(&base),
                ofat: ofat.iter().find(|c| c.model == model).and_then(find),
                best: best.clone(),
                worst: worst.clone(),
                model,
            }
        })
        .collect()
}

fn f3(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

fn signed(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:+.3}"))
}

pub fn render_markdown_report(rows: &[ResultRow], tables: &[DeltaTable], summary: &[Comparison]) -> String {
    let mut out = String::new();
    let (hash, seed) = rows.first().map_or(("", 0), |r| (r.manifest_hash.as_str(), r.seed));
    let _ = writeln!(out, "<!-- manifest {hash} seed {seed} -->");
    let _ = writeln!(out, "# Results\n");
    for t in tables {
        let _ = writeln!(out, "## {}\n", t.dimension);
        let header: Vec<String> = t.values.iter().map(DimValue::label).collect();
        let _ = writeln!(out, "| Model | {} |", header.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(header.len()));
        for r in &t.rows {
            let cells: Vec<String> = r.f1.iter().zip(&r.delta).map(|(f, d)| format!("{} ({})", f3(*f), signed(*d))).collect();
            let _ = writeln!(out, "| {} | {} |", r.model, cells.join(" | "));
        }
        let cells: Vec<String> = t
            .mean_sd
            .iter()
            .map(|m| m.map_or_else(|| "-".into(), |(mean, sd)| format!("{mean:.3} ± {sd:.3}")))
            .collect();
        let _ = writeln!(out, "| Mean ± SD | {} |\n", cells.join(" | "));
    }
    if !summary.is_empty() {
        let _ = writeln!(out, "## Summary\n");
        let _ = writeln!(out, "| Model | Baseline | OFAT | Best | Worst | Best config | Worst config |");
        let _ = writeln!(out, "|---|---|---|---|---|---|---|");
        for c in summary {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.3} | {:.3} | {} | {} |",
                c.model,
                f3(c.baseline.as_ref().map(|r| r.f1)),
                f3(c.ofat.as_ref().map(|r| r.f1)),
                c.best.f1,
                c.worst.f1,
                c.best.config.label(),
                c.worst.config.label()
            );
        }
    }
    out
}

fn render_csv(rows: &[ResultRow], tables: &[DeltaTable], summary: &[Comparison]) -> Result<String> {
    let hash = rows.first().map_or("", |r| r.manifest_hash.as_str());
    let seed = rows.first().map_or(0, |r| r.seed).to_string();
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Domain(format!("csv: {e}"));
    w.write_record(["manifest_hash", "seed", "table", "dimension", "value", "model", "f1", "delta_vs_baseline"])
        .map_err(fail)?;
    for t in tables {
        for r in &t.rows {
            for ((v, f), d) in t.values.iter().zip(&r.f1).zip(&r.delta) {
                let (f, d) = (f.map(|x| x.to_string()).unwrap_or_default(), d.map(|x| x.to_string()).unwrap_or_default());
                w.write_record([hash, &seed, "delta", t.dimension.label(), &v.label(), &r.model, &f, &d])
                    .map_err(fail)?;
            }
        }
    }
    for c in summary {
        let entries = [
            ("baseline", c.baseline.as_ref()),
            ("ofat", c.ofat.as_ref()),
            ("best", Some(&c.best)),
            ("worst", Some(&c.worst)),
        ];
        for (name, row) in entries {
            if let Some(r) = row {
                w.write_record([hash, &seed, "summary", name, &r.config.label(), &c.model, &r.f1.to_string(), ""])
                    .map_err(fail)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Domain(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Serialize)]
struct JsonReport<'a> {
    manifest_hash: &'a str,
    seed: u64,
    results: &'a [ResultRow],
    delta_tables: &'a [DeltaTable],
    summary: &'a [Comparison],
}

/// Write `report.<ext>` into `dir` and return its path.
pub fn emit_report(
    rows: &[ResultRow],
    baseline: &RunConfig,
    ofat: &[RunConfig],
    format: ReportFormat,
    dir: &Path,
) -> Result<PathBuf> {
    if rows.is_empty() {
        return Err(Error::usage("no results to report"));
    }
    let tables = delta_tables(rows, baseline);
    let summary = comparisons(rows, baseline, ofat);
    let body = match format {
        ReportFormat::Markdown => render_markdown_report(rows, &tables, &summary),
        ReportFormat::Csv => render_csv(rows, &tables, &summary)?,
        ReportFormat::Json => {
            let report = JsonReport {
                manifest_hash: &rows[0].manifest_hash,
                seed: rows[0].seed,
                results: rows,
                delta_tables: &tables,
                summary: &summary,
            };
            serde_json::to_string_pretty(&report)? + "\n"
        }
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format.file_name());
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::ChunkSize;

    fn row(cfg: RunConfig, f1: f64) -> ResultRow {
        ResultRow {
            manifest_hash: "abc".into(),
            seed: 1,
            config: cfg,
            precision: f1,
            recall: f1,
            f1,
            tp: 0,
            fp: 0,
            fn_: 0,
            total_tokens: 0,
            cost_usd: 0.0,
            incomplete: false,
        }
    }

    #[test]
    fn delta_against_baseline() {
        let base = RunConfig::baseline("m");
        let rows = vec![
            row(base.clone(), 0.5),
            row(base.with(DimValue::Chunk(ChunkSize::Max)), 0.75),
            row(base.with(DimValue::Chunk(ChunkSize::Small)), 0.25),
        ];
        let tables = delta_tables(&rows, &base);
        let chunk = tables.iter().find(|t| t.dimension == Dimension::ChunkSize).unwrap();
        assert_eq!(chunk.values.len(), 3);
        let i = chunk.values.iter().position(|v| *v == DimValue::Chunk(ChunkSize::Max)).unwrap();
        assert_eq!(chunk.rows[0].delta[i], Some(0.25));
        // a single model has zero spread
        assert_eq!(chunk.mean_sd[i], Some((0.75, 0.0)));
    }

    #[test]
    fn single_row_gives_one_row_tables() {
        let base = RunConfig::baseline("m");
        let rows = vec![row(base.clone(), 0.65)];
        let md = render_markdown_report(&rows, &delta_tables(&rows, &base), &comparisons(&rows, &base, &[]));
        assert!(md.contains("| m | 0.650 (+0.000) |"));
        assert!(md.starts_with("<!-- manifest abc seed 1 -->"));
    }

    #[test]
    fn empty_results_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_report(&[], &RunConfig::baseline("m"), &[], ReportFormat::Json, dir.path()).unwrap_err();
        assert!(err.is_usage());
    }

    #[test]
    fn jsonl_round_trip() {
        let rows = vec![row(RunConfig::baseline("m"), 0.123456789)];
        assert_eq!(rows_from_jsonl(&rows_to_jsonl(&rows), "t").unwrap(), rows);
    }
}
