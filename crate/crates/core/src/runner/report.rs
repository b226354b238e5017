//! Aggregation over repetitions and report files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::svg::{bar_chart_svg, heatmap_svg, BarGroup};
use super::{ConfigRun, Method, RunRecord, RunStatus, RunnerError, Scenario};
use crate::gateway::exchanges_to_jsonl;
use crate::metrics::{aggregate_defined, Aggregate};

pub const RUNS_JSONL: &str = "runs.jsonl";
pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const BARS_SVG: &str = "bars.svg";
/// How the best run of a config is picked for the heatmap.
pub const SELECTION_RULE: &str = "highest accuracy, ties by F1, then lowest repetition";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub ok: usize,
    pub parse_failed: usize,
    pub backend_failed: usize,
    pub invalid_after_validation: usize,
}

impl StatusCounts {
    pub fn total(&self) -> usize {
        self.ok + self.parse_failed + self.backend_failed + self.invalid_after_validation
    }

    fn add(&mut self, s: RunStatus) {
        match s {
            RunStatus::Ok => self.ok += 1,
            RunStatus::ParseFailed => self.parse_failed += 1,
            RunStatus::BackendFailed => self.backend_failed += 1,
            RunStatus::InvalidAfterValidation => self.invalid_after_validation += 1,
        }
    }
}

/// Mean and std over ok runs; `None` when no ok run defined the metric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: Option<Aggregate>,
    pub precision: Option<Aggregate>,
    pub recall: Option<Aggregate>,
    pub f1: Option<Aggregate>,
    pub edit: Option<Aggregate>,
    pub spectral: Option<Aggregate>,
}

impl MetricSummary {
    pub const NAMES: [&'static str; 6] = ["accuracy", "precision", "recall", "f1", "edit", "spectral"];

    pub fn values(&self) -> [Option<Aggregate>; 6] {
        [self.accuracy, self.precision, self.recall, self.f1, self.edit, self.spectral]
    }

    fn from_sets<'a>(sets: impl Iterator<Item = &'a super::MetricSet> + Clone) -> Self {
        let pick = |f: fn(&super::MetricSet) -> Option<f64>| aggregate_defined(&sets.clone().map(f).collect::<Vec<_>>()).0;
        MetricSummary {
            accuracy: pick(|m| m.cells.accuracy),
            precision: pick(|m| m.cells.precision),
            recall: pick(|m| m.cells.recall),
            f1: pick(|m| m.cells.f1),
            edit: pick(|m| Some(m.distances.edit)),
            spectral: pick(|m| Some(m.distances.spectral)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub name: String,
    pub scenario: Scenario,
    pub method: Method,
    pub refs: String,
    pub model: String,
    pub repetitions: usize,
    pub seed: u64,
    pub status: StatusCounts,
    pub raw: MetricSummary,
    /// Scenario ii only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aligned: Option<MetricSummary>,
    pub truth_dim: usize,
    /// Smallest aligned dimension over ok runs, when below `truth_dim`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_run: Option<usize>,
    pub selection_rule: String,
    /// Set when the config could not run at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl AggregateReport {
    /// Report for a config that failed before any repetition ran.
    pub fn failed(cfg: &super::ExperimentConfig, scenario: Scenario, error: &RunnerError) -> Self {
        AggregateReport {
            name: cfg.display_name(),
            scenario,
            method: cfg.method,
            refs: cfg.refs_label(),
            model: cfg.backend.model_label(),
            repetitions: cfg.repetitions,
            seed: cfg.seed,
            status: StatusCounts::default(),
            raw: MetricSummary::default(),
            aligned: None,
            truth_dim: 0,
            reduced_dim: None,
            best_run: None,
            selection_rule: SELECTION_RULE.into(),
            failure: Some(error.to_string()),
        }
    }

    pub fn slug(&self) -> String {
        slug(&format!("{}-{}", self.name, self.scenario))
    }

    /// True when every repetition failed.
    pub fn all_failed(&self) -> bool {
        self.status.ok == 0
    }
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for ch in s.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

fn score(r: &RunRecord) -> (Option<f64>, Option<f64>) {
    let m = r.aligned_metrics.as_ref().or(r.raw_metrics.as_ref());
    (m.and_then(|m| m.cells.accuracy), m.and_then(|m| m.cells.f1))
}

fn best_run(records: &[&RunRecord]) -> Option<usize> {
    let key = |r: &RunRecord| {
        let (a, f) = score(r);
        (a.unwrap_or(f64::NEG_INFINITY), f.unwrap_or(f64::NEG_INFINITY))
    };
    let mut best: Option<&RunRecord> = None;
    for r in records.iter().copied().filter(|r| r.status == RunStatus::Ok) {
        best = match best {
            Some(b) if key(b) >= key(r) => Some(b),
            _ => Some(r),
        };
    }
    best.map(|r| r.repetition)
}

fn group_key(r: &RunRecord) -> (String, Scenario) {
    (r.config.display_name(), r.scenario)
}

/// One report per (config, scenario), in order of first appearance.
pub fn aggregate_records(records: &[RunRecord]) -> Vec<AggregateReport> {
    let mut order: Vec<(String, Scenario)> = Vec::new();
    let mut groups: BTreeMap<(String, Scenario), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let k = group_key(r);
        if !groups.contains_key(&k) {
            order.push(k.clone());
        }
        groups.entry(k).or_default().push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let runs = &groups[&k];
            let first = runs[0];
            let mut status = StatusCounts::default();
            for r in runs {
                status.add(r.status);
            }
            let ok: Vec<&RunRecord> = runs.iter().copied().filter(|r| r.status == RunStatus::Ok).collect();
            let raw = MetricSummary::from_sets(ok.iter().filter_map(|r| r.raw_metrics.as_ref()));
            let aligned = (first.scenario == Scenario::II)
                .then(|| MetricSummary::from_sets(ok.iter().filter_map(|r| r.aligned_metrics.as_ref())));
            let truth_dim = first.truth.len();
            let reduced_dim = ok
                .iter()
                .filter_map(|r| r.alignment.as_ref().map(|a| a.aligned_truth.len()))
                .min()
                .filter(|&d| d < truth_dim);
            AggregateReport {
                name: k.0.clone(),
                scenario: first.scenario,
                method: first.config.method,
                refs: first.config.refs_label(),
                model: first.model.clone(),
                repetitions: runs.len(),
                seed: first.config.seed,
                status,
                raw,
                aligned,
                truth_dim,
                reduced_dim,
                best_run: best_run(runs),
                selection_rule: SELECTION_RULE.into(),
                failure: None,
            }
        })
        .collect()
}

fn fmt_opt(a: Option<Aggregate>) -> [String; 3] {
    match a {
        Some(a) => [format!("{}", a.mean), format!("{}", a.std), a.k.to_string()],
        None => [String::new(), String::new(), "0".into()],
    }
}

/// Aggregate table, one row per (report, variant, metric).
pub fn aggregate_csv(reports: &[AggregateReport]) -> Result<String, RunnerError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| RunnerError::Io(e.to_string());
    w.write_record([
        "config",
        "scenario",
        "method",
        "refs",
        "model",
        "variant",
        "metric",
        "mean",
        "std",
        "k",
        "ok",
        "parse_failed",
        "backend_failed",
        "invalid_after_validation",
    ])
    .map_err(io)?;
    for r in reports {
        let mut variants = vec![("raw", &r.raw)];
        if let Some(a) = &r.aligned {
            variants.push(("aligned", a));
        }
        let s = r.status;
        for (variant, summary) in variants {
            for (metric, value) in MetricSummary::NAMES.iter().zip(summary.values()) {
                let [mean, std, k] = fmt_opt(value);
                w.write_record([
                    r.name.as_str(),
                    &r.scenario.to_string(),
                    &r.method.to_string(),
                    &r.refs,
                    &r.model,
                    variant,
                    metric,
                    &mean,
                    &std,
                    &k,
                    &s.ok.to_string(),
                    &s.parse_failed.to_string(),
                    &s.backend_failed.to_string(),
                    &s.invalid_after_validation.to_string(),
                ])
                .map_err(io)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| RunnerError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| RunnerError::Io(e.to_string()))
}

fn write(path: &Path, body: &str) -> Result<PathBuf, RunnerError> {
    std::fs::write(path, body).map_err(|e| RunnerError::Io(format!("{}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

/// Aggregate CSV, one heatmap per report with an ok run, and the bar chart.
pub fn emit_summaries(reports: &[AggregateReport], records: &[RunRecord], outdir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
    if reports.is_empty() {
        return Err(RunnerError::Io("no reports to write".into()));
    }
    std::fs::create_dir_all(outdir).map_err(|e| RunnerError::Io(format!("{}: {e}", outdir.display())))?;
    let mut written = vec![write(&outdir.join(AGGREGATE_CSV), &aggregate_csv(reports)?)?];
    for rep in reports {
        let Some(best) = rep.best_run else { continue };
        let Some(rec) = records
            .iter()
            .find(|r| group_key(r) == (rep.name.clone(), rep.scenario) && r.repetition == best)
        else {
            continue;
        };
        let (pred, truth) = match (&rec.alignment, &rec.raw_dsm) {
            (Some(a), _) if !a.aligned_pred.is_empty() => (&a.aligned_pred, &a.aligned_truth),
            (_, Some(p)) => (p, &rec.truth),
            _ => continue,
        };
        let title = format!("{} rep {} ({})", rep.name, best, rep.selection_rule);
        written.push(write(&outdir.join(format!("heatmap-{}.svg", rep.slug())), &heatmap_svg(pred, truth, &title))?);
    }
    let groups: Vec<BarGroup> = reports
        .iter()
        .filter(|r| r.failure.is_none())
        .map(|r| BarGroup {
            label: format!("{} {} {} {}", r.method, r.refs, r.model, r.scenario),
            values: r.aligned.as_ref().unwrap_or(&r.raw).values(),
        })
        .collect();
    written.push(write(&outdir.join(BARS_SVG), &bar_chart_svg(&groups, &MetricSummary::NAMES))?);
    Ok(written)
}

/// Every report file: run records, per-config transcripts, CSV and plots.
/// `failed` holds reports of configs that never ran.
pub fn emit_reports(runs: &[ConfigRun], failed: &[AggregateReport], outdir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
    std::fs::create_dir_all(outdir).map_err(|e| RunnerError::Io(format!("{}: {e}", outdir.display())))?;
    let records: Vec<RunRecord> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    let mut body = String::new();
    for r in &records {
        body.push_str(&serde_json::to_string(r).map_err(|e| RunnerError::Io(e.to_string()))?);
        body.push('\n');
    }
    let mut written = vec![write(&outdir.join(RUNS_JSONL), &body)?];
    for run in runs {
        let path = outdir.join(format!("transcript-{}.jsonl", run.report.slug()));
        written.push(write(&path, &exchanges_to_jsonl(&run.transcript))?);
    }
    let mut reports: Vec<AggregateReport> = runs.iter().map(|r| r.report.clone()).collect();
    reports.extend(failed.iter().cloned());
    written.extend(emit_summaries(&reports, &records, outdir)?);
    Ok(written)
}

/// Run records from a `runs.jsonl` file or a directory holding one.
pub fn load_runs(path: &Path) -> Result<Vec<RunRecord>, RunnerError> {
    let file = if path.is_dir() { path.join(RUNS_JSONL) } else { path.to_path_buf() };
    let body = std::fs::read_to_string(&file).map_err(|e| RunnerError::Io(format!("{}: {e}", file.display())))?;
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| RunnerError::Io(format!("{}:{}: {e}", file.display(), i + 1))))
        .collect()
}
