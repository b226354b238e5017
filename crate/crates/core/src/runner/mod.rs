//! Experiment orchestration: scenarios i and ii over the bare model, RAG and
//! GraphRAG, repeated and scored against ground truth.

mod config;
mod report;
mod svg;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{align, AlignmentResult};
use crate::corpus::{chunk_text, load_reference_dir, merge_by_class, Chunk, MergedReference, RefClass, ReferenceDoc, VectorIndex};
use crate::dsm::{Dsm, GroundTruthSet};
use crate::gateway::{ChatBackend, ChatExchange, Embedder, GatewayError, Session};
use crate::graphrag::{GraphIndex, GraphRagConfig};
use crate::metrics::{cell_metrics, confusion, confusion_padded, graph_distances, CellMetrics, ConfusionCounts, GraphDistances};
use crate::parse::{extract_components, extract_matrix, parse_verdict, Verdict};
use crate::prompt::{
    correction_prompt, identification_prompt, inject_context, relationship_prompt, update_prompt, validator_prompt,
    PromptSpec, RenderedPrompt,
};

pub use config::{BackendSpec, EmbedderSpec, ExperimentConfig, Method, Scenario};
pub use report::{
    aggregate_csv, aggregate_records, emit_reports, emit_summaries, load_runs, AggregateReport, MetricSummary, StatusCounts, AGGREGATE_CSV,
    BARS_SVG, RUNS_JSONL, SELECTION_RULE,
};
pub use svg::{bar_chart_svg, heatmap_svg, BarGroup};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunnerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("setup failed: {0}")]
    Setup(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    ParseFailed,
    BackendFailed,
    InvalidAfterValidation,
}

/// Cell counts, cell metrics and graph distances for one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub confusion: ConfusionCounts,
    pub cells: CellMetrics,
    pub distances: GraphDistances,
}

impl MetricSet {
    /// Metrics for same-size matrices.
    pub fn aligned(truth: &Dsm, pred: &Dsm) -> Result<Self, String> {
        let confusion = confusion(truth, pred).map_err(|e| e.to_string())?;
        let distances = graph_distances(truth, pred).map_err(|e| e.to_string())?;
        Ok(MetricSet { confusion, cells: cell_metrics(&confusion), distances })
    }

    /// Metrics for matrices that may differ in size; the smaller is zero-padded.
    pub fn padded(truth: &Dsm, pred: &Dsm) -> Result<Self, String> {
        let confusion = confusion_padded(truth, pred).map_err(|e| e.to_string())?;
        let distances = graph_distances(truth, pred).map_err(|e| e.to_string())?;
        Ok(MetricSet { confusion, cells: cell_metrics(&confusion), distances })
    }
}

/// Alignment outcome with names resolved, as stored in run records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    /// `(predicted name, truth name, similarity)` in truth order.
    pub mapping: Vec<(String, String, f64)>,
    pub unmatched_pred: Vec<String>,
    pub unmatched_truth: Vec<String>,
    pub aligned_pred: Dsm,
    pub aligned_truth: Dsm,
}

impl AlignmentSummary {
    fn from_result(r: &AlignmentResult, pred: &Dsm, truth: &Dsm) -> Self {
        AlignmentSummary {
            mapping: r
                .mapping
                .iter()
                .map(|m| (pred.labels()[m.pred].clone(), truth.labels()[m.truth].clone(), m.similarity))
                .collect(),
            unmatched_pred: r.unmatched_pred.iter().map(|&i| pred.labels()[i].clone()).collect(),
            unmatched_truth: r.unmatched_truth.iter().map(|&j| truth.labels()[j].clone()).collect(),
            aligned_pred: r.aligned_pred.clone(),
            aligned_truth: r.aligned_truth.clone(),
        }
    }
}

/// One repetition of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub scenario: Scenario,
    pub model: String,
    pub repetition: usize,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Scenario ii: the component names the model identified.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identified_components: Option<Vec<String>>,
    /// Text the matrix was parsed from.
    pub final_response: String,
    pub truth: Dsm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_dsm: Option<Dsm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_metrics: Option<MetricSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aligned_metrics: Option<MetricSet>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<Verdict>,
    pub corrections: usize,
    pub transcript: Vec<ChatExchange>,
}

/// Everything produced by one experiment config.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigRun {
    pub report: AggregateReport,
    pub records: Vec<RunRecord>,
    /// Setup exchanges (index building) followed by every repetition, in call order.
    pub transcript: Vec<ChatExchange>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub scenario: Option<Scenario>,
    pub parallel: usize,
    pub replay: Option<PathBuf>,
    pub allow_any_refs: bool,
}

/// Per-config retrieval state shared by all repetitions.
enum Context {
    None,
    Rag(Arc<VectorIndex>),
    Graph(GraphIndex),
}

struct Prepared<'a> {
    cfg: &'a ExperimentConfig,
    scenario: Scenario,
    truth: GroundTruthSet,
    embedder: Box<dyn Embedder>,
    context: Context,
}

fn load_docs(cfg: &ExperimentConfig) -> Result<(PathBuf, Vec<ReferenceDoc>), RunnerError> {
    let dir = cfg.references_dir.as_ref().ok_or_else(|| RunnerError::Config("references_dir is not set".into()))?;
    let dir = cfg.resolve(dir);
    let docs = load_reference_dir(&dir).map_err(|e| RunnerError::Config(e.to_string()))?;
    Ok((dir, docs))
}

/// Merged references for the config's selection; an empty selection takes every class present.
pub fn selected_references(cfg: &ExperimentConfig) -> Result<Vec<MergedReference>, RunnerError> {
    let (_, docs) = load_docs(cfg)?;
    let selection = if cfg.reference_selection.is_empty() { present_classes(&docs) } else { cfg.reference_selection.clone() };
    merge_by_class(&docs, &selection).map_err(|e| RunnerError::Config(e.to_string()))
}

fn present_classes(docs: &[ReferenceDoc]) -> Vec<RefClass> {
    let mut c: Vec<RefClass> = docs.iter().map(|d| d.rclass).collect();
    c.sort();
    c.dedup();
    c
}

/// Vector indexes over whole corpora, shared by every config of a sweep.
/// Reference selections are applied as a filter at query time.
#[derive(Default)]
pub struct IndexCache {
    indexes: HashMap<String, Arc<VectorIndex>>,
}

impl IndexCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get(&mut self, cfg: &ExperimentConfig, embedder: &dyn Embedder) -> Result<Arc<VectorIndex>, RunnerError> {
        let (dir, docs) = load_docs(cfg)?;
        // fail early on a selection the corpus cannot serve
        merge_by_class(&docs, &cfg.reference_selection).map_err(|e| RunnerError::Config(e.to_string()))?;
        let key = format!(
            "{}|{}|{}|{}",
            dir.display(),
            serde_json::to_string(&cfg.rag).unwrap_or_default(),
            serde_json::to_string(&cfg.embedder).unwrap_or_default(),
            embedder.model_id()
        );
        if let Some(idx) = self.indexes.get(&key) {
            return Ok(idx.clone());
        }
        let all = merge_by_class(&docs, &present_classes(&docs)).map_err(|e| RunnerError::Config(e.to_string()))?;
        let idx = Arc::new(VectorIndex::from_references(&all, &cfg.rag, embedder).map_err(|e| RunnerError::Setup(e.to_string()))?);
        self.indexes.insert(key, idx.clone());
        Ok(idx)
    }
}

/// Character chunks of every merged reference, tagged with the class label.
pub fn reference_chunks(refs: &[MergedReference], cfg: &crate::corpus::RagConfig) -> Result<Vec<Chunk>, RunnerError> {
    let mut out = Vec::new();
    for r in refs {
        out.extend(chunk_text(&r.rclass.to_string(), &r.text, cfg).map_err(|e| RunnerError::Config(e.to_string()))?);
    }
    Ok(out)
}

/// Graph settings with the experiment seed applied.
pub fn graph_config(cfg: &ExperimentConfig) -> GraphRagConfig {
    GraphRagConfig { seed: cfg.seed, ..cfg.graphrag.clone() }
}

fn prepare<'a>(
    cfg: &'a ExperimentConfig,
    scenario: Scenario,
    truth: GroundTruthSet,
    setup: &mut Session<'_>,
    cache: &mut IndexCache,
) -> Result<Prepared<'a>, RunnerError> {
    let embedder = cfg.embedder.build()?;
    let context = match cfg.method {
        Method::Llm => Context::None,
        Method::Rag => {
            Context::Rag(cache.get(cfg, embedder.as_ref())?)
        }
        Method::GraphRag => {
            let saved = cfg.graph_index_dir.as_ref().map(|d| cfg.resolve(d));
            match saved {
                Some(dir) if dir.join(crate::graphrag::ENTITIES_FILE).exists() => {
                    Context::Graph(GraphIndex::load(&dir).map_err(|e| RunnerError::Setup(e.to_string()))?)
                }
                _ => {
                    let chunks = reference_chunks(&selected_references(cfg)?, &cfg.rag)?;
                    let idx = GraphIndex::build(&chunks, &cfg.concept_name, setup, &graph_config(cfg))
                        .map_err(|e| RunnerError::Setup(e.to_string()))?;
                    Context::Graph(idx)
                }
            }
        }
    };
    Ok(Prepared { cfg, scenario, truth, embedder, context })
}

/// Why a repetition stopped early.
struct Stop(RunStatus, String);

impl From<GatewayError> for Stop {
    fn from(e: GatewayError) -> Self {
        Stop(RunStatus::BackendFailed, e.to_string())
    }
}

impl Prepared<'_> {
    fn retrieval_query(&self, components: Option<&[String]>) -> String {
        let cfg = self.cfg;
        match components {
            Some(c) => format!("{} {} {}", cfg.concept_name, cfg.relationship_type, c.join(", ")),
            None => format!(
                "{} {} major components {}",
                cfg.concept_name, cfg.application_domain, cfg.relationship_type
            ),
        }
    }

    /// Sends a method-dependent prompt and returns the text to parse.
    fn ask(&self, prompt: &RenderedPrompt, query: &str, session: &mut Session<'_>) -> Result<String, Stop> {
        match &self.context {
            Context::None => Ok(session.ask(&prompt.text)?.text),
            Context::Rag(idx) => {
                let hits = idx
                    .retrieve(query, self.embedder.as_ref(), self.cfg.rag.top_k, Some(&self.cfg.reference_selection))
                    .map_err(|e| Stop(RunStatus::BackendFailed, e.to_string()))?;
                let passages: Vec<String> = hits.into_iter().map(|h| h.chunk.text).collect();
                let with_ctx = inject_context(prompt, &passages).map_err(|e| Stop(RunStatus::ParseFailed, e.to_string()))?;
                Ok(session.ask(&with_ctx.text)?.text)
            }
            Context::Graph(idx) => {
                let gcfg = graph_config(self.cfg);
                idx.answer(&prompt.text, session, Some(self.embedder.as_ref()), &gcfg)
                    .map(|a| a.text)
                    .map_err(|e| Stop(RunStatus::BackendFailed, e.to_string()))
            }
        }
    }

    fn spec(&self, components: Vec<String>) -> PromptSpec {
        PromptSpec::with_components(
            &self.cfg.concept_name,
            &self.cfg.relationship_type,
            &self.cfg.application_domain,
            components,
        )
    }

    fn run_repetition(&self, rep: usize, backend: &dyn ChatBackend) -> RunRecord {
        let mut session = Session::new(backend, Some(rep));
        let mut record = RunRecord {
            config: self.cfg.clone(),
            scenario: self.scenario,
            model: backend.model_id().to_string(),
            repetition: rep,
            status: RunStatus::Ok,
            error: None,
            identified_components: None,
            final_response: String::new(),
            truth: self.truth.dsm.clone(),
            raw_dsm: None,
            alignment: None,
            raw_metrics: None,
            aligned_metrics: None,
            verdicts: Vec::new(),
            corrections: 0,
            transcript: Vec::new(),
        };
        let outcome = match self.scenario {
            Scenario::I => self.scenario_i(&mut session, &mut record),
            Scenario::II => self.scenario_ii(&mut session, &mut record),
        };
        if let Err(Stop(status, msg)) = outcome {
            record.status = status;
            record.error = Some(msg);
        }
        record.transcript = session.into_exchanges();
        record
    }

    fn scenario_i(&self, session: &mut Session<'_>, record: &mut RunRecord) -> Result<(), Stop> {
        let components = self.cfg.predicted_components.clone().unwrap_or_default();
        let prompt = relationship_prompt(&self.spec(components.clone())).map_err(|e| Stop(RunStatus::ParseFailed, e.to_string()))?;
        let text = self.ask(&prompt, &self.retrieval_query(Some(&components)), session)?;
        record.final_response = text.clone();
        let pred = parse_dsm(&text, components)?;
        let truth = &self.truth.dsm;
        record.raw_metrics = Some(MetricSet::aligned(truth, &pred).map_err(|e| Stop(RunStatus::ParseFailed, e))?);
        record.raw_dsm = Some(pred);
        Ok(())
    }

    fn scenario_ii(&self, session: &mut Session<'_>, record: &mut RunRecord) -> Result<(), Stop> {
        let truth = &self.truth.dsm;
        let id_spec = PromptSpec { components: None, expected_n: truth.len(), ..self.spec(Vec::new()) };
        let id_prompt =
            identification_prompt(&id_spec, truth.len()).map_err(|e| Stop(RunStatus::ParseFailed, e.to_string()))?;
        let id_text = self.ask(&id_prompt, &self.retrieval_query(None), session)?;
        let components = extract_components(&id_text, None).map_err(|e| Stop(RunStatus::ParseFailed, format!("components: {e}")))?;
        record.identified_components = Some(components.clone());

        let update = update_prompt(&self.spec(components.clone())).map_err(|e| Stop(RunStatus::ParseFailed, e.to_string()))?;
        let mut text = self.ask(&update, &self.retrieval_query(Some(&components)), session)?;
        let verdict = self.validate(&update, &text, session, record)?;
        let mut invalid = false;
        if verdict.0 == Verdict::Invalid {
            let fix = correction_prompt(&update.text, &text, &verdict.1).map_err(|e| Stop(RunStatus::ParseFailed, e.to_string()))?;
            text = session.ask(&fix.text)?.text;
            record.corrections += 1;
            invalid = self.validate(&update, &text, session, record)?.0 == Verdict::Invalid;
        }
        record.final_response = text.clone();
        let pred = parse_dsm(&text, components)?;

        let raw = MetricSet::padded(truth, &pred).map_err(|e| Stop(RunStatus::ParseFailed, e))?;
        let aligned = align(&pred, truth, self.embedder.as_ref(), &self.cfg.align)
            .map_err(|e| Stop(RunStatus::BackendFailed, e.to_string()))?;
        let summary = AlignmentSummary::from_result(&aligned, &pred, truth);
        record.aligned_metrics = Some(
            MetricSet::aligned(&summary.aligned_truth, &summary.aligned_pred).map_err(|e| Stop(RunStatus::ParseFailed, e))?,
        );
        record.raw_metrics = Some(raw);
        record.alignment = Some(summary);
        record.raw_dsm = Some(pred);
        if invalid {
            return Err(Stop(RunStatus::InvalidAfterValidation, "validator rejected the corrected answer".into()));
        }
        Ok(())
    }

    fn validate(
        &self,
        original: &RenderedPrompt,
        raw: &str,
        session: &mut Session<'_>,
        record: &mut RunRecord,
    ) -> Result<(Verdict, String), Stop> {
        // an empty reply cannot be rendered into the validator prompt; it is invalid as is
        if raw.trim().is_empty() {
            record.verdicts.push(Verdict::Invalid);
            return Ok((Verdict::Invalid, "The response was empty.".into()));
        }
        let prompt = validator_prompt(&original.text, raw).map_err(|e| Stop(RunStatus::ParseFailed, e.to_string()))?;
        let reply = session.ask(&prompt.text)?.text;
        let v = parse_verdict(&reply);
        record.verdicts.push(v);
        Ok((v, reply))
    }
}

fn parse_dsm(text: &str, labels: Vec<String>) -> Result<Dsm, Stop> {
    let grid = extract_matrix(text, Some(labels.len())).map_err(|e| Stop(RunStatus::ParseFailed, e.to_string()))?;
    Dsm::from_grid(labels, grid).map_err(|e| Stop(RunStatus::ParseFailed, e.to_string()))
}

/// Runs every repetition of one config. Config problems are errors; failed
/// repetitions are recorded in the report.
pub fn run_config(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ConfigRun, RunnerError> {
    run_config_cached(cfg, opts, &mut IndexCache::new())
}

/// [`run_config`] reusing vector indexes from `cache`.
pub fn run_config_cached(cfg: &ExperimentConfig, opts: &RunOptions, cache: &mut IndexCache) -> Result<ConfigRun, RunnerError> {
    let scenario = opts.scenario.unwrap_or_else(|| cfg.scenario());
    let truth = cfg.validate(scenario, opts.allow_any_refs)?;
    let (backend, order_dependent) = match &opts.replay {
        Some(path) => (BackendSpec::Replay { transcript: path.clone() }.build(Path::new("."))?, true),
        None => (cfg.backend.build(&cfg.base())?, cfg.backend.order_dependent()),
    };
    let mut setup = Session::new(backend.as_ref(), None);
    let prepared = prepare(cfg, scenario, truth, &mut setup, cache)?;
    let mut transcript = setup.into_exchanges();

    let parallel = if order_dependent { 1 } else { opts.parallel.max(1) };
    if order_dependent && opts.parallel > 1 {
        tracing::warn!("backend answers in call order; running repetitions sequentially");
    }
    let reps: Vec<usize> = (0..cfg.repetitions).collect();
    let mut driver = Session::new(backend.as_ref(), None);
    let records = driver.fan_out(&reps, parallel, |&rep, _| prepared.run_repetition(rep, backend.as_ref()));
    for r in &records {
        transcript.extend(r.transcript.iter().cloned());
        tracing::info!(config = %cfg.display_name(), rep = r.repetition, status = ?r.status, "repetition finished");
    }
    let report = aggregate_records(&records)
        .into_iter()
        .next()
        .expect("one config yields one report");
    Ok(ConfigRun { report, records, transcript })
}

pub fn run_scenario_i(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ConfigRun, RunnerError> {
    run_config(cfg, &RunOptions { scenario: Some(Scenario::I), ..opts.clone() })
}

pub fn run_scenario_ii(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ConfigRun, RunnerError> {
    run_config(cfg, &RunOptions { scenario: Some(Scenario::II), ..opts.clone() })
}

/// Runs every config; a failing config yields a failed report and does not stop the others.
pub fn sweep(cfgs: &[ExperimentConfig], opts: &RunOptions) -> Vec<Result<ConfigRun, (String, RunnerError)>> {
    let mut cache = IndexCache::new();
    cfgs.iter()
        .map(|cfg| {
            run_config_cached(cfg, opts, &mut cache).map_err(|e| {
                tracing::error!(config = %cfg.display_name(), error = %e, "config failed");
                (cfg.display_name(), e)
            })
        })
        .collect()
}

/// `*.json` configs in a directory, sorted by file name.
pub fn load_config_dir(dir: &Path) -> Result<Vec<ExperimentConfig>, RunnerError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| RunnerError::Config(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(RunnerError::Config(format!("no .json configs in {}", dir.display())));
    }
    paths.iter().map(|p| ExperimentConfig::load(p)).collect()
}

/// Builds and saves the graph index for a config's references.
pub fn build_graph_index(cfg: &ExperimentConfig, out: &Path, backend: &dyn ChatBackend) -> Result<(GraphIndex, Vec<ChatExchange>), RunnerError> {
    let chunks = reference_chunks(&selected_references(cfg)?, &cfg.rag)?;
    let mut session = Session::new(backend, None);
    let idx = GraphIndex::build(&chunks, &cfg.concept_name, &mut session, &graph_config(cfg))
        .map_err(|e| RunnerError::Setup(e.to_string()))?;
    idx.save(out).map_err(|e| RunnerError::Io(e.to_string()))?;
    Ok((idx, session.into_exchanges()))
}
