use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::align::AlignConfig;
use crate::corpus::{selection_label, RagConfig, RefClass};
use crate::dsm::GroundTruthSet;
use crate::gateway::{
    read_jsonl, BackendConfig, ChatBackend, Embedder, HashEmbedder, HttpBackend, HttpEmbedder, ReplayBackend, Rule,
    RuleBackend, ScriptedBackend,
};
use crate::graphrag::GraphRagConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LLM")]
    Llm,
    #[serde(rename = "RAG")]
    Rag,
    #[serde(rename = "GraphRAG")]
    GraphRag,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Llm => "LLM",
            Method::Rag => "RAG",
            Method::GraphRag => "GraphRAG",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = RunnerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "llm" => Ok(Method::Llm),
            "rag" => Ok(Method::Rag),
            "graphrag" => Ok(Method::GraphRag),
            _ => Err(RunnerError::Config(format!("unknown method {s:?}"))),
        }
    }
}

/// Scenario i supplies the component list; scenario ii asks the model for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "i")]
    I,
    #[serde(rename = "ii")]
    II,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::I => "i",
            Scenario::II => "ii",
        })
    }
}

impl std::str::FromStr for Scenario {
    type Err = RunnerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "i" | "I" | "1" => Ok(Scenario::I),
            "ii" | "II" | "2" => Ok(Scenario::II),
            _ => Err(RunnerError::Config(format!("unknown scenario {s:?}"))),
        }
    }
}

fn mock_model() -> String {
    "mock".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// OpenAI-compatible server.
    Http(BackendConfig),
    /// Stateless rule-matching mock.
    Mock {
        #[serde(default = "mock_model")]
        model_id: String,
        #[serde(default)]
        rules: Vec<Rule>,
        #[serde(default)]
        fallback: Option<String>,
    },
    /// Replies served in call order.
    Scripted {
        #[serde(default = "mock_model")]
        model_id: String,
        replies: Vec<String>,
    },
    /// Recorded transcript served in call order.
    Replay { transcript: PathBuf },
}

impl BackendSpec {
    pub fn build(&self, base: &Path) -> Result<Box<dyn ChatBackend>, RunnerError> {
        Ok(match self {
            BackendSpec::Http(cfg) => {
                Box::new(HttpBackend::new(cfg.clone()).map_err(|e| RunnerError::Config(e.to_string()))?)
            }
            BackendSpec::Mock { model_id, rules, fallback } => {
                Box::new(RuleBackend::from_rules(model_id.clone(), rules.clone(), fallback.clone()))
            }
            BackendSpec::Scripted { model_id, replies } => Box::new(ScriptedBackend::replies(model_id.clone(), replies.clone())),
            BackendSpec::Replay { transcript } => {
                let exchanges = read_jsonl(&base.join(transcript)).map_err(|e| RunnerError::Config(e.to_string()))?;
                Box::new(ReplayBackend::new(exchanges).map_err(|e| RunnerError::Config(e.to_string()))?)
            }
        })
    }

    /// Model name used in reports when no run produced one.
    pub fn model_label(&self) -> String {
        match self {
            BackendSpec::Http(cfg) => cfg.model_id.clone(),
            BackendSpec::Mock { model_id, .. } | BackendSpec::Scripted { model_id, .. } => model_id.clone(),
            BackendSpec::Replay { .. } => "replay".into(),
        }
    }

    /// Backends whose answers depend on call order cannot serve repetitions concurrently.
    pub fn order_dependent(&self) -> bool {
        matches!(self, BackendSpec::Scripted { .. } | BackendSpec::Replay { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    /// Offline token-bag embedder.
    #[default]
    Hash,
    Http(BackendConfig),
}

impl EmbedderSpec {
    pub fn build(&self) -> Result<Box<dyn Embedder>, RunnerError> {
        Ok(match self {
            EmbedderSpec::Hash => Box::new(HashEmbedder::default()),
            EmbedderSpec::Http(cfg) => {
                Box::new(HttpEmbedder::new(cfg.clone()).map_err(|e| RunnerError::Config(e.to_string()))?)
            }
        })
    }
}

fn default_repetitions() -> usize {
    5
}
fn default_method() -> Method {
    Method::Llm
}
fn default_seed() -> u64 {
    42
}

/// One experiment: a use case, a method, a reference selection and a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub concept_name: String,
    #[serde(default)]
    pub application_domain: String,
    pub relationship_type: String,
    /// Present for scenario i.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_components: Option<Vec<String>>,
    /// Built-in fixture id or a path to a ground-truth JSON file.
    pub ground_truth: String,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub reference_selection: Vec<RefClass>,
    /// Directory of classified reference documents, for RAG and GraphRAG.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub references_dir: Option<PathBuf>,
    /// Prebuilt graph index; built from `references_dir` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_index_dir: Option<PathBuf>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    pub backend: BackendSpec,
    #[serde(default)]
    pub embedder: EmbedderSpec,
    #[serde(default)]
    pub rag: RagConfig,
    #[serde(default)]
    pub graphrag: GraphRagConfig,
    #[serde(default)]
    pub align: AlignConfig,
    /// Seeds community detection.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub allow_any_refs: bool,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(payload: &str) -> Result<Self, RunnerError> {
        serde_json::from_str(payload).map_err(|e| RunnerError::Config(e.to_string()))
    }

    /// Reads a config file; its directory becomes the base for relative paths
    /// and its stem the default name.
    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let body =
            std::fs::read_to_string(path).map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&body).map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        if cfg.name.is_none() {
            cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| "experiment".into())
    }

    pub fn base(&self) -> PathBuf {
        self.base_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base().join(p)
    }

    pub fn scenario(&self) -> Scenario {
        if self.predicted_components.is_some() {
            Scenario::I
        } else {
            Scenario::II
        }
    }

    /// Reference selection label, `-` for the bare model.
    pub fn refs_label(&self) -> String {
        match self.method {
            Method::Llm => "-".into(),
            _ => selection_label(&self.reference_selection),
        }
    }

    pub fn ground_truth(&self) -> Result<GroundTruthSet, RunnerError> {
        GroundTruthSet::resolve(&self.ground_truth, Some(&self.base())).map_err(|e| RunnerError::Config(e.to_string()))
    }

    /// Checks everything that can be checked without calling a model.
    pub fn validate(&self, scenario: Scenario, allow_any_refs: bool) -> Result<GroundTruthSet, RunnerError> {
        let bad = |m: String| Err(RunnerError::Config(m));
        if self.concept_name.trim().is_empty() {
            return bad("concept_name is empty".into());
        }
        if self.relationship_type.trim().is_empty() {
            return bad("relationship_type is empty".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        self.rag.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        self.graphrag.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.align.threshold) {
            return bad(format!("align.threshold {} is outside [0, 1]", self.align.threshold));
        }
        if self.method != Method::Llm {
            if self.reference_selection.is_empty() {
                return bad(format!("{} needs a nonempty reference_selection", self.method));
            }
            let has_index = self.method == Method::GraphRag
                && self.graph_index_dir.as_ref().is_some_and(|d| self.resolve(d).join(crate::graphrag::ENTITIES_FILE).exists());
            if self.references_dir.is_none() && !has_index {
                return bad(format!("{} needs references_dir", self.method));
            }
        }
        if self.method == Method::GraphRag && !(allow_any_refs || self.allow_any_refs) {
            let mut sel = self.reference_selection.clone();
            sel.sort();
            sel.dedup();
            let allowed = [vec![RefClass::R1, RefClass::R2], vec![RefClass::R2, RefClass::R3]];
            if !allowed.contains(&sel) {
                return bad(format!(
                    "GraphRAG runs use R1-R2 or R2-R3, got {}; pass --allow-any-refs to override",
                    selection_label(&sel)
                ));
            }
        }
        let truth = self.ground_truth()?;
        match (scenario, &self.predicted_components) {
            (Scenario::I, None) => return bad("scenario i needs predicted_components".into()),
            (Scenario::I, Some(c)) if c.len() != truth.dsm.len() => {
                return bad(format!(
                    "{} predicted components but the ground truth has {}",
                    c.len(),
                    truth.dsm.len()
                ))
            }
            (Scenario::I, Some(c)) if c.iter().any(|s| s.trim().is_empty()) => {
                return bad("predicted_components contains an empty name".into())
            }
            _ => {}
        }
        Ok(truth)
    }
}
