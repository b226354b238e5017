//! Graph-based retrieval: entity/relation extraction into a weighted
//! knowledge graph, Leiden communities, community summaries and map-reduce
//! answering over those summaries.

mod leiden;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Chunk;
use crate::dsm::normalize_label;
use crate::gateway::{embed, Embedder, GatewayError, Session};
use crate::prompt::{community_summary_prompt, gleaning_prompt, graph_extraction_prompt, map_prompt, reduce_prompt};

pub use leiden::{leiden, modularity, WeightedGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphRagError {
    #[error("no chunks to extract from")]
    NoChunks,
    #[error("the knowledge graph has no entities")]
    EmptyGraph,
    #[error("no community has a summary")]
    NoSummaries,
    #[error("all {0} map calls failed")]
    AllMapsFailed(usize),
    #[error("invalid graph config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("io: {0}")]
    Io(String),
}

fn default_gleanings() -> usize {
    1
}
fn default_resolution() -> f64 {
    1.0
}
fn default_max_community_size() -> usize {
    40
}
fn default_seed() -> u64 {
    42
}
fn default_restarts() -> usize {
    64
}
fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRagConfig {
    #[serde(default = "default_gleanings")]
    pub gleanings: usize,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default = "default_max_community_size")]
    pub max_community_size: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Independent Leiden runs; the partition with the highest modularity wins.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Concurrent extraction, summary and map calls.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Communities kept for answering, by summary similarity to the query. `None` keeps all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_communities: Option<usize>,
}

impl Default for GraphRagConfig {
    fn default() -> Self {
        GraphRagConfig {
            gleanings: default_gleanings(),
            resolution: default_resolution(),
            max_community_size: default_max_community_size(),
            seed: default_seed(),
            restarts: default_restarts(),
            parallelism: default_parallelism(),
            top_communities: None,
        }
    }
}

impl GraphRagConfig {
    pub fn validate(&self) -> Result<(), GraphRagError> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(GraphRagError::InvalidConfig("resolution must be positive".into()));
        }
        if self.max_community_size == 0 {
            return Err(GraphRagError::InvalidConfig("max_community_size must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(GraphRagError::InvalidConfig("restarts must be positive".into()));
        }
        if self.top_communities == Some(0) {
            return Err(GraphRagError::InvalidConfig("top_communities must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    /// Normalized name; unique within a graph.
    pub name: String,
    pub etype: String,
    pub description: String,
    pub source_chunks: Vec<(String, usize)>,
}

/// Undirected; `src < dst` after normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub src: String,
    pub dst: String,
    pub weight: f64,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Community {
    pub id: usize,
    pub members: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

/// A parsed extraction line.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Entity { name: String, etype: String, description: String },
    Relation { src: String, dst: String, weight: f64, description: String },
}

/// Parses `ENTITY|name|type|description` and `RELATION|src|dst|weight|description`
/// lines; everything else is ignored. Missing or nonpositive weights become 1.
pub fn parse_records(text: &str) -> Vec<Record> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line
            .trim()
            .trim_start_matches(['-', '*', '•', ' '])
            .trim_matches(|c: char| c == '(' || c == ')' || c == '"' || c == '`')
            .trim();
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        let tag = fields[0].to_ascii_uppercase();
        let rest = |from: usize| fields.get(from..).map(|f| f.join("|")).unwrap_or_default();
        match tag.as_str() {
            "ENTITY" if fields.len() >= 2 && !fields[1].is_empty() => out.push(Record::Entity {
                name: fields[1].to_string(),
                etype: fields.get(2).map(|s| s.to_string()).unwrap_or_default(),
                description: rest(3),
            }),
            "RELATION" if fields.len() >= 3 && !fields[1].is_empty() && !fields[2].is_empty() => {
                let weight = fields
                    .get(3)
                    .and_then(|w| w.parse::<f64>().ok())
                    .filter(|w| w.is_finite() && *w > 0.0)
                    .unwrap_or(1.0);
                out.push(Record::Relation {
                    src: fields[1].to_string(),
                    dst: fields[2].to_string(),
                    weight,
                    description: rest(4),
                });
            }
            _ => {}
        }
    }
    out
}

fn append_distinct(target: &mut String, text: &str) {
    let text = text.trim();
    if text.is_empty() || target.lines().any(|l| l == text) {
        return;
    }
    if !target.is_empty() {
        target.push('\n');
    }
    target.push_str(text);
}

/// Single-writer merge of extraction records.
#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    entities: BTreeMap<String, Entity>,
    relations: BTreeMap<(String, String), Relation>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn entity(&mut self, name: &str, source: &(String, usize)) -> Option<&mut Entity> {
        let key = normalize_label(name);
        if key.is_empty() {
            return None;
        }
        let e = self.entities.entry(key.clone()).or_insert_with(|| Entity {
            name: key,
            etype: String::new(),
            description: String::new(),
            source_chunks: Vec::new(),
        });
        if !e.source_chunks.contains(source) {
            e.source_chunks.push(source.clone());
        }
        Some(e)
    }

    pub fn add(&mut self, record: &Record, source: &(String, usize)) {
        match record {
            Record::Entity { name, etype, description } => {
                if let Some(e) = self.entity(name, source) {
                    if e.etype.is_empty() {
                        e.etype = etype.trim().to_string();
                    }
                    append_distinct(&mut e.description, description);
                }
            }
            Record::Relation { src, dst, weight, description } => {
                let (a, b) = (normalize_label(src), normalize_label(dst));
                if a.is_empty() || b.is_empty() || a == b {
                    return;
                }
                self.entity(src, source);
                self.entity(dst, source);
                let key = if a < b { (a, b) } else { (b, a) };
                let r = self.relations.entry(key.clone()).or_insert_with(|| Relation {
                    src: key.0,
                    dst: key.1,
                    weight: 0.0,
                    description: String::new(),
                });
                r.weight += weight;
                append_distinct(&mut r.description, description);
            }
        }
    }

    pub fn finish(self) -> (Vec<Entity>, Vec<Relation>) {
        (self.entities.into_values().collect(), self.relations.into_values().collect())
    }
}

/// An extraction call that failed; `pass` 0 is the initial extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkFailure {
    pub doc_id: String,
    pub seq: usize,
    pub pass: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Extraction {
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
    pub failures: Vec<ChunkFailure>,
}

fn extract_chunk(
    chunk: &Chunk,
    concept_name: &str,
    gleanings: usize,
    session: &mut Session<'_>,
) -> (Vec<Record>, Vec<ChunkFailure>) {
    let fail = |pass: usize, e: GatewayError| ChunkFailure {
        doc_id: chunk.doc_id.clone(),
        seq: chunk.seq,
        pass,
        error: e.to_string(),
    };
    let first = match session.ask(&graph_extraction_prompt(concept_name, &chunk.text).text) {
        Ok(r) => r.text,
        Err(e) => return (Vec::new(), vec![fail(0, e)]),
    };
    let mut records = parse_records(&first);
    let mut previous: Vec<String> = first
        .lines()
        .filter(|l| !parse_records(l).is_empty())
        .map(|l| l.trim().to_string())
        .collect();
    let mut failures = Vec::new();
    for pass in 1..=gleanings {
        match session.ask(&gleaning_prompt(concept_name, &chunk.text, &previous.join("\n")).text) {
            Ok(r) => {
                for line in r.text.lines() {
                    let found = parse_records(line);
                    if !found.is_empty() {
                        previous.push(line.trim().to_string());
                        records.extend(found);
                    }
                }
            }
            Err(e) => {
                failures.push(fail(pass, e));
                break;
            }
        }
    }
    (records, failures)
}

/// Extracts and merges entities and relations from every chunk. Failed chunks
/// are recorded and skipped.
pub fn extract_graph(
    chunks: &[Chunk],
    concept_name: &str,
    session: &mut Session<'_>,
    cfg: &GraphRagConfig,
) -> Result<Extraction, GraphRagError> {
    if chunks.is_empty() {
        return Err(GraphRagError::NoChunks);
    }
    cfg.validate()?;
    let per_chunk = session.fan_out(chunks, cfg.parallelism, |chunk, s| {
        extract_chunk(chunk, concept_name, cfg.gleanings, s)
    });
    let mut builder = GraphBuilder::new();
    let mut failures = Vec::new();
    for (chunk, (records, failed)) in chunks.iter().zip(per_chunk) {
        let source = (chunk.doc_id.clone(), chunk.seq);
        for r in &records {
            builder.add(r, &source);
        }
        failures.extend(failed);
    }
    for f in &failures {
        tracing::warn!(doc = %f.doc_id, seq = f.seq, pass = f.pass, error = %f.error, "extraction failed");
    }
    let (entities, relations) = builder.finish();
    Ok(Extraction { entities, relations, failures })
}

/// Graph over `entities` (in the given order) weighted by `relations`.
pub fn build_graph(entities: &[Entity], relations: &[Relation]) -> WeightedGraph {
    let index: BTreeMap<&str, usize> = entities.iter().enumerate().map(|(i, e)| (e.name.as_str(), i)).collect();
    let mut g = WeightedGraph::new(entities.len());
    for r in relations {
        if let (Some(&a), Some(&b)) = (index.get(r.src.as_str()), index.get(r.dst.as_str())) {
            if a != b {
                g.add_edge(a, b, r.weight);
            }
        }
    }
    g
}

/// Leiden partition of the knowledge graph. Community ids follow the first
/// member in entity order; members are listed in entity order.
pub fn detect_communities(
    entities: &[Entity],
    relations: &[Relation],
    cfg: &GraphRagConfig,
) -> Result<Vec<Community>, GraphRagError> {
    if entities.is_empty() {
        return Err(GraphRagError::EmptyGraph);
    }
    cfg.validate()?;
    let g = build_graph(entities, relations);
    let membership = leiden(&g, cfg.resolution, cfg.seed, cfg.restarts);
    let k = membership.iter().copied().max().map_or(0, |m| m + 1);
    let mut out: Vec<Community> = (0..k).map(|id| Community { id, members: Vec::new(), summary: None }).collect();
    for (e, &c) in entities.iter().zip(&membership) {
        out[c].members.push(e.name.clone());
    }
    Ok(out)
}

/// Weighted degree of every entity name.
pub fn weighted_degrees(relations: &[Relation]) -> BTreeMap<&str, f64> {
    let mut deg: BTreeMap<&str, f64> = BTreeMap::new();
    for r in relations {
        *deg.entry(r.src.as_str()).or_default() += r.weight;
        *deg.entry(r.dst.as_str()).or_default() += r.weight;
    }
    deg
}

/// At most `max` members, by descending weighted degree then name.
pub fn truncate_members(members: &[String], relations: &[Relation], max: usize) -> Vec<String> {
    if members.len() <= max {
        return members.to_vec();
    }
    let deg = weighted_degrees(relations);
    let mut ranked: Vec<&String> = members.iter().collect();
    ranked.sort_by(|a, b| {
        let (da, db) = (deg.get(a.as_str()).copied().unwrap_or(0.0), deg.get(b.as_str()).copied().unwrap_or(0.0));
        db.total_cmp(&da).then_with(|| a.cmp(b))
    });
    ranked.into_iter().take(max).cloned().collect()
}

fn community_prompt_text(
    members: &[String],
    entities: &BTreeMap<&str, &Entity>,
    relations: &[Relation],
    concept_name: &str,
) -> String {
    let entity_lines: Vec<String> = members
        .iter()
        .map(|m| match entities.get(m.as_str()) {
            Some(e) if !e.etype.is_empty() => format!("- {} ({}): {}", e.name, e.etype, e.description.replace('\n', " ")),
            Some(e) => format!("- {}: {}", e.name, e.description.replace('\n', " ")),
            None => format!("- {m}"),
        })
        .collect();
    let relation_lines: Vec<String> = relations
        .iter()
        .filter(|r| members.contains(&r.src) && members.contains(&r.dst))
        .map(|r| format!("- {} -- {} (weight {}): {}", r.src, r.dst, r.weight, r.description.replace('\n', " ")))
        .collect();
    let relations_text = if relation_lines.is_empty() { "(none)".to_string() } else { relation_lines.join("\n") };
    community_summary_prompt(concept_name, &entity_lines.join("\n"), &relations_text).text
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityFailure {
    pub id: usize,
    pub error: String,
}

/// One summary call per community. Failures leave `summary` unset and are
/// returned alongside.
pub fn summarize_communities(
    communities: &[Community],
    entities: &[Entity],
    relations: &[Relation],
    concept_name: &str,
    session: &mut Session<'_>,
    cfg: &GraphRagConfig,
) -> (Vec<Community>, Vec<CommunityFailure>) {
    let by_name: BTreeMap<&str, &Entity> = entities.iter().map(|e| (e.name.as_str(), e)).collect();
    let results = session.fan_out(communities, cfg.parallelism, |c, s| {
        let members = truncate_members(&c.members, relations, cfg.max_community_size);
        s.ask(&community_prompt_text(&members, &by_name, relations, concept_name))
    });
    let mut out = Vec::with_capacity(communities.len());
    let mut failures = Vec::new();
    for (c, r) in communities.iter().zip(results) {
        let mut c = c.clone();
        match r {
            Ok(resp) => c.summary = Some(resp.text),
            Err(e) => {
                tracing::warn!(community = c.id, error = %e, "community summary failed");
                failures.push(CommunityFailure { id: c.id, error: e.to_string() });
            }
        }
        out.push(c);
    }
    (out, failures)
}

/// Summarized communities most similar to `query`, returned in id order.
/// `top_m = None` keeps every summarized community.
pub fn select_communities<'c>(
    query: &str,
    communities: &'c [Community],
    embedder: Option<&dyn Embedder>,
    top_m: Option<usize>,
) -> Result<Vec<&'c Community>, GraphRagError> {
    let mut summarized: Vec<&Community> = communities.iter().filter(|c| c.summary.is_some()).collect();
    summarized.sort_by_key(|c| c.id);
    let (Some(m), Some(embedder)) = (top_m, embedder) else {
        return Ok(summarized);
    };
    if m >= summarized.len() {
        return Ok(summarized);
    }
    let mut texts = vec![query.to_string()];
    texts.extend(summarized.iter().map(|c| c.summary.clone().unwrap_or_default()).map(|s| if s.is_empty() { " ".into() } else { s }));
    let vectors = embed(embedder, &texts)?;
    let mut scored: Vec<(f64, &Community)> =
        summarized.iter().zip(&vectors[1..]).map(|(c, v)| (vectors[0].cosine(v), *c)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
    let mut kept: Vec<&Community> = scored.into_iter().take(m).map(|(_, c)| c).collect();
    kept.sort_by_key(|c| c.id);
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphAnswer {
    pub text: String,
    /// `(community id, partial answer)` in id order.
    pub partials: Vec<(usize, String)>,
    pub failed_maps: Vec<CommunityFailure>,
}

/// Map over each summarized community, then one reduce call over the partials.
pub fn graph_answer(
    query: &str,
    communities: &[&Community],
    session: &mut Session<'_>,
    parallelism: usize,
) -> Result<GraphAnswer, GraphRagError> {
    let mut targets: Vec<&Community> = communities.iter().copied().filter(|c| c.summary.is_some()).collect();
    if targets.is_empty() {
        return Err(GraphRagError::NoSummaries);
    }
    targets.sort_by_key(|c| c.id);
    let results = session.fan_out(&targets, parallelism, |c, s| {
        s.ask(&map_prompt(c.summary.as_deref().unwrap_or_default(), query).text)
    });
    let mut partials = Vec::new();
    let mut failed_maps = Vec::new();
    for (c, r) in targets.iter().zip(results) {
        match r {
            Ok(resp) => partials.push((c.id, resp.text)),
            Err(e) => failed_maps.push(CommunityFailure { id: c.id, error: e.to_string() }),
        }
    }
    if partials.is_empty() {
        return Err(GraphRagError::AllMapsFailed(targets.len()));
    }
    let text = session.ask(&reduce_prompt(&partials, query).text)?.text;
    Ok(GraphAnswer { text, partials, failed_maps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SummaryEntry {
    id: usize,
    summary: String,
}

/// Persisted graph index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraphIndex {
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
    pub communities: Vec<Community>,
    pub extraction_failures: Vec<ChunkFailure>,
    pub summary_failures: Vec<CommunityFailure>,
}

pub const ENTITIES_FILE: &str = "entities.json";
pub const RELATIONS_FILE: &str = "relations.json";
pub const COMMUNITIES_FILE: &str = "communities.json";
pub const SUMMARIES_FILE: &str = "summaries.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), GraphRagError> {
    let body = serde_json::to_string_pretty(value).map_err(|e| GraphRagError::Io(e.to_string()))?;
    std::fs::write(path, body + "\n").map_err(|e| GraphRagError::Io(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, GraphRagError> {
    let body = std::fs::read_to_string(path).map_err(|e| GraphRagError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&body).map_err(|e| GraphRagError::Io(format!("{}: {e}", path.display())))
}

impl GraphIndex {
    /// Extraction, community detection and summaries in one go.
    pub fn build(
        chunks: &[Chunk],
        concept_name: &str,
        session: &mut Session<'_>,
        cfg: &GraphRagConfig,
    ) -> Result<Self, GraphRagError> {
        let extraction = extract_graph(chunks, concept_name, session, cfg)?;
        let communities = detect_communities(&extraction.entities, &extraction.relations, cfg)?;
        let (communities, summary_failures) = summarize_communities(
            &communities,
            &extraction.entities,
            &extraction.relations,
            concept_name,
            session,
            cfg,
        );
        Ok(GraphIndex {
            entities: extraction.entities,
            relations: extraction.relations,
            communities,
            extraction_failures: extraction.failures,
            summary_failures,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), GraphRagError> {
        std::fs::create_dir_all(dir).map_err(|e| GraphRagError::Io(format!("{}: {e}", dir.display())))?;
        write_json(&dir.join(ENTITIES_FILE), &self.entities)?;
        write_json(&dir.join(RELATIONS_FILE), &self.relations)?;
        let bare: Vec<Community> = self.communities.iter().map(|c| Community { summary: None, ..c.clone() }).collect();
        write_json(&dir.join(COMMUNITIES_FILE), &bare)?;
        let summaries: Vec<SummaryEntry> = self
            .communities
            .iter()
            .filter_map(|c| c.summary.clone().map(|summary| SummaryEntry { id: c.id, summary }))
            .collect();
        write_json(&dir.join(SUMMARIES_FILE), &summaries)
    }

    /// Loads a saved index. Failure lists are not persisted.
    pub fn load(dir: &Path) -> Result<Self, GraphRagError> {
        let entities: Vec<Entity> = read_json(&dir.join(ENTITIES_FILE))?;
        let relations: Vec<Relation> = read_json(&dir.join(RELATIONS_FILE))?;
        let mut communities: Vec<Community> = read_json(&dir.join(COMMUNITIES_FILE))?;
        let summaries: Vec<SummaryEntry> = read_json(&dir.join(SUMMARIES_FILE))?;
        for s in summaries {
            if let Some(c) = communities.iter_mut().find(|c| c.id == s.id) {
                c.summary = Some(s.summary);
            }
        }
        Ok(GraphIndex { entities, relations, communities, extraction_failures: Vec::new(), summary_failures: Vec::new() })
    }

    /// Answers `query` from the summarized communities.
    pub fn answer(
        &self,
        query: &str,
        session: &mut Session<'_>,
        embedder: Option<&dyn Embedder>,
        cfg: &GraphRagConfig,
    ) -> Result<GraphAnswer, GraphRagError> {
        let selected = select_communities(query, &self.communities, embedder, cfg.top_communities)?;
        graph_answer(query, &selected, session, cfg.parallelism)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{HashEmbedder, RuleBackend, Scripted, ScriptedBackend};

    fn chunk(seq: usize, text: &str) -> Chunk {
        Chunk { doc_id: "doc".into(), seq, start: seq * 10, text: text.into(), embedding: None }
    }

    const TWO_AND_ONE: &str = "ENTITY|Motor|component|Spins the bit\nENTITY|Battery|component|Stores energy\nRELATION|Battery|Motor|1|powers";

    #[test]
    fn records_parse_leniently() {
        let recs = parse_records("Here:\n- ENTITY| Motor |component|drives | gears\n(RELATION|a|b|x|desc)\nRELATION|a|b\nnoise|x");
        assert_eq!(recs.len(), 3);
        assert_eq!(
            recs[0],
            Record::Entity { name: "Motor".into(), etype: "component".into(), description: "drives|gears".into() }
        );
        assert!(matches!(&recs[1], Record::Relation { weight, .. } if *weight == 1.0));
        assert!(matches!(&recs[2], Record::Relation { description, .. } if description.is_empty()));
    }

    #[test]
    fn merge_sums_weights_across_chunks() {
        let backend = RuleBackend::new("mock").rule("Previous extraction", "").with_fallback(TWO_AND_ONE);
        let mut s = Session::new(&backend, None);
        let chunks = [chunk(0, "a"), chunk(1, "b"), chunk(2, "c")];
        let x = extract_graph(&chunks, "power screwdriver", &mut s, &GraphRagConfig::default()).unwrap();
        assert_eq!(x.entities.len(), 2);
        assert_eq!(x.relations.len(), 1);
        assert_eq!(x.relations[0].weight, 3.0);
        assert_eq!((x.relations[0].src.as_str(), x.relations[0].dst.as_str()), ("battery", "motor"));
        assert_eq!(x.entities[1].source_chunks.len(), 3);
        assert_eq!(x.entities[1].description, "Spins the bit");
        // one extraction plus one gleaning per chunk
        assert_eq!(s.exchanges().len(), 6);
    }

    #[test]
    fn gleanings_add_missed_entities() {
        let backend = RuleBackend::new("mock")
            .rule("Previous extraction", "ENTITY|Gearbox|component|reduces speed")
            .with_fallback(TWO_AND_ONE);
        let chunks = [chunk(0, "a")];
        let mut cfg = GraphRagConfig { gleanings: 0, ..Default::default() };
        let none = extract_graph(&chunks, "c", &mut Session::new(&backend, None), &cfg).unwrap();
        cfg.gleanings = 1;
        let mut s = Session::new(&backend, None);
        let one = extract_graph(&chunks, "c", &mut s, &cfg).unwrap();
        assert_eq!(one.entities.len(), none.entities.len() + 1);
        assert!(s.exchanges()[1].request_messages[0].content.contains("RELATION|Battery|Motor|1|powers"));
    }

    #[test]
    fn empty_chunks_rejected_and_failures_recorded() {
        let backend = ScriptedBackend::new(
            "mock",
            vec![Scripted::Fail(GatewayError::Timeout), Scripted::Reply(TWO_AND_ONE.into())],
        );
        let mut s = Session::new(&backend, None);
        assert_eq!(extract_graph(&[], "c", &mut s, &GraphRagConfig::default()), Err(GraphRagError::NoChunks));
        let cfg = GraphRagConfig { gleanings: 0, ..Default::default() };
        let x = extract_graph(&[chunk(0, "a"), chunk(1, "b")], "c", &mut s, &cfg).unwrap();
        assert_eq!(x.failures.len(), 1);
        assert_eq!(x.failures[0].seq, 0);
        assert_eq!(x.entities.len(), 2);
    }

    #[test]
    fn relation_weight_conserved() {
        let mut b = GraphBuilder::new();
        let src = ("d".to_string(), 0);
        let input = [("A", "B", 2.0), ("b", "a", 0.5), ("A", "C", 1.0), ("C", "C", 4.0)];
        for (s, d, w) in input {
            b.add(&Record::Relation { src: s.into(), dst: d.into(), weight: w, description: String::new() }, &src);
        }
        let (e, r) = b.finish();
        assert_eq!(e.len(), 3);
        let total: f64 = r.iter().map(|r| r.weight).sum();
        assert_eq!(total, 3.5);
        assert!(r.iter().all(|r| r.src < r.dst));
    }

    fn entity(name: &str) -> Entity {
        Entity { name: name.into(), etype: "component".into(), description: format!("{name} desc"), source_chunks: vec![] }
    }

    fn relation(a: &str, b: &str, w: f64) -> Relation {
        Relation { src: a.into(), dst: b.into(), weight: w, description: String::new() }
    }

    #[test]
    fn communities_partition_entities() {
        let entities: Vec<Entity> = ["a", "b", "c", "x", "y", "z", "lonely"].iter().map(|n| entity(n)).collect();
        let relations = vec![
            relation("a", "b", 1.0),
            relation("b", "c", 1.0),
            relation("a", "c", 1.0),
            relation("x", "y", 1.0),
            relation("y", "z", 1.0),
            relation("x", "z", 1.0),
            relation("c", "x", 0.1),
        ];
        let cs = detect_communities(&entities, &relations, &GraphRagConfig::default()).unwrap();
        assert_eq!(cs.len(), 3);
        assert_eq!(cs[0].members, vec!["a", "b", "c"]);
        assert_eq!(cs[2].members, vec!["lonely"]);
        assert_eq!(detect_communities(&[], &[], &GraphRagConfig::default()), Err(GraphRagError::EmptyGraph));
    }

    #[test]
    fn large_community_truncated_by_degree() {
        let relations = vec![relation("hub", "leaf1", 3.0), relation("hub", "leaf2", 1.0), relation("hub", "leaf3", 2.0)];
        let members: Vec<String> = ["hub", "leaf1", "leaf2", "leaf3"].iter().map(|s| s.to_string()).collect();
        assert_eq!(truncate_members(&members, &relations, 3), vec!["hub", "leaf1", "leaf3"]);

        let entities: Vec<Entity> = members.iter().map(|m| entity(m)).collect();
        let c = Community { id: 0, members: members.clone(), summary: None };
        let backend = RuleBackend::new("mock").with_fallback("A hub with leaves.");
        let mut s = Session::new(&backend, None);
        let cfg = GraphRagConfig { max_community_size: 2, ..Default::default() };
        let (out, failures) = summarize_communities(&[c], &entities, &relations, "c", &mut s, &cfg);
        assert!(failures.is_empty());
        assert_eq!(out[0].summary.as_deref(), Some("A hub with leaves."));
        let prompt = &s.exchanges()[0].request_messages[0].content;
        assert!(prompt.contains("- leaf1 (component)"));
        assert!(!prompt.contains("leaf3"));
        assert!(prompt.contains("- hub -- leaf1 (weight 3): "));
    }

    #[test]
    fn one_summary_failure_does_not_stop_others() {
        let backend = ScriptedBackend::new("mock", vec![Scripted::Reply("first".into()), Scripted::Fail(GatewayError::Timeout)]);
        let cs = vec![
            Community { id: 0, members: vec!["a".into()], summary: None },
            Community { id: 1, members: vec!["b".into()], summary: None },
        ];
        let (out, failures) = summarize_communities(
            &cs,
            &[entity("a"), entity("b")],
            &[],
            "c",
            &mut Session::new(&backend, None),
            &GraphRagConfig::default(),
        );
        assert_eq!(out[0].summary.as_deref(), Some("first"));
        assert_eq!(out[1].summary, None);
        assert_eq!(failures, vec![CommunityFailure { id: 1, error: "request timed out".into() }]);
    }

    fn summarized(id: usize, s: &str) -> Community {
        Community { id, members: vec![format!("m{id}")], summary: Some(s.into()) }
    }

    #[test]
    fn reduce_sees_partials_in_id_order() {
        let backend = RuleBackend::new("mock")
            .rule("report about gears", "partial-gears")
            .rule("report about power", "partial-power")
            .rule("report about case", "partial-case")
            .rule("Partial answer from community", "final response = [[1]]");
        let cs = [summarized(2, "report about case"), summarized(0, "report about gears"), summarized(1, "report about power")];
        let refs: Vec<&Community> = cs.iter().collect();
        let mut s = Session::new(&backend, None);
        let ans = graph_answer("q", &refs, &mut s, 3).unwrap();
        assert_eq!(ans.text, "final response = [[1]]");
        let reduce = &s.exchanges()[3].request_messages[0].content;
        let pos: Vec<usize> = ["partial-gears", "partial-power", "partial-case"].iter().map(|p| reduce.find(p).unwrap()).collect();
        assert!(pos[0] < pos[1] && pos[1] < pos[2]);
        assert_eq!(ans.partials.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn single_community_and_failures() {
        let backend = ScriptedBackend::replies("mock", ["partial", "final"]);
        let c = summarized(0, "s");
        let ans = graph_answer("q", &[&c], &mut Session::new(&backend, None), 1).unwrap();
        assert_eq!(ans.text, "final");

        let failing = ScriptedBackend::new("mock", vec![Scripted::Fail(GatewayError::Timeout); 2]);
        let d = summarized(1, "t");
        assert_eq!(
            graph_answer("q", &[&c, &d], &mut Session::new(&failing, None), 1),
            Err(GraphRagError::AllMapsFailed(2))
        );
        let bare = Community { id: 0, members: vec!["a".into()], summary: None };
        assert_eq!(graph_answer("q", &[&bare], &mut Session::new(&backend, None), 1), Err(GraphRagError::NoSummaries));
    }

    #[test]
    fn selection_by_summary_similarity() {
        let cs = [summarized(0, "battery cells and charging"), summarized(1, "gear train torque"), summarized(2, "battery voltage")];
        let e = HashEmbedder::default();
        let all = select_communities("battery", &cs, Some(&e), None).unwrap();
        assert_eq!(all.len(), 3);
        let top = select_communities("battery voltage", &cs, Some(&e), Some(2)).unwrap();
        assert_eq!(top.iter().map(|c| c.id).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn index_round_trips_through_disk() {
        let backend = RuleBackend::new("mock")
            .rule("Previous extraction", "")
            .rule("Write a concise technical summary", "summary text")
            .with_fallback(TWO_AND_ONE);
        let mut s = Session::new(&backend, None);
        let idx = GraphIndex::build(&[chunk(0, "a")], "c", &mut s, &GraphRagConfig::default()).unwrap();
        assert_eq!(idx.communities.len(), 1);
        let dir = tempfile::tempdir().unwrap();
        idx.save(dir.path()).unwrap();
        for f in [ENTITIES_FILE, RELATIONS_FILE, COMMUNITIES_FILE, SUMMARIES_FILE] {
            assert!(dir.path().join(f).exists());
        }
        assert_eq!(GraphIndex::load(dir.path()).unwrap(), idx);
    }
}
