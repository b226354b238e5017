//! Reference preparation and the classic retrieval path.
//!
//! Documents are plain-text files named `[Year Author] RType-Title.txt`. They are
//! classified into reference classes, merged per class, cut into overlapping
//! character windows and indexed in a flat in-memory cosine store.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{embed, cosine, Embedder, EmbeddingVector, GatewayError, Session};
use crate::prompt::{classification_prompt, PromptError, CLASSIFICATION_BUDGET};

const EMBED_BATCH: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("no {0} document available for the selection")]
    MissingClass(RefClass),
    #[error("empty selection")]
    EmptySelection,
    #[error("classification reply could not be parsed: {0:?}")]
    UnparseableClassification(String),
    #[error("the index is empty")]
    EmptyIndex,
    #[error("invalid rag config: {0}")]
    InvalidConfig(String),
    #[error("invalid reference class {0:?}")]
    InvalidClass(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RefClass {
    R1,
    R2,
    R3,
}

impl RefClass {
    pub const ALL: [RefClass; 3] = [RefClass::R1, RefClass::R2, RefClass::R3];

    /// The seven nonempty selections, in `R1, R2, R3, R1-R2, R1-R3, R2-R3, R1-R2-R3` order.
    pub fn combinations() -> Vec<Vec<RefClass>> {
        use RefClass::*;
        vec![
            vec![R1],
            vec![R2],
            vec![R3],
            vec![R1, R2],
            vec![R1, R3],
            vec![R2, R3],
            vec![R1, R2, R3],
        ]
    }
}

impl fmt::Display for RefClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RefClass::R1 => "R1",
            RefClass::R2 => "R2",
            RefClass::R3 => "R3",
        })
    }
}

impl FromStr for RefClass {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "R1" => Ok(RefClass::R1),
            "R2" => Ok(RefClass::R2),
            "R3" => Ok(RefClass::R3),
            other => Err(CorpusError::InvalidClass(other.to_string())),
        }
    }
}

/// `R1-R2` style label of a selection.
pub fn selection_label(sel: &[RefClass]) -> String {
    if sel.is_empty() {
        return "none".into();
    }
    let mut s = sel.to_vec();
    s.sort();
    s.dedup();
    s.iter().map(ToString::to_string).collect::<Vec<_>>().join("-")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceDoc {
    pub id: String,
    pub year: i32,
    pub author: String,
    pub rclass: RefClass,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedName {
    pub year: i32,
    pub author: String,
    pub rclass: RefClass,
    pub title: String,
}

/// Parses `[Year Author] RType-Title.txt` (or `.md`).
pub fn parse_reference_filename(name: &str) -> Option<ParsedName> {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    let re = RE.get_or_init(|| {
        regex::Regex::new(r"^\[(\d{4}) ([^\]]+)\] (R[123])-(.+)\.(?:txt|md)$").unwrap()
    });
    let c = re.captures(name)?;
    Some(ParsedName {
        year: c[1].parse().ok()?,
        author: c[2].trim().to_string(),
        rclass: c[3].parse().ok()?,
        title: c[4].trim().to_string(),
    })
}

/// Builds the conventional filename for a classified document.
pub fn reference_filename(year: i32, author: &str, rclass: RefClass, title: &str) -> String {
    format!("[{year} {author}] {rclass}-{title}.txt")
}

/// Loads every conventionally named `.txt`/`.md` file in `dir`, sorted by file name.
pub fn load_reference_dir(dir: &Path) -> Result<Vec<ReferenceDoc>, CorpusError> {
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| CorpusError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    let mut docs = Vec::new();
    for name in names {
        let Some(p) = parse_reference_filename(&name) else { continue };
        let text = std::fs::read_to_string(dir.join(&name))
            .map_err(|e| CorpusError::Io(format!("{name}: {e}")))?;
        if text.trim().is_empty() {
            continue;
        }
        let id = name.rsplit_once('.').map(|(s, _)| s).unwrap_or(&name).to_string();
        docs.push(ReferenceDoc { id, year: p.year, author: p.author, rclass: p.rclass, title: p.title, text });
    }
    Ok(docs)
}

/// First whole-word `R1`/`R2`/`R3` token in a reply.
pub fn parse_classification(text: &str) -> Option<RefClass> {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    let re = RE.get_or_init(|| regex::Regex::new(r"(?i)\bR([123])\b").unwrap());
    re.captures(text).and_then(|c| format!("R{}", &c[1]).parse().ok())
}

/// Asks the model for a reference class; one retry on an unparseable reply.
pub fn classify_document(doc_text: &str, session: &mut Session<'_>) -> Result<RefClass, CorpusError> {
    let prompt = classification_prompt(doc_text, CLASSIFICATION_BUDGET)?;
    let mut last = String::new();
    for _ in 0..2 {
        let reply = session.ask(&prompt.text)?;
        if let Some(c) = parse_classification(&reply.text) {
            return Ok(c);
        }
        last = reply.text;
    }
    Err(CorpusError::UnparseableClassification(last))
}

/// Configuration fragment produced from a classified corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigFragment {
    pub concept_name: String,
    pub relationship_type: String,
    pub predicted_components: Option<Vec<String>>,
    pub reference_files: BTreeMap<RefClass, Vec<String>>,
}

/// All documents of one class, concatenated into a single logical reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedReference {
    pub rclass: RefClass,
    pub sources: Vec<String>,
    pub text: String,
}

pub fn merge_by_class(docs: &[ReferenceDoc], selection: &[RefClass]) -> Result<Vec<MergedReference>, CorpusError> {
    if selection.is_empty() {
        return Err(CorpusError::EmptySelection);
    }
    let mut sel = selection.to_vec();
    sel.sort();
    sel.dedup();
    sel.into_iter()
        .map(|class| {
            let members: Vec<&ReferenceDoc> = docs.iter().filter(|d| d.rclass == class).collect();
            if members.is_empty() {
                return Err(CorpusError::MissingClass(class));
            }
            Ok(MergedReference {
                rclass: class,
                sources: members.iter().map(|d| d.id.clone()).collect(),
                text: members.iter().map(|d| d.text.as_str()).collect::<Vec<_>>().join("\n\n"),
            })
        })
        .collect()
}

/// Lists the selected documents per class under `reference_files`.
pub fn generate_config(
    docs: &[ReferenceDoc],
    selection: &[RefClass],
    concept_name: &str,
    relationship_type: &str,
    predicted_components: Option<Vec<String>>,
) -> Result<(ConfigFragment, Vec<MergedReference>), CorpusError> {
    let merged = merge_by_class(docs, selection)?;
    let reference_files = merged
        .iter()
        .map(|m| (m.rclass, m.sources.iter().map(|s| format!("{s}.txt")).collect()))
        .collect();
    let fragment = ConfigFragment {
        concept_name: concept_name.to_string(),
        relationship_type: relationship_type.to_string(),
        predicted_components,
        reference_files,
    };
    Ok((fragment, merged))
}

fn default_chunk_size() -> usize {
    1200
}
fn default_overlap() -> usize {
    100
}
fn default_top_k() -> usize {
    5
}

/// Chunk sizes are in characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagConfig {
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    #[serde(default = "default_overlap")]
    pub overlap: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

impl Default for RagConfig {
    fn default() -> Self {
        RagConfig { chunk_size: default_chunk_size(), overlap: default_overlap(), top_k: default_top_k() }
    }
}

impl RagConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.chunk_size == 0 || self.top_k == 0 {
            return Err(CorpusError::InvalidConfig("chunk_size and top_k must be positive".into()));
        }
        if self.overlap >= self.chunk_size {
            return Err(CorpusError::InvalidConfig("overlap must be smaller than chunk_size".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub seq: usize,
    /// Offset of the first character in the source text, in characters.
    pub start: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
}

/// Sliding character window with stride `chunk_size - overlap`; the last
/// partial window is kept.
pub fn chunk_text(doc_id: &str, text: &str, cfg: &RagConfig) -> Result<Vec<Chunk>, CorpusError> {
    cfg.validate()?;
    // byte offset of every char boundary, plus the end
    let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len())).collect();
    let n = bounds.len() - 1;
    let stride = cfg.chunk_size - cfg.overlap;
    let mut out = Vec::new();
    let mut start = 0usize;
    while start < n {
        let end = (start + cfg.chunk_size).min(n);
        out.push(Chunk {
            doc_id: doc_id.to_string(),
            seq: out.len(),
            start,
            text: text[bounds[start]..bounds[end]].to_string(),
            embedding: None,
        });
        if end == n {
            break;
        }
        start += stride;
    }
    Ok(out)
}

/// Inverse of [`chunk_text`]: drops the overlapping prefix of every chunk after the first.
pub fn reconstruct(chunks: &[Chunk], overlap: usize) -> String {
    let mut out = String::new();
    for (i, c) in chunks.iter().enumerate() {
        if i == 0 {
            out.push_str(&c.text);
        } else {
            out.extend(c.text.chars().skip(overlap));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedChunk {
    pub chunk: Chunk,
    pub rclass: Option<RefClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk: Chunk,
    pub score: f64,
}

/// Flat store scanned exhaustively per query.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VectorIndex {
    entries: Vec<IndexedChunk>,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Embeds and adds chunks.
    pub fn add(&mut self, chunks: Vec<Chunk>, rclass: Option<RefClass>, embedder: &dyn Embedder) -> Result<(), CorpusError> {
        for batch in chunks.chunks(EMBED_BATCH) {
            let texts: Vec<String> = batch.iter().map(|c| c.text.clone()).collect();
            let vecs = embed(embedder, &texts)?;
            for (mut c, v) in batch.iter().cloned().zip(vecs) {
                c.embedding = Some(v);
                self.entries.push(IndexedChunk { chunk: c, rclass });
            }
        }
        Ok(())
    }

    /// Chunks and indexes one merged reference per class.
    pub fn from_references(refs: &[MergedReference], cfg: &RagConfig, embedder: &dyn Embedder) -> Result<Self, CorpusError> {
        let mut idx = VectorIndex::new();
        for r in refs {
            let chunks = chunk_text(&r.rclass.to_string(), &r.text, cfg)?;
            idx.add(chunks, Some(r.rclass), embedder)?;
        }
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexedChunk] {
        &self.entries
    }

    /// Top `top_k` chunks by descending cosine similarity, ties by `(doc_id, seq)`.
    /// `filter` restricts the search to the listed classes.
    pub fn retrieve(
        &self,
        query: &str,
        embedder: &dyn Embedder,
        top_k: usize,
        filter: Option<&[RefClass]>,
    ) -> Result<Vec<ScoredChunk>, CorpusError> {
        if self.entries.is_empty() {
            return Err(CorpusError::EmptyIndex);
        }
        let q = embed(embedder, &[query.to_string()])?.remove(0);
        let mut scored: Vec<ScoredChunk> = self
            .entries
            .iter()
            .filter(|e| match (filter, e.rclass) {
                (Some(f), Some(c)) => f.contains(&c),
                (Some(_), None) => false,
                (None, _) => true,
            })
            .map(|e| ScoredChunk {
                score: e.chunk.embedding.as_ref().map(|v| cosine(&q.values, &v.values)).unwrap_or(0.0),
                chunk: e.chunk.clone(),
            })
            .collect();
        if scored.is_empty() {
            return Err(CorpusError::EmptyIndex);
        }
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.chunk.doc_id.cmp(&b.chunk.doc_id))
                .then(a.chunk.seq.cmp(&b.chunk.seq))
        });
        scored.truncate(top_k);
        Ok(scored)
    }
}
