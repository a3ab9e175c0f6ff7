//! Knowledge graph storage, node knowledge text and triple sampling.

mod index;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;

pub use index::{
    build_index, cosine, match_entity, MatchResult, NodeEmbeddingIndex, INDEX_MAGIC, INDEX_VERSION,
};

pub type NodeId = u64;

/// Default number of relation triples sampled per patient.
pub const DEFAULT_TRIPLES: usize = 10;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("node {id} ({name:?}) has a zero-norm embedding")]
    ZeroEmbedding { id: NodeId, name: String },
    #[error("embedding dimension {got} differs from index dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("eta must lie in (0, 1), got {0}")]
    Eta(f64),
    #[error("malformed index file: {0}")]
    IndexFormat(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgNode {
    pub id: NodeId,
    pub name: String,
    #[serde(default)]
    pub definition: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KgEdge {
    pub head: NodeId,
    pub relation: String,
    pub tail: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    nodes: Vec<KgNode>,
    edges: Vec<KgEdge>,
    by_id: HashMap<NodeId, usize>,
    incident: Vec<Vec<usize>>,
}

impl KnowledgeGraph {
    pub fn new(nodes: Vec<KgNode>, edges: Vec<KgEdge>) -> Result<Self, KgError> {
        let mut by_id = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.name.trim().is_empty() {
                return Err(KgError::Invalid(format!("node {} has an empty name", n.id)));
            }
            if by_id.insert(n.id, i).is_some() {
                return Err(KgError::Invalid(format!("duplicate node id {}", n.id)));
            }
        }
        let mut incident = vec![Vec::new(); nodes.len()];
        for (e_idx, e) in edges.iter().enumerate() {
            let (Some(&h), Some(&t)) = (by_id.get(&e.head), by_id.get(&e.tail)) else {
                return Err(KgError::Invalid(format!(
                    "edge {e_idx} ({} -{}-> {}) references an unknown node",
                    e.head, e.relation, e.tail
                )));
            };
            incident[h].push(e_idx);
            if t != h {
                incident[t].push(e_idx);
            }
        }
        Ok(Self {
            nodes,
            edges,
            by_id,
            incident,
        })
    }

    pub fn nodes(&self) -> &[KgNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[KgEdge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Result<&KgNode, KgError> {
        self.by_id
            .get(&id)
            .map(|&i| &self.nodes[i])
            .ok_or(KgError::UnknownNode(id))
    }

    pub fn write(&self, nodes_path: &Path, edges_path: &Path) -> Result<(), KgError> {
        write_jsonl(nodes_path, &self.nodes)?;
        write_jsonl(edges_path, &self.edges)
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), KgError> {
    let io = |source| KgError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, KgError> {
    let file = File::open(path).map_err(|source| KgError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let parse_err = |message: String| KgError::Parse {
            file: path.display().to_string(),
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}

/// Reads `kg_nodes.jsonl` and `kg_edges.jsonl`; dangling edges are rejected
/// with the offending line number.
pub fn load_kg(nodes_path: &Path, edges_path: &Path) -> Result<KnowledgeGraph, KgError> {
    let nodes: Vec<KgNode> = read_jsonl(nodes_path)?;
    let ids: std::collections::HashSet<NodeId> = nodes.iter().map(|n| n.id).collect();
    let edges: Vec<KgEdge> = read_jsonl(edges_path)?;
    if let Some(i) = edges
        .iter()
        .position(|e| !ids.contains(&e.head) || !ids.contains(&e.tail))
    {
        let e = &edges[i];
        return Err(KgError::Parse {
            file: edges_path.display().to_string(),
            line: i + 1,
            message: format!("dangling edge {} -{}-> {}", e.head, e.relation, e.tail),
        });
    }
    KnowledgeGraph::new(nodes, edges)
}

/// `"name: definition description"`, skipping empty fields.
pub fn node_knowledge(kg: &KnowledgeGraph, id: NodeId) -> Result<String, KgError> {
    let node = kg.node(id)?;
    let body: Vec<&str> = [node.definition.trim(), node.description.trim()]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect();
    Ok(if body.is_empty() {
        node.name.clone()
    } else {
        format!("{}: {}", node.name, body.join(" "))
    })
}

/// Uniform sample without replacement of `k` edges incident to any of the
/// given nodes, returned in graph order. Unknown ids are ignored.
pub fn sample_triples(kg: &KnowledgeGraph, matched: &[NodeId], k: usize, seed: u64) -> Vec<KgEdge> {
    let pool: Vec<usize> = matched
        .iter()
        .filter_map(|id| kg.by_id.get(id))
        .flat_map(|&i| kg.incident[i].iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let chosen: BTreeSet<usize> = if pool.len() <= k {
        pool.into_iter().collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, pool.len(), k)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    };
    chosen.into_iter().map(|i| kg.edges[i].clone()).collect()
}
