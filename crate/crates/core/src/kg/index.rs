use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{KgError, KnowledgeGraph, NodeId};
use crate::gateway::Embedder;
use crate::ts_entities::EntityMention;

pub const INDEX_MAGIC: &[u8; 4] = b"KGIX";
pub const INDEX_VERSION: u32 = 2;

/// Unit-normalized node-name embeddings, one row per node. The on-disk
/// form keeps full `f64` precision, so a loaded index scores exactly like
/// the one that was saved.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddingIndex {
    dim: usize,
    vectors: Vec<f64>,
    node_order: Vec<NodeId>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, KgError> {
    if a.len() != b.len() {
        return Err(KgError::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(KgError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

impl NodeEmbeddingIndex {
    /// Normalizes each row; a zero row fails with the id of its node.
    pub fn from_rows(
        node_order: Vec<NodeId>,
        rows: Vec<Vec<f64>>,
        names: Option<&[String]>,
    ) -> Result<Self, KgError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(KgError::Dimension {
                    expected: dim,
                    got: row.len(),
                });
            }
            let n = norm(row);
            if n == 0.0 || !n.is_finite() {
                return Err(KgError::ZeroEmbedding {
                    id: node_order[i],
                    name: names.map(|n| n[i].clone()).unwrap_or_default(),
                });
            }
            vectors.extend(row.iter().map(|x| x / n));
        }
        Ok(Self {
            dim,
            vectors,
            node_order,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.node_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_order.is_empty()
    }

    pub fn node_order(&self) -> &[NodeId] {
        &self.node_order
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine similarity of `query` against every row, in row order.
    pub fn scores(&self, query: &[f64]) -> Result<Vec<f64>, KgError> {
        if query.len() != self.dim {
            return Err(KgError::Dimension {
                expected: self.dim,
                got: query.len(),
            });
        }
        let n = norm(query);
        if n == 0.0 {
            return Err(KgError::ZeroVector);
        }
        let q: Vec<f64> = query.iter().map(|x| x / n).collect();
        Ok((0..self.len())
            .map(|i| dot(self.row(i), &q).clamp(-1.0, 1.0))
            .collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for x in &self.vectors {
            w.write_all(&x.to_le_bytes())?;
        }
        for id in &self.node_order {
            w.write_all(&id.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, KgError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| KgError::IndexFormat(e.to_string()))?;
        let bad = |m: &str| KgError::IndexFormat(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != INDEX_MAGIC {
            return Err(bad("missing KGIX header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if u32_at(4) != INDEX_VERSION {
            return Err(bad("unsupported version"));
        }
        let (rows, dim) = (u32_at(8) as usize, u32_at(12) as usize);
        let expected = 16 + rows * dim * 8 + rows * 8;
        if bytes.len() != expected {
            return Err(KgError::IndexFormat(format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let vec_end = 16 + rows * dim * 8;
        let vectors: Vec<f64> = bytes[16..vec_end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let node_order = bytes[vec_end..]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let index = Self {
            dim,
            vectors,
            node_order,
        };
        for i in 0..rows {
            if (norm(index.row(i)) - 1.0).abs() > 1e-6 {
                return Err(KgError::IndexFormat(format!("row {i} is not unit length")));
            }
        }
        Ok(index)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), KgError> {
        let io = |source| KgError::Io {
            path: path.display().to_string(),
            source,
        };
        let f = std::fs::File::create(path).map_err(io)?;
        self.write_to(std::io::BufWriter::new(f)).map_err(io)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, KgError> {
        let f = std::fs::File::open(path).map_err(|source| KgError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Embeds every node name (in parallel, order preserved) and normalizes.
pub fn build_index(
    kg: &KnowledgeGraph,
    embed: &dyn Embedder,
) -> Result<NodeEmbeddingIndex, KgError> {
    let rows = kg
        .nodes()
        .par_iter()
        .map(|n| embed.embed(&n.name))
        .collect::<Result<Vec<_>, _>>()?;
    let names: Vec<String> = kg.nodes().iter().map(|n| n.name.clone()).collect();
    NodeEmbeddingIndex::from_rows(
        kg.nodes().iter().map(|n| n.id).collect(),
        rows,
        Some(&names),
    )
}

impl NodeEmbeddingIndex {
    pub fn build(kg: &KnowledgeGraph, embed: &dyn Embedder) -> Result<Self, KgError> {
        build_index(kg, embed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub query: EntityMention,
    /// Sorted ascending; empty unless the best similarity exceeds eta.
    pub matched_nodes: Vec<NodeId>,
    /// Best similarity attained over the whole index.
    pub similarity: f64,
}

impl MatchResult {
    pub fn is_match(&self) -> bool {
        !self.matched_nodes.is_empty()
    }
}

/// Exhaustive scan: every node tied at the maximum similarity is returned
/// when that maximum is strictly greater than `eta`.
pub fn match_entity(
    e: &EntityMention,
    index: &NodeEmbeddingIndex,
    embed: &dyn Embedder,
    eta: f64,
) -> Result<MatchResult, KgError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(KgError::Eta(eta));
    }
    let q = embed.embed(&e.surface)?;
    let scores = index.scores(&q)?;
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut matched_nodes: Vec<NodeId> = if best > eta {
        scores
            .iter()
            .zip(index.node_order())
            .filter(|(s, _)| **s == best)
            .map(|(_, id)| *id)
            .collect()
    } else {
        Vec::new()
    };
    matched_nodes.sort_unstable();
    Ok(MatchResult {
        query: e.clone(),
        matched_nodes,
        similarity: if best.is_finite() { best } else { -1.0 },
    })
}
