//! Exact L2 retrieval over stored embeddings, plus TSV export.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{squared_distance_slices, Tensor};
use crate::pairs::Embedder;

/// Immutable after construction; rows keep insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    ids: Vec<u64>,
    labels: Vec<usize>,
    /// Row-major `[rows, dim]`.
    data: Vec<f64>,
    seen: HashSet<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub id: u64,
    pub label: usize,
    pub distance: f64,
}

impl EmbeddingIndex {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be >= 1"));
        }
        Ok(EmbeddingIndex {
            dim,
            ids: Vec::new(),
            labels: Vec::new(),
            data: Vec::new(),
            seen: HashSet::new(),
        })
    }

    pub fn push(&mut self, id: u64, label: usize, embedding: &[f64]) -> Result<()> {
        if embedding.len() != self.dim {
            return Err(Error::Dimension {
                op: "index push",
                left: vec![embedding.len()],
                right: vec![self.dim],
            });
        }
        if !self.seen.insert(id) {
            return Err(Error::invalid(format!("duplicate id {id} in index")));
        }
        self.ids.push(id);
        self.labels.push(label);
        self.data.extend_from_slice(embedding);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.seen.contains(&id)
    }

    pub fn row(&self, i: usize) -> (u64, usize, &[f64]) {
        (
            self.ids[i],
            self.labels[i],
            &self.data[i * self.dim..(i + 1) * self.dim],
        )
    }

    pub fn rows(&self) -> impl Iterator<Item = (u64, usize, &[f64])> + '_ {
        (0..self.len()).map(|i| self.row(i))
    }

    /// Row with the given id.
    pub fn find(&self, id: u64) -> Option<(u64, usize, &[f64])> {
        self.ids.iter().position(|&r| r == id).map(|i| self.row(i))
    }
}

/// Embeds every image in eval mode, one row per sample in dataset order.
pub fn build_index<E: Embedder + ?Sized>(model: &E, dataset: &Dataset) -> Result<EmbeddingIndex> {
    let mut index = None;
    for s in &dataset.samples {
        let e = model.embed_eval(&s.image)?;
        let idx = match &mut index {
            Some(idx) => idx,
            None => index.insert(EmbeddingIndex::new(e.len())?),
        };
        idx.push(s.id, s.label, e.data())?;
    }
    index.ok_or_else(|| Error::invalid("cannot index an empty dataset"))
}

#[derive(PartialEq)]
struct Candidate {
    sq: f64,
    id: u64,
    row: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sq.total_cmp(&other.sq).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `n` nearest rows by L2 distance, nearest first, ties by ascending id.
pub fn query_top_n(index: &EmbeddingIndex, query: &Tensor, n: usize) -> Result<Vec<Match>> {
    if n == 0 {
        return Err(Error::invalid("top-n must be >= 1"));
    }
    if query.len() != index.dim {
        return Err(Error::Dimension {
            op: "query",
            left: vec![query.len()],
            right: vec![index.dim],
        });
    }
    let n = n.min(index.len());
    // Max-heap holding the best `n` seen so far; its top is the worst of them.
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(n + 1);
    for (row, (id, _, e)) in index.rows().enumerate() {
        let c = Candidate {
            sq: squared_distance_slices(query.data(), e)?,
            id,
            row,
        };
        if heap.len() < n {
            heap.push(c);
        } else if heap.peek().is_some_and(|top| c < *top) {
            heap.pop();
            heap.push(c);
        }
    }
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .map(|c| Match {
            id: c.id,
            label: index.labels[c.row],
            distance: c.sq.sqrt(),
        })
        .collect())
}

/// Tab-separated: header `id label d0 … d{k-1}`, floats with 9 significant digits.
pub fn embeddings_tsv(index: &EmbeddingIndex) -> String {
    let mut out = String::from("id\tlabel");
    for k in 0..index.dim {
        let _ = write!(out, "\td{k}");
    }
    out.push('\n');
    for (id, label, e) in index.rows() {
        let _ = write!(out, "{id}\t{label}");
        for v in e {
            let _ = write!(out, "\t{v:.8e}");
        }
        out.push('\n');
    }
    out
}

pub fn export_embeddings(index: &EmbeddingIndex, path: &Path) -> Result<()> {
    std::fs::write(path, embeddings_tsv(index)).map_err(|e| Error::io(path, e))
}

/// Parses the format written by [`embeddings_tsv`].
pub fn parse_embeddings_tsv(text: &str) -> Result<EmbeddingIndex> {
    let bad = |line: usize, msg: String| {
        Error::invalid(format!("embeddings TSV line {}: {msg}", line + 1))
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| bad(0, "missing header".into()))?;
    let cols: Vec<&str> = header.split('\t').collect();
    let dim = cols.len().saturating_sub(2);
    let expected: Vec<String> = (0..dim).map(|k| format!("d{k}")).collect();
    if cols.len() < 3
        || cols[0] != "id"
        || cols[1] != "label"
        || !cols[2..]
            .iter()
            .copied()
            .eq(expected.iter().map(String::as_str))
    {
        return Err(bad(0, format!("unexpected header {header:?}")));
    }
    let mut index = EmbeddingIndex::new(dim)?;
    for (i, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != dim + 2 {
            return Err(bad(
                i,
                format!("{} fields, expected {}", fields.len(), dim + 2),
            ));
        }
        let id = fields[0].parse().map_err(|e| bad(i, format!("id: {e}")))?;
        let label = fields[1]
            .parse()
            .map_err(|e| bad(i, format!("label: {e}")))?;
        let e = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| bad(i, format!("value {f:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        index.push(id, label, &e)?;
    }
    Ok(index)
}

pub fn read_embeddings_tsv(path: &Path) -> Result<EmbeddingIndex> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings_tsv(&text)
}
