//! Query/document sets with binary subtopic judgments, a seeded synthetic
//! generator, JSON-lines persistence and query-level splitting.

mod generate;
mod io;
mod split;

pub use generate::{generate, GeneratorConfig};
pub use io::{load, read_jsonl, save, write_jsonl};
pub use split::split;

use crate::error::{invalid, Result};

/// Binary document-by-subtopic coverage matrix `J` (`n` rows, `m` columns).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Judgments {
    docs: usize,
    subtopics: usize,
    cells: Vec<u8>,
}

impl Judgments {
    pub fn new(rows: &[Vec<u8>]) -> Result<Self> {
        let docs = rows.len();
        let subtopics = rows.first().map_or(0, Vec::len);
        if docs == 0 || subtopics == 0 {
            return invalid("judgment matrix needs at least one document and one subtopic");
        }
        let mut cells = Vec::with_capacity(docs * subtopics);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != subtopics {
                return invalid(format!(
                    "judgment row {i} has {} subtopics, expected {subtopics}",
                    row.len()
                ));
            }
            if let Some(&v) = row.iter().find(|&&v| v > 1) {
                return invalid(format!("judgment row {i} contains non-binary value {v}"));
            }
            cells.extend_from_slice(row);
        }
        Ok(Self {
            docs,
            subtopics,
            cells,
        })
    }

    /// Builds a matrix from a coverage predicate.
    pub fn from_fn(docs: usize, subtopics: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let rows: Vec<Vec<u8>> = (0..docs)
            .map(|i| (0..subtopics).map(|l| u8::from(f(i, l))).collect())
            .collect();
        Self::new(&rows)
    }

    pub fn docs(&self) -> usize {
        self.docs
    }

    pub fn subtopics(&self) -> usize {
        self.subtopics
    }

    pub fn covers(&self, doc: usize, subtopic: usize) -> bool {
        self.cells[doc * self.subtopics + subtopic] == 1
    }

    pub fn row(&self, doc: usize) -> &[u8] {
        &self.cells[doc * self.subtopics..(doc + 1) * self.subtopics]
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.cells.chunks(self.subtopics).map(<[u8]>::to_vec).collect()
    }

    /// True when no document covers any subtopic.
    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|&c| c == 0)
    }

    /// Number of subtopics covered by at least one document.
    pub fn covered_subtopics(&self) -> usize {
        (0..self.subtopics)
            .filter(|&l| (0..self.docs).any(|i| self.covers(i, l)))
            .count()
    }

    /// Same matrix with subtopic columns reordered: column `l` of the result
    /// is column `perm[l]` of `self`.
    pub fn permute_subtopics(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.subtopics {
            return invalid("subtopic permutation has wrong length");
        }
        let rows: Vec<Vec<u8>> = (0..self.docs)
            .map(|i| perm.iter().map(|&l| self.row(i)[l]).collect())
            .collect();
        Self::new(&rows)
    }
}

/// One query: its embedding, candidate document embeddings and judgments.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryDocSet {
    query_id: String,
    query: Vec<f64>,
    docs: Vec<Vec<f64>>,
    judgments: Judgments,
}

impl QueryDocSet {
    pub fn new(
        query_id: impl Into<String>,
        query: Vec<f64>,
        docs: Vec<Vec<f64>>,
        judgments: Judgments,
    ) -> Result<Self> {
        let dim = query.len();
        if dim == 0 {
            return invalid("query embedding is empty");
        }
        if docs.is_empty() {
            return invalid("query has no documents");
        }
        if docs.len() != judgments.docs() {
            return invalid(format!(
                "{} documents but {} judgment rows",
                docs.len(),
                judgments.docs()
            ));
        }
        for (i, d) in docs.iter().enumerate() {
            if d.len() != dim {
                return invalid(format!(
                    "document {i} has dimension {}, query has {dim}",
                    d.len()
                ));
            }
        }
        if query.iter().chain(docs.iter().flatten()).any(|v| !v.is_finite()) {
            return invalid("embedding contains a non-finite value");
        }
        Ok(Self {
            query_id: query_id.into(),
            query,
            docs,
            judgments,
        })
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn query(&self) -> &[f64] {
        &self.query
    }

    pub fn docs(&self) -> &[Vec<f64>] {
        &self.docs
    }

    pub fn judgments(&self) -> &Judgments {
        &self.judgments
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.query.len()
    }

    /// Same query with documents reordered: document `i` of the result is
    /// document `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_docs() {
            return invalid("document permutation has wrong length");
        }
        let docs = perm.iter().map(|&i| self.docs[i].clone()).collect();
        let rows: Vec<Vec<u8>> = perm.iter().map(|&i| self.judgments.row(i).to_vec()).collect();
        Self::new(self.query_id.clone(), self.query.clone(), docs, Judgments::new(&rows)?)
    }
}

/// A collection of queries sharing embedding dimension, document count and
/// subtopic count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<QueryDocSet>,
    embed_dim: usize,
    subtopics: usize,
    docs_per_query: usize,
}

impl Dataset {
    pub fn new(items: Vec<QueryDocSet>) -> Result<Self> {
        let Some(first) = items.first() else {
            return invalid("dataset has no queries");
        };
        let (embed_dim, subtopics, docs_per_query) = (
            first.embed_dim(),
            first.judgments().subtopics(),
            first.num_docs(),
        );
        for (k, it) in items.iter().enumerate() {
            if it.embed_dim() != embed_dim
                || it.judgments().subtopics() != subtopics
                || it.num_docs() != docs_per_query
            {
                return invalid(format!(
                    "query {k} (`{}`) has shape L={}, m={}, n={}; dataset uses L={embed_dim}, m={subtopics}, n={docs_per_query}",
                    it.query_id(),
                    it.embed_dim(),
                    it.judgments().subtopics(),
                    it.num_docs()
                ));
            }
        }
        Ok(Self {
            items,
            embed_dim,
            subtopics,
            docs_per_query,
        })
    }

    pub fn items(&self) -> &[QueryDocSet] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn subtopics(&self) -> usize {
        self.subtopics
    }

    pub fn docs_per_query(&self) -> usize {
        self.docs_per_query
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn judgments_validate() {
        assert!(Judgments::new(&[vec![1, 0], vec![0, 2]]).is_err());
        assert!(Judgments::new(&[vec![1, 0], vec![0]]).is_err());
        assert!(Judgments::new(&[]).is_err());
        let j = Judgments::new(&[vec![1, 0], vec![0, 0]]).unwrap();
        assert_eq!(j.covered_subtopics(), 1);
        assert!(!j.is_empty());
        assert!(Judgments::new(&[vec![0, 0]]).unwrap().is_empty());
    }

    #[test]
    fn query_doc_set_rejects_mismatched_dims() {
        let j = Judgments::new(&[vec![1], vec![0]]).unwrap();
        let bad = QueryDocSet::new("q", vec![0.0; 2], vec![vec![0.0; 2], vec![0.0; 3]], j.clone());
        assert!(bad.is_err());
        let ok = QueryDocSet::new("q", vec![0.0; 2], vec![vec![0.0; 2], vec![1.0; 2]], j).unwrap();
        let p = ok.permuted(&[1, 0]).unwrap();
        assert_eq!(p.docs()[0], vec![1.0; 2]);
        assert_eq!(p.judgments().row(1), &[1]);
    }

    #[test]
    fn dataset_requires_uniform_shape() {
        let a = QueryDocSet::new("a", vec![0.0], vec![vec![0.0]], Judgments::new(&[vec![1]]).unwrap()).unwrap();
        let b = QueryDocSet::new("b", vec![0.0], vec![vec![0.0]; 2], Judgments::new(&[vec![1], vec![0]]).unwrap()).unwrap();
        assert!(Dataset::new(vec![a.clone(), b]).is_err());
        assert!(Dataset::new(vec![]).is_err());
        assert_eq!(Dataset::new(vec![a]).unwrap().docs_per_query(), 1);
    }
}
