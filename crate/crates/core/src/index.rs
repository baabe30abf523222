//! Exhaustive cosine-similarity index over labeled embeddings.
//!
//! Supports ranked retrieval, weighted k-NN year estimation and per-year
//! cluster centers. Snapshots are JSON-lines, one [`IndexedDocument`] per line.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, is_unit, normalize};

/// Default neighbor count for year estimation.
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Original,
    UserFeedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedDocument {
    pub doc_id: String,
    pub embedding: Vec<f64>,
    pub year: i32,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub doc_id: String,
    pub similarity: f64,
    pub year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearEstimate {
    pub predicted_year: f64,
    pub neighbor_ids: Vec<String>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weighting {
    /// `max(sim, 0)`, normalized; uniform when every similarity is `<= 0`.
    #[default]
    SimilarityProportional,
    /// `softmax(beta · sim)`.
    Softmax { beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AddOutcome {
    /// Index size after the insert.
    pub count: usize,
    /// Ids that already existed and were replaced.
    pub replaced: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterCenters {
    pub centers: BTreeMap<i32, Vec<f64>>,
    /// Years whose mean embedding is (numerically) zero.
    pub excluded_years: Vec<i32>,
}

#[derive(Debug, Clone, Default)]
pub struct RetrievalIndex {
    docs: Vec<IndexedDocument>,
    positions: HashMap<String, usize>,
}

impl RetrievalIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[IndexedDocument] {
        &self.docs
    }

    pub fn get(&self, doc_id: &str) -> Option<&IndexedDocument> {
        self.positions.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn dim(&self) -> Option<usize> {
        self.docs.first().map(|d| d.embedding.len())
    }

    /// Inserts documents, replacing any with an existing id. The batch is
    /// validated as a whole before anything is inserted.
    pub fn add(&mut self, docs: Vec<IndexedDocument>) -> Result<AddOutcome> {
        let dim = self
            .dim()
            .or_else(|| docs.first().map(|d| d.embedding.len()));
        for d in &docs {
            if !is_unit(&d.embedding) {
                return Err(Error::input(format!(
                    "{}: embedding is not unit-norm",
                    d.doc_id
                )));
            }
            if Some(d.embedding.len()) != dim {
                return Err(Error::input(format!(
                    "{}: embedding dimension {} does not match index dimension {}",
                    d.doc_id,
                    d.embedding.len(),
                    dim.unwrap_or(0)
                )));
            }
        }
        let mut replaced = Vec::new();
        for d in docs {
            match self.positions.get(&d.doc_id) {
                Some(&i) => {
                    replaced.push(d.doc_id.clone());
                    self.docs[i] = d;
                }
                None => {
                    self.positions.insert(d.doc_id.clone(), self.docs.len());
                    self.docs.push(d);
                }
            }
        }
        Ok(AddOutcome {
            count: self.docs.len(),
            replaced,
        })
    }

    /// Every document ranked by cosine similarity to `embedding`.
    pub fn rank_all(&self, embedding: &[f64]) -> Result<Vec<RankedHit>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if Some(embedding.len()) != self.dim() {
            return Err(Error::input(format!(
                "query dimension {} does not match index dimension {}",
                embedding.len(),
                self.dim().unwrap_or(0)
            )));
        }
        if !is_unit(embedding) {
            return Err(Error::input("query embedding is not unit-norm"));
        }
        let mut hits: Vec<RankedHit> = self
            .docs
            .iter()
            .map(|d| RankedHit {
                doc_id: d.doc_id.clone(),
                similarity: dot(&d.embedding, embedding),
                year: d.year,
            })
            .collect();
        hits.sort_by(hit_order);
        Ok(hits)
    }

    /// The `top_k` most similar documents; all of them when `top_k` exceeds
    /// the index size.
    pub fn query(&self, embedding: &[f64], top_k: usize) -> Result<Vec<RankedHit>> {
        if top_k == 0 {
            return Err(Error::param("top_k must be positive"));
        }
        let mut hits = self.rank_all(embedding)?;
        hits.truncate(top_k);
        Ok(hits)
    }

    /// Weighted mean of the `k` nearest neighbors' years.
    pub fn estimate_year(
        &self,
        embedding: &[f64],
        k: usize,
        weighting: Weighting,
    ) -> Result<YearEstimate> {
        if k == 0 {
            return Err(Error::param("k must be positive"));
        }
        if k > self.len() {
            return Err(Error::param(format!(
                "k = {k} exceeds index size {}",
                self.len()
            )));
        }
        let hits = self.query(embedding, k)?;
        Ok(weighted_estimate(&hits, weighting))
    }

    /// Per-year mean embedding, re-normalized.
    pub fn cluster_centers(&self) -> Result<ClusterCenters> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let dim = self.dim().unwrap_or(0);
        let mut sums: BTreeMap<i32, (Vec<f64>, usize)> = BTreeMap::new();
        for d in &self.docs {
            let entry = sums.entry(d.year).or_insert_with(|| (vec![0.0; dim], 0));
            entry
                .0
                .iter_mut()
                .zip(&d.embedding)
                .for_each(|(s, v)| *s += v);
            entry.1 += 1;
        }
        let mut out = ClusterCenters::default();
        for (year, (sum, count)) in sums {
            let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
            // A mean this short is cancellation noise, not a direction.
            if dot(&mean, &mean).sqrt() < 1e-9 {
                out.excluded_years.push(year);
                continue;
            }
            match normalize(mean) {
                Some(c) => {
                    out.centers.insert(year, c);
                }
                None => out.excluded_years.push(year),
            }
        }
        Ok(out)
    }

    pub fn save_snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for d in &self.docs {
            out.push_str(&serde_json::to_string(d)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut docs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let doc: IndexedDocument = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if !is_unit(&doc.embedding) {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: i + 1,
                    message: format!("{}: embedding is not unit-norm", doc.doc_id),
                });
            }
            docs.push(doc);
        }
        let mut index = RetrievalIndex::new();
        index.add(docs)?;
        Ok(index)
    }
}

/// Similarity descending, then doc_id ascending.
fn hit_order(a: &RankedHit, b: &RankedHit) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Convex combination of the hits' years under `weighting`.
pub fn weighted_estimate(hits: &[RankedHit], weighting: Weighting) -> YearEstimate {
    let raw: Vec<f64> = match weighting {
        Weighting::SimilarityProportional => {
            let w: Vec<f64> = hits.iter().map(|h| h.similarity.max(0.0)).collect();
            if w.iter().sum::<f64>() > 0.0 {
                w
            } else {
                vec![1.0; hits.len()]
            }
        }
        Weighting::Softmax { beta } => {
            let max = hits
                .iter()
                .map(|h| beta * h.similarity)
                .fold(f64::NEG_INFINITY, f64::max);
            hits.iter()
                .map(|h| (beta * h.similarity - max).exp())
                .collect()
        }
    };
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    // Accumulate offsets from the smallest year so identical years reproduce
    // exactly and the result stays inside the neighbors' range.
    let lo = hits.iter().map(|h| h.year).min().unwrap_or(0);
    let hi = hits.iter().map(|h| h.year).max().unwrap_or(0);
    let offset: f64 = hits
        .iter()
        .zip(&weights)
        .map(|(h, w)| w * (h.year - lo) as f64)
        .sum();
    YearEstimate {
        predicted_year: (lo as f64 + offset).clamp(lo as f64, hi as f64),
        neighbor_ids: hits.iter().map(|h| h.doc_id.clone()).collect(),
        weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, e: Vec<f64>, year: i32) -> IndexedDocument {
        IndexedDocument {
            doc_id: id.into(),
            embedding: e,
            year,
            source: Source::Original,
        }
    }

    #[test]
    fn add_query_upsert() {
        let mut idx = RetrievalIndex::new();
        let out = idx
            .add(vec![
                doc("a", vec![1.0, 0.0], 1900),
                doc("b", vec![0.0, 1.0], 1910),
                doc("c", vec![0.6, 0.8], 1920),
            ])
            .unwrap();
        assert_eq!(out.count, 3);
        assert_eq!(idx.query(&[1.0, 0.0], 10).unwrap().len(), 3);
        assert_eq!(idx.query(&[1.0, 0.0], 1).unwrap()[0].doc_id, "a");

        let out = idx.add(vec![doc("a", vec![0.0, -1.0], 1900)]).unwrap();
        assert_eq!(out.count, 3);
        assert_eq!(out.replaced, vec!["a".to_string()]);
        assert_eq!(idx.query(&[0.0, -1.0], 1).unwrap()[0].doc_id, "a");

        assert!(idx.add(vec![doc("n", vec![f64::NAN, 1.0], 1900)]).is_err());
        assert!(idx.add(vec![doc("n", vec![2.0, 0.0], 1900)]).is_err());
        assert_eq!(idx.len(), 3);
    }

    #[test]
    fn empty_index_errors() {
        let idx = RetrievalIndex::new();
        assert!(matches!(idx.query(&[1.0], 1), Err(Error::EmptyIndex)));
        assert!(matches!(idx.cluster_centers(), Err(Error::EmptyIndex)));
    }

    #[test]
    fn ties_break_by_id() {
        let mut idx = RetrievalIndex::new();
        idx.add(vec![
            doc("z", vec![1.0, 0.0], 1),
            doc("m", vec![1.0, 0.0], 2),
        ])
        .unwrap();
        let hits = idx.query(&[1.0, 0.0], 2).unwrap();
        assert_eq!(hits[0].doc_id, "m");
    }

    #[test]
    fn estimates() {
        let hits = |years: &[i32], sims: &[f64]| -> Vec<RankedHit> {
            years
                .iter()
                .zip(sims)
                .enumerate()
                .map(|(i, (&y, &s))| RankedHit {
                    doc_id: i.to_string(),
                    similarity: s,
                    year: y,
                })
                .collect()
        };
        let e = weighted_estimate(
            &hits(&[1400; 4], &[0.9, 0.7, 0.3, 0.1]),
            Weighting::default(),
        );
        assert_eq!(e.predicted_year, 1400.0);
        let e = weighted_estimate(&hits(&[1300, 1500], &[0.5, 0.5]), Weighting::default());
        assert_eq!(e.predicted_year, 1400.0);
        let e = weighted_estimate(&hits(&[1350, 1375], &[0.9, 0.3]), Weighting::default());
        assert!((e.predicted_year - 1356.25).abs() < 1e-9);
        assert!((e.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let e = weighted_estimate(&hits(&[1300, 1500], &[-0.2, -0.9]), Weighting::default());
        assert_eq!(e.predicted_year, 1400.0);
        let e = weighted_estimate(
            &hits(&[1300, 1500], &[0.9, 0.1]),
            Weighting::Softmax { beta: 10.0 },
        );
        let w0 = 1.0 / (1.0 + (-8.0f64).exp());
        assert!((e.weights[0] - w0).abs() < 1e-12);

        let mut idx = RetrievalIndex::new();
        idx.add(vec![doc("a", vec![1.0, 0.0], 1900)]).unwrap();
        assert!(idx
            .estimate_year(&[1.0, 0.0], 2, Weighting::default())
            .is_err());
    }

    #[test]
    fn centers_and_exclusions() {
        let mut idx = RetrievalIndex::new();
        idx.add(vec![
            doc("a", vec![1.0, 0.0], 1900),
            doc("b", vec![0.0, 1.0], 1910),
            doc("c", vec![0.0, -1.0], 1920),
            doc("d", vec![0.0, 1.0], 1920),
        ])
        .unwrap();
        let c = idx.cluster_centers().unwrap();
        assert_eq!(c.centers[&1900], vec![1.0, 0.0]);
        assert_eq!(c.centers[&1910], vec![0.0, 1.0]);
        assert_eq!(c.excluded_years, vec![1920]);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut idx = RetrievalIndex::new();
        idx.add(vec![
            doc("a", vec![0.6, 0.8], 1900),
            doc("b", vec![0.0, 1.0], 1910),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("index.jsonl");
        idx.save_snapshot(&p).unwrap();
        let back = RetrievalIndex::load_snapshot(&p).unwrap();
        assert_eq!(back.documents(), idx.documents());

        std::fs::write(
            &p,
            "{\"doc_id\":\"a\",\"embedding\":[1.0,1.0],\"year\":1,\"source\":\"original\"}\n",
        )
        .unwrap();
        assert!(matches!(
            RetrievalIndex::load_snapshot(&p),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
