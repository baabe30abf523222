//! Compositions shared by the CLI and the HTTP service: embedding datasets
//! into an index, held-out evaluation and the per-year projection.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datastore::DocumentRecord;
use crate::error::{Error, Result};
use crate::index::{IndexedDocument, RetrievalIndex, Source, Weighting};
use crate::math::{exact_ndcg, mean_absolute_error, mean_average_precision, ScoredList};
use crate::model::{dot, EvalSnapshot, ProjectionModel};
use crate::pca::pca_project;
use crate::relevance::RelevanceMatrix;

/// Embeds the labeled records; unlabeled ones are skipped.
pub fn embed_records(
    model: &ProjectionModel,
    records: &[DocumentRecord],
    source: Source,
) -> Result<Vec<IndexedDocument>> {
    let labeled: Vec<&DocumentRecord> = records.iter().filter(|r| r.year.is_some()).collect();
    let features: Vec<Vec<f64>> = labeled.iter().map(|r| r.features.clone()).collect();
    let embeddings = model.forward(&features)?;
    Ok(labeled
        .into_iter()
        .zip(embeddings)
        .map(|(r, embedding)| IndexedDocument {
            doc_id: r.doc_id.clone(),
            embedding,
            year: r.year.expect("filtered to labeled"),
            source,
        })
        .collect())
}

/// Index over the original training records plus user feedback (feedback
/// wins on id collisions).
pub fn build_index(
    model: &ProjectionModel,
    train: &[DocumentRecord],
    feedback: &[DocumentRecord],
) -> Result<RetrievalIndex> {
    let mut index = RetrievalIndex::new();
    index.add(embed_records(model, train, Source::Original)?)?;
    index.add(embed_records(model, feedback, Source::UserFeedback)?)?;
    Ok(index)
}

/// Held-out MAE (weighted k-NN) and mAP (same-year relevance over the whole
/// index) for the test records.
pub fn evaluate(
    model: &ProjectionModel,
    index: &RetrievalIndex,
    test: &[DocumentRecord],
    k: usize,
    weighting: Weighting,
) -> Result<EvalSnapshot> {
    let test: Vec<&DocumentRecord> = test.iter().filter(|r| r.year.is_some()).collect();
    if test.is_empty() {
        return Err(Error::input("test split is empty"));
    }
    let mut predicted = Vec::with_capacity(test.len());
    let mut actual = Vec::with_capacity(test.len());
    let mut rankings = Vec::with_capacity(test.len());
    let mut relevant = Vec::with_capacity(test.len());
    for r in &test {
        let year = r.year.expect("filtered to labeled");
        let embedding = model.embed(&r.features)?;
        let hits = index.rank_all(&embedding)?;
        predicted.push(
            index
                .estimate_year(&embedding, k, weighting)?
                .predicted_year,
        );
        actual.push(year as f64);
        relevant.push(
            hits.iter()
                .filter(|h| h.year == year)
                .map(|h| h.doc_id.clone())
                .collect::<HashSet<_>>(),
        );
        rankings.push(hits.into_iter().map(|h| h.doc_id).collect::<Vec<_>>());
    }
    Ok(EvalSnapshot {
        mae: mean_absolute_error(&predicted, &actual)?,
        map: mean_average_precision(&rankings, &relevant)?,
        n: test.len(),
    })
}

/// Exact (hard-rank) nDCG of each query against the whole index, graded by
/// `matrix`. Index documents whose year is missing from the matrix get zero
/// relevance.
pub fn exact_ndcg_per_query(
    model: &ProjectionModel,
    index: &RetrievalIndex,
    queries: &[DocumentRecord],
    matrix: &RelevanceMatrix,
) -> Result<Vec<f64>> {
    let docs = index.documents();
    let cols: Vec<Option<usize>> = docs
        .iter()
        .map(|d| matrix.year_index(d.year).ok())
        .collect();
    queries
        .iter()
        .filter(|q| q.year.is_some())
        .map(|q| {
            let row = matrix.row_for_query(q.year.expect("filtered to labeled"))?;
            let e = model.embed(&q.features)?;
            let scores: Vec<f64> = docs.iter().map(|d| dot(&d.embedding, &e)).collect();
            let rels: Vec<f64> = cols.iter().map(|c| c.map_or(0.0, |c| row[c])).collect();
            Ok(exact_ndcg(&ScoredList::new(&scores, &rels)?, 1e-12))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearPoint {
    pub year: i32,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearProjection {
    pub points: Vec<YearPoint>,
    pub excluded_years: Vec<i32>,
}

/// PCA of the per-year cluster centers. A single center sits at the origin.
pub fn project_year_centers(index: &RetrievalIndex) -> Result<YearProjection> {
    let centers = index.cluster_centers()?;
    let years: Vec<i32> = centers.centers.keys().copied().collect();
    let vectors: Vec<Vec<f64>> = centers.centers.into_values().collect();
    let coords: Vec<[f64; 2]> = match vectors.len() {
        0 => Vec::new(),
        1 => vec![[0.0, 0.0]],
        _ => pca_project(&vectors)?.points,
    };
    Ok(YearProjection {
        points: years
            .into_iter()
            .zip(coords)
            .map(|(year, [x, y])| YearPoint { year, x, y })
            .collect(),
        excluded_years: centers.excluded_years,
    })
}

pub fn projection_csv(projection: &YearProjection) -> String {
    let mut out = String::from("year,x,y\n");
    for p in &projection.points {
        let _ = writeln!(out, "{},{},{}", p.year, p.x, p.y);
    }
    out
}

/// Kendall rank correlation (tau-b) between two equally long sequences.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::input(
            "kendall tau needs two equal sequences of length >= 2",
        ));
    }
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            let da = (a[i] - a[j]).signum() * ((a[i] != a[j]) as i32 as f64);
            let db = (b[i] - b[j]).signum() * ((b[i] != b[j]) as i32 as f64);
            match (da == 0.0, db == 0.0) {
                (true, true) => {}
                (true, false) => ties_a += 1,
                (false, true) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (concordant + discordant) as f64;
    let denom = ((n0 + ties_a as f64) * (n0 + ties_b as f64)).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(
            "kendall tau of constant sequence".into(),
        ));
    }
    Ok((concordant - discordant) as f64 / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kendall_examples() {
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(),
            1.0
        );
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0
        );
        let t = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((t - 4.0 / 6.0).abs() < 1e-12);
        assert!(kendall_tau(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn single_center_projects_to_origin() {
        let mut index = RetrievalIndex::new();
        index
            .add(vec![IndexedDocument {
                doc_id: "a".into(),
                embedding: vec![1.0, 0.0],
                year: 1900,
                source: Source::Original,
            }])
            .unwrap();
        let p = project_year_centers(&index).unwrap();
        assert_eq!(
            p.points,
            vec![YearPoint {
                year: 1900,
                x: 0.0,
                y: 0.0
            }]
        );
        assert_eq!(projection_csv(&p), "year,x,y\n1900,0,0\n");
    }
}
