//! Year-by-year relevance matrix.
//!
//! `values[q][n]` is the relevance of an item dated `years[n]` to a query
//! dated `years[q]`. Matrices are immutable; every edit returns a new one.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::RelevanceSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Generated,
    Edited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixFile", into = "MatrixFile")]
pub struct RelevanceMatrix {
    years: Vec<i32>,
    values: Vec<Vec<f64>>,
    provenance: Provenance,
    spec: Option<RelevanceSpec>,
}

/// On-disk layout; also the HTTP representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatrixFile {
    years: Vec<i32>,
    values: Vec<Vec<f64>>,
    provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec: Option<RelevanceSpec>,
}

impl From<RelevanceMatrix> for MatrixFile {
    fn from(m: RelevanceMatrix) -> Self {
        MatrixFile {
            years: m.years,
            values: m.values,
            provenance: m.provenance,
            spec: m.spec,
        }
    }
}

impl TryFrom<MatrixFile> for RelevanceMatrix {
    type Error = Error;

    fn try_from(f: MatrixFile) -> Result<Self> {
        RelevanceMatrix::from_parts(f.years, f.values, f.provenance, f.spec)
    }
}

/// Outcome of [`RelevanceMatrix::boost_region`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoostOutcome {
    pub matrix: RelevanceMatrix,
    pub rows_affected: usize,
    /// Set when no matrix year falls inside the requested band.
    pub empty_region: bool,
}

/// A single invalid cell, for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellIssue {
    pub row: usize,
    pub col: usize,
    pub message: String,
}

impl RelevanceMatrix {
    /// Evaluates `spec` for every (query year, item year) pair.
    pub fn build(years: &[i32], spec: &RelevanceSpec) -> Result<Self> {
        spec.validate()?;
        if years.is_empty() {
            return Err(Error::input("year list is empty"));
        }
        let mut sorted = years.to_vec();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::input(format!("duplicate year {}", w[0])));
        }
        let span = ((sorted[sorted.len() - 1] - sorted[0]) as f64).max(1.0);
        let values = sorted
            .iter()
            .map(|&q| {
                sorted
                    .iter()
                    .map(|&n| spec.evaluate(q, n, span))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RelevanceMatrix {
            years: sorted,
            values,
            provenance: Provenance::Generated,
            spec: Some(spec.clone()),
        })
    }

    /// Assembles a matrix from raw parts, enforcing shape, ordering and
    /// non-negativity.
    pub fn from_parts(
        years: Vec<i32>,
        values: Vec<Vec<f64>>,
        provenance: Provenance,
        spec: Option<RelevanceSpec>,
    ) -> Result<Self> {
        let issues = Self::check_parts(&years, &values);
        if let Some(first) = issues.first() {
            return Err(Error::input(format!(
                "{} invalid cell(s); first at ({}, {}): {}",
                issues.len(),
                first.row,
                first.col,
                first.message
            )));
        }
        if years.is_empty() {
            return Err(Error::input("year list is empty"));
        }
        if let Some(w) = years.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::input(format!(
                "years must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some(spec) = &spec {
            spec.validate()?;
        }
        Ok(RelevanceMatrix {
            years,
            values,
            provenance,
            spec,
        })
    }

    /// Cell-level problems with a candidate matrix (shape, NaN, negatives).
    pub fn check_parts(years: &[i32], values: &[Vec<f64>]) -> Vec<CellIssue> {
        let mut issues = Vec::new();
        if values.len() != years.len() {
            issues.push(CellIssue {
                row: values.len(),
                col: 0,
                message: format!("expected {} rows, found {}", years.len(), values.len()),
            });
        }
        for (row, vals) in values.iter().enumerate() {
            if vals.len() != years.len() {
                issues.push(CellIssue {
                    row,
                    col: vals.len(),
                    message: format!("expected {} columns, found {}", years.len(), vals.len()),
                });
            }
            for (col, v) in vals.iter().enumerate() {
                if !v.is_finite() || *v < 0.0 {
                    issues.push(CellIssue {
                        row,
                        col,
                        message: format!("value {v} must be finite and >= 0"),
                    });
                }
            }
        }
        issues
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn spec(&self) -> Option<&RelevanceSpec> {
        self.spec.as_ref()
    }

    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    pub fn contains_year(&self, year: i32) -> bool {
        self.years.binary_search(&year).is_ok()
    }

    pub fn year_index(&self, year: i32) -> Result<usize> {
        self.years
            .binary_search(&year)
            .map_err(|_| Error::YearNotFound(year))
    }

    pub fn get(&self, query_year: i32, item_year: i32) -> Result<f64> {
        Ok(self.values[self.year_index(query_year)?][self.year_index(item_year)?])
    }

    /// The relevance row used to score candidates against a query year.
    pub fn row_for_query(&self, query_year: i32) -> Result<&[f64]> {
        Ok(&self.values[self.year_index(query_year)?])
    }

    /// Multiplies every row whose query year lies in `[year_lo, year_hi]`.
    pub fn boost_region(&self, year_lo: i32, year_hi: i32, factor: f64) -> Result<BoostOutcome> {
        if year_lo > year_hi {
            return Err(Error::param(format!("empty band: {year_lo} > {year_hi}")));
        }
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::param(format!("factor must be > 0, got {factor}")));
        }
        let mut values = self.values.clone();
        let mut rows_affected = 0;
        for (row, &year) in values.iter_mut().zip(&self.years) {
            if (year_lo..=year_hi).contains(&year) {
                row.iter_mut().for_each(|v| *v *= factor);
                rows_affected += 1;
            }
        }
        if rows_affected == 0 {
            log::warn!("boost band [{year_lo}, {year_hi}] matches no matrix year");
        }
        Ok(BoostOutcome {
            matrix: RelevanceMatrix {
                years: self.years.clone(),
                values,
                provenance: Provenance::Edited,
                spec: self.spec.clone(),
            },
            rows_affected,
            empty_region: rows_affected == 0,
        })
    }

    pub fn set_cell(&self, query_year: i32, item_year: i32, value: f64) -> Result<RelevanceMatrix> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::param(format!(
                "value must be finite and >= 0, got {value}"
            )));
        }
        let q = self.year_index(query_year)?;
        let n = self.year_index(item_year)?;
        let mut values = self.values.clone();
        values[q][n] = value;
        Ok(RelevanceMatrix {
            years: self.years.clone(),
            values,
            provenance: Provenance::Edited,
            spec: self.spec.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}
