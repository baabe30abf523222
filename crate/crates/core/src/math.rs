//! Graded relevance, the smooth-nDCG objective and exact ranking metrics.
//!
//! A query's candidates are scored by cosine similarity `s_i` and carry a
//! graded relevance `r(i)`. The hard rank of item `i` (the number of items
//! scored above it) is replaced by a sum of temperature-scaled sigmoids over
//! pairwise score differences:
//!
//! ```text
//! DCG ≈ Σ_i r(i) / log2(2 + Σ_{j≠i} σ((s_j − s_i) / τ))
//! ```
//!
//! As `τ → 0` each sigmoid becomes a step and the expression converges to the
//! ordinary DCG (with ties counted as one half, see [`exact_dcg`]).
//!
//! Everything here is a pure function.

use std::collections::HashSet;
use std::f64::consts::LN_2;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sigmoid temperature.
pub const DEFAULT_TAU: f64 = 0.01;
/// Ideal DCG values below this are treated as "no relevant items".
pub const DEFAULT_EPSILON_IDCG: f64 = 1e-12;

/// A graded relevance function of the year distance between a query and an
/// item. Every variant peaks at zero distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RelevanceSpec {
    /// `max(0, gamma − |Δ|)`.
    Thresholded { gamma: f64 },
    /// `log(1 + span) − log(1 + |Δ|)`. When `span` is absent it is derived
    /// from the year vocabulary the function is applied to.
    LogScaled {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        span: Option<f64>,
    },
    /// A lookup table indexed by integer year distance; distances past the
    /// end of the table have relevance 0.
    Custom { by_distance: Vec<f64> },
}

impl RelevanceSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            RelevanceSpec::Thresholded { gamma } => {
                if !(gamma.is_finite() && *gamma > 0.0) {
                    return Err(Error::param(format!("gamma must be > 0, got {gamma}")));
                }
            }
            RelevanceSpec::LogScaled { span } => {
                if let Some(span) = span {
                    if !(span.is_finite() && *span > 0.0) {
                        return Err(Error::param(format!("span must be > 0, got {span}")));
                    }
                }
            }
            RelevanceSpec::Custom { by_distance } => {
                let Some(&peak) = by_distance.first() else {
                    return Err(Error::param("custom relevance table is empty"));
                };
                if by_distance.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::param(
                        "custom relevance values must be finite and >= 0",
                    ));
                }
                if by_distance.iter().any(|&v| v > peak) {
                    return Err(Error::param("custom relevance must peak at zero distance"));
                }
            }
        }
        Ok(())
    }

    /// Evaluates the relevance of `item_year` for a query dated `query_year`.
    /// `fallback_span` is used by [`RelevanceSpec::LogScaled`] without an
    /// explicit span.
    pub fn evaluate(&self, query_year: i32, item_year: i32, fallback_span: f64) -> Result<f64> {
        match self {
            RelevanceSpec::Thresholded { gamma } => {
                relevance_thresholded(query_year, item_year, *gamma)
            }
            RelevanceSpec::LogScaled { span } => {
                relevance_log(query_year, item_year, span.unwrap_or(fallback_span))
            }
            RelevanceSpec::Custom { by_distance } => {
                let d = query_year.abs_diff(item_year) as usize;
                Ok(by_distance.get(d).copied().unwrap_or(0.0))
            }
        }
    }
}

/// Temperature and ideal-DCG guard for the smooth objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub epsilon_idcg: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: DEFAULT_TAU,
            epsilon_idcg: DEFAULT_EPSILON_IDCG,
        }
    }
}

impl LossConfig {
    pub fn with_tau(tau: f64) -> Self {
        LossConfig {
            tau,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::param(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.epsilon_idcg.is_finite() && self.epsilon_idcg > 0.0) {
            return Err(Error::param(format!(
                "epsilon_idcg must be > 0, got {}",
                self.epsilon_idcg
            )));
        }
        Ok(())
    }
}

/// Similarity scores of a query's candidates with their graded relevances.
#[derive(Debug, Clone, Copy)]
pub struct ScoredList<'a> {
    scores: &'a [f64],
    relevances: &'a [f64],
}

impl<'a> ScoredList<'a> {
    /// Scores must be finite and relevances finite and non-negative. Scores
    /// are not clamped to `[-1, 1]` so that the objective stays defined for
    /// shifted or perturbed inputs.
    pub fn new(scores: &'a [f64], relevances: &'a [f64]) -> Result<Self> {
        if scores.len() != relevances.len() {
            return Err(Error::input(format!(
                "length mismatch: {} scores vs {} relevances",
                scores.len(),
                relevances.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::input(format!("score {i} is not finite")));
        }
        if let Some(i) = relevances.iter().position(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::input(format!(
                "relevance {i} must be finite and >= 0"
            )));
        }
        Ok(ScoredList { scores, relevances })
    }

    pub fn scores(&self) -> &'a [f64] {
        self.scores
    }

    pub fn relevances(&self) -> &'a [f64] {
        self.relevances
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Logistic function; saturates cleanly instead of overflowing.
#[inline]
pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `1 / (1 + exp(−x / tau))`.
pub fn sigmoid_temp(x: f64, tau: f64) -> Result<f64> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::param(format!("tau must be > 0, got {tau}")));
    }
    Ok(logistic(x / tau))
}

/// `max(0, gamma − |y_q − y_n|)`.
pub fn relevance_thresholded(query_year: i32, item_year: i32, gamma: f64) -> Result<f64> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::param(format!("gamma must be > 0, got {gamma}")));
    }
    let d = query_year.abs_diff(item_year) as f64;
    Ok((gamma - d).max(0.0))
}

/// `log(1 + span) − log(1 + |y_q − y_n|)`: maximal at zero distance and zero
/// at distance `span`.
pub fn relevance_log(query_year: i32, item_year: i32, span: f64) -> Result<f64> {
    if !(span.is_finite() && span > 0.0) {
        return Err(Error::param(format!("span must be > 0, got {span}")));
    }
    let d = query_year.abs_diff(item_year) as f64;
    if d > span {
        return Err(Error::param(format!(
            "year distance {d} exceeds span {span}"
        )));
    }
    Ok(span.ln_1p() - d.ln_1p())
}

/// Smoothed rank of every item: `Σ_{j≠i} σ((s_j − s_i)/τ)`.
fn smooth_ranks(scores: &[f64], tau: f64) -> Vec<f64> {
    let n = scores.len();
    let mut ranks = vec![0.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            // σ(−z) = 1 − σ(z), so one evaluation serves both directions.
            let above = logistic((scores[j] - scores[i]) / tau);
            ranks[i] += above;
            ranks[j] += 1.0 - above;
        }
    }
    ranks
}

pub fn smooth_dcg(list: &ScoredList<'_>, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let ranks = smooth_ranks(list.scores, cfg.tau);
    Ok(list
        .relevances
        .iter()
        .zip(&ranks)
        .map(|(r, rank)| r / (2.0 + rank).log2())
        .sum())
}

/// Hard-rank DCG. Item `i`'s rank counts every strictly higher score plus one
/// half per tied score, mirroring `σ(0) = 1/2`.
pub fn exact_dcg(list: &ScoredList<'_>) -> f64 {
    let s = list.scores;
    (0..s.len())
        .map(|i| {
            let mut rank = 0.0f64;
            for (j, &sj) in s.iter().enumerate() {
                if j == i {
                    continue;
                }
                if sj > s[i] {
                    rank += 1.0;
                } else if sj == s[i] {
                    rank += 0.5;
                }
            }
            list.relevances[i] / (2.0 + rank).log2()
        })
        .sum()
}

/// Best achievable DCG: relevances placed in decreasing order.
pub fn ideal_dcg(relevances: &[f64]) -> f64 {
    let mut sorted = relevances.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted
        .iter()
        .enumerate()
        .map(|(k, r)| r / (2.0 + k as f64).log2())
        .sum()
}

/// `smooth_dcg / ideal_dcg`, or 0 when the ideal DCG is below the guard.
pub fn smooth_ndcg(list: &ScoredList<'_>, cfg: &LossConfig) -> Result<f64> {
    let dcg = smooth_dcg(list, cfg)?;
    let idcg = ideal_dcg(list.relevances);
    if idcg < cfg.epsilon_idcg {
        return Ok(0.0);
    }
    Ok(dcg / idcg)
}

pub fn exact_ndcg(list: &ScoredList<'_>, epsilon_idcg: f64) -> f64 {
    let idcg = ideal_dcg(list.relevances);
    if idcg < epsilon_idcg {
        return 0.0;
    }
    exact_dcg(list) / idcg
}

/// Smooth nDCG together with its gradient with respect to every score.
///
/// With `S_i` the smoothed rank and `σ_ij = σ((s_j − s_i)/τ)`:
///
/// ```text
/// ∂DCG/∂S_i = −r_i / ((2 + S_i) · ln2 · log2(2 + S_i)²)
/// ∂S_i/∂s_j =  σ_ij (1 − σ_ij) / τ         (j ≠ i)
/// ∂S_i/∂s_i = −Σ_{j≠i} σ_ij (1 − σ_ij) / τ
/// ```
pub fn smooth_ndcg_with_grad(list: &ScoredList<'_>, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let n = list.len();
    let s = list.scores;
    let r = list.relevances;
    let idcg = ideal_dcg(r);
    if idcg < cfg.epsilon_idcg {
        return Ok((0.0, vec![0.0; n]));
    }
    let tau = cfg.tau;

    let mut ranks = vec![0.0; n];
    // Pairwise sigmoid derivatives σ'(z)/τ, stored once per unordered pair.
    let mut dsig = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let above = logistic((s[j] - s[i]) / tau);
            ranks[i] += above;
            ranks[j] += 1.0 - above;
            let d = above * (1.0 - above) / tau;
            dsig[i * n + j] = d;
            dsig[j * n + i] = d;
        }
    }

    let mut dcg = 0.0;
    let mut d_rank = vec![0.0; n];
    for i in 0..n {
        let l = (2.0 + ranks[i]).log2();
        dcg += r[i] / l;
        if r[i] != 0.0 {
            d_rank[i] = -r[i] / ((2.0 + ranks[i]) * LN_2 * l * l);
        }
    }

    let mut grad = vec![0.0; n];
    for i in 0..n {
        if d_rank[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if j == i {
                continue;
            }
            let g = d_rank[i] * dsig[i * n + j];
            grad[j] += g;
            grad[i] -= g;
        }
    }
    for g in &mut grad {
        *g /= idcg;
    }
    Ok((dcg / idcg, grad))
}

/// Gradient of [`smooth_ndcg`] with respect to each score.
pub fn smooth_ndcg_grad(list: &ScoredList<'_>, cfg: &LossConfig) -> Result<Vec<f64>> {
    smooth_ndcg_with_grad(list, cfg).map(|(_, g)| g)
}

pub fn mean_absolute_error(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::input("MAE of empty vectors"));
    }
    if predicted.len() != actual.len() {
        return Err(Error::input(format!(
            "length mismatch: {} predicted vs {} actual",
            predicted.len(),
            actual.len()
        )));
    }
    let total: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).abs())
        .sum();
    Ok(total / predicted.len() as f64)
}

/// Average precision of one ranking: the mean, over relevant items, of the
/// precision at the position where each is retrieved. Relevant items that
/// never appear contribute zero. Returns `None` for an empty relevant set.
pub fn average_precision<T: Eq + Hash>(ranking: &[T], relevant: &HashSet<T>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, id) in ranking.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Some(sum / relevant.len() as f64)
}

/// Mean of [`average_precision`] over queries; queries with no relevant
/// items are skipped.
pub fn mean_average_precision<T: Eq + Hash>(
    rankings: &[Vec<T>],
    relevant_sets: &[HashSet<T>],
) -> Result<f64> {
    if rankings.len() != relevant_sets.len() {
        return Err(Error::input(format!(
            "{} rankings vs {} relevant sets",
            rankings.len(),
            relevant_sets.len()
        )));
    }
    if let Some(i) = rankings.iter().position(|r| r.is_empty()) {
        return Err(Error::input(format!("ranking {i} is empty")));
    }
    let aps: Vec<f64> = rankings
        .iter()
        .zip(relevant_sets)
        .filter_map(|(ranking, rel)| average_precision(ranking, rel))
        .collect();
    if aps.is_empty() {
        return Err(Error::UndefinedMetric(
            "every query has an empty relevant set".into(),
        ));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}
