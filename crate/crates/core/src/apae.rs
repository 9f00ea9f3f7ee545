//! Pointwise QPP evaluation.
//!
//! Each query contributes an agreement `1 - |mu - phi|` between its metric
//! value and its normalized predictor value. Over a set of metrics the
//! per-query agreements are combined with an [`Aggregator`] and the result is
//! averaged over queries.
//!
//! Inputs are keyed maps; all reductions run in sorted key order so results
//! do not depend on the order queries or metrics were supplied in.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::metrics::MetricId;

#[derive(Debug, Error, PartialEq)]
pub enum ApaeError {
    #[error("value {0} outside [0,1]")]
    OutOfRange(f64),
    #[error("no queries to evaluate")]
    NoQueries,
    #[error("empty metric set")]
    NoMetrics,
    #[error("query `{0}` missing from one side")]
    QueryMismatch(String),
    #[error("no {metric} value for query `{query}`")]
    MissingValue { metric: String, query: String },
    #[error("unknown aggregator `{0}` (expected avg, min or max)")]
    UnknownAggregator(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Aggregator {
    Avg,
    Min,
    Max,
}

impl Aggregator {
    pub const ALL: [Aggregator; 3] = [Aggregator::Avg, Aggregator::Min, Aggregator::Max];

    /// Combines a non-empty slice. The average is clamped into [min, max]
    /// so rounding can never push it outside the other two aggregates.
    pub fn combine(self, values: &[f64]) -> f64 {
        debug_assert!(!values.is_empty());
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match self {
            Aggregator::Min => lo,
            Aggregator::Max => hi,
            Aggregator::Avg => (sorted_sum(values.iter().copied()) / values.len() as f64).clamp(lo, hi),
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Avg => "avg",
            Aggregator::Min => "min",
            Aggregator::Max => "max",
        })
    }
}

impl FromStr for Aggregator {
    type Err = ApaeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "avg" | "mean" => Ok(Aggregator::Avg),
            "min" => Ok(Aggregator::Min),
            "max" => Ok(Aggregator::Max),
            _ => Err(ApaeError::UnknownAggregator(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApaeResult {
    pub method: String,
    pub aggregator: Aggregator,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
}

fn check_unit(v: f64) -> Result<f64, ApaeError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(ApaeError::OutOfRange(v))
    }
}

/// `1 - |mu - phi|` for two values in the unit interval.
pub fn pointwise_agreement(mu: f64, phi: f64) -> Result<f64, ApaeError> {
    let d = (check_unit(mu)? - check_unit(phi)?).abs();
    Ok((1.0 - d).clamp(0.0, 1.0))
}

fn mean_over_queries(per_query: &BTreeMap<String, f64>) -> f64 {
    let lo = per_query.values().copied().fold(f64::INFINITY, f64::min);
    let hi = per_query.values().copied().fold(f64::NEG_INFINITY, f64::max);
    (sorted_sum(per_query.values().copied()) / per_query.len() as f64).clamp(lo, hi)
}

/// Sums in ascending order, so the result depends only on the multiset of
/// values and not on how queries or metrics are labelled.
fn sorted_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

fn same_queries(mu: &HashMap<String, f64>, phi: &HashMap<String, f64>) -> Result<(), ApaeError> {
    if phi.is_empty() {
        return Err(ApaeError::NoQueries);
    }
    if let Some(q) = phi.keys().find(|q| !mu.contains_key(*q)) {
        return Err(ApaeError::QueryMismatch(q.clone()));
    }
    if let Some(q) = mu.keys().find(|q| !phi.contains_key(*q)) {
        return Err(ApaeError::QueryMismatch(q.clone()));
    }
    Ok(())
}

/// Mean pointwise agreement against one metric.
pub fn apae_single_metric(mu: &HashMap<String, f64>, phi: &HashMap<String, f64>) -> Result<ApaeResult, ApaeError> {
    same_queries(mu, phi)?;
    let mut per_query = BTreeMap::new();
    for (q, &p) in phi {
        per_query.insert(q.clone(), pointwise_agreement(mu[q], p)?);
    }
    let mean = mean_over_queries(&per_query);
    Ok(ApaeResult {
        method: String::new(),
        aggregator: Aggregator::Avg,
        per_query,
        mean,
    })
}

/// Per query, aggregates the agreements against every metric in the set,
/// then averages over queries.
pub fn apae_multi_metric(
    mus: &HashMap<MetricId, HashMap<String, f64>>,
    phi: &HashMap<String, f64>,
    aggregator: Aggregator,
) -> Result<ApaeResult, ApaeError> {
    if mus.is_empty() {
        return Err(ApaeError::NoMetrics);
    }
    if phi.is_empty() {
        return Err(ApaeError::NoQueries);
    }
    let metrics: BTreeSet<&MetricId> = mus.keys().collect();
    let mut per_query = BTreeMap::new();
    let mut agreements = Vec::with_capacity(metrics.len());
    for (q, &p) in phi {
        agreements.clear();
        for m in &metrics {
            let v = mus[*m].get(q).ok_or_else(|| ApaeError::MissingValue {
                metric: m.to_string(),
                query: q.clone(),
            })?;
            agreements.push(pointwise_agreement(*v, p)?);
        }
        per_query.insert(q.clone(), aggregator.combine(&agreements));
    }
    for (m, values) in mus {
        if let Some(q) = values.keys().find(|q| !phi.contains_key(*q)) {
            return Err(ApaeError::QueryMismatch(format!("{q} ({m})")));
        }
    }
    let mean = mean_over_queries(&per_query);
    Ok(ApaeResult {
        method: String::new(),
        aggregator,
        per_query,
        mean,
    })
}

/// `method<TAB>aggregator<TAB>mean_apae<TAB>n_queries` rows with a header.
pub fn format_report(results: &[ApaeResult]) -> String {
    let mut out = String::from("method\taggregator\tmean_apae\tn_queries\n");
    for r in results {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.method,
            r.aggregator,
            r.mean,
            r.per_query.len()
        ));
    }
    out
}

/// Per-query detail rows `query_id<TAB>metric_or_aggregate<TAB>value`.
pub fn format_per_query(label: &str, result: &ApaeResult) -> String {
    let mut out = String::new();
    for (q, v) in &result.per_query {
        out.push_str(&format!("{q}\t{label}\t{v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(q, v)| (q.to_string(), *v)).collect()
    }

    #[test]
    fn pointwise_examples() {
        assert_eq!(pointwise_agreement(0.3, 0.3).unwrap(), 1.0);
        assert_eq!(pointwise_agreement(0.0, 1.0).unwrap(), 0.0);
        assert!((pointwise_agreement(0.5, 0.4).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(pointwise_agreement(1.2, 0.4), Err(ApaeError::OutOfRange(1.2)));
        assert!(pointwise_agreement(0.2, -0.1).is_err());
    }

    #[test]
    fn single_metric_examples() {
        let mu = map(&[("a", 0.5), ("b", 0.2)]);
        assert_eq!(apae_single_metric(&mu, &mu).unwrap().mean, 1.0);
        let r = apae_single_metric(&mu, &map(&[("a", 0.4), ("b", 0.4)])).unwrap();
        assert!((r.per_query["a"] - 0.9).abs() < 1e-15);
        assert!((r.per_query["b"] - 0.8).abs() < 1e-15);
        assert!((r.mean - 0.85).abs() < 1e-15);
        let r = apae_single_metric(&map(&[("q", 0.7)]), &map(&[("q", 0.2)])).unwrap();
        assert!((r.mean - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_metric_rejects_mismatch() {
        let mu = map(&[("a", 0.5)]);
        assert!(matches!(
            apae_single_metric(&mu, &map(&[("b", 0.5)])),
            Err(ApaeError::QueryMismatch(_))
        ));
        assert_eq!(apae_single_metric(&mu, &HashMap::new()), Err(ApaeError::NoQueries));
    }

    #[test]
    fn multi_metric_aggregators() {
        let ap: MetricId = "AP@100".parse().unwrap();
        let nd: MetricId = "nDCG@100".parse().unwrap();
        let phi = map(&[("q", 0.4)]);
        let mus = HashMap::from([(ap, map(&[("q", 0.5)])), (nd, map(&[("q", 0.2)]))]);
        let get = |a| apae_multi_metric(&mus, &phi, a).unwrap().mean;
        assert!((get(Aggregator::Avg) - 0.85).abs() < 1e-15);
        assert!((get(Aggregator::Min) - 0.8).abs() < 1e-15);
        assert!((get(Aggregator::Max) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn multi_metric_errors() {
        let ap: MetricId = "AP@100".parse().unwrap();
        let phi = map(&[("q", 0.4), ("r", 0.1)]);
        let mus = HashMap::from([(ap, map(&[("q", 0.5)]))]);
        assert!(matches!(
            apae_multi_metric(&mus, &phi, Aggregator::Avg),
            Err(ApaeError::MissingValue { .. })
        ));
        assert_eq!(
            apae_multi_metric(&HashMap::new(), &phi, Aggregator::Avg),
            Err(ApaeError::NoMetrics)
        );
    }

    #[test]
    fn avg_stays_within_min_max() {
        let v = [0.1, 0.1, 0.1];
        assert!(Aggregator::Avg.combine(&v) <= Aggregator::Max.combine(&v));
        assert_eq!(Aggregator::Avg.combine(&v), 0.1);
    }

    #[test]
    fn aggregator_parsing() {
        assert_eq!("MIN".parse::<Aggregator>().unwrap(), Aggregator::Min);
        assert!("sum".parse::<Aggregator>().is_err());
    }
}
