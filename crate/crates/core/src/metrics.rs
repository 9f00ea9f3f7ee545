//! Per-query effectiveness metrics over a ranked list and TREC qrels.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::RankedList;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("malformed qrels line {line}: {reason}")]
    MalformedQrels { line: usize, reason: String },
    #[error("invalid metric `{0}` (expected e.g. AP@100, nDCG@10, P@10, R@100)")]
    InvalidMetric(String),
    #[error("malformed metric-score line {line}: {reason}")]
    MalformedScores { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Graded judgments; an absent (query, doc) pair has grade 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    judgments: HashMap<String, HashMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|j| j.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn query(&self, query_id: &str) -> Option<&HashMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn num_relevant(&self, query_id: &str) -> usize {
        self.judgments
            .get(query_id)
            .map_or(0, |j| j.values().filter(|&&g| g > 0).count())
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        let mut qrels = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| MetricsError::MalformedQrels { line: i + 1, reason };
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(bad(format!("expected 4 columns, got {}", cols.len())));
            }
            let grade: i64 = cols[3]
                .parse()
                .map_err(|_| bad(format!("invalid grade `{}`", cols[3])))?;
            if grade < 0 {
                return Err(bad(format!("negative grade {grade}")));
            }
            qrels.insert(cols[0], cols[2], grade as u32);
        }
        Ok(qrels)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| MetricsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricFamily {
    AP,
    NDCG,
    P,
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetricId {
    pub family: MetricFamily,
    pub cutoff: usize,
}

impl MetricId {
    pub fn new(family: MetricFamily, cutoff: usize) -> Result<Self, MetricsError> {
        if cutoff == 0 {
            return Err(MetricsError::InvalidMetric(format!("{family:?}@0")));
        }
        Ok(Self { family, cutoff })
    }

    pub fn evaluate(&self, ranked: &RankedList, qrels: &Qrels) -> f64 {
        let k = self.cutoff;
        match self.family {
            MetricFamily::AP => average_precision_at_k(ranked, qrels, k),
            MetricFamily::NDCG => ndcg_at_k(ranked, qrels, k),
            MetricFamily::P => precision_at_k(ranked, qrels, k),
            MetricFamily::R => recall_at_k(ranked, qrels, k),
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.family {
            MetricFamily::AP => "AP",
            MetricFamily::NDCG => "nDCG",
            MetricFamily::P => "P",
            MetricFamily::R => "R",
        };
        write!(f, "{name}@{}", self.cutoff)
    }
}

impl FromStr for MetricId {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || MetricsError::InvalidMetric(s.to_string());
        let (name, cutoff) = s.trim().split_once('@').ok_or_else(invalid)?;
        let family = match name.to_ascii_lowercase().as_str() {
            "ap" | "map" => MetricFamily::AP,
            "ndcg" => MetricFamily::NDCG,
            "p" | "precision" => MetricFamily::P,
            "r" | "recall" => MetricFamily::R,
            _ => return Err(invalid()),
        };
        let cutoff = cutoff.parse().map_err(|_| invalid())?;
        Self::new(family, cutoff).map_err(|_| invalid())
    }
}

impl Serialize for MetricId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a comma-separated metric list such as `AP@100,nDCG@10`.
pub fn parse_metric_list(s: &str) -> Result<Vec<MetricId>, MetricsError> {
    s.split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(str::parse)
        .collect()
}

fn grades_at<'a>(ranked: &'a RankedList, qrels: &'a Qrels, k: usize) -> impl Iterator<Item = u32> + 'a {
    let judged = qrels.query(&ranked.query_id);
    ranked
        .doc_ids()
        .take(k)
        .map(move |d| judged.and_then(|j| j.get(d)).copied().unwrap_or(0))
}

pub fn average_precision_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    let total = qrels.num_relevant(&ranked.query_id);
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, g) in grades_at(ranked, qrels, k).enumerate() {
        if g > 0 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total as f64
}

pub fn ndcg_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    let dcg: f64 = grades_at(ranked, qrels, k)
        .enumerate()
        .map(|(i, g)| g as f64 / ((i + 2) as f64).log2())
        .sum();
    let mut ideal: Vec<u32> = qrels
        .query(&ranked.query_id)
        .map(|j| j.values().copied().filter(|&g| g > 0).collect())
        .unwrap_or_default();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| g as f64 / ((i + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        (dcg / idcg).min(1.0)
    }
}

pub fn precision_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    let hits = grades_at(ranked, qrels, k).filter(|&g| g > 0).count();
    hits as f64 / k as f64
}

pub fn recall_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    let total = qrels.num_relevant(&ranked.query_id);
    if total == 0 {
        return 0.0;
    }
    let hits = grades_at(ranked, qrels, k).filter(|&g| g > 0).count();
    hits as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricScore {
    pub query_id: String,
    pub metric: MetricId,
    pub value: f64,
}

/// Evaluates each list under each metric, in list order then metric order.
pub fn evaluate_runs(lists: &[RankedList], qrels: &Qrels, metrics: &[MetricId]) -> Vec<MetricScore> {
    lists
        .iter()
        .flat_map(|l| {
            metrics.iter().map(move |m| MetricScore {
                query_id: l.query_id.clone(),
                metric: *m,
                value: m.evaluate(l, qrels),
            })
        })
        .collect()
}

/// `query_id<TAB>metric<TAB>value` with a header row.
pub fn format_metric_scores(scores: &[MetricScore]) -> String {
    let mut out = String::from("query_id\tmetric\tvalue\n");
    for s in scores {
        out.push_str(&format!("{}\t{}\t{}\n", s.query_id, s.metric, s.value));
    }
    out
}

pub fn parse_metric_scores(text: &str) -> Result<Vec<MetricScore>, MetricsError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.starts_with("query_id")) {
            continue;
        }
        let bad = |reason: String| MetricsError::MalformedScores { line: i + 1, reason };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad(format!("expected 3 tab-separated columns, got {}", cols.len())));
        }
        let metric = cols[1].parse().map_err(|e: MetricsError| bad(e.to_string()))?;
        let value: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| bad(format!("invalid value `{}`", cols[2])))?;
        out.push(MetricScore {
            query_id: cols[0].to_string(),
            metric,
            value,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::RankedEntry;

    fn list(ids: &[&str]) -> RankedList {
        RankedList {
            query_id: "q".into(),
            tag: "t".into(),
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, d)| RankedEntry {
                    doc_id: d.to_string(),
                    score: -(i as f64),
                })
                .collect(),
        }
    }

    fn qrels(pairs: &[(&str, u32)]) -> Qrels {
        let mut q = Qrels::new();
        for (d, g) in pairs {
            q.insert("q", *d, *g);
        }
        q
    }

    #[test]
    fn ap_example() {
        let qr = qrels(&[("a", 1), ("c", 1)]);
        let ap = average_precision_at_k(&list(&["a", "b", "c"]), &qr, 3);
        assert!((ap - 0.5 * (1.0 + 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(average_precision_at_k(&list(&["a"]), &Qrels::new(), 3), 0.0);
        let qr = qrels(&[("a", 1), ("b", 2)]);
        assert_eq!(average_precision_at_k(&list(&["a", "b"]), &qr, 2), 1.0);
    }

    #[test]
    fn ndcg_example() {
        let qr = qrels(&[("a", 1), ("c", 1)]);
        let v = ndcg_at_k(&list(&["a", "b", "c"]), &qr, 3);
        let expected = 1.5 / (1.0 + 1.0 / 3f64.log2());
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.9197).abs() < 1e-4);
        let qr = qrels(&[("a", 2), ("b", 1)]);
        assert_eq!(ndcg_at_k(&list(&["a", "b", "x"]), &qr, 3), 1.0);
        assert_eq!(ndcg_at_k(&list(&["a"]), &Qrels::new(), 3), 0.0);
    }

    #[test]
    fn precision_and_recall() {
        let ids: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let qr = qrels(&[("d1", 1), ("d4", 1), ("d9", 2), ("z", 1)]);
        assert!((precision_at_k(&list(&refs), &qr, 10) - 0.3).abs() < 1e-15);
        assert_eq!(recall_at_k(&list(&refs), &qr, 10), 0.75);
        assert_eq!(recall_at_k(&list(&refs), &Qrels::new(), 10), 0.0);
        let qr = qrels(&[("d1", 1)]);
        assert_eq!(recall_at_k(&list(&refs), &qr, 5), 1.0);
        // short lists still divide by k
        assert_eq!(precision_at_k(&list(&["d1"]), &qr, 10), 0.1);
    }

    #[test]
    fn zero_grades_are_not_relevant() {
        let qr = qrels(&[("a", 0), ("b", 1)]);
        assert_eq!(qr.num_relevant("q"), 1);
        assert_eq!(precision_at_k(&list(&["a"]), &qr, 1), 0.0);
    }

    #[test]
    fn qrels_parsing() {
        let qr = Qrels::parse("301 0 FBIS3-10082 1\n301 0 FBIS3-10169 0\n\n302 0 X 2\n").unwrap();
        assert_eq!(qr.grade("301", "FBIS3-10082"), 1);
        assert_eq!(qr.grade("302", "X"), 2);
        assert_eq!(qr.grade("302", "nope"), 0);
        assert!(matches!(
            Qrels::parse("1 0 a 1\n1 0 b -1\n"),
            Err(MetricsError::MalformedQrels { line: 2, .. })
        ));
        assert!(Qrels::parse("1 0 a\n").is_err());
    }

    #[test]
    fn metric_ids() {
        let m: MetricId = "nDCG@100".parse().unwrap();
        assert_eq!(
            m,
            MetricId {
                family: MetricFamily::NDCG,
                cutoff: 100
            }
        );
        assert_eq!("Recall@100".parse::<MetricId>().unwrap().to_string(), "R@100");
        assert!("AP@0".parse::<MetricId>().is_err());
        assert!("MRR@10".parse::<MetricId>().is_err());
        assert_eq!(parse_metric_list("AP@100, P@10").unwrap().len(), 2);
    }

    #[test]
    fn metric_score_tsv_roundtrip() {
        let qr = qrels(&[("a", 1)]);
        let scores = evaluate_runs(&[list(&["b", "a"])], &qr, &parse_metric_list("AP@100,P@10").unwrap());
        let text = format_metric_scores(&scores);
        assert_eq!(parse_metric_scores(&text).unwrap(), scores);
    }
}
