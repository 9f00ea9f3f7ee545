//! Pre- and post-retrieval query performance predictors and score normalization.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{DocNo, Index, Query, TermId};
use crate::listwise::{ordering_tau, Outcome};
use crate::retrieval::{collection_score, RankedList, RetrievalError, RetrievalModel};

#[derive(Debug, Error)]
pub enum QppError {
    #[error("ranked list is empty")]
    EmptyRanking,
    #[error("feedback documents contain no terms")]
    EmptyFeedback,
    #[error("query has no terms")]
    EmptyQuery,
    #[error("collection score is zero")]
    ZeroCollectionScore,
    #[error("ranked document `{0}` is not in the index")]
    UnknownDoc(String),
    #[error("no scores to normalize")]
    NothingToNormalize,
    #[error("non-finite score for query `{0}`")]
    NonFinite(String),
    #[error("invalid QPP method `{spec}`: {reason}")]
    InvalidMethod { spec: String, reason: String },
    #[error("malformed score line {line}: {reason}")]
    MalformedScores { line: usize, reason: String },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum QppKind {
    AvgIdf,
    Clarity,
    Nqc,
    Wig,
    UefClarity,
    UefNqc,
    UefWig,
}

pub const FB_DOCS_GRID: [usize; 3] = [10, 25, 50];
pub const FB_TERMS_GRID: [usize; 3] = [25, 50, 100];
pub const CUTOFF_GRID: [usize; 5] = [5, 10, 25, 50, 100];

impl QppKind {
    pub const ALL: [QppKind; 7] = [
        QppKind::AvgIdf,
        QppKind::Clarity,
        QppKind::Nqc,
        QppKind::Wig,
        QppKind::UefClarity,
        QppKind::UefNqc,
        QppKind::UefWig,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QppKind::AvgIdf => "AvgIDF",
            QppKind::Clarity => "Clarity",
            QppKind::Nqc => "NQC",
            QppKind::Wig => "WIG",
            QppKind::UefClarity => "UEF-Clarity",
            QppKind::UefNqc => "UEF-NQC",
            QppKind::UefWig => "UEF-WIG",
        }
    }

    fn uses_cutoff(self) -> bool {
        matches!(self, QppKind::Nqc | QppKind::Wig | QppKind::UefNqc | QppKind::UefWig)
    }

    fn uses_feedback(self) -> bool {
        matches!(
            self,
            QppKind::Clarity | QppKind::UefClarity | QppKind::UefNqc | QppKind::UefWig
        )
    }

    /// Tuning grid, enumerated feedback-docs major, then feedback terms, then cutoff.
    pub fn default_grid(self) -> Vec<QppParams> {
        let cutoffs: Vec<Option<usize>> = if self.uses_cutoff() {
            CUTOFF_GRID.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let feedback: Vec<Option<(usize, usize)>> = if self.uses_feedback() {
            FB_DOCS_GRID
                .iter()
                .flat_map(|&d| FB_TERMS_GRID.iter().map(move |&t| Some((d, t))))
                .collect()
        } else {
            vec![None]
        };
        feedback
            .iter()
            .flat_map(|fb| {
                cutoffs.iter().map(move |&k| QppParams {
                    k,
                    fb_docs: fb.map(|f| f.0),
                    fb_terms: fb.map(|f| f.1),
                })
            })
            .collect()
    }

    pub fn default_params(self) -> QppParams {
        QppParams {
            k: self.uses_cutoff().then_some(match self {
                QppKind::Wig | QppKind::UefWig => 5,
                _ => 100,
            }),
            fb_docs: self.uses_feedback().then_some(10),
            fb_terms: self.uses_feedback().then_some(100),
        }
    }
}

impl fmt::Display for QppKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QppKind {
    type Err = QppError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match norm.as_str() {
            "avgidf" => QppKind::AvgIdf,
            "clarity" => QppKind::Clarity,
            "nqc" => QppKind::Nqc,
            "wig" => QppKind::Wig,
            "uefclarity" => QppKind::UefClarity,
            "uefnqc" => QppKind::UefNqc,
            "uefwig" => QppKind::UefWig,
            _ => {
                return Err(QppError::InvalidMethod {
                    spec: s.to_string(),
                    reason: "unknown method".into(),
                })
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
pub struct QppParams {
    pub k: Option<usize>,
    pub fb_docs: Option<usize>,
    pub fb_terms: Option<usize>,
}

impl fmt::Display for QppParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(k) = self.k {
            parts.push(format!("k={k}"));
        }
        if let Some(d) = self.fb_docs {
            parts.push(format!("fb_docs={d}"));
        }
        if let Some(t) = self.fb_terms {
            parts.push(format!("fb_terms={t}"));
        }
        if parts.is_empty() {
            f.write_str("-")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

/// A predictor with concrete hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QppMethod {
    pub kind: QppKind,
    pub params: QppParams,
}

impl QppMethod {
    pub fn new(kind: QppKind, params: QppParams) -> Result<Self, QppError> {
        let m = Self { kind, params };
        let bad = |reason: &str| {
            Err(QppError::InvalidMethod {
                spec: m.to_string(),
                reason: reason.into(),
            })
        };
        if kind.uses_cutoff() != params.k.is_some() {
            return bad("cutoff k required exactly for NQC/WIG based methods");
        }
        if [params.fb_docs, params.fb_terms]
            .iter()
            .any(|p| p.is_some() != kind.uses_feedback())
        {
            return bad("fb_docs and fb_terms required exactly for Clarity/UEF methods");
        }
        if params.k == Some(0) || params.fb_docs == Some(0) || params.fb_terms == Some(0) {
            return bad("hyperparameters must be positive");
        }
        Ok(m)
    }

    /// The predictor a UEF method scales, with the matching hyperparameters.
    pub fn uef_base(&self) -> Option<QppMethod> {
        let p = self.params;
        let (kind, params) = match self.kind {
            QppKind::UefClarity => (QppKind::Clarity, QppParams { k: None, ..p }),
            QppKind::UefNqc => (
                QppKind::Nqc,
                QppParams {
                    k: p.k,
                    ..Default::default()
                },
            ),
            QppKind::UefWig => (
                QppKind::Wig,
                QppParams {
                    k: p.k,
                    ..Default::default()
                },
            ),
            _ => return None,
        };
        Some(QppMethod { kind, params })
    }

    pub fn with_defaults(kind: QppKind) -> Self {
        Self {
            kind,
            params: kind.default_params(),
        }
    }
}

impl fmt::Display for QppMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.params == QppParams::default() {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "{}:{}", self.kind, self.params)
        }
    }
}

impl FromStr for QppMethod {
    type Err = QppError;

    /// `NQC`, `NQC:k=50`, `UEF-WIG:k=5,fb_docs=10,fb_terms=50`. Missing
    /// hyperparameters take their defaults.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, params) = match s.split_once(':') {
            Some((n, p)) => (n, p),
            None => (s, ""),
        };
        let kind: QppKind = name.trim().parse()?;
        let mut p = kind.default_params();
        for kv in params.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            let bad = |reason: String| QppError::InvalidMethod {
                spec: s.to_string(),
                reason,
            };
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{kv}`")))?;
            let value: usize = value
                .trim()
                .parse()
                .map_err(|_| bad(format!("invalid value in `{kv}`")))?;
            match key.trim() {
                "k" => p.k = Some(value),
                "fb_docs" => p.fb_docs = Some(value),
                "fb_terms" => p.fb_terms = Some(value),
                other => return Err(bad(format!("unknown hyperparameter `{other}`"))),
            }
        }
        QppMethod::new(kind, p)
    }
}

/// Everything a post-retrieval predictor needs besides the query and its list.
#[derive(Debug, Clone, Copy)]
pub struct QppInput<'a> {
    pub index: &'a Index,
    pub model: &'a RetrievalModel,
    /// Dirichlet prior for query likelihoods and smoothed document models.
    pub feedback_mu: f64,
}

pub const DEFAULT_FEEDBACK_MU: f64 = 1000.0;

/// Mean ln(N/df) over query terms present in the index; 0 if there are none.
pub fn avg_idf(query: &Query, index: &Index) -> f64 {
    let n = index.num_docs() as f64;
    let idfs: Vec<f64> = query
        .terms
        .iter()
        .map(|t| index.df(t))
        .filter(|&df| df > 0)
        .map(|df| (n / df as f64).ln())
        .collect();
    if idfs.is_empty() {
        0.0
    } else {
        idfs.iter().sum::<f64>() / idfs.len() as f64
    }
}

/// Feedback term distribution P(w|R), sorted by probability descending.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceModel {
    pub terms: Vec<(TermId, f64)>,
    pub fb_docs: usize,
    pub fb_terms: usize,
}

impl RelevanceModel {
    pub fn named_terms<'a>(&'a self, index: &'a Index) -> impl Iterator<Item = (&'a str, f64)> + 'a {
        self.terms.iter().map(move |&(t, p)| (index.term(t), p))
    }

    pub fn prob(&self, index: &Index, term: &str) -> f64 {
        index
            .term_id(term)
            .and_then(|id| self.terms.iter().find(|(t, _)| *t == id))
            .map_or(0.0, |&(_, p)| p)
    }
}

fn ranked_docs(ranked: &RankedList, index: &Index) -> Result<Vec<DocNo>, QppError> {
    ranked
        .doc_ids()
        .map(|d| index.doc_no(d).ok_or_else(|| QppError::UnknownDoc(d.to_string())))
        .collect()
}

/// RM1 over the top `fb_docs` documents: P(w|R) ∝ Σ_d P(w|d) P(q|d), with
/// maximum-likelihood P(w|d) and Dirichlet query likelihood P(q|d).
pub fn relevance_model(
    query: &Query,
    ranked: &RankedList,
    index: &Index,
    fb_docs: usize,
    fb_terms: usize,
    mu: f64,
) -> Result<RelevanceModel, QppError> {
    if ranked.is_empty() {
        return Err(QppError::EmptyRanking);
    }
    let lm = RetrievalModel::lm_dirichlet(mu)?;
    let docs: Vec<DocNo> = ranked_docs(ranked, index)?
        .into_iter()
        .take(fb_docs)
        .filter(|&d| index.doc_len(d) > 0)
        .collect();
    let log_lik: Vec<f64> = docs.iter().map(|&d| lm.score_doc(index, query, d)).collect();
    // shift by the max so exp() cannot underflow to all zeros
    let top = log_lik.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut mass: HashMap<TermId, f64> = HashMap::new();
    for (&d, &ll) in docs.iter().zip(&log_lik) {
        let w = (ll - top).exp();
        let dl = index.doc_len(d) as f64;
        for &(t, tf) in index.doc_terms(d) {
            *mass.entry(t).or_insert(0.0) += w * tf as f64 / dl;
        }
    }
    if mass.is_empty() {
        return Err(QppError::EmptyFeedback);
    }
    let mut terms: Vec<(TermId, f64)> = mass.into_iter().collect();
    terms.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| index.term(a.0).cmp(index.term(b.0))));
    terms.truncate(fb_terms);
    let z: f64 = terms.iter().map(|t| t.1).sum();
    for t in &mut terms {
        t.1 /= z;
    }
    Ok(RelevanceModel {
        terms,
        fb_docs,
        fb_terms,
    })
}

/// KL divergence (bits) of the relevance model from the collection model.
pub fn clarity_of(rm: &RelevanceModel, index: &Index) -> f64 {
    let kl: f64 = rm
        .terms
        .iter()
        .filter_map(|&(t, p)| {
            let pc = index.collection_prob_id(t);
            (pc > 0.0 && p > 0.0).then(|| p * (p / pc).log2())
        })
        .sum();
    kl.max(0.0)
}

pub fn clarity(
    query: &Query,
    ranked: &RankedList,
    index: &Index,
    fb_docs: usize,
    fb_terms: usize,
    mu: f64,
) -> Result<f64, QppError> {
    if index.total_len() == 0 {
        return Err(QppError::Retrieval(RetrievalError::EmptyCollection));
    }
    let rm = relevance_model(query, ranked, index, fb_docs, fb_terms, mu)?;
    Ok(clarity_of(&rm, index))
}

/// Standard deviation of the top-k scores over |collection score|.
pub fn nqc_from_scores(scores: &[f64], collection: f64, k: usize) -> Result<f64, QppError> {
    let k = k.min(scores.len());
    if k < 2 {
        return Ok(0.0);
    }
    if collection == 0.0 {
        return Err(QppError::ZeroCollectionScore);
    }
    let top = &scores[..k];
    let mean = top.iter().sum::<f64>() / k as f64;
    let var = top.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / k as f64;
    Ok(var.sqrt() / collection.abs())
}

pub fn nqc(
    query: &Query,
    ranked: &RankedList,
    index: &Index,
    model: &RetrievalModel,
    k: usize,
) -> Result<f64, QppError> {
    if ranked.len().min(k) < 2 {
        return Ok(0.0);
    }
    let sc = collection_score(model, index, query)?;
    nqc_from_scores(&ranked.scores(), sc, k)
}

/// Mean excess of the top-k scores over the collection score, over sqrt(|q|).
pub fn wig_from_scores(scores: &[f64], collection: f64, query_len: usize, k: usize) -> Result<f64, QppError> {
    if query_len == 0 {
        return Err(QppError::EmptyQuery);
    }
    let k = k.min(scores.len());
    if k == 0 {
        return Err(QppError::EmptyRanking);
    }
    let excess: f64 = scores[..k].iter().map(|s| s - collection).sum();
    Ok(excess / k as f64 / (query_len as f64).sqrt())
}

pub fn wig(
    query: &Query,
    ranked: &RankedList,
    index: &Index,
    model: &RetrievalModel,
    k: usize,
) -> Result<f64, QppError> {
    if query.terms.is_empty() {
        return Err(QppError::EmptyQuery);
    }
    if ranked.is_empty() {
        return Err(QppError::EmptyRanking);
    }
    let sc = collection_score(model, index, query)?;
    wig_from_scores(&ranked.scores(), sc, query.terms.len(), k)
}

/// Re-orders the ranked documents by Σ_w P(w|R) ln P(w|d) with Dirichlet
/// smoothed document models; ties by doc_id.
pub fn rerank_by_relevance_model(
    ranked: &RankedList,
    rm: &RelevanceModel,
    index: &Index,
    mu: f64,
) -> Result<Vec<String>, QppError> {
    let docs = ranked_docs(ranked, index)?;
    let mut scored: Vec<(&str, f64)> = docs
        .iter()
        .map(|&d| {
            let dl = index.doc_len(d) as f64;
            let s: f64 = rm
                .terms
                .iter()
                .map(|&(t, p)| {
                    let pw = (index.tf(t, d) as f64 + mu * index.collection_prob_id(t)) / (dl + mu);
                    p * pw.ln()
                })
                .sum();
            (index.doc_id(d), s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(scored.into_iter().map(|(d, _)| d.to_string()).collect())
}

/// Kendall's tau between the original ranking and its relevance-model
/// re-ranking; 1 for lists shorter than two.
pub fn uef_similarity(ranked: &RankedList, reranked: &[String]) -> Result<f64, QppError> {
    if ranked.len() < 2 {
        return Ok(1.0);
    }
    let original: Vec<&str> = ranked.doc_ids().collect();
    let reranked: Vec<&str> = reranked.iter().map(String::as_str).collect();
    match ordering_tau(&original, &reranked) {
        Ok(Outcome::Value(t)) => Ok(t),
        // positions never tie, so a degenerate outcome cannot occur for n >= 2
        Ok(Outcome::Degenerate) => Ok(1.0),
        Err(_) => Err(QppError::UnknownDoc("re-ranking covers different documents".into())),
    }
}

/// κ(original, re-ranked) × base predictor value.
pub fn uef(query: &Query, ranked: &RankedList, input: &QppInput<'_>, method: &QppMethod) -> Result<f64, QppError> {
    let (fb_docs, fb_terms) = match (method.params.fb_docs, method.params.fb_terms) {
        (Some(d), Some(t)) => (d, t),
        _ => {
            return Err(QppError::InvalidMethod {
                spec: method.to_string(),
                reason: "UEF requires fb_docs and fb_terms".into(),
            })
        }
    };
    let index = input.index;
    let rm = relevance_model(query, ranked, index, fb_docs, fb_terms, input.feedback_mu)?;
    let base = match method.kind {
        QppKind::UefClarity => clarity_of(&rm, index),
        QppKind::UefNqc => nqc(
            query,
            ranked,
            index,
            input.model,
            method.params.k.unwrap_or(ranked.len()),
        )?,
        QppKind::UefWig => wig(
            query,
            ranked,
            index,
            input.model,
            method.params.k.unwrap_or(ranked.len()),
        )?,
        other => {
            return Err(QppError::InvalidMethod {
                spec: other.to_string(),
                reason: "not a UEF method".into(),
            })
        }
    };
    if ranked.len() < 2 {
        return Ok(base);
    }
    let reranked = rerank_by_relevance_model(ranked, &rm, index, input.feedback_mu)?;
    Ok(uef_similarity(ranked, &reranked)? * base)
}

/// Raw predictor value for one query.
pub fn predict(method: &QppMethod, query: &Query, ranked: &RankedList, input: &QppInput<'_>) -> Result<f64, QppError> {
    let index = input.index;
    let p = method.params;
    match method.kind {
        QppKind::AvgIdf => Ok(avg_idf(query, index)),
        QppKind::Clarity => clarity(
            query,
            ranked,
            index,
            p.fb_docs.unwrap_or(10),
            p.fb_terms.unwrap_or(100),
            input.feedback_mu,
        ),
        QppKind::Nqc => nqc(query, ranked, index, input.model, p.k.unwrap_or(ranked.len())),
        QppKind::Wig => wig(query, ranked, index, input.model, p.k.unwrap_or(ranked.len())),
        QppKind::UefClarity | QppKind::UefNqc | QppKind::UefWig => uef(query, ranked, input, method),
    }
}

/// Like [`predict`], but a post-retrieval predictor on an empty list yields 0
/// instead of an error, so every query keeps a score.
pub fn predict_or_zero(
    method: &QppMethod,
    query: &Query,
    ranked: &RankedList,
    input: &QppInput<'_>,
) -> Result<f64, QppError> {
    if ranked.is_empty() && method.kind != QppKind::AvgIdf {
        return Ok(0.0);
    }
    predict(method, query, ranked, input)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QppScore {
    pub query_id: String,
    pub method: String,
    pub raw: f64,
    pub normalized: Option<f64>,
}

/// Min-max scaling onto [0,1]; a constant input maps to 0.5.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return vec![0.5; values.len()];
    }
    let span = hi - lo;
    values.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

/// Fills `normalized` by min-max scaling the raw scores of the given set.
pub fn normalize_scores(scores: &[QppScore]) -> Result<Vec<QppScore>, QppError> {
    if scores.is_empty() {
        return Err(QppError::NothingToNormalize);
    }
    if let Some(s) = scores.iter().find(|s| !s.raw.is_finite()) {
        return Err(QppError::NonFinite(s.query_id.clone()));
    }
    let raw: Vec<f64> = scores.iter().map(|s| s.raw).collect();
    Ok(scores
        .iter()
        .zip(min_max(&raw))
        .map(|(s, n)| QppScore {
            normalized: Some(n),
            ..s.clone()
        })
        .collect())
}

/// Normalizes each method's scores separately.
pub fn normalize_per_method(scores: &[QppScore]) -> Result<Vec<QppScore>, QppError> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in scores.iter().enumerate() {
        groups.entry(s.method.as_str()).or_default().push(i);
    }
    let mut out = scores.to_vec();
    for idx in groups.values() {
        let group: Vec<QppScore> = idx.iter().map(|&i| scores[i].clone()).collect();
        for (&i, s) in idx.iter().zip(normalize_scores(&group)?) {
            out[i] = s;
        }
    }
    Ok(out)
}

/// `query_id<TAB>method<TAB>raw_score` with a header row.
pub fn format_qpp_scores(scores: &[QppScore]) -> String {
    let mut out = String::from("query_id\tmethod\traw_score\n");
    for s in scores {
        out.push_str(&format!("{}\t{}\t{}\n", s.query_id, s.method, s.raw));
    }
    out
}

pub fn parse_qpp_scores(text: &str, normalize: bool) -> Result<Vec<QppScore>, QppError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.starts_with("query_id")) {
            continue;
        }
        let bad = |reason: String| QppError::MalformedScores { line: i + 1, reason };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad(format!("expected 3 tab-separated columns, got {}", cols.len())));
        }
        let raw: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| bad(format!("invalid score `{}`", cols[2])))?;
        out.push(QppScore {
            query_id: cols[0].to_string(),
            method: cols[1].to_string(),
            raw,
            normalized: None,
        });
    }
    if normalize && !out.is_empty() {
        out = normalize_per_method(&out)?;
    }
    Ok(out)
}
