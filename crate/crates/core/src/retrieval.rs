//! BM25 and query-likelihood retrieval, top-k ranking and TREC run files.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{DocNo, Index, Query, TermId};

/// Retrieval depth used throughout the experiments.
pub const DEFAULT_DEPTH: usize = 100;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("unknown doc_id `{0}`")]
    UnknownDoc(String),
    #[error("collection is empty")]
    EmptyCollection,
    #[error("invalid model `{spec}`: {reason}")]
    InvalidModel { spec: String, reason: String },
    #[error("malformed run line {line}: {reason}")]
    MalformedRun { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RetrievalModel {
    Bm25 { k1: f64, b: f64 },
    LmDirichlet { mu: f64 },
    LmJelinekMercer { lambda: f64 },
}

impl RetrievalModel {
    pub fn bm25(k1: f64, b: f64) -> Result<Self, RetrievalError> {
        Self::Bm25 { k1, b }.validated()
    }

    pub fn lm_dirichlet(mu: f64) -> Result<Self, RetrievalError> {
        Self::LmDirichlet { mu }.validated()
    }

    pub fn lm_jelinek_mercer(lambda: f64) -> Result<Self, RetrievalError> {
        Self::LmJelinekMercer { lambda }.validated()
    }

    fn validated(self) -> Result<Self, RetrievalError> {
        let bad = |reason: &str| {
            Err(RetrievalError::InvalidModel {
                spec: self.to_string(),
                reason: reason.to_string(),
            })
        };
        match self {
            Self::Bm25 { k1, b } => {
                if !(k1 > 0.0 && k1.is_finite()) {
                    return bad("k1 must be positive");
                }
                if !(0.0..=1.0).contains(&b) {
                    return bad("b must lie in [0,1]");
                }
            }
            Self::LmDirichlet { mu } => {
                if !(mu > 0.0 && mu.is_finite()) {
                    return bad("mu must be positive");
                }
            }
            Self::LmJelinekMercer { lambda } => {
                if !(lambda > 0.0 && lambda < 1.0) {
                    return bad("lambda must lie in (0,1)");
                }
            }
        }
        Ok(self)
    }

    /// Builds a model from a family name (`bm25`, `lmdir`, `lmjm`) and its
    /// comma-separated parameters.
    pub fn from_parts(name: &str, params: &str) -> Result<Self, RetrievalError> {
        let spec = format!("{name}:{params}");
        let invalid = |reason: String| RetrievalError::InvalidModel {
            spec: spec.clone(),
            reason,
        };
        let values: Vec<f64> = params
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| invalid(format!("`{s}`: {e}"))))
            .collect::<Result<_, _>>()?;
        let arity = |n: usize| {
            if values.len() == n {
                Ok(())
            } else {
                Err(invalid(format!("expected {n} parameter(s), got {}", values.len())))
            }
        };
        match name.to_ascii_lowercase().as_str() {
            "bm25" => {
                arity(2)?;
                Self::bm25(values[0], values[1])
            }
            "lmdir" | "lmdirichlet" | "dirichlet" => {
                arity(1)?;
                Self::lm_dirichlet(values[0])
            }
            "lmjm" | "jm" | "jelinek-mercer" => {
                arity(1)?;
                Self::lm_jelinek_mercer(values[0])
            }
            _ => Err(invalid("unknown model family".into())),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::Bm25 { .. } => "bm25",
            Self::LmDirichlet { .. } => "lmdir",
            Self::LmJelinekMercer { .. } => "lmjm",
        }
    }

    /// Filesystem-safe label, e.g. `bm25_0.7_0.3`.
    pub fn file_stem(&self) -> String {
        self.to_string().replace([':', ','], "_")
    }

    fn term_score(&self, index: &Index, term: TermId, tf: u64, dl: u64) -> f64 {
        let p_c = index.collection_prob_id(term);
        match *self {
            Self::Bm25 { k1, b } => {
                if tf == 0 {
                    return 0.0;
                }
                let n = index.num_docs() as f64;
                let df = index.df_id(term) as f64;
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                let tf = tf as f64;
                let norm = 1.0 - b + b * dl as f64 / index.avg_doc_len();
                idf * tf * (k1 + 1.0) / (tf + k1 * norm)
            }
            Self::LmDirichlet { mu } => ((tf as f64 + mu * p_c) / (dl as f64 + mu)).ln(),
            Self::LmJelinekMercer { lambda } => {
                let ml = if dl == 0 { 0.0 } else { tf as f64 / dl as f64 };
                (lambda * ml + (1.0 - lambda) * p_c).ln()
            }
        }
    }

    /// Scores a query against a pseudo-document described by a term-frequency
    /// lookup and its length, using the collection statistics of `index`.
    /// Query terms absent from the collection contribute nothing.
    pub fn score_with<F>(&self, index: &Index, query: &Query, tf_of: F, dl: u64) -> f64
    where
        F: Fn(TermId) -> u64,
    {
        let mut total = 0.0;
        for (term, qtf) in query.term_counts() {
            let Some(id) = index.term_id(term) else { continue };
            if index.cf_id(id) == 0 {
                continue;
            }
            total += qtf as f64 * self.term_score(index, id, tf_of(id), dl);
        }
        total
    }

    pub(crate) fn score_doc(&self, index: &Index, query: &Query, doc: DocNo) -> f64 {
        self.score_with(index, query, |t| index.tf(t, doc) as u64, index.doc_len(doc) as u64)
    }
}

impl fmt::Display for RetrievalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bm25 { k1, b } => write!(f, "bm25:{k1},{b}"),
            Self::LmDirichlet { mu } => write!(f, "lmdir:{mu}"),
            Self::LmJelinekMercer { lambda } => write!(f, "lmjm:{lambda}"),
        }
    }
}

impl FromStr for RetrievalModel {
    type Err = RetrievalError;

    /// Parses `family:params`, e.g. `bm25:0.7,0.3`, `lmdir:1000`, `lmjm:0.6`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, params) = s.split_once(':').ok_or_else(|| RetrievalError::InvalidModel {
            spec: s.to_string(),
            reason: "expected `family:params`".into(),
        })?;
        Self::from_parts(name.trim(), params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Top-k documents for one query, scores non-increasing, ties by doc_id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub tag: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }
}

pub fn score(model: &RetrievalModel, index: &Index, query: &Query, doc_id: &str) -> Result<f64, RetrievalError> {
    let doc = index
        .doc_no(doc_id)
        .ok_or_else(|| RetrievalError::UnknownDoc(doc_id.to_string()))?;
    Ok(model.score_doc(index, query, doc))
}

/// Scores every document sharing at least one term with the query and keeps
/// the `k` best.
pub fn retrieve_topk(model: &RetrievalModel, index: &Index, query: &Query, k: usize) -> RankedList {
    let mut candidates: Vec<DocNo> = Vec::new();
    let mut seen = HashSet::new();
    for (term, _) in query.term_counts() {
        if let Some(id) = index.term_id(term) {
            for p in index.postings(id) {
                if seen.insert(p.doc) {
                    candidates.push(p.doc);
                }
            }
        }
    }
    let mut scored: Vec<(DocNo, f64)> = candidates
        .into_iter()
        .map(|d| (d, model.score_doc(index, query, d)))
        .collect();
    // doc numbers follow doc_id order, so comparing them breaks ties by doc_id
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    RankedList {
        query_id: query.query_id.clone(),
        tag: model.to_string(),
        entries: scored
            .into_iter()
            .map(|(d, s)| RankedEntry {
                doc_id: index.doc_id(d).to_string(),
                score: s,
            })
            .collect(),
    }
}

/// The model's score for the whole collection treated as one document.
pub fn collection_score(model: &RetrievalModel, index: &Index, query: &Query) -> Result<f64, RetrievalError> {
    if index.total_len() == 0 {
        return Err(RetrievalError::EmptyCollection);
    }
    Ok(model.score_with(index, query, |t| index.cf_id(t), index.total_len()))
}

/// Formats a score with at least six significant digits that parses back to
/// the identical value.
pub fn format_score(x: f64) -> String {
    let mut s = format!("{x}");
    let digits = s.chars().filter(char::is_ascii_digit).skip_while(|&c| c == '0').count();
    if digits < 6 && x.is_finite() {
        if !s.contains('.') {
            s.push('.');
        }
        s.extend(std::iter::repeat_n('0', 6 - digits));
    }
    s
}

pub fn write_run<W: Write>(mut out: W, lists: &[RankedList]) -> std::io::Result<()> {
    for list in lists {
        let tag = if list.tag.is_empty() { "qppbench" } else { &list.tag };
        for (i, e) in list.entries.iter().enumerate() {
            writeln!(
                out,
                "{} Q0 {} {} {} {}",
                list.query_id,
                e.doc_id,
                i + 1,
                format_score(e.score),
                tag
            )?;
        }
    }
    Ok(())
}

pub fn write_run_file(path: impl AsRef<Path>, lists: &[RankedList]) -> Result<(), RetrievalError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_run(&mut buf, lists).expect("writing to memory");
    fs::write(path, buf).map_err(|source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses a TREC run. Lists keep the order in which their query first
/// appears; entries are ordered by rank, which must run 1..n per query.
pub fn read_run(text: &str) -> Result<Vec<RankedList>, RetrievalError> {
    let mut lists: Vec<RankedList> = Vec::new();
    let mut ranks: Vec<Vec<(usize, usize)>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| RetrievalError::MalformedRun { line: line_no, reason };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(bad(format!("expected 6 columns, got {}", cols.len())));
        }
        let rank: usize = cols[3]
            .parse()
            .map_err(|_| bad(format!("invalid rank `{}`", cols[3])))?;
        let score: f64 = cols[4]
            .parse()
            .map_err(|_| bad(format!("invalid score `{}`", cols[4])))?;
        if !score.is_finite() {
            return Err(bad("score is not finite".into()));
        }
        let pos = match lists.iter().position(|l| l.query_id == cols[0]) {
            Some(p) => p,
            None => {
                lists.push(RankedList {
                    query_id: cols[0].to_string(),
                    tag: cols[5].to_string(),
                    entries: Vec::new(),
                });
                ranks.push(Vec::new());
                lists.len() - 1
            }
        };
        ranks[pos].push((rank, line_no));
        lists[pos].entries.push(RankedEntry {
            doc_id: cols[2].to_string(),
            score,
        });
    }

    for (list, ranks) in lists.iter_mut().zip(ranks) {
        let mut order: Vec<usize> = (0..ranks.len()).collect();
        order.sort_by_key(|&i| ranks[i].0);
        for (expected, &i) in order.iter().enumerate() {
            let (rank, line) = ranks[i];
            if rank != expected + 1 {
                return Err(RetrievalError::MalformedRun {
                    line,
                    reason: format!("query {} ranks are not 1..n contiguous (found {rank})", list.query_id),
                });
            }
        }
        let mut entries: Vec<RankedEntry> = order.iter().map(|&i| list.entries[i].clone()).collect();
        let mut seen = HashSet::new();
        for (j, e) in entries.iter().enumerate() {
            if !seen.insert(e.doc_id.as_str()) {
                return Err(RetrievalError::MalformedRun {
                    line: ranks[order[j]].1,
                    reason: format!("duplicate doc {} for query {}", e.doc_id, list.query_id),
                });
            }
            if j > 0 && e.score > entries[j - 1].score {
                return Err(RetrievalError::MalformedRun {
                    line: ranks[order[j]].1,
                    reason: "scores increase with rank".into(),
                });
            }
        }
        std::mem::swap(&mut list.entries, &mut entries);
    }
    Ok(lists)
}

pub fn read_run_file(path: impl AsRef<Path>) -> Result<Vec<RankedList>, RetrievalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_run(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Tokenizer};
    use proptest::prelude::*;

    fn toy() -> Index {
        Index::build(
            [Document::new("d1", "a b"), Document::new("d2", "b")],
            &Tokenizer::new(),
        )
        .unwrap()
    }

    fn q(text: &str) -> Query {
        Query::new("q", text, &Tokenizer::new())
    }

    #[test]
    fn lmjm_hand_value() {
        let m = RetrievalModel::lm_jelinek_mercer(0.5).unwrap();
        let s = score(&m, &toy(), &q("b"), "d1").unwrap();
        assert!((s - (0.5f64 * 0.5 + 0.5 * 2.0 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn bm25_idf_hand_value() {
        let m = RetrievalModel::bm25(0.7, 0.3).unwrap();
        let idx = toy();
        // d2: tf=1, dl=1, avgdl=1.5
        let norm = 1.0 - 0.3 + 0.3 * 1.0 / 1.5;
        let expected = 1.2f64.ln() * 1.7 / (1.0 + 0.7 * norm);
        assert!((score(&m, &idx, &q("b"), "d2").unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn absent_term_contributes_nothing() {
        let m = RetrievalModel::lm_jelinek_mercer(0.5).unwrap();
        let idx = toy();
        assert_eq!(score(&m, &idx, &q("zzz"), "d1").unwrap(), 0.0);
        let with = score(&m, &idx, &q("b zzz"), "d1").unwrap();
        assert_eq!(with, score(&m, &idx, &q("b"), "d1").unwrap());
    }

    #[test]
    fn unknown_doc_is_error() {
        let m = RetrievalModel::lm_dirichlet(1000.0).unwrap();
        assert!(matches!(
            score(&m, &toy(), &q("b"), "nope"),
            Err(RetrievalError::UnknownDoc(_))
        ));
    }

    #[test]
    fn topk_orders_and_truncates() {
        let idx = toy();
        for m in ["bm25:0.7,0.3", "lmdir:1000", "lmjm:0.6"] {
            let m: RetrievalModel = m.parse().unwrap();
            let list = retrieve_topk(&m, &idx, &q("b"), 100);
            assert_eq!(list.len(), 2);
            assert!(list.entries[0].score >= list.entries[1].score);
            let one = retrieve_topk(&m, &idx, &q("b"), 1);
            assert_eq!(one.entries, list.entries[..1]);
        }
        let m = RetrievalModel::bm25(0.7, 0.3).unwrap();
        assert!(retrieve_topk(&m, &idx, &q("nothing here"), 10).is_empty());
    }

    #[test]
    fn ties_break_by_doc_id() {
        let idx = Index::build(
            [
                Document::new("c", "x"),
                Document::new("a", "x"),
                Document::new("b", "x"),
            ],
            &Tokenizer::new(),
        )
        .unwrap();
        let m = RetrievalModel::bm25(1.2, 0.75).unwrap();
        let ids: Vec<_> = retrieve_topk(&m, &idx, &q("x"), 3)
            .doc_ids()
            .map(String::from)
            .collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn collection_score_lmjm() {
        let m = RetrievalModel::lm_jelinek_mercer(0.5).unwrap();
        let s = collection_score(&m, &toy(), &q("b")).unwrap();
        assert!((s - (2.0f64 / 3.0).ln()).abs() < 1e-12);
        assert_eq!(collection_score(&m, &toy(), &q("unseen")).unwrap(), 0.0);
        let empty = Index::build([], &Tokenizer::new()).unwrap();
        assert!(collection_score(&m, &empty, &q("b")).is_err());
    }

    #[test]
    fn model_parsing() {
        assert_eq!(
            "bm25:0.7,0.3".parse::<RetrievalModel>().unwrap(),
            RetrievalModel::Bm25 { k1: 0.7, b: 0.3 }
        );
        assert_eq!(
            RetrievalModel::from_parts("LMDir", "1000").unwrap().to_string(),
            "lmdir:1000"
        );
        assert!("lmjm:1.0".parse::<RetrievalModel>().is_err());
        assert!("bm25:0.7".parse::<RetrievalModel>().is_err());
        assert!("bm25:-1,0.3".parse::<RetrievalModel>().is_err());
        assert!("tfidf:1".parse::<RetrievalModel>().is_err());
        assert_eq!(RetrievalModel::bm25(0.7, 0.3).unwrap().file_stem(), "bm25_0.7_0.3");
    }

    #[test]
    fn score_formatting() {
        assert_eq!(format_score(14.89), "14.8900");
        assert_eq!(format_score(-3.0), "-3.00000");
        assert_eq!(format_score(0.001), "0.00100000");
        assert_eq!(format_score(1.2345678), "1.2345678");
    }

    #[test]
    fn read_single_line() {
        let lists = read_run("301 Q0 FT911-3 1 14.89 qppbench\n").unwrap();
        assert_eq!(lists[0].query_id, "301");
        assert_eq!(lists[0].entries[0].doc_id, "FT911-3");
        assert_eq!(lists[0].entries[0].score, 14.89);
        assert_eq!(lists[0].tag, "qppbench");
    }

    #[test]
    fn read_rejects_gaps_and_garbage() {
        match read_run("1 Q0 a 1 2.0 t\n1 Q0 b 3 1.0 t\n") {
            Err(RetrievalError::MalformedRun { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match read_run("1 Q0 a 1 2.0 t\n1 Q0 b x 1.0 t\n") {
            Err(RetrievalError::MalformedRun { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_run("1 Q0 a 1\n").is_err());
    }

    #[test]
    fn read_sorts_by_rank() {
        let lists = read_run("1 Q0 b 2 1.0 t\n1 Q0 a 1 2.0 t\n").unwrap();
        let ids: Vec<_> = lists[0].doc_ids().collect();
        assert_eq!(ids, ["a", "b"]);
    }

    proptest! {
        #[test]
        fn run_roundtrip(raw in prop::collection::vec(
            prop::collection::vec(-1e6f64..1e6, 0..8), 1..5)
        ) {
            let lists: Vec<RankedList> = raw.into_iter().enumerate().filter(|(_, s)| !s.is_empty()).map(|(qi, mut scores)| {
                scores.sort_by(|a, b| b.total_cmp(a));
                RankedList {
                    query_id: format!("q{qi}"),
                    tag: "run".into(),
                    entries: scores.into_iter().enumerate()
                        .map(|(i, score)| RankedEntry { doc_id: format!("d{i}"), score }).collect(),
                }
            }).collect();
            let mut buf = Vec::new();
            write_run(&mut buf, &lists).unwrap();
            let back = read_run(std::str::from_utf8(&buf).unwrap()).unwrap();
            prop_assert_eq!(back, lists);
        }

        #[test]
        fn bm25_monotone_in_tf(tf in 0u64..50, dl in 1u64..200) {
            let idx = toy();
            let m = RetrievalModel::bm25(0.7, 0.3).unwrap();
            let query = q("b");
            let lo = m.score_with(&idx, &query, |_| tf, dl.max(tf));
            let hi = m.score_with(&idx, &query, |_| tf + 1, dl.max(tf));
            prop_assert!(hi >= lo);
        }
    }
}
