//! Documents, topics, tokenization and the in-memory inverted index.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate doc_id `{0}`")]
    DuplicateDocId(String),
    #[error("duplicate query_id `{0}`")]
    DuplicateQueryId(String),
    #[error("empty doc_id at {path}:{line}")]
    EmptyDocId { path: String, line: usize },
    #[error("malformed line {line} in {path}: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error("collection is empty")]
    EmptyCollection,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type TermId = u32;
pub type DocNo = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub query_id: String,
    pub text: String,
    pub terms: Vec<String>,
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>, tokenizer: &Tokenizer) -> Self {
        let text = text.into();
        let terms = tokenizer.tokenize(&text);
        Self {
            query_id: query_id.into(),
            text,
            terms,
        }
    }

    /// Distinct terms with their multiplicity, in order of first occurrence.
    pub fn term_counts(&self) -> Vec<(&str, u32)> {
        let mut out: Vec<(&str, u32)> = Vec::new();
        for t in &self.terms {
            match out.iter_mut().find(|(s, _)| *s == t.as_str()) {
                Some((_, n)) => *n += 1,
                None => out.push((t.as_str(), 1)),
            }
        }
        out
    }
}

/// Lowercasing, non-alphanumeric splitting tokenizer with an optional stopword list.
#[derive(Debug, Clone, Default)]
pub struct Tokenizer {
    stopwords: Option<HashSet<String>>,
}

impl Tokenizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        Self { stopwords: Some(set) }
    }

    /// Reads a stopword file with one token per line.
    pub fn from_stopword_file(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let text = read_to_string(path.as_ref())?;
        Ok(Self::with_stopwords(text.lines()))
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .filter(|t| match &self.stopwords {
                Some(stop) => !stop.contains(t),
                None => true,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: DocNo,
    pub tf: u32,
}

/// Immutable inverted index with collection statistics.
///
/// Documents are numbered in ascending `doc_id` order, so postings sorted by
/// document number are also sorted by `doc_id`, and every statistic is
/// independent of the order documents were supplied in.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    terms: Vec<String>,
    term_ids: HashMap<String, TermId>,
    postings: Vec<Vec<Posting>>,
    cf: Vec<u64>,
    doc_ids: Vec<String>,
    doc_nos: HashMap<String, DocNo>,
    doc_len: Vec<u32>,
    // per document: (term, tf) sorted by term id
    forward: Vec<Vec<(TermId, u32)>>,
    total_len: u64,
}

impl Index {
    pub fn build<I>(docs: I, tokenizer: &Tokenizer) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = Document>,
    {
        let mut docs: Vec<Document> = docs.into_iter().collect();
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        if let Some(w) = docs.windows(2).find(|w| w[0].doc_id == w[1].doc_id) {
            return Err(CorpusError::DuplicateDocId(w[0].doc_id.clone()));
        }

        let mut terms = Vec::new();
        let mut term_ids: HashMap<String, TermId> = HashMap::new();
        let mut postings: Vec<Vec<Posting>> = Vec::new();
        let mut cf: Vec<u64> = Vec::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        let mut forward = Vec::with_capacity(docs.len());
        let mut total_len = 0u64;

        for (doc_no, doc) in docs.iter().enumerate() {
            let doc_no = doc_no as DocNo;
            let mut counts: HashMap<TermId, u32> = HashMap::new();
            let mut len = 0u32;
            for tok in tokenizer.tokenize(&doc.text) {
                let id = match term_ids.get(&tok) {
                    Some(&id) => id,
                    None => {
                        let id = terms.len() as TermId;
                        term_ids.insert(tok.clone(), id);
                        terms.push(tok);
                        postings.push(Vec::new());
                        cf.push(0);
                        id
                    }
                };
                *counts.entry(id).or_insert(0) += 1;
                len += 1;
            }
            let mut fwd: Vec<(TermId, u32)> = counts.into_iter().collect();
            fwd.sort_unstable_by_key(|&(t, _)| t);
            for &(t, tf) in &fwd {
                postings[t as usize].push(Posting { doc: doc_no, tf });
                cf[t as usize] += tf as u64;
            }
            forward.push(fwd);
            doc_len.push(len);
            total_len += len as u64;
        }

        let doc_nos = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.clone(), i as DocNo))
            .collect();
        let doc_ids = docs.into_iter().map(|d| d.doc_id).collect();

        Ok(Self {
            terms,
            term_ids,
            postings,
            cf,
            doc_ids,
            doc_nos,
            doc_len,
            forward,
            total_len,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn total_len(&self) -> u64 {
        self.total_len
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        if self.doc_ids.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.doc_ids.len() as f64
        }
    }

    pub fn term_id(&self, term: &str) -> Option<TermId> {
        self.term_ids.get(term).copied()
    }

    pub fn term(&self, id: TermId) -> &str {
        &self.terms[id as usize]
    }

    pub fn terms(&self) -> impl Iterator<Item = (TermId, &str)> {
        self.terms.iter().enumerate().map(|(i, t)| (i as TermId, t.as_str()))
    }

    pub fn doc_no(&self, doc_id: &str) -> Option<DocNo> {
        self.doc_nos.get(doc_id).copied()
    }

    pub fn doc_id(&self, doc: DocNo) -> &str {
        &self.doc_ids[doc as usize]
    }

    pub fn doc_len(&self, doc: DocNo) -> u32 {
        self.doc_len[doc as usize]
    }

    pub fn postings(&self, term: TermId) -> &[Posting] {
        &self.postings[term as usize]
    }

    pub fn df(&self, term: &str) -> u64 {
        self.term_id(term).map_or(0, |t| self.postings[t as usize].len() as u64)
    }

    pub fn df_id(&self, term: TermId) -> u64 {
        self.postings[term as usize].len() as u64
    }

    pub fn cf(&self, term: &str) -> u64 {
        self.term_id(term).map_or(0, |t| self.cf[t as usize])
    }

    pub fn cf_id(&self, term: TermId) -> u64 {
        self.cf[term as usize]
    }

    /// Term counts of one document, sorted by term id.
    pub fn doc_terms(&self, doc: DocNo) -> &[(TermId, u32)] {
        &self.forward[doc as usize]
    }

    pub fn tf(&self, term: TermId, doc: DocNo) -> u32 {
        let fwd = &self.forward[doc as usize];
        fwd.binary_search_by_key(&term, |&(t, _)| t).map_or(0, |i| fwd[i].1)
    }

    /// P(w|C) = cf(w) / total_len; 0 for unseen terms.
    pub fn collection_prob(&self, term: &str) -> Result<f64, CorpusError> {
        if self.total_len == 0 {
            return Err(CorpusError::EmptyCollection);
        }
        Ok(self.cf(term) as f64 / self.total_len as f64)
    }

    pub(crate) fn collection_prob_id(&self, term: TermId) -> f64 {
        self.cf[term as usize] as f64 / self.total_len as f64
    }

    pub fn summary(&self) -> IndexSummary {
        IndexSummary {
            num_docs: self.num_docs(),
            total_len: self.total_len,
            vocabulary_size: self.vocabulary_size(),
            avg_doc_len: self.avg_doc_len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub num_docs: usize,
    pub total_len: u64,
    pub vocabulary_size: usize,
    pub avg_doc_len: f64,
}

fn read_to_string(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a corpus as JSON lines (`{"doc_id": .., "text": ..}`) or as
/// two-column TSV. The format is chosen per file from its first non-blank line.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    parse_corpus(&text, &path.display().to_string())
}

pub fn parse_corpus(text: &str, origin: &str) -> Result<Vec<Document>, CorpusError> {
    let json = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.trim_start().starts_with('{'));
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let doc = if json {
            serde_json::from_str::<Document>(line).map_err(|e| CorpusError::Malformed {
                path: origin.to_string(),
                line: line_no,
                reason: e.to_string(),
            })?
        } else {
            let (id, body) = split_tsv(line, origin, line_no)?;
            Document::new(id, body)
        };
        if doc.doc_id.is_empty() {
            return Err(CorpusError::EmptyDocId {
                path: origin.to_string(),
                line: line_no,
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Reads a two-column `query_id<TAB>text` topics file.
pub fn read_topics(path: impl AsRef<Path>, tokenizer: &Tokenizer) -> Result<Vec<Query>, CorpusError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    parse_topics(&text, &path.display().to_string(), tokenizer)
}

pub fn parse_topics(text: &str, origin: &str, tokenizer: &Tokenizer) -> Result<Vec<Query>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, body) = split_tsv(line, origin, i + 1)?;
        if !seen.insert(id.to_string()) {
            return Err(CorpusError::DuplicateQueryId(id.to_string()));
        }
        out.push(Query::new(id, body, tokenizer));
    }
    Ok(out)
}

fn split_tsv<'a>(line: &'a str, origin: &str, line_no: usize) -> Result<(&'a str, &'a str), CorpusError> {
    let (id, body) = line.split_once('\t').ok_or_else(|| CorpusError::Malformed {
        path: origin.to_string(),
        line: line_no,
        reason: "expected two tab-separated columns".into(),
    })?;
    let id = id.trim();
    if id.is_empty() {
        return Err(CorpusError::EmptyDocId {
            path: origin.to_string(),
            line: line_no,
        });
    }
    Ok((id, body))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(texts: &[(&str, &str)]) -> Index {
        let docs = texts.iter().map(|(id, t)| Document::new(*id, *t));
        Index::build(docs, &Tokenizer::new()).unwrap()
    }

    #[test]
    fn tokenize_examples() {
        let tok = Tokenizer::new();
        assert!(tok.tokenize("").is_empty());
        assert_eq!(
            tok.tokenize("Query Performance-Prediction"),
            vec!["query", "performance", "prediction"]
        );
        let tok = Tokenizer::with_stopwords(["the"]);
        assert_eq!(tok.tokenize("the QPP 2023!"), vec!["qpp", "2023"]);
    }

    #[test]
    fn stopwords_apply_after_lowercasing() {
        let tok = Tokenizer::with_stopwords(["The"]);
        assert_eq!(tok.tokenize("THE end"), vec!["end"]);
    }

    #[test]
    fn two_doc_statistics() {
        let idx = index(&[("d1", "a b"), ("d2", "b c")]);
        assert_eq!(idx.num_docs(), 2);
        assert_eq!(idx.df("b"), 2);
        assert_eq!(idx.cf("b"), 2);
        assert_eq!(idx.total_len(), 4);
    }

    #[test]
    fn empty_stream() {
        let idx = index(&[]);
        assert_eq!(idx.num_docs(), 0);
        assert_eq!(idx.total_len(), 0);
        assert!(matches!(idx.collection_prob("x"), Err(CorpusError::EmptyCollection)));
    }

    #[test]
    fn repeated_term_doc() {
        let idx = index(&[("d", "x x x")]);
        let d = idx.doc_no("d").unwrap();
        assert_eq!(idx.doc_len(d), 3);
        assert_eq!(idx.cf("x"), 3);
        assert_eq!(idx.df("x"), 1);
        assert_eq!(idx.collection_prob("x").unwrap(), 1.0);
    }

    #[test]
    fn collection_prob_values() {
        let idx = index(&[("d1", "a a"), ("d2", "a b")]);
        assert_eq!(idx.collection_prob("a").unwrap(), 0.75);
        assert_eq!(idx.collection_prob("zzz").unwrap(), 0.0);
    }

    #[test]
    fn duplicate_doc_id_is_named() {
        let docs = vec![
            Document::new("a", "x"),
            Document::new("b", "y"),
            Document::new("a", "z"),
        ];
        match Index::build(docs, &Tokenizer::new()) {
            Err(CorpusError::DuplicateDocId(id)) => assert_eq!(id, "a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_text_gives_zero_length_doc() {
        let idx = index(&[("e", ""), ("f", "y")]);
        assert_eq!(idx.doc_len(idx.doc_no("e").unwrap()), 0);
        assert_eq!(idx.total_len(), 1);
    }

    #[test]
    fn postings_sorted_by_doc_id() {
        let idx = index(&[("z", "t"), ("a", "t"), ("m", "t u")]);
        let t = idx.term_id("t").unwrap();
        let ids: Vec<&str> = idx.postings(t).iter().map(|p| idx.doc_id(p.doc)).collect();
        assert_eq!(ids, vec!["a", "m", "z"]);
    }

    #[test]
    fn parse_jsonl_and_tsv() {
        let j = "{\"doc_id\":\"d1\",\"text\":\"hello world\"}\n\n{\"doc_id\":\"d2\",\"text\":\"\"}\n";
        let docs = parse_corpus(j, "mem").unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[1].text, "");
        let t = "d1\thello world\nd2\tbye\n";
        let docs = parse_corpus(t, "mem").unwrap();
        assert_eq!(docs[1], Document::new("d2", "bye"));
    }

    #[test]
    fn malformed_tsv_reports_line() {
        match parse_corpus("d1\tok\nbroken\n", "c.tsv") {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn topics_tokenized_with_same_tokenizer() {
        let tok = Tokenizer::with_stopwords(["of"]);
        let qs = parse_topics(
            "301\tInternational Organized Crime\n302\tPoliomyelitis of Post-Polio\n",
            "t",
            &tok,
        )
        .unwrap();
        assert_eq!(qs[1].terms, vec!["poliomyelitis", "post", "polio"]);
        assert!(matches!(
            parse_topics("1\ta\n1\tb\n", "t", &tok),
            Err(CorpusError::DuplicateQueryId(_))
        ));
    }

    #[test]
    fn term_counts_keep_multiplicity() {
        let q = Query::new("q", "b a b", &Tokenizer::new());
        assert_eq!(q.term_counts(), vec![("b", 2), ("a", 1)]);
    }
}
