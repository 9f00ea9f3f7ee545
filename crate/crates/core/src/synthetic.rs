//! Deterministic synthetic test collection: Zipfian background text, topics
//! of varying difficulty, graded judgments.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, Query, Tokenizer};
use crate::metrics::Qrels;

/// Seed of the bundled toy collection.
pub const TOY_SEED: u64 = 20250;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub num_docs: usize,
    pub num_topics: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_docs: 1000,
            num_topics: 50,
            vocab_size: 3000,
            seed: TOY_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Judgment {
    pub query_id: String,
    pub doc_id: String,
    pub grade: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCollection {
    pub docs: Vec<Document>,
    /// (query_id, text)
    pub topics: Vec<(String, String)>,
    pub judgments: Vec<Judgment>,
}

const ONSETS: [&str; 16] = [
    "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
const CODAS: [&str; 6] = ["", "n", "r", "s", "l", "x"];

/// Distinct pronounceable word for each index.
fn word(mut i: usize, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[i % ONSETS.len()]);
        i /= ONSETS.len();
        w.push_str(VOWELS[i % VOWELS.len()]);
        i /= VOWELS.len();
    }
    w.push_str(CODAS[i % CODAS.len()]);
    w
}

struct Topic {
    /// Facet terms; the query uses a prefix of them.
    terms: Vec<String>,
    query_len: usize,
    /// 0 = easy, 1 = hard
    difficulty: f64,
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticCollection {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let background: Vec<String> = (0..spec.vocab_size).map(|i| word(i * 7 + 1, 2)).collect();
    let zipf = WeightedIndex::new((1..=spec.vocab_size).map(|r| 1.0 / r as f64)).expect("non-empty vocabulary");

    let mut topic_pool: Vec<String> = (0..spec.num_topics * 6).map(|i| word(i, 3)).collect();
    topic_pool.sort();
    topic_pool.dedup();
    topic_pool.shuffle(&mut rng);
    let mut topics = Vec::with_capacity(spec.num_topics);
    for t in 0..spec.num_topics {
        let mut terms: Vec<String> = topic_pool[t * 5..t * 5 + 5].to_vec();
        // some topics share a facet with the previous one
        if t > 0 && rng.gen_bool(0.25) {
            let prev: &Topic = &topics[t - 1];
            terms[4] = prev.terms[0].clone();
        }
        // hard queries sometimes carry a frequent, uninformative word
        let difficulty: f64 = rng.gen();
        if difficulty > 0.6 && rng.gen_bool(0.5) {
            terms.insert(rng.gen_range(1..3), background[rng.gen_range(5..60)].clone());
        }
        topics.push(Topic {
            query_len: rng.gen_range(2..=4),
            terms,
            difficulty,
        });
    }

    let mut doc_slots: Vec<usize> = (0..spec.num_docs).collect();
    doc_slots.shuffle(&mut rng);
    let mut texts: Vec<Vec<String>> = vec![Vec::new(); spec.num_docs];
    let mut judgments = Vec::new();
    let mut next_slot = 0;
    let qid = |t: usize| format!("q{:03}", t + 1);
    let did = |d: usize| format!("d{:04}", d + 1);

    let fill_background = |rng: &mut ChaCha8Rng, text: &mut Vec<String>, n: usize| {
        for _ in 0..n {
            text.push(background[zipf.sample(rng)].clone());
        }
    };

    for (t, topic) in topics.iter().enumerate() {
        let n_rel = rng.gen_range(3..=14);
        for _ in 0..n_rel {
            if next_slot >= doc_slots.len() {
                break;
            }
            let d = doc_slots[next_slot];
            next_slot += 1;
            let grade = if rng.gen_bool(0.35) { 2 } else { 1 };
            let len = rng.gen_range(40..320);
            let density = (0.14 * (1.0 - topic.difficulty) + 0.02) * if grade == 2 { 1.5 } else { 1.0 };
            // on hard topics some relevant documents use only the facets the query lacks
            let off_query = rng.gen_bool(0.5 * topic.difficulty);
            let facets = if off_query {
                &topic.terms[topic.query_len..]
            } else {
                &topic.terms[..]
            };
            let text = &mut texts[d];
            for _ in 0..len {
                if rng.gen_bool(density) {
                    text.push(facets.choose(&mut rng).expect("facets").clone());
                } else {
                    text.push(background[zipf.sample(&mut rng)].clone());
                }
            }
            judgments.push(Judgment {
                query_id: qid(t),
                doc_id: did(d),
                grade,
            });
        }
    }

    // remaining documents: background text, some mentioning a query term
    for &d in &doc_slots[next_slot.min(doc_slots.len())..] {
        let len = rng.gen_range(30..400);
        fill_background(&mut rng, &mut texts[d], len);
    }
    for (t, topic) in topics.iter().enumerate() {
        let n_distract = (topic.difficulty * 30.0).round() as usize + 2;
        for _ in 0..n_distract {
            let d = doc_slots[rng.gen_range(0..spec.num_docs)];
            let term = topic.terms[rng.gen_range(0..topic.query_len)].clone();
            let repeats = rng.gen_range(1..=1 + (topic.difficulty * 6.0) as usize);
            let text = &mut texts[d];
            for _ in 0..repeats {
                let at = rng.gen_range(0..=text.len());
                text.insert(at, term.clone());
            }
            if rng.gen_bool(0.5) && !judgments.iter().any(|j| j.query_id == qid(t) && j.doc_id == did(d)) {
                judgments.push(Judgment {
                    query_id: qid(t),
                    doc_id: did(d),
                    grade: 0,
                });
            }
        }
    }
    judgments.sort_by(|a, b| a.query_id.cmp(&b.query_id).then_with(|| a.doc_id.cmp(&b.doc_id)));

    SyntheticCollection {
        docs: texts
            .into_iter()
            .enumerate()
            .map(|(d, words)| Document::new(did(d), words.join(" ")))
            .collect(),
        topics: topics
            .iter()
            .enumerate()
            .map(|(t, topic)| (qid(t), topic.terms[..topic.query_len].join(" ")))
            .collect(),
        judgments,
    }
}

impl SyntheticCollection {
    pub fn corpus_jsonl(&self) -> String {
        self.docs
            .iter()
            .map(|d| serde_json::json!({"doc_id": d.doc_id, "text": d.text}).to_string() + "\n")
            .collect()
    }

    pub fn topics_tsv(&self) -> String {
        self.topics.iter().map(|(q, t)| format!("{q}\t{t}\n")).collect()
    }

    pub fn qrels_txt(&self) -> String {
        self.judgments
            .iter()
            .map(|j| format!("{} 0 {} {}\n", j.query_id, j.doc_id, j.grade))
            .collect()
    }

    pub fn queries(&self, tokenizer: &Tokenizer) -> Vec<Query> {
        self.topics
            .iter()
            .map(|(q, t)| Query::new(q.clone(), t.clone(), tokenizer))
            .collect()
    }

    pub fn qrels(&self) -> Qrels {
        let mut q = Qrels::new();
        for j in &self.judgments {
            q.insert(j.query_id.clone(), j.doc_id.clone(), j.grade);
        }
        q
    }
}
