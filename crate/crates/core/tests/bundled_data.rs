use std::path::Path;

use qppbench::synthetic::{generate, SyntheticSpec};

#[test]
fn toy_files_match_generator() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy");
    let data = generate(&SyntheticSpec::default());
    let read = |name: &str| std::fs::read_to_string(dir.join(name)).unwrap();
    assert_eq!(read("corpus.jsonl"), data.corpus_jsonl());
    assert_eq!(read("topics.tsv"), data.topics_tsv());
    assert_eq!(read("qrels.txt"), data.qrels_txt());
}
