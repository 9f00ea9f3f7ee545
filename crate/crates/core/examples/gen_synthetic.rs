//! Writes the synthetic collection: `cargo run --example gen_synthetic -- <dir> [seed]`.

use std::path::PathBuf;

use qppbench::synthetic::{generate, SyntheticSpec, TOY_SEED};

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/toy".into()));
    let seed = args
        .next()
        .map_or(TOY_SEED, |s| s.parse().expect("seed must be an integer"));
    let data = generate(&SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    });
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("corpus.jsonl"), data.corpus_jsonl())?;
    std::fs::write(dir.join("topics.tsv"), data.topics_tsv())?;
    std::fs::write(dir.join("qrels.txt"), data.qrels_txt())?;
    println!(
        "wrote {} documents, {} topics, {} judgments to {}",
        data.docs.len(),
        data.topics.len(),
        data.judgments.len(),
        dir.display()
    );
    Ok(())
}
