//! Text metrics on hand-written responses: BLEU-2, distinct-n and the
//! three embedding similarities.
//!
//! cargo run --example metrics

use multiref::eval::{bleu2, corpus_bleu2, distinct_n, embedding_similarity, SimilarityMode, WordEmbeddingTable};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn main() -> multiref::Result<()> {
    let reference = words("i like green tea a lot");
    let hyps = [words("i like green tea"), words("i like coffee a lot"), words("the weather is nice")];
    for h in &hyps {
        println!("bleu2 {:>6.2}  {}", bleu2(h, &reference), h.join(" "));
    }
    let refs = vec![reference.clone(); hyps.len()];
    println!("corpus bleu2 {:.2}", corpus_bleu2(&hyps, &refs));
    println!("distinct-1 {}, distinct-2 {}", distinct_n(&hyps, 1), distinct_n(&hyps, 2));

    let table = WordEmbeddingTable::parse(
        "i 0.1 0.9 0.0\nlike 0.8 0.2 0.1\ngreen 0.0 0.3 0.9\ntea 0.2 0.1 0.8\ncoffee 0.3 0.1 0.7\n\
         a 0.1 0.1 0.1\nlot 0.5 0.5 0.2\nweather 0.9 0.0 0.1\nnice 0.7 0.4 0.0\n",
    )?;
    for h in &hyps {
        let scores: Vec<String> = [SimilarityMode::Average, SimilarityMode::Extrema, SimilarityMode::Greedy]
            .iter()
            .map(|m| format!("{m:?} {:.3}", embedding_similarity(h, &reference, &table, *m).score))
            .collect();
        println!("{:<22} {}", h.join(" "), scores.join(", "));
    }
    Ok(())
}
