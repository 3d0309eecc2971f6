//! Raw dialogue records to context/response pairs: normalization, session
//! deduplication, a seeded split and the vocabulary.
//!
//! cargo run --example preprocess_corpus

use multiref::corpus::{
    build_all_pairs, build_vocab, deduplicate_sessions, normalize_text, session_from_raw, split_sessions, Floor,
    Normalizer, RawSession, RawUtterance, SplitRatios,
};

fn raw(id: &str, turns: &[&str]) -> RawSession {
    RawSession {
        session_id: id.to_string(),
        utterances: turns
            .iter()
            .enumerate()
            .map(|(i, t)| RawUtterance { floor: if i % 2 == 0 { Floor::A } else { Floor::B }, text: t.to_string() })
            .collect(),
    }
}

fn main() -> multiref::Result<()> {
    let u = normalize_text("Hello,   WORLD!! I'm here...", Floor::A)?;
    println!("normalized: {:?}", u.tokens);

    let sessions = [
        raw("s1", &["Hi there!", "Hey, how are you?", "Fine, thanks."]),
        raw("s2", &["Hi there!", "Hey, how are you?", "Good, you?"]),
        raw("s3", &["What's new?", "Not much.", "Same here."]),
        raw("s4", &["Any plans tonight?", "Going to a movie.", "Which one?", "A comedy."]),
        raw("s5", &["Do you like tea?", "I prefer coffee."]),
        raw("s6", &["Nice weather today.", "Yes, very sunny!"]),
    ];
    let normalizer = Normalizer::default();
    let cleaned: Vec<_> = sessions.iter().filter_map(|s| session_from_raw(s, &normalizer)).collect();
    let kept = deduplicate_sessions(&cleaned);
    println!("{} sessions, {} after deduplication", cleaned.len(), kept.len());

    let splits = split_sessions(&kept, SplitRatios { train: 0.6, valid: 0.2, test: 0.2 }, 7)?;
    let train = build_all_pairs(&splits.train, 5, 40);
    println!(
        "split sessions: train {} valid {} test {}; {} training pairs",
        splits.train.len(),
        splits.valid.len(),
        splits.test.len(),
        train.len()
    );
    for p in &train {
        let ctx: Vec<String> = p.context.iter().map(|u| u.text()).collect();
        println!("  {:<8} {} => {}", p.pair_id, ctx.join(" | "), p.response.text());
    }
    let vocab = build_vocab(&train, 1)?;
    println!("vocabulary: {} entries, hash {}", vocab.len(), &vocab.hash()[..12]);
    Ok(())
}
