use super::*;
use crate::corpus::{Floor, Utterance};
use crate::models::PriorSpec;
use crate::test_util::{make_uniform, tiny_model, toy_vocab};

fn toy_set() -> (Vocabulary, EvalSet) {
    let v = toy_vocab();
    let pairs: Vec<ContextResponsePair> = [("hi", "hello ."), ("how are you ?", "fine thanks ."), ("bye", "see you .")]
        .iter()
        .enumerate()
        .map(|(i, (c, r))| ContextResponsePair {
            pair_id: format!("t{i}#1"),
            session_id: format!("t{i}"),
            response_index: 1,
            context: vec![Utterance::from_text(c, Floor::A)],
            response: Utterance::from_text(r, Floor::B),
        })
        .collect();
    let set = EvalSet::new(&pairs, &v).unwrap();
    (v, set)
}

#[test]
fn uniform_model_perplexity_is_vocab_size() {
    let (v, set) = toy_set();
    let m = tiny_model(PriorSpec::NONE, 1);
    make_uniform(&m);
    let ppl = perplexity(&m, &set.pairs, 2).unwrap();
    assert!((ppl - v.len() as f64).abs() < 1e-9, "{ppl}");
}

#[test]
fn perplexity_matches_training_report() {
    let (_, set) = toy_set();
    let m = tiny_model(PriorSpec::lgm(2), 2);
    let ppl = perplexity(&m, &set.pairs, 2).unwrap();
    assert_eq!(ppl, per_token_nll(&m, &set.pairs, 2).unwrap().exp());
    assert!(ppl >= 1.0);
}

#[test]
fn selection_probabilities() {
    let (_, set) = toy_set();
    let pi = avg_selection_prob(&tiny_model(PriorSpec::gmm(4), 3), &set.contexts, 2).unwrap();
    assert_eq!(pi.len(), 4);
    assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(avg_selection_prob(&tiny_model(PriorSpec::lgm(1), 3), &set.contexts, 2).unwrap(), vec![1.0]);
    assert!(avg_selection_prob(&tiny_model(PriorSpec::NONE, 3), &set.contexts, 2).is_err());
}

#[test]
fn untrained_weights_are_near_uniform() {
    let (_, set) = toy_set();
    let pi = avg_selection_prob(&tiny_model(PriorSpec::lgm(5), 4), &set.contexts, 2).unwrap();
    assert!(pi.iter().all(|p| (p - 0.2).abs() < 0.05), "{pi:?}");
}

#[test]
fn report_is_deterministic_and_complete() {
    let (v, set) = toy_set();
    let m = tiny_model(PriorSpec::lgm(3), 5);
    let sents: Vec<Vec<String>> = set.references.clone();
    let table = WordEmbeddingTable::from_corpus(&sents, 6, 2, 0).unwrap();
    let opts = EvalOptions { embeddings: Some(&table), ..EvalOptions::default() };
    let mut a = evaluate(&m, &set, &v, &opts).unwrap();
    a.per_variable = per_variable_report(&m, &set, &v, &opts).unwrap();
    let mut b = evaluate(&m, &set, &v, &opts).unwrap();
    b.per_variable = per_variable_report(&m, &set, &v, &opts).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a.per_variable.len(), 3);
    assert!((a.per_variable.iter().map(|r| r.avg_pi).sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(a.scores.emb_average.is_some());
    let table = a.to_table();
    assert_eq!(table.lines().count(), 5);
    let json: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
    for key in
        ["perplexity", "bleu2", "emb_extrema", "emb_average", "emb_greedy", "distinct_1", "distinct_2", "per_variable"]
    {
        assert!(json.get(key).is_some(), "{key}");
    }
}

#[test]
fn external_scorer_hook() {
    struct Len;
    impl ResponseScorer for Len {
        fn name(&self) -> &str {
            "len"
        }
        fn score(&self, _: &[String], h: &[String]) -> Result<f64> {
            Ok(h.len() as f64)
        }
    }
    let (_, set) = toy_set();
    let hyps = set.references.clone();
    let opts = EvalOptions { scorer: Some(&Len), ..EvalOptions::default() };
    let s = score_responses(&hyps, &set, &opts).unwrap();
    assert!((s.reval.unwrap() - 8.0 / 3.0).abs() < 1e-12);
    assert_eq!(s.bleu2, 100.0);
    assert_eq!(score_responses(&hyps, &set, &EvalOptions::default()).unwrap().reval, None);
}
