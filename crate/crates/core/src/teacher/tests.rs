use super::*;
use crate::corpus::{Floor, UNK};

fn vocab(words: &[&str]) -> Vocabulary {
    Vocabulary::from_counts(words.iter().map(|w| (w.to_string(), 1))).unwrap()
}

/// Emits one-hot on a fixed token, then end-of-sequence.
struct OneHot {
    vocab: Vocabulary,
    token: TokenId,
}

impl Teacher for OneHot {
    fn name(&self) -> &str {
        "one-hot"
    }
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }
    fn next_token_dist(&self, _: &[Utterance], prefix: &[TokenId]) -> Result<Vec<f64>> {
        let mut d = vec![0.0; self.vocab.len()];
        d[if prefix.is_empty() { self.token } else { EOS } as usize] = 1.0;
        Ok(d)
    }
}

/// Fixed first-step distribution over the non-reserved words, then EOS.
struct FirstStep {
    vocab: Vocabulary,
    first: Vec<f64>,
}

impl Teacher for FirstStep {
    fn name(&self) -> &str {
        "first-step"
    }
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }
    fn next_token_dist(&self, _: &[Utterance], prefix: &[TokenId]) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            Ok(self.first.clone())
        } else {
            let mut d = vec![0.0; self.vocab.len()];
            d[EOS as usize] = 1.0;
            Ok(d)
        }
    }
}

struct Broken(Vocabulary);

impl Teacher for Broken {
    fn name(&self) -> &str {
        "broken"
    }
    fn vocabulary(&self) -> &Vocabulary {
        &self.0
    }
    fn next_token_dist(&self, _: &[Utterance], _: &[TokenId]) -> Result<Vec<f64>> {
        Ok(vec![0.5; self.0.len()])
    }
}

fn ctx() -> Vec<Utterance> {
    vec![Utterance::from_text("how are you ?", Floor::A)]
}

fn script_teacher() -> ScriptedTeacher {
    let v = vocab(&["how", "are", "you", "?", "fine", "good", "thanks", "."]);
    let entries = vec![ScriptEntry {
        context: "how are you ?".into(),
        continuations: vec![
            ScriptedContinuation { text: "fine thanks .".into(), weight: 3.0 },
            ScriptedContinuation { text: "fine .".into(), weight: 1.0 },
            ScriptedContinuation { text: "good".into(), weight: 1.0 },
        ],
    }];
    ScriptedTeacher::new("script", v, &entries).unwrap()
}

fn pairs(n: usize) -> Vec<ContextResponsePair> {
    (0..n)
        .map(|i| ContextResponsePair {
            pair_id: format!("s{i}#1"),
            session_id: format!("s{i}"),
            response_index: 1,
            context: ctx(),
            response: Utterance::from_text("fine", Floor::B),
        })
        .collect()
}

#[test]
fn one_hot_teacher_gives_single_token() {
    let v = vocab(&["yes", "no"]);
    let t = OneHot { token: v.id("no"), vocab: v };
    let u = sample_response(&t, &ctx(), 0.95, 40, &mut seeded(1)).unwrap();
    assert_eq!(u.tokens, vec!["no"]);
    assert_eq!(u.floor, Floor::B);
}

#[test]
fn invalid_teacher_distribution_propagates() {
    let t = Broken(vocab(&["x"]));
    assert!(sample_response(&t, &ctx(), 0.95, 40, &mut seeded(1)).is_err());
}

#[test]
fn max_len_caps_response() {
    struct Forever(Vocabulary);
    impl Teacher for Forever {
        fn name(&self) -> &str {
            "forever"
        }
        fn vocabulary(&self) -> &Vocabulary {
            &self.0
        }
        fn next_token_dist(&self, _: &[Utterance], _: &[TokenId]) -> Result<Vec<f64>> {
            let mut d = vec![0.0; self.0.len()];
            d[4] = 1.0;
            Ok(d)
        }
    }
    let u = sample_response(&Forever(vocab(&["la"])), &ctx(), 0.95, 7, &mut seeded(0)).unwrap();
    assert_eq!(u.len(), 7);
}

#[test]
fn scripted_marginals_follow_prefix() {
    let t = script_teacher();
    let v = t.vocabulary().clone();
    let d0 = t.next_token_dist(&ctx(), &[]).unwrap();
    assert!((d0[v.id("fine") as usize] - 0.8).abs() < 1e-12);
    assert!((d0[v.id("good") as usize] - 0.2).abs() < 1e-12);
    let d1 = t.next_token_dist(&ctx(), &[v.id("fine")]).unwrap();
    assert!((d1[v.id("thanks") as usize] - 0.75).abs() < 1e-12);
    assert!((d1[v.id(".") as usize] - 0.25).abs() < 1e-12);
    let d2 = t.next_token_dist(&ctx(), &[v.id("good")]).unwrap();
    assert_eq!(d2[EOS as usize], 1.0);
    assert!(t.next_token_dist(&ctx(), &[v.id("thanks")]).is_err());
    let unknown = vec![Utterance::from_text("what ?", Floor::A)];
    assert!(matches!(t.next_token_dist(&unknown, &[]), Err(Error::Teacher(_))));
}

#[test]
fn scripted_sampling_is_reproducible() {
    let t = script_teacher();
    let draw = |seed| {
        let mut rng = seeded(seed);
        (0..6).map(|_| sample_response(&t, &ctx(), 0.95, 40, &mut rng).unwrap().text()).collect::<Vec<_>>()
    };
    let a = draw(11);
    assert_eq!(a, draw(11));
    let allowed = ["fine thanks .", "fine .", "good"];
    assert!(a.iter().all(|s| allowed.contains(&s.as_str())));
}

#[test]
fn first_step_frequencies_match_nucleus() {
    let v = vocab(&["a", "b", "c", "d"]);
    let mut first = vec![0.0; v.len()];
    for (w, p) in [("a", 0.5), ("b", 0.3), ("c", 0.15), ("d", 0.05)] {
        first[v.id(w) as usize] = p;
    }
    let target = nucleus_filter(&first, 0.9).unwrap();
    let t = FirstStep { vocab: v.clone(), first };
    let mut rng = seeded(5);
    let draws = 100_000;
    let mut counts = vec![0usize; v.len()];
    for _ in 0..draws {
        let u = sample_response(&t, &ctx(), 0.9, 40, &mut rng).unwrap();
        counts[v.id(&u.tokens[0]) as usize] += 1;
    }
    assert_eq!(counts[v.id("d") as usize], 0);
    let tv: f64 = counts.iter().zip(&target).map(|(&c, &p)| (c as f64 / draws as f64 - p).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.01, "tv {tv}");
}

#[test]
fn dataset_shapes_and_weights() {
    let t = script_teacher();
    let ps = pairs(10);
    let d = build_multiref_dataset(&ps, &t, &HypothesisSettings::new(5, false, 3)).unwrap();
    assert_eq!(d.len(), 10);
    assert!(d.iter().all(|e| e.references.len() == 5));
    assert!(d.iter().all(|e| (e.total_weight() - 1.0).abs() < 1e-12));
    assert!(d.iter().flat_map(|e| &e.references).all(|r| r.source == RefSource::Hypothesis));

    let mixed = build_multiref_dataset(&ps, &t, &HypothesisSettings::new(1, true, 3)).unwrap();
    for e in &mixed {
        assert_eq!(e.references.len(), 2);
        assert!(e.references.iter().all(|r| r.weight == 0.5));
        assert_eq!(e.references[1].source, RefSource::GroundTruth);
    }
    assert_eq!(d, build_multiref_dataset(&ps, &t, &HypothesisSettings::new(5, false, 3)).unwrap());
    assert!(build_multiref_dataset(&ps, &t, &HypothesisSettings::new(0, false, 3)).is_err());
}

#[test]
fn failing_contexts_are_skipped() {
    let t = script_teacher();
    let mut ps = pairs(3);
    ps[1].context = vec![Utterance::from_text("unknown", Floor::A)];
    let d = build_multiref_dataset(&ps, &t, &HypothesisSettings::new(2, false, 0)).unwrap();
    assert_eq!(d.len(), 2);
    assert!(d.iter().all(|e| e.pair_id != ps[1].pair_id));
}

#[test]
fn distill_targets_per_position() {
    let t = script_teacher();
    let v = t.vocabulary().clone();
    let reference = v.encode(&["fine".into(), "thanks".into(), ".".into()]);
    let targets = token_distill_targets(&t, &v, &ctx(), &reference).unwrap();
    assert_eq!(targets.len(), 3);
    assert_eq!(targets[2][v.id(".") as usize], 1.0);

    let other = vocab(&["fine"]);
    assert!(matches!(token_distill_targets(&t, &other, &ctx(), &reference), Err(Error::VocabMismatch(_))));
}

#[test]
fn one_hot_distill_targets_follow_script() {
    let v = vocab(&["yes", "no"]);
    let t = OneHot { token: v.id("yes"), vocab: v.clone() };
    let targets = token_distill_targets(&t, &v, &ctx(), &[v.id("yes")]).unwrap();
    assert_eq!(targets[0][v.id("yes") as usize], 1.0);
    assert_eq!(targets[0][UNK as usize], 0.0);
}

#[test]
fn multiref_file_round_trip() {
    let t = script_teacher();
    let d = build_multiref_dataset(&pairs(4), &t, &HypothesisSettings::new(3, true, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hyps.jsonl");
    write_multiref(&path, &d).unwrap();
    assert_eq!(read_multiref(&path).unwrap(), d);
    let line = std::fs::read_to_string(&path).unwrap();
    assert!(line.lines().next().unwrap().contains("\"source\":\"hypothesis\""));
}
