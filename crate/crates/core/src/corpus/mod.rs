//! Dialogue corpora: normalization, deduplication, session splits,
//! context/response pairs and the vocabulary.

mod io;
mod normalize;
mod vocab;

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use io::{
    read_jsonl, read_sessions, session_from_raw, write_jsonl, write_sessions, RawSession, RawUtterance, RecordError,
};
pub use normalize::{canonicalize, normalize_text, Normalizer, RuleTokenizer, Tokenizer};
pub use vocab::{build_vocab, TokenId, Vocabulary, BOS, EOS, PAD, UNK};

pub const DEFAULT_HISTORY: usize = 5;
pub const DEFAULT_MAX_UTTERANCE_LEN: usize = 40;

/// Speaker identity of an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Floor {
    A,
    B,
}

impl Floor {
    pub fn other(self) -> Floor {
        match self {
            Floor::A => Floor::B,
            Floor::B => Floor::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Floor::A => 0,
            Floor::B => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub floor: Floor,
}

impl Utterance {
    pub fn new(tokens: Vec<String>, floor: Floor) -> Self {
        Self { tokens, floor }
    }

    /// Builds an utterance from already-normalized, space-separated text.
    pub fn from_text(text: &str, floor: Floor) -> Self {
        Self::new(text.split_whitespace().map(str::to_string).collect(), floor)
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn truncated(&self, max_len: usize) -> Utterance {
        Utterance::new(self.tokens.iter().take(max_len).cloned().collect(), self.floor)
    }
}

impl fmt::Display for Utterance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.text())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub session_id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextResponsePair {
    pub pair_id: String,
    pub session_id: String,
    /// Position of the response inside its session.
    pub response_index: usize,
    pub context: Vec<Utterance>,
    pub response: Utterance,
}

/// Drops every session in which strictly more than half of the utterances
/// already occurred in a previously kept session. Utterances of dropped
/// sessions never enter the seen set.
pub fn deduplicate_sessions(sessions: &[DialogueSession]) -> Vec<DialogueSession> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut kept = Vec::with_capacity(sessions.len());
    for session in sessions {
        let texts: Vec<String> = session.utterances.iter().map(Utterance::text).collect();
        let repeated = texts.iter().filter(|t| seen.contains(*t)).count();
        if repeated * 2 > texts.len() {
            continue;
        }
        seen.extend(texts);
        kept.push(session.clone());
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, valid: 0.1, test: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<DialogueSession>,
    pub valid: Vec<DialogueSession>,
    pub test: Vec<DialogueSession>,
}

/// Seeded session-level split. Validation and test sizes are floor-rounded
/// and the remainder goes to training; each split keeps corpus order.
pub fn split_sessions(sessions: &[DialogueSession], ratios: SplitRatios, seed: u64) -> Result<Splits> {
    let total = ratios.train + ratios.valid + ratios.test;
    if (total - 1.0).abs() > 1e-9 || [ratios.train, ratios.valid, ratios.test].iter().any(|r| *r < 0.0) {
        return Err(Error::invalid(format!("split ratios must be non-negative and sum to 1, got {total}")));
    }
    let n = sessions.len();
    if n < 3 {
        return Err(Error::Data(format!("need at least 3 sessions to split, got {n}")));
    }
    let n_valid = (n as f64 * ratios.valid + 1e-9).floor() as usize;
    let n_test = (n as f64 * ratios.test + 1e-9).floor() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(rng::derive_seed(seed, "split")));
    let mut valid_idx = order[..n_valid].to_vec();
    let mut test_idx = order[n_valid..n_valid + n_test].to_vec();
    let mut train_idx = order[n_valid + n_test..].to_vec();
    for idx in [&mut train_idx, &mut valid_idx, &mut test_idx] {
        idx.sort_unstable();
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| sessions[i].clone()).collect::<Vec<_>>();
    Ok(Splits { train: pick(&train_idx), valid: pick(&valid_idx), test: pick(&test_idx) })
}

/// One pair per utterance after the first; contexts hold up to `history`
/// predecessors and every utterance is truncated to `max_len` tokens.
pub fn build_pairs(session: &DialogueSession, history: usize, max_len: usize) -> Vec<ContextResponsePair> {
    let utts: Vec<Utterance> = session.utterances.iter().map(|u| u.truncated(max_len)).collect();
    (1..utts.len())
        .map(|i| ContextResponsePair {
            pair_id: format!("{}#{}", session.session_id, i),
            session_id: session.session_id.clone(),
            response_index: i,
            context: utts[i.saturating_sub(history)..i].to_vec(),
            response: utts[i].clone(),
        })
        .collect()
}

pub fn build_all_pairs(sessions: &[DialogueSession], history: usize, max_len: usize) -> Vec<ContextResponsePair> {
    sessions.iter().flat_map(|s| build_pairs(s, history, max_len)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn session(id: &str, texts: &[&str]) -> DialogueSession {
        DialogueSession {
            session_id: id.to_string(),
            utterances: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Utterance::from_text(t, if i % 2 == 0 { Floor::A } else { Floor::B }))
                .collect(),
        }
    }

    fn ids(sessions: &[DialogueSession]) -> Vec<&str> {
        sessions.iter().map(|s| s.session_id.as_str()).collect()
    }

    #[test]
    fn dedup_drops_full_overlap() {
        let s = [session("s1", &["a", "b"]), session("s2", &["a", "b"])];
        assert_eq!(ids(&deduplicate_sessions(&s)), ["s1"]);
    }

    #[test]
    fn dedup_keeps_exact_half() {
        let s = [session("s1", &["a", "b", "c", "d"]), session("s2", &["a", "b", "x", "y"])];
        assert_eq!(ids(&deduplicate_sessions(&s)), ["s1", "s2"]);
    }

    #[test]
    fn dedup_ignores_dropped_sessions_utterances() {
        // s2 is dropped, so "z" never becomes seen and s3 survives.
        let s = [session("s1", &["a", "b", "c"]), session("s2", &["a", "b", "z"]), session("s3", &["z", "q", "r"])];
        assert_eq!(ids(&deduplicate_sessions(&s)), ["s1", "s3"]);
        assert!(deduplicate_sessions(&[]).is_empty());
    }

    #[test]
    fn split_sizes() {
        let ten: Vec<_> = (0..10).map(|i| session(&format!("s{i}"), &["a", "b"])).collect();
        let s = split_sessions(&ten, SplitRatios::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
        let eleven: Vec<_> = (0..11).map(|i| session(&format!("s{i}"), &["a", "b"])).collect();
        let s = split_sessions(&eleven, SplitRatios::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (9, 1, 1));
        assert!(split_sessions(&ten[..2], SplitRatios::default(), 1).is_err());
        let bad = SplitRatios { train: 0.5, valid: 0.1, test: 0.1 };
        assert!(split_sessions(&ten, bad, 1).is_err());
    }

    #[test]
    fn pairs_counting() {
        let six = session("s", &["a", "b", "c", "d", "e", "f"]);
        let pairs = build_pairs(&six, 5, 40);
        assert_eq!(pairs.len(), 5);
        assert_eq!(pairs.last().unwrap().context.len(), 5);
        let two = build_pairs(&session("t", &["a", "b"]), 5, 40);
        assert_eq!(two.len(), 1);
        assert_eq!(two[0].context.len(), 1);
        assert_eq!(two[0].response.text(), "b");
    }

    #[test]
    fn pairs_truncate_and_window() {
        let s = session("s", &["a b c d", "e f g", "h", "i j", "k", "l", "m n o p q"]);
        let pairs = build_pairs(&s, 2, 2);
        let last = pairs.last().unwrap();
        assert_eq!(last.context.iter().map(Utterance::text).collect::<Vec<_>>(), ["k", "l"]);
        assert_eq!(last.response.text(), "m n");
        assert_eq!(pairs[0].context[0].text(), "a b");
    }

    fn arb_sessions() -> impl Strategy<Value = Vec<DialogueSession>> {
        prop::collection::vec(prop::collection::vec(0u8..6, 2..6), 0..12).prop_map(|raw| {
            raw.into_iter()
                .enumerate()
                .map(|(i, utts)| DialogueSession {
                    session_id: format!("s{i}"),
                    utterances: utts.into_iter().map(|u| Utterance::from_text(&format!("w{u}"), Floor::A)).collect(),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn dedup_is_idempotent(sessions in arb_sessions()) {
            let once = deduplicate_sessions(&sessions);
            prop_assert_eq!(deduplicate_sessions(&once), once);
        }

        #[test]
        fn pair_count_is_n_minus_one(sessions in arb_sessions()) {
            for s in &sessions {
                prop_assert_eq!(build_pairs(s, 5, 40).len(), s.utterances.len() - 1);
            }
        }

        #[test]
        fn splits_partition_input(sessions in arb_sessions(), seed in 0u64..100) {
            prop_assume!(sessions.len() >= 3);
            let s = split_sessions(&sessions, SplitRatios::default(), seed).unwrap();
            let mut all: Vec<String> = s.train.iter().chain(&s.valid).chain(&s.test)
                .map(|x| x.session_id.clone()).collect();
            all.sort();
            let mut expected: Vec<String> = sessions.iter().map(|x| x.session_id.clone()).collect();
            expected.sort();
            prop_assert_eq!(all, expected);
        }
    }
}
