//! A synthetic one-to-many dialogue corpus with a known response
//! distribution per context, plus the matching scripted-teacher script.

use rand::seq::SliceRandom;

use crate::corpus::{
    build_all_pairs, build_vocab, deduplicate_sessions, session_from_raw, split_sessions, ContextResponsePair, Floor,
    Normalizer, RawSession, RawUtterance, SplitRatios, Vocabulary,
};
use crate::error::Result;
use crate::rng::{derive_seed, sample_categorical, seeded};
use crate::teacher::{ScriptEntry, ScriptedContinuation};

const TOPICS: [&str; 10] =
    ["music", "movies", "football", "cooking", "travel", "books", "coffee", "dogs", "painting", "chess"];

const QUESTIONS: [&str; 5] = [
    "do you like {t} ?",
    "what do you think about {t} ?",
    "tell me about {t} .",
    "have you tried {t} lately ?",
    "why do people enjoy {t} ?",
];

/// Eight response frames per question pattern; `{t}` is the topic and
/// `{o}` another topic.
const RESPONSES: [[&str; 8]; 5] = [
    [
        "yes i love {t} .",
        "i really like {t} a lot .",
        "not really , {t} is boring .",
        "sometimes , it depends on my mood .",
        "i like {t} with my friends .",
        "no , i prefer {o} .",
        "{t} is my favorite thing .",
        "i used to like {t} .",
    ],
    [
        "i think {t} is great .",
        "{t} is fun but expensive .",
        "honestly i never think about {t} .",
        "it is better than {o} .",
        "{t} makes me happy .",
        "i have mixed feelings about {t} .",
        "my sister knows more about {t} .",
        "{t} is overrated .",
    ],
    [
        "{t} is something i do every week .",
        "well , {t} takes a lot of practice .",
        "there is not much to say about {t} .",
        "i started {t} last year .",
        "{t} is popular in my town .",
        "i would rather talk about {o} .",
        "my father taught me {t} .",
        "{t} helps me relax .",
    ],
    [
        "yes , i tried {t} yesterday .",
        "no , i have been too busy .",
        "not lately , but i want to .",
        "i tried {o} instead .",
        "yes and it was great .",
        "only once this month .",
        "i tried {t} with my brother .",
        "no , {t} is not for me .",
    ],
    [
        "because {t} is relaxing .",
        "people enjoy {t} because it is social .",
        "i guess {t} is just fun .",
        "maybe because {t} is cheap .",
        "{t} brings people together .",
        "i have no idea .",
        "it is easier than {o} .",
        "because {t} is exciting .",
    ],
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub sessions: usize,
    /// Zipf exponent of the continuation weights.
    pub skew: f64,
    pub seed: u64,
    /// Applies session deduplication in `prepare`. Off by default: repeated
    /// sessions are draws from the response distribution.
    pub dedup: bool,
    pub split: SplitRatios,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { sessions: 300, skew: 1.0, seed: 0, dedup: false, split: SplitRatios::default() }
    }
}

pub struct SyntheticCorpus {
    pub sessions: Vec<RawSession>,
    pub script: Vec<ScriptEntry>,
}

fn fill(frame: &str, topic: &str, other: &str) -> String {
    frame.replace("{t}", topic).replace("{o}", other)
}

/// Number of distinct contexts: question patterns times topics.
pub fn num_contexts() -> usize {
    QUESTIONS.len() * TOPICS.len()
}

/// The script: every context with its eight weighted continuations. The
/// Zipf ranks are shuffled per context so each has its own mode.
pub fn script(skew: f64, seed: u64) -> Vec<ScriptEntry> {
    let mut out = Vec::with_capacity(num_contexts());
    for (q, question) in QUESTIONS.iter().enumerate() {
        for (t, topic) in TOPICS.iter().enumerate() {
            let other = TOPICS[(t + 1 + q) % TOPICS.len()];
            let mut ranks: Vec<usize> = (0..8).collect();
            ranks.shuffle(&mut seeded(derive_seed(seed, &format!("ranks/{q}/{t}"))));
            let continuations = RESPONSES[q]
                .iter()
                .zip(&ranks)
                .map(|(frame, &r)| ScriptedContinuation {
                    text: fill(frame, topic, other),
                    weight: 1.0 / ((r + 1) as f64).powf(skew),
                })
                .collect();
            out.push(ScriptEntry { context: fill(question, topic, other), continuations });
        }
    }
    out
}

/// Two-utterance sessions: a context drawn uniformly, then a response
/// drawn from its continuation distribution.
pub fn generate(spec: &SyntheticSpec) -> SyntheticCorpus {
    let script = script(spec.skew, spec.seed);
    let mut rng = seeded(derive_seed(spec.seed, "sessions"));
    let uniform = vec![1.0; script.len()];
    let sessions = (0..spec.sessions)
        .map(|i| {
            let entry = &script[sample_categorical(&uniform, &mut rng)];
            let weights: Vec<f64> = entry.continuations.iter().map(|c| c.weight).collect();
            let response = &entry.continuations[sample_categorical(&weights, &mut rng)];
            RawSession {
                session_id: format!("syn{i:05}"),
                utterances: vec![
                    RawUtterance { floor: Floor::A, text: entry.context.clone() },
                    RawUtterance { floor: Floor::B, text: response.text.clone() },
                ],
            }
        })
        .collect();
    SyntheticCorpus { sessions, script }
}

/// The synthetic corpus run through normalization, optional
/// deduplication, the split and vocabulary building.
pub struct PreparedCorpus {
    pub train: Vec<ContextResponsePair>,
    pub valid: Vec<ContextResponsePair>,
    pub test: Vec<ContextResponsePair>,
    pub vocab: Vocabulary,
    pub script: Vec<ScriptEntry>,
}

pub fn prepare(spec: &SyntheticSpec) -> Result<PreparedCorpus> {
    let corpus = generate(spec);
    let normalizer = Normalizer::default();
    let sessions: Vec<_> = corpus.sessions.iter().filter_map(|s| session_from_raw(s, &normalizer)).collect();
    let sessions = if spec.dedup { deduplicate_sessions(&sessions) } else { sessions };
    let splits = split_sessions(&sessions, spec.split, spec.seed)?;
    let pairs = |s| build_all_pairs(s, 1, 40);
    let train = pairs(&splits.train);
    let vocab = build_vocab(&train, 1)?;
    Ok(PreparedCorpus { valid: pairs(&splits.valid), test: pairs(&splits.test), train, vocab, script: corpus.script })
}
