use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::{ContextResponsePair, Utterance};
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;

const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Token/id mapping with four reserved entries at ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from `(token, count)` entries, kept in the given order.
    pub fn from_counts(entries: impl IntoIterator<Item = (String, u64)>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut counts = vec![0; RESERVED.len()];
        for (token, count) in entries {
            if RESERVED.contains(&token.as_str()) {
                continue;
            }
            tokens.push(token);
            counts.push(count);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, counts, index })
    }

    /// Counts tokens over distinct utterances and keeps those seen at least
    /// `min_count` times, ordered by count descending then lexicographically.
    pub fn build<'a>(utterances: impl IntoIterator<Item = &'a Utterance>, min_count: u64) -> Result<Self> {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for utt in utterances {
            for tok in &utt.tokens {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut entries: Vec<(String, u64)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).map(|(t, c)| (t.to_string(), c)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_counts(entries)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(RESERVED[UNK as usize])
    }

    pub fn count(&self, id: TokenId) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `token<TAB>id<TAB>count` lines, reserved entries first.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, (t, c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            out.push_str(&format!("{t}\t{i}\t{c}\n"));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [token, id, count] = fields[..] else {
                return Err(Error::Data(format!("vocab line {}: expected 3 fields", lineno + 1)));
            };
            let id: usize = id.parse().map_err(|_| Error::Data(format!("vocab line {}: bad id", lineno + 1)))?;
            let count: u64 = count.parse().map_err(|_| Error::Data(format!("vocab line {}: bad count", lineno + 1)))?;
            if id != entries.len() {
                return Err(Error::Data(format!("vocab line {}: ids must be dense and ordered", lineno + 1)));
            }
            entries.push((token.to_string(), count));
        }
        if entries.len() < RESERVED.len() || entries.iter().zip(RESERVED).any(|(e, r)| e.0 != r) {
            return Err(Error::Data("vocab file must start with the reserved entries".into()));
        }
        Self::from_counts(entries.into_iter().skip(RESERVED.len()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_tsv())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }

    /// SHA-256 over the token list; stable identity for checkpoints.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}

/// Builds the vocabulary from training pairs, counting each session
/// utterance once even though it recurs across overlapping contexts.
pub fn build_vocab(pairs: &[ContextResponsePair], min_count: u64) -> Result<Vocabulary> {
    let mut seen: HashSet<(&str, usize)> = HashSet::new();
    let mut utterances = Vec::new();
    for pair in pairs {
        let first = pair.response_index - pair.context.len();
        for (offset, utt) in pair.context.iter().enumerate() {
            if seen.insert((pair.session_id.as_str(), first + offset)) {
                utterances.push(utt);
            }
        }
        if seen.insert((pair.session_id.as_str(), pair.response_index)) {
            utterances.push(&pair.response);
        }
    }
    Vocabulary::build(utterances, min_count)
}
