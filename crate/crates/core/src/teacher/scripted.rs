use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, Utterance, Vocabulary, EOS};
use crate::error::{Error, Result};
use crate::teacher::Teacher;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedContinuation {
    pub text: String,
    pub weight: f64,
}

/// One scripted context: the last context utterance (normalized text) and
/// its weighted continuations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub context: String,
    pub continuations: Vec<ScriptedContinuation>,
}

/// A template teacher with an exact sequence-level distribution: each
/// known context maps to weighted continuations and the next-token
/// distribution is the weight of continuations consistent with the prefix.
pub struct ScriptedTeacher {
    name: String,
    vocab: Vocabulary,
    scripts: HashMap<String, Vec<(Vec<TokenId>, f64)>>,
}

impl ScriptedTeacher {
    pub fn new(name: impl Into<String>, vocab: Vocabulary, entries: &[ScriptEntry]) -> Result<Self> {
        let mut scripts = HashMap::new();
        for entry in entries {
            let mut conts = Vec::with_capacity(entry.continuations.len());
            for c in &entry.continuations {
                if !(c.weight > 0.0) {
                    return Err(Error::invalid(format!("continuation weight must be positive in {:?}", entry.context)));
                }
                let tokens: Vec<String> = c.text.split_whitespace().map(str::to_string).collect();
                if tokens.is_empty() {
                    return Err(Error::invalid("empty scripted continuation"));
                }
                conts.push((vocab.encode(&tokens), c.weight));
            }
            if conts.is_empty() {
                return Err(Error::invalid(format!("context {:?} has no continuations", entry.context)));
            }
            scripts.insert(entry.context.clone(), conts);
        }
        Ok(Self { name: name.into(), vocab, scripts })
    }

    pub fn load(name: impl Into<String>, vocab: Vocabulary, path: &Path) -> Result<Self> {
        let entries: Vec<ScriptEntry> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(name, vocab, &entries)
    }

    pub fn contexts(&self) -> usize {
        self.scripts.len()
    }
}

impl Teacher for ScriptedTeacher {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_dist(&self, context: &[Utterance], prefix: &[TokenId]) -> Result<Vec<f64>> {
        let key = context.last().map(Utterance::text).ok_or_else(|| Error::Teacher("empty context".into()))?;
        let conts = self.scripts.get(&key).ok_or_else(|| Error::Teacher(format!("no script for context {key:?}")))?;
        let mut dist = vec![0.0; self.vocab.len()];
        for (ids, w) in conts {
            if ids.starts_with(prefix) {
                let next = ids.get(prefix.len()).copied().unwrap_or(EOS);
                dist[next as usize] += w;
            }
        }
        let total: f64 = dist.iter().sum();
        if total <= 0.0 {
            return Err(Error::Teacher(format!("prefix {prefix:?} leaves the script for {key:?}")));
        }
        dist.iter_mut().for_each(|p| *p /= total);
        Ok(dist)
    }
}
