use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    Average,
    Extrema,
    Greedy,
}

/// A similarity score in [-1, 1]. `missing` marks a side without any
/// in-vocabulary token, which scores 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub score: f64,
    pub missing: bool,
}

/// Dense word vectors of one dimension. Tokens absent from the table are
/// skipped when scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a).max(NORM_FLOOR) * norm(b).max(NORM_FLOOR))
}

impl WordEmbeddingTable {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        for (token, v) in &vectors {
            if v.len() != dim {
                return Err(Error::Data(format!("vector for {token:?} has {} dimensions, expected {dim}", v.len())));
            }
            if !(norm(v) > NORM_FLOOR) {
                return Err(Error::Data(format!("vector for {token:?} has zero norm")));
            }
        }
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Parses `token v1 ... vd` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let v: Vec<f64> = parts
                .map(|x| x.parse::<f64>().map_err(|e| Error::Data(format!("line {}: {e}", i + 1))))
                .collect::<Result<_>>()?;
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(Error::Data(format!("line {}: expected {d} values, found {}", i + 1, v.len())));
            }
            vectors.insert(token.to_string(), v);
        }
        Self::new(dim.ok_or_else(|| Error::Data("embedding file is empty".into()))?, vectors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Lines sorted by token, so the output is reproducible.
    pub fn to_text(&self) -> String {
        let sorted: BTreeMap<&String, &Vec<f64>> = self.vectors.iter().collect();
        let mut out = String::new();
        for (token, v) in sorted {
            out.push_str(token);
            for x in v {
                write!(out, " {x:.6}").expect("write to string");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    /// Count-based vectors trained on tokenized sentences: positive PMI of
    /// co-occurrences within `window` tokens, randomly projected to `dim`.
    pub fn from_corpus<S: AsRef<str>>(sentences: &[Vec<S>], dim: usize, window: usize, seed: u64) -> Result<Self> {
        let tokens: Vec<&str> =
            sentences.iter().flatten().map(AsRef::as_ref).collect::<BTreeSet<_>>().into_iter().collect();
        let id: HashMap<&str, usize> = tokens.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        let mut pair_counts: HashMap<(usize, usize), f64> = HashMap::new();
        let mut marginal = vec![0.0; tokens.len()];
        let mut total = 0.0;
        for s in sentences {
            for (i, a) in s.iter().enumerate() {
                for b in s.iter().skip(i + 1).take(window) {
                    let (x, y) = (id[a.as_ref()], id[b.as_ref()]);
                    for (p, q) in [(x, y), (y, x)] {
                        *pair_counts.entry((p, q)).or_insert(0.0) += 1.0;
                        marginal[p] += 1.0;
                        total += 1.0;
                    }
                }
            }
        }
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = seeded(seed);
        let projection: Vec<Vec<f64>> =
            (0..tokens.len()).map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect()).collect();
        let mut rows = vec![vec![0.0; dim]; tokens.len()];
        let mut keys: Vec<&(usize, usize)> = pair_counts.keys().collect();
        keys.sort();
        for key in keys {
            let (p, q) = *key;
            let pmi = (pair_counts[key] * total / (marginal[p] * marginal[q])).ln();
            if pmi > 0.0 {
                for (r, w) in rows[p].iter_mut().zip(&projection[q]) {
                    *r += pmi * w;
                }
            }
        }
        let vectors =
            tokens.iter().zip(rows).filter(|(_, v)| norm(v) > NORM_FLOOR).map(|(t, v)| (t.to_string(), v)).collect();
        Self::new(dim, vectors)
    }

    fn lookup<'a, S: AsRef<str>>(&'a self, tokens: &[S]) -> Vec<&'a [f64]> {
        tokens.iter().filter_map(|t| self.get(t.as_ref())).collect()
    }
}

fn mean_vector(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for v in vs {
        for (o, x) in out.iter_mut().zip(*v) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= vs.len() as f64);
    out
}

fn extrema_vector(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|d| vs.iter().map(|v| v[d]).fold(0.0, |best: f64, x| if x.abs() > best.abs() { x } else { best }))
        .collect()
}

fn greedy_direction(from: &[&[f64]], to: &[&[f64]]) -> f64 {
    from.iter().map(|a| to.iter().map(|b| cosine(a, b)).fold(f64::NEG_INFINITY, f64::max)).sum::<f64>()
        / from.len() as f64
}

/// Embedding-based similarity between a hypothesis and a reference.
pub fn embedding_similarity<S: AsRef<str>, T: AsRef<str>>(
    hyp: &[S],
    reference: &[T],
    table: &WordEmbeddingTable,
    mode: SimilarityMode,
) -> Similarity {
    let h = table.lookup(hyp);
    let r = table.lookup(reference);
    if h.is_empty() || r.is_empty() {
        return Similarity { score: 0.0, missing: true };
    }
    let d = table.dim();
    let score = match mode {
        SimilarityMode::Average => cosine(&mean_vector(&h, d), &mean_vector(&r, d)),
        SimilarityMode::Extrema => cosine(&extrema_vector(&h, d), &extrema_vector(&r, d)),
        SimilarityMode::Greedy => 0.5 * (greedy_direction(&h, &r) + greedy_direction(&r, &h)),
    };
    Similarity { score, missing: false }
}
