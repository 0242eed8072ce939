use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::TokenSequence;
use crate::{Error, Result};

/// Word vectors keyed by surface token.
#[derive(Clone, Debug, Default)]
pub struct Embeddings {
    vectors: HashMap<String, Vec<f64>>,
}

impl Embeddings {
    pub fn new(vectors: HashMap<String, Vec<f64>>) -> Self {
        Self { vectors }
    }

    /// GloVe-style text: `word v1 v2 ...` per line.
    pub fn load_text(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut vectors = HashMap::new();
        for line in text.lines() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let v = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Ingest {
                    path: path.to_path_buf(),
                    reason: format!("bad vector for `{word}`: {e}"),
                })?;
            vectors.insert(word.to_string(), v);
        }
        Ok(Self { vectors })
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// The candidate noun absent from `x` whose embedding is most cosine-similar
/// to the mean embedding of `x`'s tokens. Ties go to the lexicographically
/// smallest word.
pub fn select_keyword(
    x: &TokenSequence,
    embeddings: &Embeddings,
    candidates: &BTreeSet<String>,
) -> Result<String> {
    if x.tokens.is_empty() {
        return Err(Error::Invalid(
            "keyword selection needs a nonempty sentence".into(),
        ));
    }
    let present: BTreeSet<&str> = x.tokens.iter().map(String::as_str).collect();
    let covered: Vec<&[f64]> = x.tokens.iter().filter_map(|t| embeddings.get(t)).collect();
    let dim = covered.first().map(|v| v.len()).unwrap_or(0);
    let mut mean = vec![0.0; dim];
    for v in &covered {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x / covered.len() as f64;
        }
    }
    let mut best: Option<(&str, f64)> = None;
    // BTreeSet iteration is lexicographic, so strict `>` keeps the smallest on ties.
    for w in candidates {
        if present.contains(w.as_str()) {
            continue;
        }
        let Some(e) = embeddings.get(w) else { continue };
        let score = cosine(e, &mean);
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((w, score));
        }
    }
    best.map(|(w, _)| w.to_string())
        .ok_or(Error::NoKeywordCandidate)
}
