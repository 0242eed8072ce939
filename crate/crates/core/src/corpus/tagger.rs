use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::LabeledSentence;
use crate::{Error, Result};

pub const NOUN_TAGS: [&str; 4] = ["NN", "NNS", "NNP", "NNPS"];

pub fn is_noun_tag(tag: &str) -> bool {
    NOUN_TAGS.contains(&tag)
}

/// Assigns one Penn-style POS tag per token.
pub trait PosTagger: Send + Sync {
    fn tag(&self, tokens: &[String]) -> Vec<String>;
}

/// Word -> most frequent tag lookup. Built from gold-tagged sentences or
/// loaded from a `word<TAB>tag` lexicon produced by an external tagger.
#[derive(Clone, Debug, Default)]
pub struct LexiconTagger {
    lexicon: HashMap<String, String>,
    fallback: String,
}

impl LexiconTagger {
    pub fn from_gold(data: &[LabeledSentence]) -> Self {
        let mut counts: HashMap<&str, BTreeMap<&str, usize>> = HashMap::new();
        for s in data {
            if let Some(tags) = &s.pos_tags {
                for (w, t) in s.tokens.iter().zip(tags) {
                    *counts.entry(w).or_default().entry(t).or_default() += 1;
                }
            }
        }
        let lexicon = counts
            .into_iter()
            .map(|(w, tags)| {
                // highest count, ties to the lexicographically smallest tag
                let best = tags
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                    .expect("nonempty");
                (w.to_string(), best.0.to_string())
            })
            .collect();
        Self {
            lexicon,
            fallback: "X".to_string(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut lexicon = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (w, t) = line.split_once('\t').ok_or_else(|| Error::Ingest {
                path: path.to_path_buf(),
                reason: format!("line {} is not `word<TAB>tag`", n + 1),
            })?;
            lexicon.insert(w.to_string(), t.trim().to_string());
        }
        Ok(Self {
            lexicon,
            fallback: "X".to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<_> = self.lexicon.iter().collect();
        entries.sort();
        let body: String = entries
            .into_iter()
            .map(|(w, t)| format!("{w}\t{t}\n"))
            .collect();
        std::fs::write(path, body)?;
        Ok(())
    }

    /// Every word carrying a noun tag.
    pub fn nouns(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .lexicon
            .iter()
            .filter(|(_, t)| is_noun_tag(t))
            .map(|(w, _)| w.clone())
            .collect();
        out.sort();
        out
    }
}

impl PosTagger for LexiconTagger {
    fn tag(&self, tokens: &[String]) -> Vec<String> {
        tokens
            .iter()
            .map(|t| {
                self.lexicon
                    .get(t)
                    .cloned()
                    .unwrap_or_else(|| self.fallback.clone())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_tag_wins() {
        let mk = |w: &[&str], t: &[&str]| LabeledSentence {
            tokens: w.iter().map(|s| s.to_string()).collect(),
            pos_tags: Some(t.iter().map(|s| s.to_string()).collect()),
            attributes: Default::default(),
        };
        let tagger = LexiconTagger::from_gold(&[
            mk(&["run", "fast"], &["VB", "RB"]),
            mk(&["run"], &["NN"]),
            mk(&["run"], &["VB"]),
        ]);
        assert_eq!(
            tagger.tag(&["run".into(), "fast".into(), "zzz".into()]),
            ["VB", "RB", "X"]
        );
    }
}
