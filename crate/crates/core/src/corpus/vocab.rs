use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LabeledSentence, TokenSequence};
use crate::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
/// Number of reserved ids; content tokens start here.
pub const RESERVED: usize = 4;

const RESERVED_TOKENS: [&str; RESERVED] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Bijective token <-> id map. Ids 0..4 are the reserved specials.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds from content tokens in id order (reserved tokens are prepended).
    pub fn from_tokens(content: impl IntoIterator<Item = String>) -> Result<Self> {
        let tokens: Vec<String> = RESERVED_TOKENS
            .iter()
            .map(|t| t.to_string())
            .chain(content)
            .collect();
        Self::from_full_list(tokens)
    }

    fn from_full_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED
            || tokens[..RESERVED]
                .iter()
                .zip(RESERVED_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Invalid(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Frequency-ranked vocabulary with lexicographic tie-break. Tokens seen
    /// fewer than `min_freq` times are dropped; the result has at most
    /// `max_size` entries including the reserved ones.
    pub fn build(data: &[LabeledSentence], max_size: usize, min_freq: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in data {
            for t in &s.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq.max(1) && !RESERVED_TOKENS.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size.saturating_sub(RESERVED));
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
            .expect("ranked tokens are unique")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or UNK.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode_tokens(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Tokens for `ids`, skipping PAD/BOS and stopping at EOS.
    pub fn decode_ids(&self, ids: &[usize]) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            match id {
                EOS => break,
                PAD | BOS => continue,
                _ => out.push(
                    self.token(id)
                        .ok_or(Error::TokenOutOfRange {
                            id,
                            vocab: self.len(),
                        })?
                        .to_string(),
                ),
            }
        }
        Ok(out)
    }

    pub fn encode(&self, s: &LabeledSentence) -> TokenSequence {
        TokenSequence {
            tokens: s.tokens.clone(),
            ids: self.encode_tokens(&s.tokens),
            pos_tags: s.pos_tags.clone(),
        }
    }

    pub fn sequence(
        &self,
        tokens: &[String],
        pos_tags: Option<Vec<String>>,
    ) -> Result<TokenSequence> {
        TokenSequence::new(tokens.to_vec(), self.encode_tokens(tokens), pos_tags)
    }

    /// Sequence from model ids; surface tokens come from the vocabulary.
    pub fn sequence_from_ids(&self, ids: &[usize]) -> Result<TokenSequence> {
        let tokens = ids
            .iter()
            .map(|&id| {
                self.token(id)
                    .map(str::to_string)
                    .ok_or(Error::TokenOutOfRange {
                        id,
                        vocab: self.len(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        TokenSequence::new(tokens, ids.to_vec(), None)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&VocabFile {
            tokens: self.tokens.clone(),
        })
        .expect("vocab serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(s)?;
        Self::from_full_list(file.tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}
