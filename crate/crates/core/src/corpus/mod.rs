//! Corpus ingestion, vocabulary, attribute schema, bag-of-words targets and
//! keyword selection.

mod keyword;
pub mod synthetic;
mod tagger;
mod vocab;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use keyword::{select_keyword, Embeddings};
pub use tagger::{is_noun_tag, LexiconTagger, PosTagger, NOUN_TAGS};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

use crate::{Error, Result};

pub const DEFAULT_MAX_LEN: usize = 25;

/// A numericalized sentence. `ids` never contain BOS/EOS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_tags: Option<Vec<String>>,
}

impl TokenSequence {
    pub fn new(
        tokens: Vec<String>,
        ids: Vec<usize>,
        pos_tags: Option<Vec<String>>,
    ) -> Result<Self> {
        if tokens.len() != ids.len() {
            return Err(Error::Invalid(format!(
                "{} tokens but {} ids",
                tokens.len(),
                ids.len()
            )));
        }
        if let Some(tags) = &pos_tags {
            if tags.len() != tokens.len() {
                return Err(Error::Invalid(format!(
                    "{} tokens but {} POS tags",
                    tokens.len(),
                    tags.len()
                )));
            }
        }
        Ok(Self {
            tokens,
            ids,
            pos_tags,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AttributeKind {
    Categorical { classes: Vec<String> },
    Scalar { min: f64, max: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelerMode {
    ExternalClassifier,
    DirectExtraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub kind: AttributeKind,
    pub labeler_mode: LabelerMode,
    /// Scalar values are divided by this before regression. 1.0 for categorical.
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl AttributeDef {
    pub fn categorical(name: &str, classes: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: AttributeKind::Categorical {
                classes: classes.iter().map(|c| c.to_string()).collect(),
            },
            labeler_mode: LabelerMode::ExternalClassifier,
            scale: 1.0,
        }
    }

    /// Sentence length in tokens, extracted directly and normalized by `max_len`.
    pub fn length(max_len: usize) -> Self {
        Self {
            name: "length".to_string(),
            kind: AttributeKind::Scalar {
                min: 1.0,
                max: max_len as f64,
            },
            labeler_mode: LabelerMode::DirectExtraction,
            scale: max_len as f64,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.kind {
            AttributeKind::Categorical { classes } => Some(classes.len()),
            AttributeKind::Scalar { .. } => None,
        }
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        match &self.kind {
            AttributeKind::Categorical { classes } => classes.iter().position(|c| c == name),
            AttributeKind::Scalar { .. } => None,
        }
    }

    pub fn class_name(&self, index: usize) -> Option<&str> {
        match &self.kind {
            AttributeKind::Categorical { classes } => classes.get(index).map(String::as_str),
            AttributeKind::Scalar { .. } => None,
        }
    }

    /// Predictor output width.
    pub fn output_dim(&self) -> usize {
        self.num_classes().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            AttributeKind::Categorical { classes } if classes.len() < 2 => {
                Err(Error::Invalid(format!(
                    "categorical attribute `{}` needs at least 2 classes",
                    self.name
                )))
            }
            AttributeKind::Scalar { min, max }
                if !(min.is_finite() && max.is_finite() && min <= max) =>
            {
                Err(Error::Invalid(format!(
                    "scalar attribute `{}` has an invalid range",
                    self.name
                )))
            }
            _ if !(self.scale.is_finite() && self.scale > 0.0) => Err(Error::Invalid(format!(
                "attribute `{}` has a non-positive scale",
                self.name
            ))),
            _ => Ok(()),
        }
    }

    /// Checks that `value` fits this attribute.
    pub fn check_value(&self, value: &AttributeValue) -> Result<()> {
        match (&self.kind, value) {
            (AttributeKind::Categorical { classes }, AttributeValue::Class(c))
                if *c < classes.len() =>
            {
                Ok(())
            }
            (AttributeKind::Scalar { min, max }, AttributeValue::Scalar(v))
                if *v >= *min && *v <= *max =>
            {
                Ok(())
            }
            _ => Err(Error::InvalidClass {
                attribute: self.name.clone(),
                value: format!("{value:?}"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub attributes: Vec<AttributeDef>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<AttributeDef>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Invalid("schema needs at least one attribute".into()));
        }
        let mut seen = BTreeSet::new();
        for a in &attributes {
            a.validate()?;
            if !seen.insert(a.name.as_str()) {
                return Err(Error::Invalid(format!("duplicate attribute `{}`", a.name)));
            }
        }
        Ok(Self { attributes })
    }

    /// Binary sentiment plus direct-extraction length.
    pub fn sentiment_and_length(max_len: usize) -> Self {
        Self::new(vec![
            AttributeDef::categorical("sentiment", &["negative", "positive"]),
            AttributeDef::length(max_len),
        ])
        .expect("static schema is valid")
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&AttributeDef> {
        self.attributes
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn position(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    /// The single categorical attribute labeled by source file.
    pub fn style_attribute(&self) -> Result<&AttributeDef> {
        self.attributes
            .iter()
            .find(|a| a.num_classes().is_some())
            .ok_or_else(|| Error::Invalid("schema has no categorical attribute".into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AttributeValue {
    Class(usize),
    Scalar(f64),
}

impl AttributeValue {
    pub fn as_class(self) -> Option<usize> {
        match self {
            AttributeValue::Class(c) => Some(c),
            AttributeValue::Scalar(_) => None,
        }
    }

    pub fn as_scalar(self) -> Option<f64> {
        match self {
            AttributeValue::Scalar(v) => Some(v),
            AttributeValue::Class(_) => None,
        }
    }
}

/// A surface sentence with its attribute labels. Numericalize with
/// [`Vocabulary::encode`].
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    pub pos_tags: Option<Vec<String>>,
    pub attributes: BTreeMap<String, AttributeValue>,
}

impl LabeledSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn class_of(&self, attribute: &str) -> Option<usize> {
        self.attributes.get(attribute).and_then(|v| v.as_class())
    }

    pub fn to_json(&self, schema: &AttributeSchema) -> Value {
        let mut attrs = serde_json::Map::new();
        for def in &schema.attributes {
            if let Some(v) = self.attributes.get(&def.name) {
                let jv = match v {
                    AttributeValue::Class(c) => json!(def.class_name(*c).unwrap_or_default()),
                    AttributeValue::Scalar(s) => json!(s),
                };
                attrs.insert(def.name.clone(), jv);
            }
        }
        let mut obj = json!({ "tokens": self.tokens, "attributes": attrs });
        if let Some(pos) = &self.pos_tags {
            obj["pos"] = json!(pos);
        }
        obj
    }

    pub fn from_json(value: &Value, schema: &AttributeSchema) -> Result<Self> {
        let bad = |what: &str| Error::Invalid(format!("processed corpus record: {what}"));
        let tokens: Vec<String> = serde_json::from_value(
            value
                .get("tokens")
                .cloned()
                .ok_or_else(|| bad("missing tokens"))?,
        )?;
        let pos_tags: Option<Vec<String>> = match value.get("pos") {
            Some(Value::Null) | None => None,
            Some(p) => Some(serde_json::from_value(p.clone())?),
        };
        let mut attributes = BTreeMap::new();
        if let Some(Value::Object(map)) = value.get("attributes") {
            for (name, v) in map {
                let def = schema.get(name)?;
                let parsed = match (&def.kind, v) {
                    (AttributeKind::Categorical { .. }, Value::String(s)) => {
                        AttributeValue::Class(def.class_index(s).ok_or_else(|| {
                            Error::InvalidClass {
                                attribute: name.clone(),
                                value: s.clone(),
                            }
                        })?)
                    }
                    (AttributeKind::Categorical { .. }, Value::Number(n)) => {
                        AttributeValue::Class(n.as_u64().ok_or_else(|| bad("class index"))? as usize)
                    }
                    (AttributeKind::Scalar { .. }, Value::Number(n)) => {
                        AttributeValue::Scalar(n.as_f64().ok_or_else(|| bad("scalar"))?)
                    }
                    _ => return Err(bad("attribute value type")),
                };
                def.check_value(&parsed)?;
                attributes.insert(name.clone(), parsed);
            }
        }
        if let Some(p) = &pos_tags {
            if p.len() != tokens.len() {
                return Err(bad("pos length differs from tokens"));
            }
        }
        Ok(Self {
            tokens,
            pos_tags,
            attributes,
        })
    }
}

/// Fills direct-extraction attributes from the sentence itself.
pub fn extract_direct_attributes(
    tokens: &[String],
    schema: &AttributeSchema,
    into: &mut BTreeMap<String, AttributeValue>,
) {
    for def in &schema.attributes {
        if def.labeler_mode == LabelerMode::DirectExtraction && def.name == "length" {
            into.insert(
                def.name.clone(),
                AttributeValue::Scalar(tokens.len() as f64),
            );
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub sentences: Vec<LabeledSentence>,
    pub skipped_empty: usize,
    pub truncated: usize,
}

/// Loads one whitespace-tokenized sentence per line from each class file.
/// Files are read in the schema's class order regardless of map order.
pub fn load_style_corpus(
    paths: &BTreeMap<String, PathBuf>,
    schema: &AttributeSchema,
    max_len: usize,
) -> Result<LoadReport> {
    let style = schema.style_attribute()?;
    let mut ordered: Vec<(usize, &String, &PathBuf)> = Vec::new();
    for (class, path) in paths {
        let idx = style
            .class_index(class)
            .ok_or_else(|| Error::InvalidClass {
                attribute: style.name.clone(),
                value: class.clone(),
            })?;
        ordered.push((idx, class, path));
    }
    ordered.sort_by_key(|(i, _, _)| *i);

    let mut report = LoadReport::default();
    for (class_idx, _, path) in ordered {
        let file = fs::File::open(path).map_err(|e| Error::Ingest {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::Ingest {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            let mut tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
            if tokens.is_empty() {
                report.skipped_empty += 1;
                continue;
            }
            if tokens.len() > max_len {
                tokens.truncate(max_len);
                report.truncated += 1;
            }
            let mut attributes = BTreeMap::new();
            attributes.insert(style.name.clone(), AttributeValue::Class(class_idx));
            extract_direct_attributes(&tokens, schema, &mut attributes);
            report.sentences.push(LabeledSentence {
                tokens,
                pos_tags: None,
                attributes,
            });
        }
    }
    if report.skipped_empty > 0 {
        log::warn!("skipped {} empty lines", report.skipped_empty);
    }
    if report.truncated > 0 {
        log::warn!("truncated {} lines to {max_len} tokens", report.truncated);
    }
    Ok(report)
}

/// Loads `<dir>/<split>.<class-index>` files, e.g. `train.0`, `train.1`.
pub fn load_split(
    dir: &Path,
    split: &str,
    schema: &AttributeSchema,
    max_len: usize,
) -> Result<LoadReport> {
    let style = schema.style_attribute()?;
    let n = style.num_classes().unwrap_or(0);
    let paths = (0..n)
        .map(|i| {
            let name = style.class_name(i).expect("index in range").to_string();
            (name, dir.join(format!("{split}.{i}")))
        })
        .collect();
    load_style_corpus(&paths, schema, max_len)
}

pub fn write_raw_split(
    dir: &Path,
    split: &str,
    data: &[LabeledSentence],
    schema: &AttributeSchema,
) -> Result<()> {
    let style = schema.style_attribute()?;
    fs::create_dir_all(dir)?;
    for class in 0..style.num_classes().unwrap_or(0) {
        let mut out = BufWriter::new(fs::File::create(dir.join(format!("{split}.{class}")))?);
        for s in data
            .iter()
            .filter(|s| s.class_of(&style.name) == Some(class))
        {
            writeln!(out, "{}", s.tokens.join(" "))?;
        }
        out.flush()?;
    }
    Ok(())
}

pub fn write_jsonl(path: &Path, data: &[LabeledSentence], schema: &AttributeSchema) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for s in data {
        serde_json::to_writer(&mut out, &s.to_json(schema))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path, schema: &AttributeSchema) -> Result<Vec<LabeledSentence>> {
    let file = fs::File::open(path).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(LabeledSentence::from_json(
            &serde_json::from_str(&line)?,
            schema,
        )?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BowMode {
    /// Every word of the sentence.
    AllWords,
    /// Only tokens tagged as nouns.
    NounsOnly,
    /// Only the supplied keywords.
    CustomKeywords,
    /// No content constraint.
    None,
}

impl std::str::FromStr for BowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-words" | "cont-1" => Ok(BowMode::AllWords),
            "nouns-only" | "cont-2" => Ok(BowMode::NounsOnly),
            "custom-keywords" => Ok(BowMode::CustomKeywords),
            "none" | "cont-0" => Ok(BowMode::None),
            other => Err(Error::Invalid(format!("unknown BoW mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BowTarget {
    pub mode: BowMode,
    pub ids: BTreeSet<usize>,
}

impl BowTarget {
    pub fn none() -> Self {
        Self {
            mode: BowMode::None,
            ids: BTreeSet::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Set union; the mode of `self` is kept unless it was `None`.
    pub fn union(mut self, other: &BowTarget) -> BowTarget {
        self.ids.extend(other.ids.iter().copied());
        if self.mode == BowMode::None {
            self.mode = other.mode;
        }
        self
    }
}

pub fn make_bow_target(
    x: &TokenSequence,
    mode: BowMode,
    keywords: Option<&[String]>,
    vocab: &Vocabulary,
) -> Result<BowTarget> {
    let content = |id: &usize| *id >= RESERVED;
    let ids: BTreeSet<usize> = match mode {
        BowMode::AllWords => x.ids.iter().copied().filter(content).collect(),
        BowMode::NounsOnly => {
            let tags = x.pos_tags.as_ref().ok_or(Error::PosTagsRequired)?;
            x.ids
                .iter()
                .zip(tags)
                .filter(|(id, tag)| content(id) && is_noun_tag(tag))
                .map(|(id, _)| *id)
                .collect()
        }
        BowMode::CustomKeywords => {
            let words = keywords
                .filter(|k| !k.is_empty())
                .ok_or_else(|| Error::Invalid("custom-keywords mode needs keywords".into()))?;
            let mut ids = BTreeSet::new();
            for w in words {
                let id = vocab.id(w);
                if id == UNK {
                    log::warn!("keyword `{w}` is out of vocabulary; dropped");
                } else {
                    ids.insert(id);
                }
            }
            ids
        }
        BowMode::None => BTreeSet::new(),
    };
    Ok(BowTarget { mode, ids })
}
