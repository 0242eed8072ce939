//! The trained bundle (VAE, attribute predictors, content predictor, schema,
//! vocabulary) and its checkpoint directory format.
//!
//! Layout: `weights.bin`, `vocab.json`, `schema.json`, `config.json`,
//! `meta.json`, and optionally `tagger.tsv`. `meta.json` carries a SHA-256
//! over the three JSON documents; loading refuses a mismatch.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{AttributeSchema, BowMode, LexiconTagger, Vocabulary};
use crate::nn::{hex, write_weights, ParamStore, WeightRecords};
use crate::predictors::{AttributePredictor, ContentPredictor, DEFAULT_HIDDEN};
use crate::vae::{Vae, VaeConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vae: VaeConfig,
    pub predictor_hidden: Vec<usize>,
    /// BoW target used for the content predictor during training.
    pub train_bow_mode: BowMode,
    /// Training hyperparameters as recorded by the trainer.
    #[serde(default)]
    pub training: serde_json::Value,
}

impl ModelConfig {
    pub fn new(vae: VaeConfig) -> Self {
        Self {
            vae,
            predictor_hidden: DEFAULT_HIDDEN.to_vec(),
            train_bow_mode: BowMode::AllWords,
            training: serde_json::Value::Null,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    #[serde(default)]
    pub losses: serde_json::Value,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct StyleModel {
    pub config: ModelConfig,
    pub schema: AttributeSchema,
    pub vocab: Vocabulary,
    pub vae: Vae,
    /// One predictor per schema attribute, in schema order.
    pub predictors: Vec<AttributePredictor>,
    pub content: ContentPredictor,
    pub tagger: Option<LexiconTagger>,
    pub meta: CheckpointMeta,
}

impl StyleModel {
    /// Freshly initialized components; each gets its own seed stream.
    pub fn new(
        config: ModelConfig,
        schema: AttributeSchema,
        vocab: Vocabulary,
        seed: u64,
    ) -> Result<Self> {
        if config.vae.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "model vocabulary size {} differs from vocabulary ({})",
                config.vae.vocab_size,
                vocab.len()
            )));
        }
        let d = config.vae.latent_dim;
        let vae = Vae::new(config.vae.clone(), seed);
        let predictors = schema
            .attributes
            .iter()
            .enumerate()
            .map(|(i, a)| {
                AttributePredictor::new(
                    a.clone(),
                    d,
                    &config.predictor_hidden,
                    seed.wrapping_add(101 + i as u64),
                )
            })
            .collect();
        let content = ContentPredictor::new(
            d,
            vocab.len(),
            &config.predictor_hidden,
            seed.wrapping_add(97),
        );
        Ok(Self {
            config,
            schema,
            vocab,
            vae,
            predictors,
            content,
            tagger: None,
            meta: CheckpointMeta::default(),
        })
    }

    pub fn predictor(&self, name: &str) -> Result<&AttributePredictor> {
        self.predictors
            .iter()
            .find(|p| p.attribute.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn predictor_checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.predictors {
            h.update(p.params.checksum());
        }
        h.update(self.content.params.checksum());
        hex(&h.finalize())
    }

    /// Identity of the whole checkpoint: config hash plus every weight checksum.
    pub fn fingerprint(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.config_hash()?);
        h.update(self.vae.params.checksum());
        h.update(self.predictor_checksum());
        Ok(hex(&h.finalize()))
    }

    fn documents(&self) -> Result<(String, String, String)> {
        Ok((
            serde_json::to_string_pretty(&self.config)?,
            serde_json::to_string_pretty(&self.schema)?,
            self.vocab.to_json_string(),
        ))
    }

    pub fn config_hash(&self) -> Result<String> {
        let (c, s, v) = self.documents()?;
        Ok(hash_documents(&c, &s, &v))
    }

    fn stores(&self) -> Vec<(String, &ParamStore)> {
        let mut out = vec![("vae".to_string(), &self.vae.params)];
        for p in &self.predictors {
            out.push((format!("attr.{}", p.attribute.name), &p.params));
        }
        out.push(("content".to_string(), &self.content.params));
        out
    }

    pub fn save(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let (c, s, v) = self.documents()?;
        self.meta.config_hash = hash_documents(&c, &s, &v);
        fs::write(dir.join("config.json"), c)?;
        fs::write(dir.join("schema.json"), s)?;
        fs::write(dir.join("vocab.json"), v)?;
        fs::write(
            dir.join("meta.json"),
            serde_json::to_string_pretty(&self.meta)?,
        )?;
        let stores = self.stores();
        let named: Vec<(&str, &ParamStore)> =
            stores.iter().map(|(n, s)| (n.as_str(), *s)).collect();
        let tmp = dir.join("weights.bin.tmp");
        {
            let mut out = BufWriter::new(fs::File::create(&tmp)?);
            write_weights(&named, &mut out)?;
            std::io::Write::flush(&mut out)?;
        }
        fs::rename(&tmp, dir.join("weights.bin"))?;
        if let Some(t) = &self.tagger {
            t.save(&dir.join("tagger.tsv"))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        for name in CHECKPOINT_FILES {
            if !dir.join(name).is_file() {
                return Err(Error::Checkpoint(format!(
                    "missing {name} in {}",
                    dir.display()
                )));
            }
        }
        let read = |name: &str| fs::read_to_string(dir.join(name));
        let (c, s, v) = (
            read("config.json")?,
            read("schema.json")?,
            read("vocab.json")?,
        );
        let meta: CheckpointMeta = serde_json::from_str(&read("meta.json")?)?;
        let actual = hash_documents(&c, &s, &v);
        if meta.config_hash != actual {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch in {}: meta says {}, files hash to {actual}",
                dir.display(),
                meta.config_hash
            )));
        }
        let config: ModelConfig = serde_json::from_str(&c)?;
        let schema: AttributeSchema = serde_json::from_str(&s)?;
        let schema = AttributeSchema::new(schema.attributes)?;
        let vocab = Vocabulary::from_json_str(&v)?;
        let mut model = Self::new(config, schema, vocab, 0)?;
        let records = WeightRecords::read(&mut BufReader::new(fs::File::open(
            dir.join("weights.bin"),
        )?))?;
        model.vae.params.load_records("vae", &records)?;
        for p in &mut model.predictors {
            let prefix = format!("attr.{}", p.attribute.name);
            p.params.load_records(&prefix, &records)?;
        }
        model.content.params.load_records("content", &records)?;
        let tagger_path = dir.join("tagger.tsv");
        if tagger_path.is_file() {
            model.tagger = Some(LexiconTagger::load(&tagger_path)?);
        }
        model.meta = meta;
        Ok(model)
    }
}

pub const CHECKPOINT_FILES: [&str; 5] = [
    "weights.bin",
    "vocab.json",
    "schema.json",
    "config.json",
    "meta.json",
];

fn hash_documents(config: &str, schema: &str, vocab: &str) -> String {
    let mut h = Sha256::new();
    for doc in [config, schema, vocab] {
        h.update((doc.len() as u64).to_le_bytes());
        h.update(doc.as_bytes());
    }
    hex(&h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::generate_synthetic_corpus;
    use crate::vae::LatentCode;

    fn tiny_model() -> StyleModel {
        let data = generate_synthetic_corpus(1, 20);
        let vocab = Vocabulary::build(&data, 1000, 1);
        let mut cfg = ModelConfig::new(VaeConfig {
            vocab_size: vocab.len(),
            embed_dim: 6,
            hidden_dim: 8,
            latent_dim: 4,
            max_len: 25,
        });
        cfg.predictor_hidden = vec![5, 4];
        let mut m =
            StyleModel::new(cfg, AttributeSchema::sentiment_and_length(25), vocab, 3).unwrap();
        m.tagger = Some(LexiconTagger::from_gold(&data));
        m
    }

    #[test]
    fn roundtrip_is_exact() {
        let mut m = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = StyleModel::load(dir.path()).unwrap();
        let ids =
            m.vocab
                .encode_tokens(&["the".into(), "soup".into(), "was".into(), "cold".into()]);
        assert_eq!(m.vae.encode(&ids).unwrap(), back.vae.encode(&ids).unwrap());
        let z = LatentCode::new(vec![0.1, -0.3, 0.7, 1.2]);
        for (a, b) in m.predictors.iter().zip(&back.predictors) {
            assert_eq!(a.confidence(&z).unwrap(), b.confidence(&z).unwrap());
        }
        assert_eq!(
            m.content.bow_log_prob(&z, &ids).unwrap(),
            back.content.bow_log_prob(&z, &ids).unwrap()
        );
        assert_eq!(m.vae.params.checksum(), back.vae.params.checksum());
        assert_eq!(m.predictor_checksum(), back.predictor_checksum());
        assert!(back.tagger.is_some());
    }

    #[test]
    fn tampered_hash_is_refused() {
        let mut m = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let meta_path = dir.path().join("meta.json");
        let mut meta: CheckpointMeta =
            serde_json::from_str(&fs::read_to_string(&meta_path).unwrap()).unwrap();
        meta.config_hash = "0".repeat(64);
        fs::write(&meta_path, serde_json::to_string(&meta).unwrap()).unwrap();
        let err = StyleModel::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("hash mismatch"), "{err}");
    }

    #[test]
    fn edited_schema_is_refused() {
        let mut m = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let path = dir.path().join("schema.json");
        let edited = fs::read_to_string(&path)
            .unwrap()
            .replace("positive", "upbeat");
        fs::write(&path, edited).unwrap();
        assert!(StyleModel::load(dir.path()).is_err());
    }

    #[test]
    fn missing_file_is_named() {
        let mut m = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        fs::remove_file(dir.path().join("vocab.json")).unwrap();
        let err = StyleModel::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("vocab.json"), "{err}");
    }
}
