//! Shared fixtures for the criterion benches.

use latent_revise::corpus::synthetic::generate_synthetic_corpus;
use latent_revise::model::ModelConfig;
use latent_revise::trainer::TrainingConfig;
use latent_revise::{AttributeSchema, LabeledSentence, StyleModel, Vocabulary};

pub fn corpus() -> Vec<LabeledSentence> {
    generate_synthetic_corpus(7, 500)
}

/// Untrained model at the default training dimensions; inference cost does
/// not depend on the weight values.
pub fn model(corpus: &[LabeledSentence]) -> StyleModel {
    let cfg = TrainingConfig::default();
    let vocab = Vocabulary::build(corpus, cfg.vocab_max_size, cfg.vocab_min_freq);
    let mut mc = ModelConfig::new(cfg.vae_config(vocab.len()));
    mc.predictor_hidden = cfg.predictor_hidden.clone();
    StyleModel::new(
        mc,
        AttributeSchema::sentiment_and_length(cfg.max_len),
        vocab,
        7,
    )
    .unwrap()
}
