//! Attribute-controlled sentence rewriting by gradient revision of a
//! sequence VAE's latent code.
//!
//! A GRU variational auto-encoder is trained jointly with attribute
//! predictors and a bag-of-words content predictor that all read the latent
//! code. At inference time the latent code of an input sentence is moved by
//! gradient descent on the predictors' losses toward the requested
//! attributes, then decoded with beam search.

pub mod classifiers;
pub mod corpus;
mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod predictors;
pub mod revision;
pub mod service;
pub mod tape;
pub mod trainer;
pub mod vae;

pub use corpus::{
    AttributeDef, AttributeKind, AttributeSchema, AttributeValue, BowMode, BowTarget,
    LabeledSentence, TokenSequence, Vocabulary,
};
pub use error::{Error, Result};
pub use model::StyleModel;
pub use revision::{AttributeTarget, RevisionConfig, RevisionTrajectory, StopReason};
pub use vae::{DecodeConfig, DecodeMode, LatentCode, PosteriorParams, Vae, VaeConfig};
