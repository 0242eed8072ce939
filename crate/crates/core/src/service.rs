//! Request-level transfer engine shared by the CLI batch mode and the HTTP
//! service: parses a request, resolves preset and overrides, runs revision
//! and shapes the response.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{BowMode, PosTagger, TokenSequence};
use crate::model::StyleModel;
use crate::predictors::Confidence;
use crate::revision::{
    multi_attribute_targets, revise, Controls, ObjectiveBreakdown, Preset, RevisionConfig,
    RevisionTrajectory, StopReason, DEFAULT_TOLERANCE, MAX_ROUNDS,
};
use crate::vae::DecodeConfig;
use crate::{Error, Result};

pub const MAX_ETA: f64 = 100.0;
/// Keys of a target map that are not attribute names.
pub const LENGTH_FACTOR_KEY: &str = "length_factor";
pub const KEYWORDS_KEY: &str = "keywords";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub eta: Option<f64>,
    pub lambda_c: Option<f64>,
    pub beta: Option<f64>,
    #[serde(rename = "T")]
    pub max_rounds: Option<usize>,
    pub bow_mode: Option<BowMode>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferRequest {
    pub sentence: String,
    #[serde(default)]
    pub targets: BTreeMap<String, Value>,
    #[serde(default)]
    pub preset: Option<String>,
    /// Batch files may call this `config`.
    #[serde(default, alias = "config")]
    pub overrides: Overrides,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub t: usize,
    pub losses: ObjectiveBreakdown,
    pub confidences: BTreeMap<String, Confidence>,
    pub decoded: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferResponse {
    pub output: String,
    pub stop_reason: StopReason,
    pub steps: Vec<StepView>,
    pub timing_ms: u64,
}

/// Fully resolved knobs for one transfer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferSettings {
    pub eta: f64,
    pub lambda_c: f64,
    pub beta: f64,
    pub max_rounds: usize,
    pub tolerance: f64,
    pub content_mode: BowMode,
}

impl TransferSettings {
    pub fn from_preset(preset: Preset, content_mode: BowMode) -> Self {
        let (lambda_c, beta) = preset.values();
        let base = RevisionConfig::default();
        Self {
            eta: base.eta,
            lambda_c,
            beta,
            max_rounds: base.max_rounds,
            tolerance: DEFAULT_TOLERANCE,
            content_mode,
        }
    }

    pub fn apply(mut self, o: &Overrides) -> Result<Self> {
        if let Some(eta) = o.eta {
            if !(eta.is_finite() && (0.0..=MAX_ETA).contains(&eta)) {
                return Err(Error::Invalid(format!(
                    "eta must lie in [0, {MAX_ETA}], got {eta}"
                )));
            }
            self.eta = eta;
        }
        if let Some(l) = o.lambda_c {
            self.lambda_c = l;
        }
        if let Some(b) = o.beta {
            self.beta = b;
        }
        if let Some(t) = o.max_rounds {
            if t == 0 || t > MAX_ROUNDS {
                return Err(Error::Invalid(format!(
                    "T must lie in 1..={MAX_ROUNDS}, got {t}"
                )));
            }
            self.max_rounds = t;
        }
        if let Some(m) = o.bow_mode {
            self.content_mode = m;
        }
        Ok(self)
    }

    pub fn revision_config(&self, decode_every_step: bool, max_len: usize) -> RevisionConfig {
        RevisionConfig {
            eta: self.eta,
            lambda_c: self.lambda_c,
            max_rounds: self.max_rounds,
            decode_every_step,
            step_decode: DecodeConfig::greedy(max_len),
            decode: DecodeConfig::beam(5, max_len),
        }
    }
}

/// Lowercased whitespace tokenization, matching the corpus loaders.
pub fn tokenize(sentence: &str) -> Vec<String> {
    sentence.split_whitespace().map(str::to_lowercase).collect()
}

/// Splits a target map into controls. Attribute names are checked against
/// the schema so unknown names surface as [`Error::UnknownAttribute`].
pub fn parse_targets(model: &StyleModel, targets: &BTreeMap<String, Value>) -> Result<Controls> {
    let mut controls = Controls::default();
    for (key, value) in targets {
        match key.as_str() {
            LENGTH_FACTOR_KEY => {
                let f = value
                    .as_f64()
                    .ok_or_else(|| Error::Invalid(format!("targets.{key}: expected a number")))?;
                controls.length_factor = Some(f);
            }
            KEYWORDS_KEY => {
                let words = value.as_array().ok_or_else(|| {
                    Error::Invalid(format!("targets.{key}: expected a list of strings"))
                })?;
                for w in words {
                    let w = w.as_str().ok_or_else(|| {
                        Error::Invalid(format!("targets.{key}: expected a list of strings"))
                    })?;
                    controls.keywords.push(w.to_lowercase());
                }
            }
            name => {
                model.schema.get(name)?;
                let class = value.as_str().ok_or_else(|| {
                    Error::Invalid(format!("targets.{name}: expected a class name"))
                })?;
                controls.classes.insert(name.to_string(), class.to_string());
            }
        }
    }
    Ok(controls)
}

/// Runs one transfer over pre-tokenized input.
pub fn transfer_tokens(
    model: &StyleModel,
    tokens: &[String],
    controls: &Controls,
    settings: &TransferSettings,
    decode_every_step: bool,
) -> Result<RevisionTrajectory> {
    if tokens.is_empty() {
        return Err(Error::Invalid("sentence must be nonempty".into()));
    }
    let tags = model.tagger.as_ref().map(|t| t.tag(tokens));
    if settings.content_mode == BowMode::NounsOnly && tags.is_none() {
        return Err(Error::PosTagsRequired);
    }
    let max_len = model.config.vae.max_len;
    let tokens: Vec<String> = tokens.iter().take(max_len).cloned().collect();
    let tags = tags.map(|t| t.into_iter().take(max_len).collect());
    let x: TokenSequence = model.vocab.sequence(&tokens, tags)?;
    let (targets, bow) = multi_attribute_targets(
        &model.schema,
        &model.vocab,
        &x,
        controls,
        settings.content_mode,
        settings.beta,
        settings.tolerance,
    )?;
    revise(
        model,
        &x,
        &targets,
        &bow,
        &settings.revision_config(decode_every_step, max_len),
    )
}

/// Immutable model plus the checkpoint identity; cheap to clone across
/// request handlers.
#[derive(Clone)]
pub struct TransferEngine {
    pub model: Arc<StyleModel>,
    pub checkpoint: String,
}

impl TransferEngine {
    pub fn new(model: StyleModel) -> Result<Self> {
        let checkpoint = model.fingerprint()?;
        Ok(Self {
            model: Arc::new(model),
            checkpoint,
        })
    }

    pub fn settings(&self, req: &TransferRequest) -> Result<TransferSettings> {
        let preset = match &req.preset {
            Some(p) => p.parse()?,
            None => Preset::Balance,
        };
        TransferSettings::from_preset(preset, self.model.config.train_bow_mode)
            .apply(&req.overrides)
    }

    pub fn transfer(
        &self,
        req: &TransferRequest,
        decode_every_step: bool,
    ) -> Result<TransferResponse> {
        let start = Instant::now();
        let tokens = tokenize(&req.sentence);
        if tokens.is_empty() {
            return Err(Error::Invalid("sentence must be nonempty".into()));
        }
        let controls = parse_targets(&self.model, &req.targets)?;
        let settings = self.settings(req)?;
        let traj = transfer_tokens(
            &self.model,
            &tokens,
            &controls,
            &settings,
            decode_every_step,
        )?;
        Ok(TransferResponse {
            output: traj.output.join(" "),
            stop_reason: traj.stop_reason,
            steps: traj
                .steps
                .into_iter()
                .map(|s| StepView {
                    t: s.t,
                    losses: s.losses,
                    confidences: s.confidences,
                    decoded: s.decoded.map(|d| d.join(" ")),
                })
                .collect(),
            timing_ms: start.elapsed().as_millis() as u64,
        })
    }
}

/// One line of batch output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub sentence: String,
    pub output: String,
    pub stop_reason: StopReason,
    pub steps: usize,
    #[serde(default)]
    pub targets: BTreeMap<String, Value>,
}

/// Batch transfer over JSONL requests; `defaults` fills in targets, preset
/// and overrides a record leaves unset. Writes exactly one record per input
/// line and returns the count.
pub fn transfer_jsonl(
    engine: &TransferEngine,
    input: impl BufRead,
    mut output: impl Write,
    defaults: &TransferRequest,
) -> Result<usize> {
    let mut n = 0;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut req: TransferRequest = serde_json::from_str(&line)
            .map_err(|e| Error::Invalid(format!("line {}: {e}", lineno + 1)))?;
        for (k, v) in &defaults.targets {
            req.targets.entry(k.clone()).or_insert_with(|| v.clone());
        }
        if req.preset.is_none() {
            req.preset = defaults.preset.clone();
        }
        let o = &defaults.overrides;
        let r = &mut req.overrides;
        r.eta = r.eta.or(o.eta);
        r.lambda_c = r.lambda_c.or(o.lambda_c);
        r.beta = r.beta.or(o.beta);
        r.max_rounds = r.max_rounds.or(o.max_rounds);
        r.bow_mode = r.bow_mode.or(o.bow_mode);
        let resp = engine.transfer(&req, false)?;
        let record = TransferRecord {
            sentence: req.sentence.clone(),
            output: resp.output,
            stop_reason: resp.stop_reason,
            steps: resp.steps.len(),
            targets: req.targets.clone(),
        };
        serde_json::to_writer(&mut output, &record)?;
        output.write_all(b"\n")?;
        n += 1;
    }
    Ok(n)
}
