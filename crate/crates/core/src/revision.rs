//! Inference-time revision of the latent code: plain gradient descent on the
//! target attribute losses plus a weighted bag-of-words content term, with
//! confidence-threshold or round-limit stopping, then decoding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    make_bow_target, AttributeKind, AttributeSchema, AttributeValue, BowMode, BowTarget,
    TokenSequence, Vocabulary,
};
use crate::model::StyleModel;
use crate::nn::Binder;
use crate::predictors::Confidence;
use crate::tape::Graph;
use crate::vae::{DecodeConfig, LatentCode};
use crate::{Error, Result};

/// Hard cap on revision rounds.
pub const MAX_ROUNDS: usize = 500;
pub const DEFAULT_BETA: f64 = 0.9;
/// Default stopping tolerance for scalar attributes, in attribute units.
pub const DEFAULT_TOLERANCE: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeTarget {
    pub attribute: String,
    pub target: AttributeValue,
    /// Confidence threshold for categorical targets.
    pub beta: f64,
    /// Allowed absolute error for scalar targets.
    pub tolerance: f64,
}

impl AttributeTarget {
    pub fn class(attribute: &str, class: usize, beta: f64) -> Self {
        Self {
            attribute: attribute.to_string(),
            target: AttributeValue::Class(class),
            beta,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn scalar(attribute: &str, value: f64, tolerance: f64) -> Self {
        Self {
            attribute: attribute.to_string(),
            target: AttributeValue::Scalar(value),
            beta: DEFAULT_BETA,
            tolerance,
        }
    }

    pub fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        let def = schema.get(&self.attribute)?;
        match (&def.kind, self.target) {
            (AttributeKind::Categorical { classes }, AttributeValue::Class(c))
                if c < classes.len() =>
            {
                if !(self.beta > 0.0 && self.beta < 1.0) {
                    return Err(Error::Invalid(format!(
                        "beta must lie in (0, 1), got {}",
                        self.beta
                    )));
                }
                Ok(())
            }
            (AttributeKind::Scalar { .. }, AttributeValue::Scalar(v)) if v.is_finite() => {
                if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
                    return Err(Error::Invalid(format!(
                        "tolerance must be > 0, got {}",
                        self.tolerance
                    )));
                }
                Ok(())
            }
            _ => Err(Error::InvalidClass {
                attribute: self.attribute.clone(),
                value: format!("{:?}", self.target),
            }),
        }
    }

    pub fn is_satisfied(&self, confidence: &Confidence) -> bool {
        match (confidence, self.target) {
            (Confidence::Classes(p), AttributeValue::Class(c)) => {
                p.get(c).is_some_and(|v| *v > self.beta)
            }
            (Confidence::Scalar(v), AttributeValue::Scalar(t)) => (v - t).abs() <= self.tolerance,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    ContentStrengthen,
    Balance,
    StyleStrengthen,
}

impl Preset {
    pub const ALL: [Preset; 3] = [
        Preset::ContentStrengthen,
        Preset::Balance,
        Preset::StyleStrengthen,
    ];

    /// `(lambda_c, beta)`.
    pub fn values(self) -> (f64, f64) {
        match self {
            Preset::ContentStrengthen => (0.2, 0.8),
            Preset::Balance => (0.1, 0.9),
            Preset::StyleStrengthen => (0.05, 0.95),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::ContentStrengthen => "content-strengthen",
            Preset::Balance => "balance",
            Preset::StyleStrengthen => "style-strengthen",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown preset `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisionConfig {
    pub eta: f64,
    pub lambda_c: f64,
    /// Maximum number of recorded steps, counting the initial evaluation.
    pub max_rounds: usize,
    pub decode_every_step: bool,
    /// Decoder for intermediate steps when `decode_every_step` is set.
    pub step_decode: DecodeConfig,
    /// Decoder for the final output.
    pub decode: DecodeConfig,
}

impl Default for RevisionConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            lambda_c: 0.1,
            max_rounds: 30,
            decode_every_step: false,
            step_decode: DecodeConfig::greedy(crate::corpus::DEFAULT_MAX_LEN),
            decode: DecodeConfig::default(),
        }
    }
}

impl RevisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::Invalid(format!(
                "eta must be finite and > 0, got {}",
                self.eta
            )));
        }
        if !(self.lambda_c.is_finite() && self.lambda_c >= 0.0) {
            return Err(Error::Invalid(format!(
                "lambda_c must be finite and >= 0, got {}",
                self.lambda_c
            )));
        }
        if self.max_rounds == 0 || self.max_rounds > MAX_ROUNDS {
            return Err(Error::Invalid(format!(
                "T must lie in 1..={MAX_ROUNDS}, got {}",
                self.max_rounds
            )));
        }
        self.step_decode.validate()?;
        self.decode.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub attributes: BTreeMap<String, f64>,
    pub bow: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisionStep {
    pub t: usize,
    pub z: Vec<f64>,
    pub losses: ObjectiveBreakdown,
    pub confidences: BTreeMap<String, Confidence>,
    pub decoded: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    ThresholdMet,
    RoundLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisionTrajectory {
    pub input: Vec<String>,
    pub steps: Vec<RevisionStep>,
    pub stop_reason: StopReason,
    pub output: Vec<String>,
    pub output_ids: Vec<usize>,
    /// The final decode produced no tokens.
    pub empty_output: bool,
}

fn check_targets(model: &StyleModel, targets: &[AttributeTarget]) -> Result<()> {
    for t in targets {
        if model
            .predictors
            .iter()
            .all(|p| p.attribute.name != t.attribute)
        {
            return Err(Error::UnknownAttribute(t.attribute.clone()));
        }
        t.validate(&model.schema)?;
    }
    Ok(())
}

/// Objective value and gradient with respect to `z`:
/// `sum_j w_j * attr_j(z; target_j) + lambda_c * bow(z)`, where `w_j` is the
/// attribute scale for scalar attributes and 1 for classes.
pub fn objective_and_gradient(
    model: &StyleModel,
    z: &LatentCode,
    targets: &[AttributeTarget],
    bow: &BowTarget,
    lambda_c: f64,
) -> Result<(ObjectiveBreakdown, Vec<f64>)> {
    check_targets(model, targets)?;
    if z.dim() != model.vae.latent_dim() {
        return Err(Error::Dimension {
            expected: model.vae.latent_dim(),
            got: z.dim(),
        });
    }
    let d = z.dim();
    let mut g = Graph::new();
    let zv = g.input(z.as_row());
    let mut grad = vec![0.0; d];
    let mut attributes = BTreeMap::new();
    let mut total = 0.0;
    let accumulate =
        |g: &Graph, node, weight: f64, name: &str, grad: &mut Vec<f64>| -> Result<()> {
            let grads = g.backward(node);
            if let Some(gz) = grads.get(zv) {
                if gz.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(name.to_string()));
                }
                for (acc, v) in grad.iter_mut().zip(gz.iter()) {
                    *acc += weight * v;
                }
            }
            Ok(())
        };
    for t in targets {
        let pred = model.predictor(&t.attribute)?;
        let mut p = Binder::new(&pred.params, false);
        let loss = pred.loss_graph(&mut g, &mut p, zv, std::slice::from_ref(&t.target))?;
        // Scalar predictors regress scale-normalized values; weighting by the
        // scale makes a one-token miss cost 1/scale instead of 1/scale^2.
        let w = if pred.attribute.num_classes().is_none() {
            pred.attribute.scale
        } else {
            1.0
        };
        let value = w * g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFiniteGradient(t.attribute.clone()));
        }
        accumulate(&g, loss, w, &t.attribute, &mut grad)?;
        attributes.insert(t.attribute.clone(), value);
        total += value;
    }
    let mut bow_value = 0.0;
    if !bow.is_empty() {
        let ids: Vec<usize> = bow.ids.iter().copied().collect();
        let mut p = Binder::new(&model.content.params, false);
        if let Some(loss) = model.content.loss_graph(&mut g, &mut p, zv, &[ids]) {
            bow_value = g.scalar(loss);
            if lambda_c > 0.0 {
                accumulate(&g, loss, lambda_c, "bow", &mut grad)?;
            }
        }
    }
    total += lambda_c * bow_value;
    Ok((
        ObjectiveBreakdown {
            attributes,
            bow: bow_value,
            total,
        },
        grad,
    ))
}

pub fn revision_objective(
    model: &StyleModel,
    z: &LatentCode,
    targets: &[AttributeTarget],
    bow: &BowTarget,
    lambda_c: f64,
) -> Result<ObjectiveBreakdown> {
    Ok(objective_and_gradient(model, z, targets, bow, lambda_c)?.0)
}

/// One explicit step `z - eta * grad`.
pub fn revise_step(
    model: &StyleModel,
    z: &LatentCode,
    targets: &[AttributeTarget],
    bow: &BowTarget,
    eta: f64,
    lambda_c: f64,
) -> Result<LatentCode> {
    let (_, grad) = objective_and_gradient(model, z, targets, bow, lambda_c)?;
    Ok(LatentCode::new(
        z.z.iter().zip(&grad).map(|(v, g)| v - eta * g).collect(),
    ))
}

fn confidences(
    model: &StyleModel,
    z: &LatentCode,
    targets: &[AttributeTarget],
) -> Result<BTreeMap<String, Confidence>> {
    let mut out = BTreeMap::new();
    for t in targets {
        out.insert(
            t.attribute.clone(),
            model.predictor(&t.attribute)?.confidence(z)?,
        );
    }
    Ok(out)
}

fn all_satisfied(targets: &[AttributeTarget], conf: &BTreeMap<String, Confidence>) -> bool {
    !targets.is_empty()
        && targets
            .iter()
            .all(|t| conf.get(&t.attribute).is_some_and(|c| t.is_satisfied(c)))
}

/// Revises the posterior mean of `x` toward `targets`.
///
/// The first step is the evaluation of the unrevised code; each further step
/// follows one gradient update. Revision stops as soon as every target is
/// satisfied, or when `max_rounds` steps have been recorded. Without
/// attribute targets (keyword-only control) it always runs `max_rounds`.
pub fn revise(
    model: &StyleModel,
    x: &TokenSequence,
    targets: &[AttributeTarget],
    bow: &BowTarget,
    cfg: &RevisionConfig,
) -> Result<RevisionTrajectory> {
    cfg.validate()?;
    check_targets(model, targets)?;
    let ids: Vec<usize> = x
        .ids
        .iter()
        .copied()
        .take(model.config.vae.max_len)
        .collect();
    let post = model.vae.encode(&ids)?;
    revise_from(model, x, LatentCode::new(post.mu), targets, bow, cfg)
}

pub fn revise_from(
    model: &StyleModel,
    x: &TokenSequence,
    z0: LatentCode,
    targets: &[AttributeTarget],
    bow: &BowTarget,
    cfg: &RevisionConfig,
) -> Result<RevisionTrajectory> {
    cfg.validate()?;
    let mut z = z0;
    let mut steps = Vec::new();
    let stop_reason = loop {
        let (losses, grad) = objective_and_gradient(model, &z, targets, bow, cfg.lambda_c)?;
        let conf = confidences(model, &z, targets)?;
        let decoded = if cfg.decode_every_step {
            Some(
                model
                    .vocab
                    .decode_ids(&model.vae.decode(&z, &cfg.step_decode)?)?,
            )
        } else {
            None
        };
        let done = all_satisfied(targets, &conf);
        steps.push(RevisionStep {
            t: steps.len(),
            z: z.z.clone(),
            losses,
            confidences: conf,
            decoded,
        });
        if done {
            break StopReason::ThresholdMet;
        }
        if steps.len() >= cfg.max_rounds {
            break StopReason::RoundLimit;
        }
        z = LatentCode::new(
            z.z.iter()
                .zip(&grad)
                .map(|(v, g)| v - cfg.eta * g)
                .collect(),
        );
    };
    let output_ids = model.vae.decode(&z, &cfg.decode)?;
    let output = model.vocab.decode_ids(&output_ids)?;
    let empty_output = output.is_empty();
    if empty_output {
        log::warn!("revision of `{}` decoded to an empty sentence", x.text());
    }
    Ok(RevisionTrajectory {
        input: x.tokens.clone(),
        steps,
        stop_reason,
        output,
        output_ids,
        empty_output,
    })
}

/// Requested controls for one sentence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    /// Target class per categorical attribute (by class name).
    #[serde(default)]
    pub classes: BTreeMap<String, String>,
    pub length_factor: Option<f64>,
    #[serde(default)]
    pub keywords: Vec<String>,
}

/// Builds attribute targets and the BoW target for `x`. The length target is
/// `round(factor * |x|)` clamped to the schema range. Keywords are merged by
/// set union into the content-preservation target built with `content_mode`.
pub fn multi_attribute_targets(
    schema: &AttributeSchema,
    vocab: &Vocabulary,
    x: &TokenSequence,
    controls: &Controls,
    content_mode: BowMode,
    beta: f64,
    tolerance: f64,
) -> Result<(Vec<AttributeTarget>, BowTarget)> {
    if controls.classes.is_empty()
        && controls.length_factor.is_none()
        && controls.keywords.is_empty()
    {
        return Err(Error::Invalid(
            "at least one control must be requested".into(),
        ));
    }
    let mut targets = Vec::new();
    for (name, class) in &controls.classes {
        let def = schema.get(name)?;
        let idx = def.class_index(class).ok_or_else(|| Error::InvalidClass {
            attribute: name.clone(),
            value: class.clone(),
        })?;
        targets.push(AttributeTarget::class(name, idx, beta));
    }
    if let Some(factor) = controls.length_factor {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Invalid(format!(
                "length factor must be > 0, got {factor}"
            )));
        }
        let def = schema.get("length")?;
        let (lo, hi) = match def.kind {
            AttributeKind::Scalar { min, max } => (min, max),
            AttributeKind::Categorical { .. } => {
                return Err(Error::Invalid("`length` must be scalar".into()))
            }
        };
        let value = (factor * x.len() as f64).round().clamp(lo, hi);
        targets.push(AttributeTarget::scalar("length", value, tolerance));
    }
    let mut bow = make_bow_target(x, content_mode, None, vocab)?;
    if !controls.keywords.is_empty() {
        bow = bow.union(&make_bow_target(
            x,
            BowMode::CustomKeywords,
            Some(&controls.keywords),
            vocab,
        )?);
    }
    Ok((targets, bow))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::nn::ParamId;
    use crate::tape::Mat;
    use crate::vae::VaeConfig;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(
            ["the", "salads", "are", "fresh", "burgers", "meat"].map(String::from),
        )
        .unwrap()
    }

    fn model(d: usize, hidden: Vec<usize>) -> StyleModel {
        let v = vocab();
        let mut cfg = ModelConfig::new(VaeConfig {
            vocab_size: v.len(),
            embed_dim: 4,
            hidden_dim: 5,
            latent_dim: d,
            max_len: 25,
        });
        cfg.predictor_hidden = hidden;
        StyleModel::new(cfg, AttributeSchema::sentiment_and_length(25), v, 1).unwrap()
    }

    fn sentence(text: &str, tags: &str) -> TokenSequence {
        let tokens: Vec<String> = text.split(' ').map(String::from).collect();
        let tags = tags.split(' ').map(String::from).collect();
        vocab().sequence(&tokens, Some(tags)).unwrap()
    }

    #[test]
    fn hand_gradient_linear_regressor() {
        // length predictor f(z) = w.z with w = (1, 0), unit scale
        let mut m = model(2, vec![]);
        let len = m
            .predictors
            .iter_mut()
            .find(|p| p.attribute.name == "length")
            .unwrap();
        len.attribute.scale = 1.0;
        *len.params.get_mut(ParamId::from_index(0)) =
            Mat::from_shape_vec((2, 1), vec![1.0, 0.0]).unwrap();
        len.params.get_mut(ParamId::from_index(1)).fill(0.0);
        m.schema.attributes[1].scale = 1.0;
        let t = [AttributeTarget::scalar("length", 1.0, 0.5)];
        let z = LatentCode::new(vec![0.0, 0.0]);
        let next = revise_step(&m, &z, &t, &BowTarget::none(), 0.1, 0.0).unwrap();
        assert!(
            (next.z[0] - 0.2).abs() < 1e-15 && next.z[1] == 0.0,
            "{:?}",
            next.z
        );
        let same = revise_step(&m, &z, &t, &BowTarget::none(), 0.0, 0.0).unwrap();
        assert_eq!(same, z);
    }

    #[test]
    fn uniform_classifier_objective_is_ln2() {
        let mut m = model(3, vec![4]);
        let p = &mut m.predictors[0];
        assert_eq!(p.attribute.name, "sentiment");
        let last = p.params.len() - 2;
        p.params.get_mut(ParamId::from_index(last)).fill(0.0);
        p.params.get_mut(ParamId::from_index(last + 1)).fill(0.0);
        let z = LatentCode::new(vec![0.5, 0.1, -0.2]);
        let t = [AttributeTarget::class("sentiment", 1, 0.9)];
        let o = revision_objective(&m, &z, &t, &BowTarget::none(), 0.0).unwrap();
        assert!((o.total - 2f64.ln()).abs() < 1e-12);
        let with_empty = revision_objective(&m, &z, &t, &BowTarget::none(), 1.0).unwrap();
        assert_eq!(with_empty.total, o.total);
    }

    #[test]
    fn breakdown_recomposes_from_predictors() {
        let m = model(3, vec![6, 4]);
        let z = LatentCode::new(vec![0.3, -0.7, 1.1]);
        let x = sentence("the salads are fresh", "DT NNS VBP JJ");
        let bow = make_bow_target(&x, BowMode::AllWords, None, &m.vocab).unwrap();
        let t = [
            AttributeTarget::class("sentiment", 0, 0.9),
            AttributeTarget::scalar("length", 8.0, 1.5),
        ];
        let o = revision_objective(&m, &z, &t, &bow, 0.5).unwrap();
        let attr: f64 = [
            m.predictors[0]
                .attr_loss(&z, &AttributeValue::Class(0))
                .unwrap(),
            m.predictors[1].attribute.scale
                * m.predictors[1]
                    .attr_loss(&z, &AttributeValue::Scalar(8.0))
                    .unwrap(),
        ]
        .iter()
        .sum();
        let ids: Vec<usize> = bow.ids.iter().copied().collect();
        let bow_loss = -m.content.bow_log_prob(&z, &ids).unwrap();
        assert!((o.total - (attr + 0.5 * bow_loss)).abs() < 1e-9);
        assert!((o.attributes.values().sum::<f64>() + 0.5 * o.bow - o.total).abs() < 1e-9);
    }

    #[test]
    fn unknown_attribute_is_rejected() {
        let m = model(2, vec![3]);
        let z = LatentCode::new(vec![0.0, 0.0]);
        let t = [AttributeTarget::class("tense", 0, 0.9)];
        assert!(matches!(
            revision_objective(&m, &z, &t, &BowTarget::none(), 0.0),
            Err(Error::UnknownAttribute(_))
        ));
    }

    #[test]
    fn stopping_precedence_and_round_limit() {
        let m = model(3, vec![4]);
        let x = sentence("the salads are fresh", "DT NNS VBP JJ");
        let cfg = RevisionConfig {
            max_rounds: 3,
            ..RevisionConfig::default()
        };
        let easy = [AttributeTarget::class("sentiment", 1, 1e-9)];
        let tr = revise(&m, &x, &easy, &BowTarget::none(), &cfg).unwrap();
        assert_eq!(tr.steps.len(), 1);
        assert_eq!(tr.stop_reason, StopReason::ThresholdMet);
        let post = m.vae.encode(&x.ids).unwrap();
        assert_eq!(
            tr.output_ids,
            m.vae
                .decode(&LatentCode::new(post.mu), &cfg.decode)
                .unwrap()
        );

        let hard = [AttributeTarget::class("sentiment", 1, 0.999999)];
        let tr = revise(&m, &x, &hard, &BowTarget::none(), &cfg).unwrap();
        assert_eq!(tr.steps.len(), 3);
        assert_eq!(tr.stop_reason, StopReason::RoundLimit);
        assert_eq!(
            tr.steps.iter().map(|s| s.t).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert_eq!(tr, revise(&m, &x, &hard, &BowTarget::none(), &cfg).unwrap());
    }

    #[test]
    fn keyword_only_runs_all_rounds() {
        let m = model(3, vec![4]);
        let x = sentence("the salads are fresh", "DT NNS VBP JJ");
        let cfg = RevisionConfig {
            max_rounds: 4,
            decode_every_step: true,
            ..RevisionConfig::default()
        };
        let controls = Controls {
            keywords: vec!["meat".into()],
            ..Controls::default()
        };
        let (targets, bow) = multi_attribute_targets(
            &m.schema,
            &m.vocab,
            &x,
            &controls,
            BowMode::NounsOnly,
            0.9,
            1.5,
        )
        .unwrap();
        assert!(targets.is_empty());
        let tr = revise(&m, &x, &targets, &bow, &cfg).unwrap();
        assert_eq!(tr.steps.len(), 4);
        assert_eq!(tr.stop_reason, StopReason::RoundLimit);
        assert!(tr.steps.iter().all(|s| s.decoded.is_some()));
    }

    #[test]
    fn target_construction() {
        let schema = AttributeSchema::sentiment_and_length(25);
        let v = vocab();
        let tokens: Vec<String> = "the salads are fresh the salads are fresh the salads"
            .split(' ')
            .map(String::from)
            .collect();
        let tags: Vec<String> = "DT NNS VBP JJ DT NNS VBP JJ DT NNS"
            .split(' ')
            .map(String::from)
            .collect();
        let x = v.sequence(&tokens, Some(tags)).unwrap();
        assert_eq!(x.len(), 10);
        let up = Controls {
            length_factor: Some(2.0),
            ..Controls::default()
        };
        let (t, _) =
            multi_attribute_targets(&schema, &v, &x, &up, BowMode::None, 0.9, 1.5).unwrap();
        assert_eq!(t[0].target, AttributeValue::Scalar(20.0));
        let down = Controls {
            length_factor: Some(0.5),
            ..Controls::default()
        };
        let (t, _) =
            multi_attribute_targets(&schema, &v, &x, &down, BowMode::None, 0.9, 1.5).unwrap();
        assert_eq!(t[0].target, AttributeValue::Scalar(5.0));
        let bad = Controls {
            length_factor: Some(0.0),
            ..Controls::default()
        };
        assert!(multi_attribute_targets(&schema, &v, &x, &bad, BowMode::None, 0.9, 1.5).is_err());
        assert!(multi_attribute_targets(
            &schema,
            &v,
            &x,
            &Controls::default(),
            BowMode::None,
            0.9,
            1.5
        )
        .is_err());

        let kw = Controls {
            keywords: vec!["burgers".into(), "meat".into()],
            classes: BTreeMap::from([("sentiment".into(), "positive".into())]),
            ..Controls::default()
        };
        let (t, bow) =
            multi_attribute_targets(&schema, &v, &x, &kw, BowMode::NounsOnly, 0.9, 1.5).unwrap();
        assert_eq!(t, vec![AttributeTarget::class("sentiment", 1, 0.9)]);
        let want: std::collections::BTreeSet<usize> =
            [v.id("salads"), v.id("burgers"), v.id("meat")].into();
        assert_eq!(bow.ids, want);
    }

    #[test]
    fn presets_parse() {
        assert_eq!("balance".parse::<Preset>().unwrap().values(), (0.1, 0.9));
        assert_eq!(
            "content-strengthen".parse::<Preset>().unwrap().values(),
            (0.2, 0.8)
        );
        assert_eq!(
            "style-strengthen".parse::<Preset>().unwrap().values(),
            (0.05, 0.95)
        );
        assert!("fast".parse::<Preset>().is_err());
    }
}
