//! Feed-forward predictors that read the latent code: one per attribute
//! (classifier or regressor) plus the bag-of-words content predictor.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classifiers::Labeler;
use crate::corpus::{
    extract_direct_attributes, make_bow_target, AttributeDef, AttributeKind, AttributeSchema,
    AttributeValue, BowMode, LabelerMode, PosTagger, Vocabulary, RESERVED,
};
use crate::nn::{Adam, Binder, Mlp, ParamStore};
use crate::tape::{log_softmax_rows, softmax_row, Graph, Mat, Var};
use crate::vae::{LatentCode, Vae};
use crate::{Error, Result};

pub const DEFAULT_HIDDEN: [usize; 2] = [256, 128];

/// Predictor output for one latent code. Scalars are in attribute units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Confidence {
    Classes(Vec<f64>),
    Scalar(f64),
}

impl Confidence {
    pub fn argmax(&self) -> Option<usize> {
        match self {
            Confidence::Classes(p) => {
                let mut best = 0;
                for (i, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = i;
                    }
                }
                Some(best)
            }
            Confidence::Scalar(_) => None,
        }
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

fn latent_rows(zs: &[&[f64]]) -> Mat {
    let d = zs.first().map_or(0, |z| z.len());
    Mat::from_shape_fn((zs.len(), d), |(i, j)| zs[i][j])
}

#[derive(Clone, Debug)]
pub struct AttributePredictor {
    pub attribute: AttributeDef,
    pub params: ParamStore,
    net: Mlp,
}

impl AttributePredictor {
    pub fn new(attribute: AttributeDef, latent_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let net = Mlp::new(
            &mut params,
            "mlp",
            &widths(latent_dim, hidden, attribute.output_dim()),
            &mut rng,
        );
        Self {
            attribute,
            params,
            net,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Raw outputs: logits (`B x M`) or normalized scalar predictions (`B x 1`).
    pub fn forward(&self, g: &mut Graph, p: &mut Binder, z: Var) -> Var {
        self.net.forward(g, p, z)
    }

    fn check_dim(&self, z: &LatentCode) -> Result<()> {
        if z.dim() != self.latent_dim() {
            return Err(Error::Dimension {
                expected: self.latent_dim(),
                got: z.dim(),
            });
        }
        Ok(())
    }

    /// Summed loss over a batch of labels, in normalized units for scalars.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        p: &mut Binder,
        z: Var,
        labels: &[AttributeValue],
    ) -> Result<Var> {
        let out = self.forward(g, p, z);
        match &self.attribute.kind {
            AttributeKind::Categorical { .. } => {
                let mut picks = Vec::with_capacity(labels.len());
                for (i, label) in labels.iter().enumerate() {
                    self.attribute.check_value(label)?;
                    let c = label.as_class().expect("checked");
                    picks.push((i, c, -1.0));
                }
                let lp = g.log_softmax(out);
                Ok(g.gather_sum(lp, picks))
            }
            AttributeKind::Scalar { .. } => {
                let target = labels
                    .iter()
                    .map(|l| {
                        l.as_scalar()
                            .map(|v| v / self.attribute.scale)
                            .ok_or_else(|| Error::InvalidClass {
                                attribute: self.attribute.name.clone(),
                                value: format!("{l:?}"),
                            })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let t = g.constant(Mat::from_shape_vec((labels.len(), 1), target).expect("column"));
                let diff = g.sub(out, t);
                let sq = g.mul(diff, diff);
                Ok(g.sum(sq))
            }
        }
    }

    fn outputs(&self, zs: &[&[f64]]) -> Mat {
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, false);
        let z = g.constant(latent_rows(zs));
        let out = self.forward(&mut g, &mut p, z);
        g.value(out).clone()
    }

    pub fn confidence(&self, z: &LatentCode) -> Result<Confidence> {
        self.check_dim(z)?;
        Ok(self.confidence_batch(&[&z.z]).remove(0))
    }

    pub fn confidence_batch(&self, zs: &[&[f64]]) -> Vec<Confidence> {
        if zs.is_empty() {
            return Vec::new();
        }
        let out = self.outputs(zs);
        out.rows()
            .into_iter()
            .map(|row| match self.attribute.kind {
                AttributeKind::Categorical { .. } => {
                    Confidence::Classes(softmax_row(row.as_slice().expect("contiguous")))
                }
                AttributeKind::Scalar { .. } => Confidence::Scalar(row[0] * self.attribute.scale),
            })
            .collect()
    }

    /// Categorical: `-log p(label|z)`. Scalar: squared error in normalized units,
    /// which equals token units when the attribute scale is 1.
    pub fn attr_loss(&self, z: &LatentCode, label: &AttributeValue) -> Result<f64> {
        self.check_dim(z)?;
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, false);
        let zv = g.constant(z.as_row());
        let loss = self.loss_graph(&mut g, &mut p, zv, std::slice::from_ref(label))?;
        Ok(g.scalar(loss))
    }
}

#[derive(Clone, Debug)]
pub struct ContentPredictor {
    pub params: ParamStore,
    net: Mlp,
}

impl ContentPredictor {
    pub fn new(latent_dim: usize, vocab_size: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let net = Mlp::new(
            &mut params,
            "mlp",
            &widths(latent_dim, hidden, vocab_size),
            &mut rng,
        );
        Self { params, net }
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn vocab_size(&self) -> usize {
        self.net.output_dim()
    }

    pub fn forward(&self, g: &mut Graph, p: &mut Binder, z: Var) -> Var {
        self.net.forward(g, p, z)
    }

    /// Summed negative log-probability of each row's target words (with
    /// multiplicity). Returns `None` when every target is empty.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        p: &mut Binder,
        z: Var,
        targets: &[Vec<usize>],
    ) -> Option<Var> {
        let picks: Vec<(usize, usize, f64)> = targets
            .iter()
            .enumerate()
            .flat_map(|(i, t)| t.iter().map(move |&w| (i, w, -1.0)))
            .collect();
        if picks.is_empty() {
            return None;
        }
        let logits = self.forward(g, p, z);
        let lp = g.log_softmax(logits);
        Some(g.gather_sum(lp, picks))
    }

    /// `log p(target|z)`: sum of the word log-probabilities. Empty target gives 0.
    pub fn bow_log_prob(&self, z: &LatentCode, target: &[usize]) -> Result<f64> {
        if z.dim() != self.latent_dim() {
            return Err(Error::Dimension {
                expected: self.latent_dim(),
                got: z.dim(),
            });
        }
        if let Some(&id) = target.iter().find(|&&w| w >= self.vocab_size()) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: self.vocab_size(),
            });
        }
        if target.is_empty() {
            log::debug!("empty bag-of-words target; content term is 0");
            return Ok(0.0);
        }
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, false);
        let zv = g.constant(z.as_row());
        let logits = self.forward(&mut g, &mut p, zv);
        let lp = log_softmax_rows(g.value(logits));
        Ok(target.iter().map(|&w| lp[[0, w]]).sum())
    }
}

/// BoW training words of a sentence: content ids with multiplicity, filtered
/// by the mode.
pub fn bow_words(ids: &[usize], tags: Option<&[String]>, mode: BowMode) -> Result<Vec<usize>> {
    let content = |id: usize| id >= RESERVED;
    match mode {
        BowMode::AllWords => Ok(ids.iter().copied().filter(|&id| content(id)).collect()),
        BowMode::NounsOnly => {
            let tags = tags.ok_or(Error::PosTagsRequired)?;
            Ok(ids
                .iter()
                .zip(tags)
                .filter(|(id, t)| content(**id) && crate::corpus::is_noun_tag(t))
                .map(|(id, _)| *id)
                .collect())
        }
        BowMode::None | BowMode::CustomKeywords => Ok(Vec::new()),
    }
}

/// One prior sample with labels derived from its greedy decode.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrainItem {
    pub z: Vec<f64>,
    pub tokens: Vec<String>,
    pub labels: BTreeMap<String, AttributeValue>,
    pub bow: Vec<usize>,
}

pub struct RetrainSources<'a> {
    pub vocab: &'a Vocabulary,
    pub schema: &'a AttributeSchema,
    pub labelers: &'a BTreeMap<String, Labeler>,
    pub bow_mode: BowMode,
    pub tagger: Option<&'a dyn PosTagger>,
}

const MAX_REDRAWS: usize = 20;
const DECODE_CHUNK: usize = 256;

/// Draws `n` latents from the prior, decodes them greedily and labels the
/// decodes: external attributes by the labeler's argmax, direct attributes
/// from the decoded tokens. Empty decodes are redrawn.
pub fn retraining_batch(
    vae: &Vae,
    src: &RetrainSources,
    n: usize,
    seed: u64,
) -> Result<Vec<RetrainItem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = vae.latent_dim();
    let mut out = Vec::with_capacity(n);
    let mut redraws = 0usize;
    while out.len() < n {
        let want = (n - out.len()).min(DECODE_CHUNK);
        let z = Mat::from_shape_fn((want, d), |_| StandardNormal.sample(&mut rng));
        let decoded = vae.decode_greedy_batch(&z, vae.config.max_len);
        for (i, ids) in decoded.into_iter().enumerate() {
            if ids.is_empty() {
                redraws += 1;
                if redraws > MAX_REDRAWS * n.max(1) {
                    return Err(Error::EmptyDecode(redraws));
                }
                continue;
            }
            let tokens = src.vocab.decode_ids(&ids)?;
            let tags = match (src.bow_mode, src.tagger) {
                (BowMode::NounsOnly, Some(t)) => Some(t.tag(&tokens)),
                _ => None,
            };
            let labels = label_sentence(&tokens, src)?;
            let bow = bow_words(&ids, tags.as_deref(), src.bow_mode)?;
            out.push(RetrainItem {
                z: z.row(i).to_vec(),
                tokens,
                labels,
                bow,
            });
        }
    }
    Ok(out)
}

fn label_sentence(
    tokens: &[String],
    src: &RetrainSources,
) -> Result<BTreeMap<String, AttributeValue>> {
    let mut labels = BTreeMap::new();
    extract_direct_attributes(tokens, src.schema, &mut labels);
    for def in &src.schema.attributes {
        if def.labeler_mode == LabelerMode::ExternalClassifier {
            let labeler = src.labelers.get(&def.name).ok_or_else(|| {
                Error::Invalid(format!("no labeler for attribute `{}`", def.name))
            })?;
            let probs = labeler.classify(tokens);
            let c = Confidence::Classes(probs).argmax().expect("classes");
            labels.insert(def.name.clone(), AttributeValue::Class(c));
        }
    }
    Ok(labels)
}

/// Adam state for the predictor-only phase; the VAE is never touched.
pub struct PredictorOptimizer {
    attr: Vec<Adam>,
    content: Adam,
}

impl PredictorOptimizer {
    pub fn new(preds: &[AttributePredictor], cp: &ContentPredictor, lr: f64) -> Self {
        Self::with_weight_decay(preds, cp, lr, 0.0)
    }

    /// Decay applies to the attribute predictors only.
    pub fn with_weight_decay(
        preds: &[AttributePredictor],
        cp: &ContentPredictor,
        lr: f64,
        weight_decay: f64,
    ) -> Self {
        Self {
            attr: preds
                .iter()
                .map(|p| Adam::new(&p.params, lr).with_weight_decay(weight_decay))
                .collect(),
            content: Adam::new(&cp.params, lr),
        }
    }

    /// One shuffled pass over `batch` in minibatches. Returns the mean loss
    /// per item (attributes plus BoW).
    pub fn pass(
        &mut self,
        preds: &mut [AttributePredictor],
        cp: &mut ContentPredictor,
        batch: &[RetrainItem],
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size.max(1)) {
            let zs: Vec<&[f64]> = chunk.iter().map(|&i| batch[i].z.as_slice()).collect();
            let z = latent_rows(&zs);
            for (pred, adam) in preds.iter_mut().zip(&mut self.attr) {
                let labels = chunk
                    .iter()
                    .map(|&i| {
                        batch[i]
                            .labels
                            .get(&pred.attribute.name)
                            .copied()
                            .ok_or_else(|| Error::UnknownAttribute(pred.attribute.name.clone()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let grads = {
                    let mut g = Graph::new();
                    let mut p = Binder::new(&pred.params, true);
                    let zv = g.constant(z.clone());
                    let loss = pred.loss_graph(&mut g, &mut p, zv, &labels)?;
                    total += g.scalar(loss);
                    let scaled = g.scale(loss, 1.0 / chunk.len() as f64);
                    p.collect(&g.backward(scaled))
                };
                adam.step(&mut pred.params, &grads);
            }
            let targets: Vec<Vec<usize>> = chunk.iter().map(|&i| batch[i].bow.clone()).collect();
            let grads = {
                let mut g = Graph::new();
                let mut p = Binder::new(&cp.params, true);
                let zv = g.constant(z);
                match cp.loss_graph(&mut g, &mut p, zv, &targets) {
                    Some(loss) => {
                        total += g.scalar(loss);
                        let scaled = g.scale(loss, 1.0 / chunk.len() as f64);
                        Some(p.collect(&g.backward(scaled)))
                    }
                    None => None,
                }
            };
            if let Some(grads) = grads {
                self.content.step(&mut cp.params, &grads);
            }
        }
        Ok(total / batch.len().max(1) as f64)
    }
}

/// A single optimization pass with fresh optimizer state.
pub fn fit_predictors_on_batch(
    preds: &mut [AttributePredictor],
    cp: &mut ContentPredictor,
    batch: &[RetrainItem],
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    let mut opt = PredictorOptimizer::new(preds, cp, lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    opt.pass(preds, cp, batch, batch_size, &mut rng)
}

/// Fraction of items whose predictor output agrees with the item's label:
/// argmax for categorical attributes, within `tolerance` for scalars.
pub fn prediction_accuracy(
    pred: &AttributePredictor,
    items: &[RetrainItem],
    tolerance: f64,
) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let zs: Vec<&[f64]> = items.iter().map(|it| it.z.as_slice()).collect();
    let conf = pred.confidence_batch(&zs);
    let hits = conf
        .iter()
        .zip(items)
        .filter(|(c, it)| match (c, it.labels.get(&pred.attribute.name)) {
            (Confidence::Classes(_), Some(AttributeValue::Class(label))) => {
                c.argmax() == Some(*label)
            }
            (Confidence::Scalar(v), Some(AttributeValue::Scalar(label))) => {
                (v - label).abs() <= tolerance
            }
            _ => false,
        })
        .count();
    hits as f64 / items.len() as f64
}

/// Ids of a keyword list plus a content-preservation target, as a sorted set.
pub fn merged_bow_ids(
    x: &crate::corpus::TokenSequence,
    mode: BowMode,
    keywords: &[String],
    vocab: &Vocabulary,
) -> Result<crate::corpus::BowTarget> {
    let base = make_bow_target(x, mode, None, vocab)?;
    if keywords.is_empty() {
        return Ok(base);
    }
    let kw = make_bow_target(x, BowMode::CustomKeywords, Some(keywords), vocab)?;
    Ok(base.union(&kw))
}
