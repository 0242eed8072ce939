//! Sentence-level labelers: a rule oracle for the synthetic corpus, a
//! convolutional classifier (used to label decoded samples when retraining
//! predictors) and a bidirectional LSTM (used for evaluation).

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{synthetic, AttributeDef, LabeledSentence, Vocabulary, PAD};
use crate::nn::{
    clip_global_norm, masked_update, write_weights, Adam, Binder, Linear, Lstm, ParamId,
    ParamStore, WeightRecords,
};
use crate::tape::{softmax_row, Graph, Mat, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelerKind {
    Oracle,
    Cnn,
    Bilstm,
}

impl LabelerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelerKind::Oracle => "oracle",
            LabelerKind::Cnn => "cnn",
            LabelerKind::Bilstm => "bilstm",
        }
    }
}

impl std::str::FromStr for LabelerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" | "rule-based-oracle" => Ok(LabelerKind::Oracle),
            "cnn" => Ok(LabelerKind::Cnn),
            "bilstm" => Ok(LabelerKind::Bilstm),
            other => Err(Error::Invalid(format!("unknown labeler kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelerConfig {
    pub embed_dim: usize,
    /// CNN filter widths; each gets `feature_maps` filters.
    pub filter_widths: Vec<usize>,
    pub feature_maps: usize,
    pub lstm_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    /// Fraction of the data held out for the accuracy report.
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            filter_widths: vec![3, 4, 5],
            feature_maps: 100,
            lstm_hidden: 256,
            epochs: 3,
            batch_size: 32,
            lr: 1e-3,
            clip_norm: 5.0,
            heldout_fraction: 0.1,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
enum Arch {
    Cnn {
        embedding: ParamId,
        /// Per width: one `E x maps` matrix per window offset, and a bias.
        filters: Vec<(Vec<ParamId>, ParamId)>,
        head: Linear,
    },
    Bilstm {
        embedding: ParamId,
        forward: Lstm,
        backward: Lstm,
        head: Linear,
    },
}

/// A trained neural sentence classifier with its own vocabulary.
#[derive(Clone, Debug)]
pub struct TextClassifier {
    pub kind: LabelerKind,
    pub attribute: AttributeDef,
    pub vocab: Vocabulary,
    pub config: LabelerConfig,
    pub params: ParamStore,
    /// Set when no training step has run.
    pub untrained: bool,
    arch: Arch,
}

impl TextClassifier {
    pub fn new(
        kind: LabelerKind,
        attribute: AttributeDef,
        vocab: Vocabulary,
        config: LabelerConfig,
    ) -> Result<Self> {
        let m = attribute.num_classes().ok_or_else(|| {
            Error::Invalid(format!(
                "labeler attribute `{}` must be categorical",
                attribute.name
            ))
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let e = config.embed_dim;
        let embedding = params.uniform("embedding", vocab.len(), e, 0.1, &mut rng);
        let arch = match kind {
            LabelerKind::Cnn => {
                let maps = config.feature_maps;
                let filters = config
                    .filter_widths
                    .iter()
                    .map(|&w| {
                        let bound = (6.0 / (w * e + maps) as f64).sqrt();
                        let taps = (0..w)
                            .map(|j| {
                                params.uniform(&format!("conv{w}.{j}"), e, maps, bound, &mut rng)
                            })
                            .collect();
                        (taps, params.zeros(&format!("conv{w}.b"), 1, maps))
                    })
                    .collect();
                let head = Linear::new(
                    &mut params,
                    "head",
                    maps * config.filter_widths.len(),
                    m,
                    true,
                    &mut rng,
                );
                Arch::Cnn {
                    embedding,
                    filters,
                    head,
                }
            }
            LabelerKind::Bilstm => {
                let h = config.lstm_hidden;
                let forward = Lstm::new(&mut params, "fwd", e, h, &mut rng);
                let backward = Lstm::new(&mut params, "bwd", e, h, &mut rng);
                let head = Linear::new(&mut params, "head", 2 * h, m, true, &mut rng);
                Arch::Bilstm {
                    embedding,
                    forward,
                    backward,
                    head,
                }
            }
            LabelerKind::Oracle => {
                return Err(Error::Invalid(
                    "the oracle labeler has no parameters".into(),
                ))
            }
        };
        Ok(Self {
            kind,
            attribute,
            vocab,
            config,
            params,
            untrained: true,
            arch,
        })
    }

    fn min_len(&self) -> usize {
        match &self.arch {
            Arch::Cnn { .. } => self.config.filter_widths.iter().copied().max().unwrap_or(1),
            Arch::Bilstm { .. } => 1,
        }
    }

    /// Logits (`B x M`) for a batch of id sequences.
    fn logits(&self, g: &mut Graph, p: &mut Binder, batch: &[Vec<usize>]) -> Var {
        let min_len = self.min_len();
        let padded: Vec<Vec<usize>> = batch
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.resize(s.len().max(min_len), PAD);
                s
            })
            .collect();
        match &self.arch {
            Arch::Cnn {
                embedding,
                filters,
                head,
            } => {
                let table = p.get(g, *embedding);
                let mut pooled = Vec::with_capacity(filters.len());
                for (taps, bias) in filters {
                    let w = taps.len();
                    let counts: Vec<usize> = padded.iter().map(|s| s.len() + 1 - w).collect();
                    let mut acc: Option<Var> = None;
                    for (j, tap) in taps.iter().enumerate() {
                        let ids: Vec<usize> = padded
                            .iter()
                            .flat_map(|s| (0..s.len() + 1 - w).map(move |i| s[i + j]))
                            .collect();
                        let x = g.select_rows(table, &ids);
                        let k = p.get(g, *tap);
                        let y = g.matmul(x, k);
                        acc = Some(match acc {
                            Some(a) => g.add(a, y),
                            None => y,
                        });
                    }
                    let b = p.get(g, *bias);
                    let pre = g.add_row(acc.expect("width >= 1"), b);
                    let act = g.relu(pre);
                    pooled.push(g.segment_max(act, &counts));
                }
                let feats = g.concat_cols(&pooled);
                head.forward(g, p, feats)
            }
            Arch::Bilstm {
                embedding,
                forward,
                backward,
                head,
            } => {
                let b = padded.len();
                let h_dim = self.config.lstm_hidden;
                let t_max = padded.iter().map(Vec::len).max().unwrap_or(0);
                let table = p.get(g, *embedding);
                let run = |cell: &Lstm, reverse: bool, g: &mut Graph, p: &mut Binder| {
                    let mut ids = Vec::with_capacity(t_max * b);
                    for t in 0..t_max {
                        ids.extend(padded.iter().map(|s| {
                            if t >= s.len() {
                                PAD
                            } else if reverse {
                                s[s.len() - 1 - t]
                            } else {
                                s[t]
                            }
                        }));
                    }
                    let x = g.select_rows(table, &ids);
                    let gx = cell.project_input(g, p, x);
                    let mut h = g.constant(Mat::zeros((b, h_dim)));
                    let mut c = g.constant(Mat::zeros((b, h_dim)));
                    let mut pooled: Option<Var> = None;
                    for t in 0..t_max {
                        let gx_t = g.slice_rows(gx, t * b, b);
                        let (h2, c2) = cell.step(g, p, gx_t, h, c);
                        let live =
                            Mat::from_shape_fn(
                                (b, 1),
                                |(i, _)| if padded[i].len() > t { 1.0 } else { 0.0 },
                            );
                        h = masked_update(g, h, h2, &live);
                        c = masked_update(g, c, c2, &live);
                        let weight = Mat::from_shape_fn((b, 1), |(i, _)| {
                            live[[i, 0]] / padded[i].len() as f64
                        });
                        let contrib = g.mul_col(h2, weight);
                        pooled = Some(match pooled {
                            Some(acc) => g.add(acc, contrib),
                            None => contrib,
                        });
                    }
                    pooled.expect("nonempty batch")
                };
                let f = run(forward, false, g, p);
                let r = run(backward, true, g, p);
                let feats = g.concat_cols(&[f, r]);
                head.forward(g, p, feats)
            }
        }
    }

    pub fn classify_ids(&self, batch: &[Vec<usize>]) -> Vec<Vec<f64>> {
        if batch.is_empty() {
            return Vec::new();
        }
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, false);
        let logits = self.logits(&mut g, &mut p, batch);
        g.value(logits)
            .rows()
            .into_iter()
            .map(|r| softmax_row(r.as_slice().expect("contiguous")))
            .collect()
    }

    fn encode(&self, tokens: &[String]) -> Vec<usize> {
        let ids = self.vocab.encode_tokens(tokens);
        if ids.is_empty() {
            vec![PAD]
        } else {
            ids
        }
    }

    fn train_step(&mut self, adam: &mut Adam, batch: &[Vec<usize>], labels: &[usize]) -> f64 {
        let (loss, mut grads) = {
            let mut g = Graph::new();
            let mut p = Binder::new(&self.params, true);
            let logits = self.logits(&mut g, &mut p, batch);
            let lp = g.log_softmax(logits);
            let n = labels.len() as f64;
            let picks = labels
                .iter()
                .enumerate()
                .map(|(i, &c)| (i, c, -1.0 / n))
                .collect();
            let loss = g.gather_sum(lp, picks);
            (g.scalar(loss), p.collect(&g.backward(loss)))
        };
        clip_global_norm(&mut [&mut grads], self.config.clip_norm);
        adam.step(&mut self.params, &grads);
        self.untrained = false;
        loss
    }
}

/// Rule labeler for the synthetic corpus: positive iff the sentence has a
/// positive adjective and no negative one.
#[derive(Clone, Debug)]
pub struct OracleLabeler {
    pub attribute: AttributeDef,
}

#[derive(Clone, Debug)]
pub enum Labeler {
    Oracle(OracleLabeler),
    Learned(Box<TextClassifier>),
}

impl Labeler {
    pub fn oracle(attribute: AttributeDef) -> Self {
        Labeler::Oracle(OracleLabeler { attribute })
    }

    pub fn kind(&self) -> LabelerKind {
        match self {
            Labeler::Oracle(_) => LabelerKind::Oracle,
            Labeler::Learned(c) => c.kind,
        }
    }

    pub fn attribute(&self) -> &AttributeDef {
        match self {
            Labeler::Oracle(o) => &o.attribute,
            Labeler::Learned(c) => &c.attribute,
        }
    }

    /// Class distribution for one sentence.
    pub fn classify<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        let owned: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        self.classify_batch(std::slice::from_ref(&owned)).remove(0)
    }

    pub fn classify_batch(&self, batch: &[Vec<String>]) -> Vec<Vec<f64>> {
        match self {
            Labeler::Oracle(o) => batch
                .iter()
                .map(|s| {
                    let m = o.attribute.num_classes().unwrap_or(2);
                    let mut p = vec![0.0; m];
                    p[synthetic::oracle_label(s)] = 1.0;
                    p
                })
                .collect(),
            Labeler::Learned(c) => {
                let ids: Vec<Vec<usize>> = batch.iter().map(|s| c.encode(s)).collect();
                let mut out = Vec::with_capacity(ids.len());
                for chunk in ids.chunks(256) {
                    out.extend(c.classify_ids(chunk));
                }
                out
            }
        }
    }

    pub fn predict(&self, tokens: &[String]) -> usize {
        argmax(&self.classify(tokens))
    }

    pub fn save(&self, root: &Path) -> Result<PathBuf> {
        let dir = labeler_dir(root, &self.attribute().name, self.kind());
        fs::create_dir_all(&dir)?;
        let meta = LabelerMeta {
            kind: self.kind(),
            attribute: self.attribute().clone(),
            untrained: matches!(self, Labeler::Learned(c) if c.untrained),
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        if let Labeler::Learned(c) = self {
            fs::write(
                dir.join("config.json"),
                serde_json::to_string_pretty(&c.config)?,
            )?;
            c.vocab.save(&dir.join("vocab.json"))?;
            let mut out = std::io::BufWriter::new(fs::File::create(dir.join("weights.bin"))?);
            write_weights(&[("labeler", &c.params)], &mut out)?;
        }
        Ok(dir)
    }

    pub fn load(root: &Path, attribute: &str, kind: LabelerKind) -> Result<Self> {
        let dir = labeler_dir(root, attribute, kind);
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
        };
        let meta: LabelerMeta = serde_json::from_str(&read("meta.json")?)?;
        if meta.kind != kind || meta.attribute.name != attribute {
            return Err(Error::Checkpoint(format!(
                "{} holds a different labeler",
                dir.display()
            )));
        }
        if kind == LabelerKind::Oracle {
            return Ok(Labeler::oracle(meta.attribute));
        }
        let config: LabelerConfig = serde_json::from_str(&read("config.json")?)?;
        let vocab = Vocabulary::from_json_str(&read("vocab.json")?)?;
        let mut c = TextClassifier::new(kind, meta.attribute, vocab, config)?;
        let path = dir.join("weights.bin");
        let mut input = std::io::BufReader::new(
            fs::File::open(&path)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?,
        );
        let records = WeightRecords::read(&mut input)?;
        c.params.load_records("labeler", &records)?;
        c.untrained = meta.untrained;
        Ok(Labeler::Learned(Box::new(c)))
    }
}

#[derive(Serialize, Deserialize)]
struct LabelerMeta {
    kind: LabelerKind,
    attribute: AttributeDef,
    untrained: bool,
}

pub fn labeler_dir(root: &Path, attribute: &str, kind: LabelerKind) -> PathBuf {
    root.join("classifiers").join(attribute).join(kind.as_str())
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct LabelerReport {
    pub heldout_accuracy: f64,
    pub heldout_size: usize,
    pub untrained: bool,
}

/// Trains a labeler for a categorical attribute. A deterministic slice of the
/// data (`heldout_fraction`) is kept out of training for the accuracy report.
pub fn train_labeler(
    kind: LabelerKind,
    data: &[LabeledSentence],
    attribute: &AttributeDef,
    vocab: &Vocabulary,
    config: &LabelerConfig,
) -> Result<(Labeler, LabelerReport)> {
    let labels: Vec<usize> = data
        .iter()
        .map(|s| {
            s.class_of(&attribute.name).ok_or_else(|| {
                Error::Invalid(format!("sentence lacks a `{}` label", attribute.name))
            })
        })
        .collect::<Result<_>>()?;
    let mut classes: Vec<usize> = labels.clone();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass(classes.first().copied().unwrap_or(0)));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    order.shuffle(&mut rng);
    let n_held = ((data.len() as f64) * config.heldout_fraction).round() as usize;
    let (held, train) = order.split_at(n_held.min(data.len()));

    let labeler = match kind {
        LabelerKind::Oracle => Labeler::oracle(attribute.clone()),
        _ => {
            let mut c =
                TextClassifier::new(kind, attribute.clone(), vocab.clone(), config.clone())?;
            let ids: Vec<Vec<usize>> = data.iter().map(|s| c.encode(&s.tokens)).collect();
            let mut adam = Adam::new(&c.params, config.lr);
            let mut train = train.to_vec();
            for epoch in 0..config.epochs {
                train.shuffle(&mut rng);
                let mut total = 0.0;
                for chunk in train.chunks(config.batch_size.max(1)) {
                    let batch: Vec<Vec<usize>> = chunk.iter().map(|&i| ids[i].clone()).collect();
                    let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                    total += c.train_step(&mut adam, &batch, &y) * chunk.len() as f64;
                }
                log::info!(
                    "labeler {} epoch {}: loss {:.4}",
                    kind.as_str(),
                    epoch + 1,
                    total / train.len().max(1) as f64
                );
            }
            if c.untrained {
                log::warn!("labeler {} received no training steps", kind.as_str());
            }
            Labeler::Learned(Box::new(c))
        }
    };
    let held_tokens: Vec<Vec<String>> = held.iter().map(|&i| data[i].tokens.clone()).collect();
    let preds = labeler.classify_batch(&held_tokens);
    let hits = preds
        .iter()
        .zip(held)
        .filter(|(p, &i)| argmax(p) == labels[i])
        .count();
    let untrained = matches!(&labeler, Labeler::Learned(c) if c.untrained);
    let report = LabelerReport {
        heldout_accuracy: if held.is_empty() {
            0.0
        } else {
            hits as f64 / held.len() as f64
        },
        heldout_size: held.len(),
        untrained,
    };
    Ok((labeler, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::generate_synthetic_corpus;

    fn sentiment() -> AttributeDef {
        AttributeDef::categorical("sentiment", &["negative", "positive"])
    }

    fn small() -> LabelerConfig {
        LabelerConfig {
            embed_dim: 8,
            feature_maps: 6,
            lstm_hidden: 6,
            epochs: 0,
            ..LabelerConfig::default()
        }
    }

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn oracle_rule() {
        let l = Labeler::oracle(sentiment());
        assert_eq!(
            l.classify(&words("the food was horrible .")),
            vec![1.0, 0.0]
        );
        assert_eq!(l.classify(&words("the food was great")), vec![0.0, 1.0]);
        assert_eq!(
            l.classify(&words("the food was great and cold")),
            vec![1.0, 0.0]
        );
    }

    #[test]
    fn oracle_agrees_with_generator() {
        let data = generate_synthetic_corpus(3, 300);
        let (l, report) = train_labeler(
            LabelerKind::Oracle,
            &data,
            &sentiment(),
            &Vocabulary::build(&data, 1000, 1),
            &LabelerConfig::default(),
        )
        .unwrap();
        assert_eq!(report.heldout_accuracy, 1.0);
        for s in &data {
            assert_eq!(l.predict(&s.tokens), s.class_of("sentiment").unwrap());
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let data: Vec<_> = generate_synthetic_corpus(3, 20)
            .into_iter()
            .filter(|s| s.class_of("sentiment") == Some(1))
            .collect();
        let vocab = Vocabulary::build(&data, 1000, 1);
        let err =
            train_labeler(LabelerKind::Cnn, &data, &sentiment(), &vocab, &small()).unwrap_err();
        assert!(matches!(err, Error::SingleClass(1)));
    }

    #[test]
    fn learned_outputs_are_distributions_and_batch_stable() {
        let data = generate_synthetic_corpus(4, 10);
        let vocab = Vocabulary::build(&data, 1000, 1);
        for kind in [LabelerKind::Cnn, LabelerKind::Bilstm] {
            let (l, report) = train_labeler(kind, &data, &sentiment(), &vocab, &small()).unwrap();
            assert!(report.untrained);
            let sents: Vec<Vec<String>> = data
                .iter()
                .map(|s| s.tokens.clone())
                .chain([words("great"), vec![]])
                .collect();
            let batch = l.classify_batch(&sents);
            for (s, p) in sents.iter().zip(&batch) {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                let single = l.classify(s);
                for (a, b) in single.iter().zip(p) {
                    assert!((a - b).abs() < 1e-12, "{kind:?}");
                }
            }
        }
    }

    #[test]
    fn cnn_learns_the_synthetic_task() {
        let data = generate_synthetic_corpus(5, 400);
        let vocab = Vocabulary::build(&data, 1000, 1);
        let cfg = LabelerConfig {
            embed_dim: 16,
            feature_maps: 16,
            epochs: 5,
            lr: 5e-3,
            ..LabelerConfig::default()
        };
        let (l, report) =
            train_labeler(LabelerKind::Cnn, &data, &sentiment(), &vocab, &cfg).unwrap();
        assert!(
            report.heldout_accuracy >= 0.99,
            "{}",
            report.heldout_accuracy
        );
        let fixtures = [
            "the pizza was delicious",
            "the pizza was stale",
            "our waiter is friendly and lovely",
            "our waiter is rude and slow",
            "that steak was perfect at night",
            "that steak was bland at night",
        ];
        for f in fixtures {
            assert_eq!(
                l.predict(&words(f)),
                synthetic::oracle_label(&words(f)),
                "{f}"
            );
        }
    }

    #[test]
    fn bilstm_learns_the_synthetic_task() {
        let data = generate_synthetic_corpus(6, 200);
        let vocab = Vocabulary::build(&data, 1000, 1);
        let cfg = LabelerConfig {
            embed_dim: 16,
            lstm_hidden: 16,
            epochs: 4,
            lr: 1e-2,
            ..LabelerConfig::default()
        };
        let (_, report) =
            train_labeler(LabelerKind::Bilstm, &data, &sentiment(), &vocab, &cfg).unwrap();
        assert!(
            report.heldout_accuracy >= 0.95,
            "{}",
            report.heldout_accuracy
        );
    }

    #[test]
    fn save_load_roundtrip() {
        let data = generate_synthetic_corpus(8, 20);
        let vocab = Vocabulary::build(&data, 1000, 1);
        let dir = tempfile::tempdir().unwrap();
        for kind in [LabelerKind::Oracle, LabelerKind::Cnn, LabelerKind::Bilstm] {
            let (l, _) = train_labeler(kind, &data, &sentiment(), &vocab, &small()).unwrap();
            let path = l.save(dir.path()).unwrap();
            assert!(path.ends_with(format!("classifiers/sentiment/{}", kind.as_str())));
            let back = Labeler::load(dir.path(), "sentiment", kind).unwrap();
            let s = words("the soup was cold with friends");
            assert_eq!(l.classify(&s), back.classify(&s));
        }
        assert!(matches!(
            Labeler::load(dir.path(), "other", LabelerKind::Cnn),
            Err(Error::Checkpoint(_))
        ));
    }
}
