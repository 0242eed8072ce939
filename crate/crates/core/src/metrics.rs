//! Evaluation metrics: transfer accuracy, trigram Kneser-Ney perplexity,
//! word overlap, noun retention, corpus BLEU-2, length ratio and keyword
//! presence.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifiers::{argmax, Labeler};
use crate::corpus::is_noun_tag;
use crate::{Error, Result};

/// Jaccard similarity of the two word-type sets. Empty input gives 0.
pub fn overlap<S: AsRef<str>>(x: &[S], y: &[S]) -> f64 {
    let a: HashSet<&str> = x.iter().map(AsRef::as_ref).collect();
    let b: HashSet<&str> = y.iter().map(AsRef::as_ref).collect();
    let union = a.union(&b).count();
    if a.is_empty() || b.is_empty() || union == 0 {
        if a.is_empty() || b.is_empty() {
            log::debug!("overlap of an empty sentence is 0");
        }
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Share of the source's noun types that appear in the output. A source
/// without nouns retains vacuously (1.0).
pub fn noun_pct<S: AsRef<str>>(x: &[S], x_tags: &[S], y: &[S]) -> f64 {
    let nouns: BTreeSet<&str> = x
        .iter()
        .zip(x_tags)
        .filter(|(_, t)| is_noun_tag(t.as_ref()))
        .map(|(w, _)| w.as_ref())
        .collect();
    if nouns.is_empty() {
        log::debug!("source has no nouns; retention is vacuous");
        return 1.0;
    }
    let out: HashSet<&str> = y.iter().map(AsRef::as_ref).collect();
    nouns.iter().filter(|n| out.contains(*n)).count() as f64 / nouns.len() as f64
}

fn ngrams<S: AsRef<str>>(s: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if s.len() >= n {
        for w in s.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect())
                .or_insert(0) += 1;
        }
    }
    out
}

/// Corpus-level BLEU over 1- and 2-grams with uniform weights, clipped
/// counts, brevity penalty and no smoothing, scaled to [0, 100].
pub fn bleu2<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::Invalid(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut matched = [0usize; 2];
    let mut total = [0usize; 2];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=2 {
            let cc = ngrams(c, n);
            let rc = ngrams(r, n);
            total[n - 1] += cc.values().sum::<usize>();
            matched[n - 1] += cc
                .iter()
                .map(|(g, k)| (*k).min(*rc.get(g).unwrap_or(&0)))
                .sum::<usize>();
        }
    }
    if total.contains(&0) || matched.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = (0..2)
        .map(|i| (matched[i] as f64 / total[i] as f64).ln())
        .sum::<f64>()
        / 2.0;
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(100.0 * bp * log_p.exp())
}

const BOS: &str = "<s>";
const EOS: &str = "</s>";
const UNK: &str = "<unk>";

/// Interpolated Kneser-Ney trigram model with a fixed discount per order.
/// Sentences are padded with two `<s>`; `</s>` is predicted, `<s>` never is.
#[derive(Clone, Debug)]
pub struct KneserNeyLM {
    pub discount: f64,
    vocab: HashMap<String, usize>,
    words: Vec<String>,
    tri: HashMap<[usize; 3], usize>,
    /// (u, v) -> (total count, distinct continuations)
    tri_ctx: HashMap<[usize; 2], (usize, usize)>,
    /// Continuation count N1+(. v w).
    bi_cont: HashMap<[usize; 2], usize>,
    /// v -> (sum of N1+(. v w) over w, distinct w)
    bi_ctx: HashMap<usize, (usize, usize)>,
    /// Continuation count N1+(. w).
    uni_cont: HashMap<usize, usize>,
    bigram_types: usize,
}

pub const KN_DISCOUNT: f64 = 0.75;

impl KneserNeyLM {
    pub fn train<S: AsRef<str>>(corpus: &[Vec<S>]) -> Self {
        let mut words: Vec<String> = vec![BOS.into(), EOS.into(), UNK.into()];
        let mut vocab: HashMap<String, usize> = words
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, w)| (w, i))
            .collect();
        let mut tri = HashMap::new();
        for s in corpus {
            let mut ids = vec![0, 0];
            for w in s {
                let w = w.as_ref();
                let next = vocab.len();
                let id = *vocab.entry(w.to_string()).or_insert(next);
                if id == next {
                    words.push(w.to_string());
                }
                ids.push(id);
            }
            ids.push(1);
            for t in ids.windows(3) {
                *tri.entry([t[0], t[1], t[2]]).or_insert(0) += 1;
            }
        }
        let mut tri_ctx: HashMap<[usize; 2], (usize, usize)> = HashMap::new();
        let mut bi_cont: HashMap<[usize; 2], usize> = HashMap::new();
        for (&[u, v, w], &c) in &tri {
            let e = tri_ctx.entry([u, v]).or_default();
            e.0 += c;
            e.1 += 1;
            *bi_cont.entry([v, w]).or_insert(0) += 1;
        }
        let mut bi_ctx: HashMap<usize, (usize, usize)> = HashMap::new();
        let mut uni_cont: HashMap<usize, usize> = HashMap::new();
        for (&[v, w], &c) in &bi_cont {
            let e = bi_ctx.entry(v).or_default();
            e.0 += c;
            e.1 += 1;
            *uni_cont.entry(w).or_insert(0) += 1;
        }
        let bigram_types = bi_cont.len();
        Self {
            discount: KN_DISCOUNT,
            vocab,
            words,
            tri,
            tri_ctx,
            bi_cont,
            bi_ctx,
            uni_cont,
            bigram_types,
        }
    }

    /// Predictable vocabulary: every word seen in training plus `</s>` and `<unk>`.
    pub fn predictable(&self) -> Vec<&str> {
        self.words.iter().skip(1).map(String::as_str).collect()
    }

    fn id(&self, w: &str) -> usize {
        self.vocab.get(w).copied().unwrap_or(2)
    }

    fn p1(&self, w: usize) -> f64 {
        let d = self.discount;
        let total = self.bigram_types as f64;
        if total == 0.0 {
            return 1.0 / (self.words.len() - 1) as f64;
        }
        let n_types = self.uni_cont.len() as f64;
        let c = *self.uni_cont.get(&w).unwrap_or(&0) as f64;
        (c - d).max(0.0) / total + d * n_types / total / (self.words.len() - 1) as f64
    }

    fn p2(&self, v: usize, w: usize) -> f64 {
        let d = self.discount;
        match self.bi_ctx.get(&v) {
            Some(&(total, types)) => {
                let c = *self.bi_cont.get(&[v, w]).unwrap_or(&0) as f64;
                (c - d).max(0.0) / total as f64 + d * types as f64 / total as f64 * self.p1(w)
            }
            None => self.p1(w),
        }
    }

    fn p3(&self, u: usize, v: usize, w: usize) -> f64 {
        let d = self.discount;
        match self.tri_ctx.get(&[u, v]) {
            Some(&(total, types)) => {
                let c = *self.tri.get(&[u, v, w]).unwrap_or(&0) as f64;
                (c - d).max(0.0) / total as f64 + d * types as f64 / total as f64 * self.p2(v, w)
            }
            None => self.p2(v, w),
        }
    }

    /// `P(w | u v)`; unknown words map to `<unk>`.
    pub fn prob(&self, u: &str, v: &str, w: &str) -> f64 {
        self.p3(self.id(u), self.id(v), self.id(w))
    }

    /// Sum of natural-log probabilities and the number of scored tokens.
    pub fn score<S: AsRef<str>>(&self, sentence: &[S]) -> (f64, usize) {
        let mut ids = vec![0, 0];
        ids.extend(sentence.iter().map(|w| self.id(w.as_ref())));
        ids.push(1);
        let lp = ids.windows(3).map(|t| self.p3(t[0], t[1], t[2]).ln()).sum();
        (lp, ids.len() - 2)
    }

    pub fn perplexity<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> f64 {
        let (mut lp, mut n) = (0.0, 0usize);
        for s in sentences {
            let (l, k) = self.score(s);
            lp += l;
            n += k;
        }
        if n == 0 {
            return 1.0;
        }
        (-lp / n as f64).exp()
    }
}

/// Fraction of outputs the labeler assigns to their requested class.
pub fn transfer_accuracy(outputs: &[Vec<String>], targets: &[usize], labeler: &Labeler) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    let probs = labeler.classify_batch(outputs);
    let hits = probs
        .iter()
        .zip(targets)
        .filter(|(p, t)| argmax(p) == **t)
        .count();
    hits as f64 / outputs.len() as f64
}

/// Mean of `100 * |y| / |x|` over pairs; pairs with an empty input are
/// skipped and counted.
pub fn len_pct<S: AsRef<str>>(inputs: &[Vec<S>], outputs: &[Vec<S>]) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    let mut skipped = 0;
    for (x, y) in inputs.iter().zip(outputs) {
        if x.is_empty() {
            skipped += 1;
            continue;
        }
        sum += 100.0 * y.len() as f64 / x.len() as f64;
        n += 1;
    }
    (if n == 0 { 0.0 } else { sum / n as f64 }, skipped)
}

/// Percentage of outputs containing their assigned keyword.
pub fn key_pct<S: AsRef<str>>(outputs: &[Vec<S>], keywords: &[String]) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    let hits = outputs
        .iter()
        .zip(keywords)
        .filter(|(y, k)| y.iter().any(|w| w.as_ref() == k.as_str()))
        .count();
    100.0 * hits as f64 / outputs.len() as f64
}

/// One evaluated transfer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub input: Vec<String>,
    #[serde(default)]
    pub input_pos: Option<Vec<String>>,
    pub output: Vec<String>,
    /// Requested class of the style attribute.
    #[serde(default)]
    pub target_class: Option<usize>,
    #[serde(default)]
    pub keyword: Option<String>,
    /// Reference rewrite for BLEU; the input is used when absent.
    #[serde(default)]
    pub reference: Option<Vec<String>>,
}

/// Report columns in table order. Metrics that do not apply are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub ppl: Option<f64>,
    pub overlap: f64,
    pub noun_pct: Option<f64>,
    pub bleu2: f64,
    pub len_pct: f64,
    pub key_pct: Option<f64>,
    pub n: usize,
}

pub const REPORT_COLUMNS: [&str; 8] = [
    "accuracy", "ppl", "overlap", "noun_pct", "bleu2", "len_pct", "key_pct", "n",
];

impl MetricsReport {
    pub fn compute(
        records: &[EvalRecord],
        labeler: Option<&Labeler>,
        lm: Option<&KneserNeyLM>,
    ) -> Result<Self> {
        let n = records.len();
        if n == 0 {
            return Ok(Self::default());
        }
        let outputs: Vec<Vec<String>> = records.iter().map(|r| r.output.clone()).collect();
        let inputs: Vec<Vec<String>> = records.iter().map(|r| r.input.clone()).collect();
        let accuracy = match labeler {
            Some(l) if records.iter().all(|r| r.target_class.is_some()) => {
                let targets: Vec<usize> = records
                    .iter()
                    .map(|r| r.target_class.expect("checked"))
                    .collect();
                Some(100.0 * transfer_accuracy(&outputs, &targets, l))
            }
            _ => None,
        };
        let ppl = lm.map(|lm| lm.perplexity(&outputs));
        let overlap = 100.0
            * records
                .iter()
                .map(|r| self::overlap(&r.input, &r.output))
                .sum::<f64>()
            / n as f64;
        let noun_pct = if records.iter().all(|r| r.input_pos.is_some()) {
            let s: f64 = records
                .iter()
                .map(|r| {
                    self::noun_pct(&r.input, r.input_pos.as_ref().expect("checked"), &r.output)
                })
                .sum();
            Some(100.0 * s / n as f64)
        } else {
            None
        };
        let refs: Vec<Vec<String>> = records
            .iter()
            .map(|r| r.reference.clone().unwrap_or_else(|| r.input.clone()))
            .collect();
        let bleu2 = bleu2(&outputs, &refs)?;
        let (len_pct, skipped) = len_pct(&inputs, &outputs);
        if skipped > 0 {
            log::warn!("{skipped} pairs with empty input skipped in Len%");
        }
        let key_pct = if records.iter().any(|r| r.keyword.is_some()) {
            let keyed: Vec<&EvalRecord> = records.iter().filter(|r| r.keyword.is_some()).collect();
            let outs: Vec<Vec<String>> = keyed.iter().map(|r| r.output.clone()).collect();
            let kws: Vec<String> = keyed
                .iter()
                .map(|r| r.keyword.clone().expect("filtered"))
                .collect();
            Some(key_pct(&outs, &kws))
        } else {
            None
        };
        Ok(Self {
            accuracy,
            ppl,
            overlap,
            noun_pct,
            bleu2,
            len_pct,
            key_pct,
            n,
        })
    }

    fn cells(&self) -> [String; 8] {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.2}"));
        [
            opt(self.accuracy),
            opt(self.ppl),
            format!("{:.2}", self.overlap),
            opt(self.noun_pct),
            format!("{:.2}", self.bleu2),
            format!("{:.2}", self.len_pct),
            opt(self.key_pct),
            self.n.to_string(),
        ]
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", REPORT_COLUMNS.join(","), self.cells().join(","))
    }

    pub fn to_table(&self) -> String {
        let cells = self.cells();
        let widths: Vec<usize> = REPORT_COLUMNS
            .iter()
            .zip(&cells)
            .map(|(h, c)| h.len().max(c.len()))
            .collect();
        let mut out = String::new();
        let line = |row: &mut String, items: &[&str]| {
            let parts: Vec<String> = items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:>w$}"))
                .collect();
            let _ = writeln!(row, "| {} |", parts.join(" | "));
        };
        line(&mut out, &REPORT_COLUMNS);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
        let refs: Vec<&str> = cells.iter().map(String::as_str).collect();
        line(&mut out, &refs);
        out
    }
}
