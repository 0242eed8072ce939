//! The desk-scale synthetic run: generate a corpus, train the joint model
//! (and a paired model without the BoW loss), train the retraining labeler,
//! retrain predictors, then run the transfer sweeps and score them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classifiers::{train_labeler, Labeler, LabelerConfig, LabelerKind};
use crate::corpus::synthetic::{generate_synthetic_corpus, split_heldout, NEGATIVE, POSITIVE};
use crate::corpus::{
    select_keyword, write_jsonl, AttributeSchema, BowMode, Embeddings, LabeledSentence, RESERVED,
};
use crate::metrics::{EvalRecord, KneserNeyLM, MetricsReport};
use crate::model::StyleModel;
use crate::revision::{Controls, Preset, StopReason};
use crate::service::{transfer_tokens, TransferSettings};
use crate::trainer::{joint_train, retrain_predictors, EpochStats, RetrainReport, TrainingConfig};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_per_class: usize,
    pub heldout_per_class: usize,
    /// Negatives from the held-out split used by every sweep.
    pub eval_size: usize,
    pub training: TrainingConfig,
    pub labeler: LabelerConfig,
    pub retrain_labeler: LabelerKind,
    /// Also train the paired model with `lambda_b = 0`.
    pub kl_guard: bool,
}

impl SyntheticConfig {
    pub fn reference(seed: u64) -> Self {
        Self {
            seed,
            n_per_class: 2500,
            heldout_per_class: 200,
            eval_size: 200,
            training: TrainingConfig {
                seed,
                kl_max_weight: 0.3,
                bow_mode: BowMode::NounsOnly,
                predictor_weight_decay: 1.0,
                retrain_weight_decay: 0.3,
                ..TrainingConfig::default()
            },
            labeler: LabelerConfig {
                seed,
                ..LabelerConfig::default()
            },
            retrain_labeler: LabelerKind::Cnn,
            kl_guard: true,
        }
    }
}

/// One transfer sweep over the evaluation negatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub settings: TransferSettings,
    pub metrics: MetricsReport,
    /// Percentage of trajectories that stopped with every target met.
    pub threshold_met_pct: f64,
    pub empty_outputs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub l_rec: f64,
    pub l_kl: f64,
    pub l_bow: f64,
    pub l_attr: BTreeMap<String, f64>,
    pub total: f64,
}

impl From<&EpochStats> for LossRow {
    fn from(e: &EpochStats) -> Self {
        Self {
            epoch: e.epoch,
            l_rec: e.l_rec,
            l_kl: e.l_kl,
            l_bow: e.l_bow,
            l_attr: e.l_attr.clone(),
            total: e.total,
        }
    }
}

/// Everything the run measures. Wall-clock times live in `seconds` and are
/// left out of [`PipelineReport::fingerprint`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub training: Vec<LossRow>,
    /// Per-epoch losses of the paired `lambda_b = 0` model.
    pub training_without_bow: Vec<LossRow>,
    pub labeler_heldout_accuracy: f64,
    pub retrain: RetrainReport,
    pub sweeps: Vec<SweepReport>,
    pub seconds: BTreeMap<String, f64>,
}

impl PipelineReport {
    pub fn sweep(&self, name: &str) -> Option<&SweepReport> {
        self.sweeps.iter().find(|s| s.name == name)
    }

    pub fn final_kl(&self) -> Option<f64> {
        self.training.last().map(|r| r.l_kl)
    }

    pub fn final_kl_without_bow(&self) -> Option<f64> {
        self.training_without_bow.last().map(|r| r.l_kl)
    }

    /// The report as JSON with timings removed; equal across reruns with
    /// the same seed on the same platform.
    pub fn fingerprint(&self) -> String {
        let mut copy = self.clone();
        copy.seconds.clear();
        serde_json::to_string(&copy).expect("report serializes")
    }
}

pub const SWEEP_BALANCE: &str = "balance";
pub const SWEEP_NO_CONTENT: &str = "lambda-c-0";
pub const SWEEP_STRONG_CONTENT: &str = "lambda-c-0.2";
pub const SWEEP_LENGTH_UP: &str = "length-up";
pub const SWEEP_LENGTH_DOWN: &str = "length-down";
pub const SWEEP_KEYWORDS: &str = "keywords";

/// A sweep: one transfer per evaluation sentence with the same controls and
/// knobs, plus an optional per-sentence keyword.
#[derive(Clone, Debug)]
pub struct Sweep {
    pub name: String,
    pub controls: Controls,
    pub settings: TransferSettings,
    pub keywords: Option<Vec<String>>,
    pub target_class: Option<usize>,
}

pub fn standard_sweeps(model: &StyleModel, eval: &[LabeledSentence]) -> Result<Vec<Sweep>> {
    let mode = model.config.train_bow_mode;
    let balance = TransferSettings::from_preset(Preset::Balance, mode);
    let positive = |length_factor: Option<f64>| Controls {
        classes: BTreeMap::from([("sentiment".to_string(), "positive".to_string())]),
        length_factor,
        keywords: vec![],
    };
    let with_lambda = |l: f64| TransferSettings {
        lambda_c: l,
        ..balance.clone()
    };
    let keywords = keyword_assignments(model, eval)?;
    let sweep = |name: &str, controls: Controls, settings: TransferSettings| Sweep {
        name: name.to_string(),
        target_class: (!controls.classes.is_empty()).then_some(POSITIVE),
        controls,
        settings,
        keywords: None,
    };
    Ok(vec![
        sweep(SWEEP_BALANCE, positive(None), balance.clone()),
        sweep(SWEEP_NO_CONTENT, positive(None), with_lambda(0.0)),
        sweep(SWEEP_STRONG_CONTENT, positive(None), with_lambda(0.2)),
        sweep(SWEEP_LENGTH_UP, positive(Some(2.0)), balance.clone()),
        sweep(SWEEP_LENGTH_DOWN, positive(Some(0.5)), balance.clone()),
        Sweep {
            name: SWEEP_KEYWORDS.to_string(),
            controls: Controls::default(),
            settings: balance,
            keywords: Some(keywords),
            target_class: None,
        },
    ])
}

/// One keyword per sentence: the corpus noun absent from the sentence that
/// is closest to it in the model's token-embedding space.
pub fn keyword_assignments(model: &StyleModel, eval: &[LabeledSentence]) -> Result<Vec<String>> {
    let table = model.vae.embedding_table();
    let vectors = model
        .vocab
        .tokens()
        .iter()
        .enumerate()
        .skip(RESERVED)
        .map(|(i, w)| (w.clone(), table.row(i).to_vec()))
        .collect();
    let embeddings = Embeddings::new(vectors);
    let candidates: BTreeSet<String> = model
        .tagger
        .as_ref()
        .map(|t| t.nouns())
        .unwrap_or_default()
        .into_iter()
        .filter(|w| embeddings.get(w).is_some())
        .collect();
    eval.iter()
        .map(|s| select_keyword(&model.vocab.encode(s), &embeddings, &candidates))
        .collect()
}

pub struct SweepOutcome {
    pub report: SweepReport,
    pub records: Vec<EvalRecord>,
}

pub fn run_sweep(
    model: &StyleModel,
    eval: &[LabeledSentence],
    sweep: &Sweep,
    oracle: &Labeler,
    lm: &KneserNeyLM,
) -> Result<SweepOutcome> {
    let mut records = Vec::with_capacity(eval.len());
    let mut met = 0usize;
    let mut empty = 0usize;
    for (i, s) in eval.iter().enumerate() {
        let mut controls = sweep.controls.clone();
        let keyword = sweep.keywords.as_ref().map(|k| k[i].clone());
        if let Some(k) = &keyword {
            controls.keywords.push(k.clone());
        }
        let traj = transfer_tokens(model, &s.tokens, &controls, &sweep.settings, false)?;
        if traj.stop_reason == StopReason::ThresholdMet {
            met += 1;
        }
        if traj.empty_output {
            empty += 1;
        }
        records.push(EvalRecord {
            input: s.tokens.clone(),
            input_pos: s.pos_tags.clone(),
            output: traj.output,
            target_class: sweep.target_class,
            keyword,
            reference: None,
        });
    }
    let metrics = MetricsReport::compute(&records, Some(oracle), Some(lm))?;
    let report = SweepReport {
        name: sweep.name.clone(),
        settings: sweep.settings.clone(),
        metrics,
        threshold_met_pct: if eval.is_empty() {
            0.0
        } else {
            100.0 * met as f64 / eval.len() as f64
        },
        empty_outputs: empty,
    };
    log::info!(
        "sweep {}: acc {:?} overlap {:.1} len% {:.1} key% {:?} met {:.1}%",
        report.name,
        report.metrics.accuracy,
        report.metrics.overlap,
        report.metrics.len_pct,
        report.metrics.key_pct,
        report.threshold_met_pct
    );
    Ok(SweepOutcome { report, records })
}

/// Runs the whole synthetic pipeline. With `out_dir`, the data splits,
/// checkpoints, labeler, per-sweep outputs and the report are written there.
pub fn run_synthetic(cfg: &SyntheticConfig, out_dir: Option<&Path>) -> Result<PipelineReport> {
    let mut seconds = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, seconds: &mut BTreeMap<String, f64>| {
        seconds.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };
    let schema = AttributeSchema::sentiment_and_length(cfg.training.max_len);
    let data = generate_synthetic_corpus(cfg.seed, cfg.n_per_class);
    let (train, heldout) = split_heldout(&data, cfg.heldout_per_class);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        write_jsonl(&dir.join("train.jsonl"), &train, &schema)?;
        write_jsonl(&dir.join("heldout.jsonl"), &heldout, &schema)?;
    }

    let (mut model, report) = joint_train(&train, &schema, &cfg.training, |_, _| Ok(()))?;
    let training: Vec<LossRow> = report.epochs.iter().map(LossRow::from).collect();
    lap("train", &mut seconds);

    let training_without_bow = if cfg.kl_guard {
        let paired = TrainingConfig {
            lambda_b: 0.0,
            ..cfg.training.clone()
        };
        let (_, r) = joint_train(&train, &schema, &paired, |_, _| Ok(()))?;
        r.epochs.iter().map(LossRow::from).collect()
    } else {
        vec![]
    };
    lap("train_without_bow", &mut seconds);

    let sentiment = schema.get("sentiment")?.clone();
    let (labeler, lreport) = train_labeler(
        cfg.retrain_labeler,
        &train,
        &sentiment,
        &model.vocab,
        &cfg.labeler,
    )?;
    if let Some(dir) = out_dir {
        labeler.save(&dir.join("classifiers"))?;
    }
    let labelers = BTreeMap::from([("sentiment".to_string(), labeler)]);
    lap("labeler", &mut seconds);

    let retrain = retrain_predictors(&mut model, &labelers, &cfg.training)?;
    if let Some(dir) = out_dir {
        model.save(&dir.join("model"))?;
    }
    lap("retrain", &mut seconds);

    let eval: Vec<LabeledSentence> = heldout
        .iter()
        .filter(|s| s.class_of("sentiment") == Some(NEGATIVE))
        .take(cfg.eval_size)
        .cloned()
        .collect();
    let oracle = Labeler::oracle(sentiment);
    let lm = KneserNeyLM::train(&train.iter().map(|s| s.tokens.clone()).collect::<Vec<_>>());
    let mut sweeps = Vec::new();
    for sweep in standard_sweeps(&model, &eval)? {
        let out = run_sweep(&model, &eval, &sweep, &oracle, &lm)?;
        if let Some(dir) = out_dir {
            let lines: Vec<String> = out
                .records
                .iter()
                .map(serde_json::to_string)
                .collect::<std::result::Result<_, _>>()?;
            fs::write(
                dir.join(format!("sweep-{}.jsonl", sweep.name)),
                lines.join("\n") + "\n",
            )?;
        }
        sweeps.push(out.report);
        lap(&format!("sweep-{}", sweep.name), &mut seconds);
    }

    let report = PipelineReport {
        seed: cfg.seed,
        training,
        training_without_bow,
        labeler_heldout_accuracy: lreport.heldout_accuracy,
        retrain,
        sweeps,
        seconds,
    };
    if let Some(dir) = out_dir {
        fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
    }
    Ok(report)
}
