use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use latent_revise::classifiers::{train_labeler, Labeler, LabelerConfig, LabelerKind};
use latent_revise::corpus::synthetic::{generate_synthetic_corpus, split_heldout, NEGATIVE};
use latent_revise::corpus::{read_jsonl, write_jsonl, AttributeSchema, BowMode, PosTagger};
use latent_revise::metrics::{EvalRecord, KneserNeyLM, MetricsReport};
use latent_revise::model::StyleModel;
use latent_revise::service::{
    tokenize, transfer_jsonl, Overrides, TransferEngine, TransferRecord, TransferRequest,
};
use latent_revise::trainer::{joint_train, retrain_predictors, TrainingConfig};

use crate::http::{router, AppState};

#[derive(Parser, Debug)]
#[command(
    name = "latent-revise",
    version,
    about = "Attribute-controlled rewriting by latent revision"
)]
pub struct Cli {
    /// Seed for every stochastic component; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat TOML training config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the synthetic corpus: train/held-out splits and transfer requests.
    SynthData(SynthArgs),
    /// Jointly train the VAE and predictors.
    Train(TrainArgs),
    /// Train a sentence labeler for one attribute.
    TrainClassifiers(ClassifierArgs),
    /// Retrain the predictors on labeled prior samples.
    RetrainPredictors(RetrainArgs),
    /// Revise every request of a JSONL file.
    Transfer(TransferArgs),
    /// Score transfer outputs.
    Evaluate(EvaluateArgs),
    /// Serve the /v1 HTTP API.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2500)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 200)]
    pub heldout_per_class: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Processed corpus (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory, rewritten after every epoch.
    #[arg(long)]
    pub out: PathBuf,
    /// Attribute schema (JSON); defaults to sentiment + length.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda_b: Option<f64>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ClassifierArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint whose vocabulary and schema the labeler uses.
    #[arg(long)]
    pub model: PathBuf,
    /// Root directory; the labeler goes to `<out>/<attribute>/<kind>/`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "cnn")]
    pub kind: LabelerKind,
    #[arg(long, default_value = "sentiment")]
    pub attribute: String,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RetrainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub classifiers: PathBuf,
    #[arg(long, default_value = "cnn")]
    pub kind: LabelerKind,
    /// Write the retrained checkpoint here instead of in place.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub passes: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub preset: Option<String>,
    /// Default target for records without one, as attribute=class.
    #[arg(long = "target", value_parser = parse_key_value)]
    pub targets: Vec<(String, String)>,
    #[arg(long)]
    pub length_factor: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub keywords: Vec<String>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub lambda_c: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long = "rounds")]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub bow_mode: Option<BowMode>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Transfer output (JSONL records with `output`).
    #[arg(long)]
    pub pred: PathBuf,
    /// Transfer input (JSONL records with `sentence`).
    #[arg(long)]
    pub orig: PathBuf,
    /// Reference rewrites (JSONL records with `sentence`), one per input.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// Checkpoint providing the schema and POS lexicon.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "oracle")]
    pub labeler: LabelerKind,
    #[arg(long)]
    pub classifiers: Option<PathBuf>,
    /// Corpus (processed JSONL) for the perplexity model.
    #[arg(long)]
    pub lm_corpus: Option<PathBuf>,
    /// Write the CSV here; otherwise it goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print a text table instead of CSV on stdout.
    #[arg(long)]
    pub table: bool,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, env = "LR_ADDR", default_value = "127.0.0.1")]
    pub addr: String,
    #[arg(long, env = "LR_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value = "oracle")]
    pub labeler: LabelerKind,
    #[arg(long)]
    pub classifiers: Option<PathBuf>,
    #[arg(long)]
    pub lm_corpus: Option<PathBuf>,
}

fn parse_key_value(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected attribute=value, got `{s}`"))
}

fn training_config(cli: &Cli) -> Result<TrainingConfig> {
    let mut cfg = match &cli.config {
        Some(p) => TrainingConfig::load(p)?,
        None => TrainingConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn seed(cli: &Cli) -> Result<u64> {
    Ok(training_config(cli)?.seed)
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::SynthData(a) => synth_data(&cli, a),
        Command::Train(a) => train(&cli, a),
        Command::TrainClassifiers(a) => train_classifiers(&cli, a),
        Command::RetrainPredictors(a) => retrain(&cli, a),
        Command::Transfer(a) => transfer(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Serve(a) => serve(a),
    }
}

fn synth_data(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let seed = seed(cli)?;
    let schema = AttributeSchema::sentiment_and_length(training_config(cli)?.max_len);
    let data = generate_synthetic_corpus(seed, a.n_per_class);
    let (train, heldout) = split_heldout(&data, a.heldout_per_class);
    fs::create_dir_all(&a.out)?;
    write_jsonl(&a.out.join("train.jsonl"), &train, &schema)?;
    write_jsonl(&a.out.join("heldout.jsonl"), &heldout, &schema)?;
    let mut out = BufWriter::new(fs::File::create(a.out.join("heldout-negative.jsonl"))?);
    for s in heldout
        .iter()
        .filter(|s| s.class_of("sentiment") == Some(NEGATIVE))
    {
        serde_json::to_writer(
            &mut out,
            &serde_json::json!({ "sentence": s.tokens.join(" ") }),
        )?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    println!(
        "wrote {} train / {} held-out sentences to {}",
        train.len(),
        heldout.len(),
        a.out.display()
    );
    Ok(())
}

fn load_schema(path: Option<&Path>, max_len: usize) -> Result<AttributeSchema> {
    match path {
        Some(p) => {
            let s: AttributeSchema = serde_json::from_str(&fs::read_to_string(p)?)?;
            Ok(AttributeSchema::new(s.attributes)?)
        }
        None => Ok(AttributeSchema::sentiment_and_length(max_len)),
    }
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg = training_config(cli)?;
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.lambda_b = a.lambda_b.unwrap_or(cfg.lambda_b);
    cfg.lambda_s = a.lambda_s.unwrap_or(cfg.lambda_s);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.validate()?;
    let schema = load_schema(a.schema.as_deref(), cfg.max_len)?;
    let data = read_jsonl(&a.data, &schema)?;
    let out = a.out.clone();
    let (mut model, report) = joint_train(&data, &schema, &cfg, |m, _| m.save(&out))?;
    model.save(&a.out)?;
    if let Some(p) = &a.report {
        report.write_csv(&mut BufWriter::new(fs::File::create(p)?))?;
    }
    report.write_csv(&mut std::io::stdout())?;
    Ok(())
}

fn train_classifiers(cli: &Cli, a: &ClassifierArgs) -> Result<()> {
    let model = StyleModel::load(&a.model)?;
    let attribute = model.schema.get(&a.attribute)?.clone();
    let data = read_jsonl(&a.data, &model.schema)?;
    let mut cfg = LabelerConfig {
        seed: seed(cli)?,
        ..LabelerConfig::default()
    };
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    let (labeler, report) = train_labeler(a.kind, &data, &attribute, &model.vocab, &cfg)?;
    let dir = labeler.save(&a.out)?;
    println!(
        "{} labeler for `{}`: held-out accuracy {:.4} on {} sentences -> {}",
        a.kind.as_str(),
        a.attribute,
        report.heldout_accuracy,
        report.heldout_size,
        dir.display()
    );
    Ok(())
}

fn load_labelers(
    root: &Path,
    model: &StyleModel,
    kind: LabelerKind,
) -> Result<BTreeMap<String, Labeler>> {
    let mut out = BTreeMap::new();
    for def in &model.schema.attributes {
        if def.num_classes().is_some() {
            out.insert(def.name.clone(), Labeler::load(root, &def.name, kind)?);
        }
    }
    Ok(out)
}

fn retrain(cli: &Cli, a: &RetrainArgs) -> Result<()> {
    let mut cfg = training_config(cli)?;
    cfg.retrain_samples = a.samples.unwrap_or(cfg.retrain_samples);
    cfg.retrain_passes = a.passes.unwrap_or(cfg.retrain_passes);
    let mut model = StyleModel::load(&a.model)?;
    let labelers = load_labelers(&a.classifiers, &model, a.kind)?;
    let report = retrain_predictors(&mut model, &labelers, &cfg)?;
    model.save(a.out.as_deref().unwrap_or(&a.model))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn transfer(a: &TransferArgs) -> Result<()> {
    let engine = TransferEngine::new(StyleModel::load(&a.model)?)?;
    let mut targets: BTreeMap<String, Value> = a
        .targets
        .iter()
        .map(|(k, v)| (k.clone(), Value::from(v.as_str())))
        .collect();
    if let Some(f) = a.length_factor {
        targets.insert("length_factor".into(), Value::from(f));
    }
    if !a.keywords.is_empty() {
        targets.insert("keywords".into(), Value::from(a.keywords.clone()));
    }
    let defaults = TransferRequest {
        sentence: String::new(),
        targets,
        preset: a.preset.clone(),
        overrides: Overrides {
            eta: a.eta,
            lambda_c: a.lambda_c,
            beta: a.beta,
            max_rounds: a.max_rounds,
            bow_mode: a.bow_mode,
        },
    };
    let input = BufReader::new(
        fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?,
    );
    let mut out = BufWriter::new(fs::File::create(&a.out)?);
    let n = transfer_jsonl(&engine, input, &mut out, &defaults)?;
    out.flush()?;
    log::info!("transferred {n} sentences");
    Ok(())
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1))
        })
        .collect()
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let preds: Vec<TransferRecord> = read_lines(&a.pred)?;
    let origs: Vec<TransferRequest> = read_lines(&a.orig)?;
    if preds.len() != origs.len() {
        bail!("{} predictions but {} inputs", preds.len(), origs.len());
    }
    let refs: Option<Vec<TransferRequest>> = a.refs.as_deref().map(read_lines).transpose()?;
    if let Some(r) = &refs {
        if r.len() != origs.len() {
            bail!("{} references but {} inputs", r.len(), origs.len());
        }
    }
    let model = a.model.as_deref().map(StyleModel::load).transpose()?;
    let schema = match &model {
        Some(m) => m.schema.clone(),
        None => AttributeSchema::sentiment_and_length(latent_revise::corpus::DEFAULT_MAX_LEN),
    };
    let style = schema.style_attribute()?.clone();
    let labeler = match a.labeler {
        LabelerKind::Oracle => Labeler::oracle(style.clone()),
        kind => {
            let Some(root) = &a.classifiers else {
                bail!("--classifiers is required for a {} labeler", kind.as_str())
            };
            Labeler::load(root, &style.name, kind)?
        }
    };
    let lm = match &a.lm_corpus {
        Some(p) => Some(KneserNeyLM::train(
            &read_jsonl(p, &schema)?
                .into_iter()
                .map(|s| s.tokens)
                .collect::<Vec<_>>(),
        )),
        None => None,
    };
    let mut records = Vec::with_capacity(preds.len());
    for (i, (p, o)) in preds.iter().zip(&origs).enumerate() {
        let input = tokenize(&o.sentence);
        let target_class = match p.targets.get(&style.name).and_then(Value::as_str) {
            Some(c) => Some(
                style
                    .class_index(c)
                    .with_context(|| format!("record {}: unknown class `{c}`", i + 1))?,
            ),
            None => None,
        };
        let keyword = p
            .targets
            .get("keywords")
            .and_then(Value::as_array)
            .and_then(|k| k.first())
            .and_then(Value::as_str)
            .map(str::to_string);
        records.push(EvalRecord {
            input_pos: model
                .as_ref()
                .and_then(|m| m.tagger.as_ref())
                .map(|t| t.tag(&input)),
            input,
            output: tokenize(&p.output),
            target_class,
            keyword,
            reference: refs.as_ref().map(|r| tokenize(&r[i].sentence)),
        });
    }
    let report = MetricsReport::compute(&records, Some(&labeler), lm.as_ref())?;
    if let Some(p) = &a.out {
        fs::write(p, report.to_csv())?;
    }
    if a.table {
        print!("{}", report.to_table());
    } else if a.out.is_none() {
        print!("{}", report.to_csv());
    }
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let model = StyleModel::load(&a.model)?;
    let labeler = match (a.labeler, &a.classifiers) {
        (LabelerKind::Oracle, _) => Some(Labeler::oracle(model.schema.style_attribute()?.clone())),
        (kind, Some(root)) => Some(Labeler::load(
            root,
            &model.schema.style_attribute()?.name,
            kind,
        )?),
        (_, None) => None,
    };
    let lm = match &a.lm_corpus {
        Some(p) => Some(KneserNeyLM::train(
            &read_jsonl(p, &model.schema)?
                .into_iter()
                .map(|s| s.tokens)
                .collect::<Vec<_>>(),
        )),
        None => None,
    };
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let state = Arc::new(AppState::new(
        TransferEngine::new(model)?,
        labeler,
        lm,
        workers,
    ));
    let addr = format!("{}:{}", a.addr, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        log::info!(
            "serving /v1 on {addr} with {workers} workers (checkpoint {})",
            state.engine.checkpoint
        );
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
