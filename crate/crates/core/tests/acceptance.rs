//! Acceptance suite. Runs every primary criterion at its pinned tolerance and
//! prints one PASS/FAIL line per criterion. Failures are listed at the end;
//! with `ACCEPTANCE_STRICT=1` any failure also makes the target exit non-zero.
//!
//! `cargo test -p latent-revise --test acceptance [-- <section>...]` runs the
//! named sections only (oracles, decoding, metrics, stopping, pipeline).

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use latent_revise::corpus::synthetic::{generate_synthetic_corpus, NEGATIVE, POSITIVE};
use latent_revise::corpus::{make_bow_target, read_jsonl, UNK};
use latent_revise::metrics::{bleu2, len_pct, noun_pct, overlap, KneserNeyLM};
use latent_revise::model::ModelConfig;
use latent_revise::nn::ParamId;
use latent_revise::pipeline::{
    run_synthetic, SyntheticConfig, SWEEP_BALANCE, SWEEP_KEYWORDS, SWEEP_LENGTH_DOWN,
    SWEEP_LENGTH_UP, SWEEP_NO_CONTENT, SWEEP_STRONG_CONTENT,
};
use latent_revise::predictors::ContentPredictor;
use latent_revise::revision::{objective_and_gradient, revise, revise_step, revision_objective};
use latent_revise::tape::Mat;
use latent_revise::vae::kl_to_prior;
use latent_revise::{
    AttributeSchema, AttributeTarget, BowMode, BowTarget, DecodeConfig, LatentCode,
    PosteriorParams, RevisionConfig, StopReason, StyleModel, Vae, VaeConfig, Vocabulary,
};

#[derive(Default)]
struct Outcome {
    lines: Vec<(bool, String)>,
}

impl Outcome {
    fn check(&mut self, name: &str, pass: bool, detail: impl AsRef<str>) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag}  {name}: {}", detail.as_ref());
        self.lines.push((pass, name.to_string()));
    }

    fn failed(&self) -> Vec<&str> {
        self.lines
            .iter()
            .filter(|(p, _)| !p)
            .map(|(_, n)| n.as_str())
            .collect()
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn tiny_model(
    vocab_words: &[&str],
    latent_dim: usize,
    hidden: Vec<usize>,
    seed: u64,
) -> StyleModel {
    let v = Vocabulary::from_tokens(vocab_words.iter().map(|w| w.to_string())).unwrap();
    let mut cfg = ModelConfig::new(VaeConfig {
        vocab_size: v.len(),
        embed_dim: 4,
        hidden_dim: 5,
        latent_dim,
        max_len: 25,
    });
    cfg.predictor_hidden = hidden;
    StyleModel::new(cfg, AttributeSchema::sentiment_and_length(25), v, seed).unwrap()
}

// ---------------------------------------------------------------- math oracles

fn math_oracles(out: &mut Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    // KL: closed form against a Monte-Carlo estimate with 1e5 samples.
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = rng.random_range(1..=4);
        let p = PosteriorParams {
            mu: (0..d).map(|_| rng.random_range(-1.5..1.5)).collect(),
            log_var: (0..d).map(|_| rng.random_range(-1.0..0.7)).collect(),
        };
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            for k in 0..d {
                let e: f64 = StandardNormal.sample(&mut rng);
                let z = p.mu[k] + (0.5 * p.log_var[k]).exp() * e;
                // log q(z) - log p(z), constants cancel
                acc += -0.5 * p.log_var[k] - 0.5 * e * e + 0.5 * z * z;
            }
        }
        worst = worst.max((acc / n as f64 - kl_to_prior(&p)).abs());
    }
    let zero = kl_to_prior(&PosteriorParams {
        mu: vec![0.0; 3],
        log_var: vec![0.0; 3],
    });
    out.check(
        "kl_to_prior matches Monte-Carlo KL (1e5 samples) within 0.01 on 20 draws",
        worst < 0.01,
        format!("max |MC - closed form| = {worst:.5}"),
    );
    out.check(
        "kl_to_prior(0, 0) = 0 exactly",
        zero == 0.0,
        format!("{zero}"),
    );

    // BoW log-probability against a hand-rolled forward pass and log-softmax.
    let mut worst: f64 = 0.0;
    let mut empty_ok = true;
    for i in 0..20 {
        let d = rng.random_range(2..=5);
        let v = rng.random_range(5..=15);
        let cp = ContentPredictor::new(d, v, &[6, 4], 100 + i);
        let z: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target: Vec<usize> = (0..rng.random_range(1..=5))
            .map(|_| rng.random_range(0..v))
            .collect();
        let got = cp
            .bow_log_prob(&LatentCode::new(z.clone()), &target)
            .unwrap();
        let want = manual_bow_log_prob(&cp, &z, &target);
        worst = worst.max((got - want).abs());
        empty_ok &= cp.bow_log_prob(&LatentCode::new(z), &[]).unwrap() == 0.0;
    }
    out.check(
        "bow_log_prob equals per-token log-softmax summation to 1e-6 on 20 fixtures",
        worst < 1e-6,
        format!("max abs error {worst:.2e}"),
    );
    out.check(
        "bow_log_prob of an empty target is 0",
        empty_ok,
        "20 fixtures",
    );

    // Gradient of the revision objective against central differences.
    let vocab: Vec<String> = (0..8).map(|i| format!("w{i}")).collect();
    let vocab_refs: Vec<&str> = vocab.iter().map(String::as_str).collect();
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let m = tiny_model(&vocab_refs, 4, vec![5, 3], 300 + i);
        assert_eq!(m.vocab.len(), 12);
        let z = LatentCode::new((0..4).map(|_| rng.random_range(-1.5..1.5)).collect());
        let targets = [
            AttributeTarget::class("sentiment", rng.random_range(0..2), 0.9),
            AttributeTarget::scalar("length", rng.random_range(2.0..20.0), 1.5),
        ];
        let bow = BowTarget {
            mode: BowMode::AllWords,
            ids: (4..12).filter(|_| rng.random_bool(0.5)).collect(),
        };
        let lambda_c = rng.random_range(0.0..1.0);
        let (_, grad) = objective_and_gradient(&m, &z, &targets, &bow, lambda_c).unwrap();
        let h = 1e-4;
        let fd: Vec<f64> = (0..4)
            .map(|k| {
                let mut up = z.clone();
                let mut down = z.clone();
                up.z[k] += h;
                down.z[k] -= h;
                let f = |z: &LatentCode| {
                    revision_objective(&m, z, &targets, &bow, lambda_c)
                        .unwrap()
                        .total
                };
                (f(&up) - f(&down)) / (2.0 * h)
            })
            .collect();
        let diff: f64 = grad
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = grad
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
        worst = worst.max(diff / scale.max(1e-12));
    }
    out.check(
        "revision objective gradient matches central differences (rel err < 1e-3, d=4, V=12, 50 points)",
        worst < 1e-3,
        format!("max relative error {worst:.2e}"),
    );

    // Hand gradient: f(z) = w.z, w = (1, 0), target 1, z = 0, eta 0.1 -> (0.2, 0).
    let mut m = tiny_model(&["a", "b"], 2, vec![], 1);
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
    let next = revise_step(
        &m,
        &LatentCode::new(vec![0.0, 0.0]),
        &t,
        &BowTarget::none(),
        0.1,
        0.0,
    )
    .unwrap();
    out.check(
        "hand-gradient case gives z = (0.2, 0)",
        next.z == vec![0.2, 0.0] || ((next.z[0] - 0.2).abs() < 1e-15 && next.z[1] == 0.0),
        format!("{:?}", next.z),
    );
}

/// tanh MLP forward pass from the raw parameter matrices, then a max-shifted
/// log-softmax per target token.
fn manual_bow_log_prob(cp: &ContentPredictor, z: &[f64], target: &[usize]) -> f64 {
    let mats: BTreeMap<&str, &Mat> = cp.params.iter().collect();
    let layers = mats.len() / 2;
    let mut h: Vec<f64> = z.to_vec();
    for l in 0..layers {
        let w = mats[format!("mlp.{l}.w").as_str()];
        let b = mats[format!("mlp.{l}.b").as_str()];
        let mut next = vec![0.0; w.ncols()];
        for (j, o) in next.iter_mut().enumerate() {
            *o = b[[0, j]] + (0..w.nrows()).map(|i| h[i] * w[[i, j]]).sum::<f64>();
            if l + 1 < layers {
                *o = o.tanh();
            }
        }
        h = next;
    }
    let max = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + h.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    target.iter().map(|&w| h[w] - log_z).sum()
}

// ------------------------------------------------------------ decoding oracle

fn decoding_oracle(out: &mut Outcome) {
    // V = 6: four reserved ids plus two words; UNK is emittable, so three
    // words can be generated and every hypothesis up to length 3 is listed.
    let emit = [UNK, 4, 5];
    let mut all: Vec<(Vec<usize>, bool)> = vec![(vec![], true)];
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for len in 1..=3 {
        let mut grown = Vec::new();
        for f in &frontier {
            for &w in &emit {
                let mut s = f.clone();
                s.push(w);
                all.push((s.clone(), len < 3));
                grown.push(s);
            }
        }
        frontier = grown;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut exact, mut greedy_same, mut total) = (0, 0, 0);
    for i in 0..20 {
        let vae = Vae::new(
            VaeConfig {
                vocab_size: 6,
                embed_dim: 3,
                hidden_dim: 4,
                latent_dim: 2,
                max_len: 3,
            },
            500 + i,
        );
        let z = LatentCode::new((0..2).map(|_| rng.random_range(-3.0..3.0)).collect());
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for (s, eos) in &all {
            let lp = vae.sequence_log_prob(&z, s, *eos).unwrap();
            if lp > best.0 {
                best = (lp, s.clone());
            }
        }
        let beam = vae.beam_search(&z, &DecodeConfig::beam(all.len() + 24, 3));
        if beam.tokens == best.1 && (beam.log_prob - best.0).abs() < 1e-9 {
            exact += 1;
        }
        total += 1;
        let one = vae.decode(&z, &DecodeConfig::beam(1, 3)).unwrap();
        let greedy = vae.decode(&z, &DecodeConfig::greedy(3)).unwrap();
        greedy_same += usize::from(one == greedy);
    }
    out.check(
        "beam search (width >= hypothesis count) equals exhaustive argmax on 20 z",
        exact == total,
        format!("{exact}/{total} agree; {} hypotheses", all.len()),
    );
    out.check(
        "beam_width=1 equals greedy",
        greedy_same == total,
        format!("{greedy_same}/{total} agree"),
    );
}

// ------------------------------------------------------------- metric oracles

fn metric_oracles(out: &mut Outcome) {
    let o = overlap(&words("a b c"), &words("b c d"));
    out.check("overlap({a,b,c}, {b,c,d}) = 0.5", o == 0.5, format!("{o}"));

    let refs = vec![
        words("the food was great"),
        words("service is slow"),
        words("i like it"),
    ];
    let b = bleu2(&refs, &refs).unwrap();
    out.check(
        "bleu2 self-score = 100",
        (b - 100.0).abs() < 1e-9,
        format!("{b}"),
    );

    let all = noun_pct(
        &words("the salads are fresh"),
        &words("DT NNS VBP JJ"),
        &words("the salads are bad"),
    );
    let two_thirds = noun_pct(&words("a b c d"), &words("NN NNS NNP VB"), &words("a c d"));
    out.check(
        "noun_pct hand fixtures (1.0 and 2/3)",
        all == 1.0 && (two_thirds - 2.0 / 3.0).abs() < 1e-15,
        format!("{all}, {two_thirds}"),
    );

    let ten = words("a b c d e f g h i j");
    let (lp, skipped) = len_pct(
        &[ten.clone(), ten.clone()],
        &[[ten.clone(), ten.clone()].concat(), ten[..5].to_vec()],
    );
    out.check(
        "len_pct mean fixture = 125.0",
        lp == 125.0 && skipped == 0,
        format!("{lp} (skipped {skipped})"),
    );

    // Interpolated KN (D = 0.75) on the corpus {"a b", "a c"}, worked by hand.
    let lm = KneserNeyLM::train(&[words("a b"), words("a c")]);
    let table = [
        ("<s>", "<s>", "a", 0.7665625),
        ("<s>", "a", "b", 0.314375),
        ("<s>", "a", "c", 0.314375),
        ("a", "b", "</s>", 0.645625),
        ("<s>", "a", "</s>", 0.208125),
        ("b", "c", "a", 0.1275),
        ("b", "c", "</s>", 0.5275),
        ("b", "c", "zzz", 0.09),
        ("zzz", "zzz", "a", 0.17),
        ("zzz", "zzz", "</s>", 0.37),
        ("zzz", "zzz", "zzz", 0.12),
    ];
    let worst = table
        .iter()
        .map(|(u, v, w, want)| (lm.prob(u, v, w) - want).abs())
        .fold(0.0, f64::max);
    out.check(
        "KN per-token probabilities match the hand table to 1e-6",
        worst < 1e-6,
        format!("max error {worst:.2e}"),
    );

    let corpus: Vec<Vec<String>> = generate_synthetic_corpus(2, 100)
        .into_iter()
        .map(|s| s.tokens)
        .collect();
    let lm = KneserNeyLM::train(&corpus);
    let vocab = lm.predictable();
    let mut ctx: Vec<&str> = vocab.clone();
    ctx.push("<s>");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let u = ctx[rng.random_range(0..ctx.len())];
        let v = ctx[rng.random_range(0..ctx.len())];
        let s: f64 = vocab.iter().map(|x| lm.prob(u, v, x)).sum();
        worst = worst.max((s - 1.0).abs());
    }
    out.check(
        "KN distributions sum to 1 +- 1e-9 over 1000 random contexts",
        worst < 1e-9,
        format!("max |sum - 1| = {worst:.2e}"),
    );
}

// ---------------------------------------------------------- stopping contract

fn stopping_contract(out: &mut Outcome) {
    let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
    let word_refs: Vec<&str> = words.iter().map(String::as_str).collect();
    let strategy = (
        any::<u64>(),
        2usize..6,
        1usize..12,
        prop_oneof![Just(1e-9), 0.01f64..0.99, Just(0.999_999)],
        prop_oneof![Just(1e-3), 0.01f64..3.0],
        0.0f64..0.5,
        0usize..3,
        proptest::collection::vec(0usize..10, 1..8),
    );
    let mut runner = TestRunner::new(Config {
        cases: 500,
        failure_persistence: None,
        ..Config::default()
    });
    let mut outcomes = BTreeMap::<&str, usize>::new();
    let result = runner.run(
        &strategy,
        |(seed, d, max_rounds, beta, eta, lambda_c, which, sentence)| {
            let m = tiny_model(&word_refs, d, vec![4], seed);
            let tokens: Vec<String> = sentence.iter().map(|&i| words[i].clone()).collect();
            let x = m.vocab.sequence(&tokens, None).unwrap();
            let mut targets = Vec::new();
            if which != 1 {
                targets.push(AttributeTarget::class(
                    "sentiment",
                    (seed % 2) as usize,
                    beta,
                ));
            }
            if which != 0 {
                targets.push(AttributeTarget::scalar(
                    "length",
                    (seed % 20 + 1) as f64,
                    0.5 + beta * 3.0,
                ));
            }
            let bow = make_bow_target(&x, BowMode::AllWords, None, &m.vocab).unwrap();
            let cfg = RevisionConfig {
                eta,
                lambda_c,
                max_rounds,
                decode_every_step: false,
                ..RevisionConfig::default()
            };
            let traj = revise(&m, &x, &targets, &bow, &cfg)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let last = traj.steps.last().expect("nonempty");
            match traj.stop_reason {
                StopReason::ThresholdMet => {
                    for t in &targets {
                        prop_assert!(
                            t.is_satisfied(&last.confidences[&t.attribute]),
                            "threshold-met with {t:?} unmet"
                        );
                    }
                    prop_assert!(traj.steps.len() <= max_rounds);
                }
                StopReason::RoundLimit => prop_assert_eq!(traj.steps.len(), max_rounds),
            }
            let ts: Vec<usize> = traj.steps.iter().map(|s| s.t).collect();
            prop_assert!(ts.windows(2).all(|w| w[1] == w[0] + 1));
            Ok(())
        },
    );
    // A second pass records the outcome mix so the line shows both branches ran.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..100 {
        let m = tiny_model(&word_refs, 3, vec![4], i);
        let x = m.vocab.sequence(&words[..4], None).unwrap();
        let beta = if rng.random_bool(0.5) {
            1e-9
        } else {
            0.999_999
        };
        let t = [AttributeTarget::class("sentiment", 1, beta)];
        let cfg = RevisionConfig {
            max_rounds: 3,
            ..RevisionConfig::default()
        };
        let traj = revise(&m, &x, &t, &BowTarget::none(), &cfg).unwrap();
        *outcomes
            .entry(if traj.stop_reason == StopReason::ThresholdMet {
                "threshold-met"
            } else {
                "round-limit"
            })
            .or_default() += 1;
    }
    out.check(
        "stopping contract holds on 500 randomized revise calls",
        result.is_ok() && outcomes.len() == 2,
        match &result {
            Ok(()) => format!("no violations; outcome mix on a 100-call probe {outcomes:?}"),
            Err(e) => format!("{e}"),
        },
    );
}

// -------------------------------------------------------- synthetic pipeline

fn pipeline(out: &mut Outcome) {
    let cfg = SyntheticConfig::reference(7);
    let dir = tempfile::tempdir().expect("tempdir");
    let started = Instant::now();
    let report = match run_synthetic(&cfg, Some(dir.path())) {
        Ok(r) => r,
        Err(e) => {
            out.check("synthetic pipeline runs", false, e.to_string());
            return;
        }
    };
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    println!("      pipeline run took {minutes:.1} min");

    let sweep = |name: &str| report.sweep(name).expect("sweep present");
    let pct = |v: Option<f64>| v.unwrap_or(f64::NAN);

    let b = sweep(SWEEP_BALANCE);
    let acc = pct(b.metrics.accuracy);
    out.check(
        "balance: oracle transfer accuracy >= 90%",
        acc >= 90.0,
        format!("{acc:.1}%"),
    );
    out.check(
        "balance: word overlap >= 40%",
        b.metrics.overlap >= 40.0,
        format!("{:.1}%", b.metrics.overlap),
    );
    out.check(
        "balance: threshold-met rate >= 85%",
        b.threshold_met_pct >= 85.0,
        format!("{:.1}%", b.threshold_met_pct),
    );

    let (lo, hi) = (sweep(SWEEP_NO_CONTENT), sweep(SWEEP_STRONG_CONTENT));
    let gain = hi.metrics.overlap - lo.metrics.overlap;
    out.check(
        "lambda_c trade-off: overlap(0.2) - overlap(0) >= 2 points",
        gain >= 2.0,
        format!(
            "{:.1} vs {:.1} ({gain:+.1})",
            hi.metrics.overlap, lo.metrics.overlap
        ),
    );
    let (acc_hi, acc_lo) = (pct(hi.metrics.accuracy), pct(lo.metrics.accuracy));
    out.check(
        "lambda_c trade-off: accuracy(0.2) <= accuracy(0) + 2 points",
        acc_hi <= acc_lo + 2.0,
        format!("{acc_hi:.1} vs {acc_lo:.1}"),
    );

    let r = &report.retrain;
    let improved = r
        .accuracy_before
        .iter()
        .all(|(k, before)| r.accuracy_after.get(k).is_some_and(|after| after >= before));
    out.check(
        "retraining: prior-sample accuracy after >= before",
        improved && !r.accuracy_before.is_empty(),
        format!("{:?} -> {:?}", r.accuracy_before, r.accuracy_after),
    );

    let (kl, kl0) = (
        report.final_kl().unwrap_or(f64::NAN),
        report.final_kl_without_bow().unwrap_or(f64::NAN),
    );
    out.check(
        "KL guard: final KL with lambda_b=1 > with lambda_b=0",
        kl > kl0,
        format!("{kl:.3} vs {kl0:.3}"),
    );

    let (up, down) = (sweep(SWEEP_LENGTH_UP), sweep(SWEEP_LENGTH_DOWN));
    out.check(
        "length up (x2): mean Len% >= 150",
        up.metrics.len_pct >= 150.0,
        format!("{:.1}", up.metrics.len_pct),
    );
    out.check(
        "length down (x0.5): mean Len% <= 75",
        down.metrics.len_pct <= 75.0,
        format!("{:.1}", down.metrics.len_pct),
    );
    let (acc_up, acc_down) = (pct(up.metrics.accuracy), pct(down.metrics.accuracy));
    out.check(
        "length control: sentiment accuracy >= 80% when combined",
        acc_up >= 80.0 && acc_down >= 80.0,
        format!("up {acc_up:.1}%, down {acc_down:.1}%"),
    );

    let k = sweep(SWEEP_KEYWORDS);
    let key = pct(k.metrics.key_pct);
    out.check(
        "keyword control: Key% >= 75 on 200 transfers",
        key >= 75.0 && k.metrics.n == 200,
        format!("{key:.1}% on {}", k.metrics.n),
    );

    let again = run_synthetic(&cfg, None).map(|r| r.fingerprint());
    out.check(
        "determinism: seed-7 rerun reproduces every report number",
        again.as_ref().is_ok_and(|f| *f == report.fingerprint()),
        match &again {
            Ok(f) if *f == report.fingerprint() => "fingerprints equal".to_string(),
            Ok(_) => "fingerprints differ".to_string(),
            Err(e) => e.to_string(),
        },
    );
    let total: f64 = report.seconds.values().sum();
    println!("      timings (s): {:?}, total {total:.0}", report.seconds);

    monotone_descent(out, dir.path());
}

/// Small steps on the trained model: the objective should not increase
/// between consecutive steps.
fn monotone_descent(out: &mut Outcome, dir: &Path) {
    let model = StyleModel::load(&dir.join("model")).expect("saved model");
    let heldout = read_jsonl(&dir.join("heldout.jsonl"), &model.schema).expect("heldout split");
    let cfg = RevisionConfig {
        eta: 1e-3,
        lambda_c: 0.1,
        max_rounds: 20,
        decode_every_step: false,
        ..RevisionConfig::default()
    };
    let (mut down, mut pairs) = (0usize, 0usize);
    for s in heldout
        .iter()
        .filter(|s| s.class_of("sentiment") == Some(NEGATIVE))
        .take(100)
    {
        let x = model.vocab.sequence(&s.tokens, s.pos_tags.clone()).unwrap();
        let bow = make_bow_target(&x, model.config.train_bow_mode, None, &model.vocab).unwrap();
        let t = [AttributeTarget::class("sentiment", POSITIVE, 0.999_999)];
        let traj = revise(&model, &x, &t, &bow, &cfg).unwrap();
        for w in traj.steps.windows(2) {
            pairs += 1;
            down += usize::from(w[1].losses.total <= w[0].losses.total);
        }
    }
    let share = 100.0 * down as f64 / pairs.max(1) as f64;
    out.check(
        "monotone descent at eta=1e-3: >= 95% of step pairs non-increasing on 100 sentences",
        share >= 95.0 && pairs > 0,
        format!("{share:.1}% of {pairs} pairs"),
    );
}

fn main() -> ExitCode {
    type Section = (&'static str, fn(&mut Outcome));
    let sections: [Section; 5] = [
        ("oracles", math_oracles),
        ("decoding", decoding_oracle),
        ("metrics", metric_oracles),
        ("stopping", stopping_contract),
        ("pipeline", pipeline),
    ];
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut out = Outcome::default();
    for (name, run) in sections {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        println!("== {name}");
        let t = Instant::now();
        run(&mut out);
        println!("   ({name}: {:.1}s)", t.elapsed().as_secs_f64());
    }
    let failed = out.failed();
    println!("\n{} criteria, {} failed", out.lines.len(), failed.len());
    for f in &failed {
        println!("  failed: {f}");
    }
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed.is_empty() || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
