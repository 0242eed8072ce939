//! GRU sequence VAE: encoder q(z|x), standard normal prior, decoder p(x|z),
//! ELBO terms, and greedy / beam decoding.
//!
//! The decoder is conditioned on `z` twice: `tanh(W z + b)` initializes its
//! hidden state, and `z` is fed alongside the token embedding at every step.

use ndarray::{Array1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS, EOS, PAD};
use crate::nn::{masked_update, Binder, Gru, Linear, ParamStore};
use crate::tape::{Graph, Mat, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub max_len: usize,
}

impl VaeConfig {
    pub fn synthetic(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 128,
            hidden_dim: 256,
            latent_dim: 64,
            max_len: crate::corpus::DEFAULT_MAX_LEN,
        }
    }

    pub fn real(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 300,
            hidden_dim: 512,
            latent_dim: 128,
            max_len: crate::corpus::DEFAULT_MAX_LEN,
        }
    }
}

/// Diagonal Gaussian posterior `N(mu, exp(log_var))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorParams {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub z: Vec<f64>,
}

impl LatentCode {
    pub fn new(z: Vec<f64>) -> Self {
        Self { z }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn as_row(&self) -> Mat {
        Mat::from_shape_vec((1, self.z.len()), self.z.clone()).expect("row shape")
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().all(|x| x.is_finite())
    }
}

/// `z = mu + exp(log_var / 2) * noise`.
pub fn sample_latent(p: &PosteriorParams, noise: &[f64]) -> Result<LatentCode> {
    if noise.len() != p.mu.len() || p.log_var.len() != p.mu.len() {
        return Err(Error::Dimension {
            expected: p.mu.len(),
            got: noise.len(),
        });
    }
    let z =
        p.mu.iter()
            .zip(&p.log_var)
            .zip(noise)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
    Ok(LatentCode { z })
}

/// Closed-form `KL(N(mu, sigma^2) || N(0, I))`.
pub fn kl_to_prior(p: &PosteriorParams) -> f64 {
    0.5 * p
        .mu
        .iter()
        .zip(&p.log_var)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Beam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub beam_width: usize,
    pub max_len: usize,
    pub length_norm_alpha: f64,
}

impl DecodeConfig {
    pub fn greedy(max_len: usize) -> Self {
        Self {
            mode: DecodeMode::Greedy,
            beam_width: 1,
            max_len,
            length_norm_alpha: 0.0,
        }
    }

    pub fn beam(width: usize, max_len: usize) -> Self {
        Self {
            mode: DecodeMode::Beam,
            beam_width: width,
            max_len,
            length_norm_alpha: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0
            || self.beam_width == 0
            || self.length_norm_alpha.is_nan()
            || self.length_norm_alpha < 0.0
        {
            return Err(Error::Invalid(format!("invalid decode config {self:?}")));
        }
        Ok(())
    }
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self::beam(5, crate::corpus::DEFAULT_MAX_LEN)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElboTerms {
    pub rec: f64,
    pub kl: f64,
    pub weighted_total: f64,
}

/// Tape nodes produced by a batched training forward pass.
pub struct BatchForward {
    pub mu: Var,
    pub log_var: Var,
    pub z: Var,
    /// Sum of per-sentence reconstruction NLL over the batch.
    pub rec: Var,
    /// Sum of per-sentence KL over the batch.
    pub kl: Var,
}

#[derive(Clone, Debug)]
pub struct Vae {
    pub config: VaeConfig,
    pub params: ParamStore,
    embedding: crate::nn::ParamId,
    encoder: Gru,
    mu_head: Linear,
    log_var_head: Linear,
    init_head: Linear,
    decoder: Gru,
    decoder_z: Linear,
    output: Linear,
}

impl Vae {
    pub fn new(config: VaeConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (v, e, h, d) = (
            config.vocab_size,
            config.embed_dim,
            config.hidden_dim,
            config.latent_dim,
        );
        let embedding = params.uniform("embedding", v, e, 0.1, &mut rng);
        let encoder = Gru::new(&mut params, "encoder", e, h, &mut rng);
        let mu_head = Linear::new(&mut params, "mu", h, d, true, &mut rng);
        let log_var_head = Linear::new(&mut params, "log_var", h, d, true, &mut rng);
        let init_head = Linear::new(&mut params, "init", d, h, true, &mut rng);
        let decoder = Gru::new(&mut params, "decoder", e, h, &mut rng);
        let decoder_z = Linear::new(&mut params, "decoder_z", d, 3 * h, false, &mut rng);
        let output = Linear::new(&mut params, "output", h, v, true, &mut rng);
        Self {
            config,
            params,
            embedding,
            encoder,
            mu_head,
            log_var_head,
            init_head,
            decoder,
            decoder_z,
            output,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// The token embedding table (`V x E`).
    pub fn embedding_table(&self) -> &Mat {
        self.params.get(self.embedding)
    }

    fn check_sequence(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() || ids.len() > self.config.max_len {
            return Err(Error::Invalid(format!(
                "sequence length {} outside 1..={}",
                ids.len(),
                self.config.max_len
            )));
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Encoder graph for a batch; returns `(mu, log_var)` nodes (`B x d`).
    pub fn encode_graph(&self, g: &mut Graph, p: &mut Binder, batch: &[&[usize]]) -> (Var, Var) {
        let b = batch.len();
        let t_max = batch.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(t_max * b);
        for t in 0..t_max {
            ids.extend(batch.iter().map(|s| s.get(t).copied().unwrap_or(PAD)));
        }
        let table = p.get(g, self.embedding);
        let x = g.select_rows(table, &ids);
        let gx = self.encoder.project_input(g, p, x);
        let mut h = g.constant(Mat::zeros((b, self.config.hidden_dim)));
        for t in 0..t_max {
            let gx_t = g.slice_rows(gx, t * b, b);
            let next = self.encoder.step(g, p, gx_t, h);
            h = if batch.iter().all(|s| s.len() > t) {
                next
            } else {
                let mask =
                    Mat::from_shape_fn((b, 1), |(i, _)| if batch[i].len() > t { 1.0 } else { 0.0 });
                masked_update(g, h, next, &mask)
            };
        }
        let mu = self.mu_head.forward(g, p, h);
        let log_var = self.log_var_head.forward(g, p, h);
        (mu, log_var)
    }

    /// Teacher-forced decoder log-probabilities. Returns the `(T+1)B x V`
    /// log-softmax node in time-major order (row `t * B + i`), where step `t`
    /// predicts token `t` of sentence `i` and step `len_i` predicts EOS.
    fn decoder_log_probs(&self, g: &mut Graph, p: &mut Binder, z: Var, batch: &[&[usize]]) -> Var {
        let b = batch.len();
        let steps = batch.iter().map(|s| s.len()).max().unwrap_or(0) + 1;
        let mut inputs = Vec::with_capacity(steps * b);
        for t in 0..steps {
            inputs.extend(batch.iter().map(|s| {
                if t == 0 {
                    BOS
                } else {
                    s.get(t - 1).copied().unwrap_or(PAD)
                }
            }));
        }
        let h0 = self.init_head.forward(g, p, z);
        let mut h = g.tanh(h0);
        let gz = self.decoder_z.forward(g, p, z);
        let table = p.get(g, self.embedding);
        let x = g.select_rows(table, &inputs);
        let gx = self.decoder.project_input(g, p, x);
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let gx_t = g.slice_rows(gx, t * b, b);
            let gx_t = g.add(gx_t, gz);
            h = self.decoder.step(g, p, gx_t, h);
            states.push(h);
        }
        let all = g.concat_rows(&states);
        let logits = self.output.forward(g, p, all);
        g.log_softmax(logits)
    }

    fn target_picks(batch: &[&[usize]]) -> Vec<(usize, usize, f64)> {
        let b = batch.len();
        let mut picks = Vec::new();
        for (i, s) in batch.iter().enumerate() {
            for t in 0..=s.len() {
                let target = if t < s.len() { s[t] } else { EOS };
                picks.push((t * b + i, target, 1.0));
            }
        }
        picks
    }

    /// Summed reconstruction NLL of `batch` under latent rows `z`.
    pub fn reconstruction_graph(
        &self,
        g: &mut Graph,
        p: &mut Binder,
        z: Var,
        batch: &[&[usize]],
    ) -> Var {
        let lp = self.decoder_log_probs(g, p, z, batch);
        let ll = g.gather_sum(lp, Self::target_picks(batch));
        g.scale(ll, -1.0)
    }

    /// Full batched ELBO forward with explicit reparameterization noise (`B x d`).
    pub fn forward_batch(
        &self,
        g: &mut Graph,
        p: &mut Binder,
        batch: &[&[usize]],
        noise: &Mat,
    ) -> BatchForward {
        let (mu, log_var) = self.encode_graph(g, p, batch);
        let half = g.scale(log_var, 0.5);
        let sigma = g.exp(half);
        let eps = g.constant(noise.clone());
        let spread = g.mul(sigma, eps);
        let z = g.add(mu, spread);
        let rec = self.reconstruction_graph(g, p, z, batch);
        // KL = 0.5 * sum(mu^2 + exp(lv) - 1 - lv)
        let mu2 = g.mul(mu, mu);
        let var = g.exp(log_var);
        let a = g.add(mu2, var);
        let b = g.sub(a, log_var);
        let s = g.sum(b);
        let count = (batch.len() * self.config.latent_dim) as f64;
        let kl = g.affine(s, 0.5, -0.5 * count);
        BatchForward {
            mu,
            log_var,
            z,
            rec,
            kl,
        }
    }

    pub fn encode_batch(&self, batch: &[&[usize]]) -> Result<Vec<PosteriorParams>> {
        for s in batch {
            self.check_sequence(s)?;
        }
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, false);
        let (mu, lv) = self.encode_graph(&mut g, &mut p, batch);
        let (mu, lv) = (g.value(mu), g.value(lv));
        Ok((0..batch.len())
            .map(|i| PosteriorParams {
                mu: mu.row(i).to_vec(),
                log_var: lv.row(i).to_vec(),
            })
            .collect())
    }

    pub fn encode(&self, ids: &[usize]) -> Result<PosteriorParams> {
        Ok(self.encode_batch(&[ids])?.remove(0))
    }

    fn check_latent(&self, z: &LatentCode) -> Result<()> {
        if z.dim() != self.config.latent_dim {
            return Err(Error::Dimension {
                expected: self.config.latent_dim,
                got: z.dim(),
            });
        }
        Ok(())
    }

    /// `-log p(x|z)` including the EOS step.
    pub fn reconstruction_nll(&self, z: &LatentCode, ids: &[usize]) -> Result<f64> {
        self.check_latent(z)?;
        self.check_sequence(ids)?;
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, false);
        let zv = g.constant(z.as_row());
        let rec = self.reconstruction_graph(&mut g, &mut p, zv, &[ids]);
        Ok(g.scalar(rec))
    }

    /// Log-probability of emitting exactly `ids`, optionally followed by EOS.
    /// Empty `ids` with `with_eos` scores the immediate-EOS sentence.
    pub fn sequence_log_prob(&self, z: &LatentCode, ids: &[usize], with_eos: bool) -> Result<f64> {
        self.check_latent(z)?;
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, false);
        let zv = g.constant(z.as_row());
        let lp = self.decoder_log_probs(&mut g, &mut p, zv, &[ids]);
        let lp = g.value(lp);
        let mut total: f64 = ids.iter().enumerate().map(|(t, &id)| lp[[t, id]]).sum();
        if with_eos {
            total += lp[[ids.len(), EOS]];
        }
        Ok(total)
    }

    pub fn elbo_terms(&self, ids: &[usize], noise: &[f64], kl_weight: f64) -> Result<ElboTerms> {
        if kl_weight.is_nan() || kl_weight < 0.0 {
            return Err(Error::Invalid(format!(
                "kl_weight must be >= 0, got {kl_weight}"
            )));
        }
        let post = self.encode(ids)?;
        let z = sample_latent(&post, noise)?;
        let rec = self.reconstruction_nll(&z, ids)?;
        let kl = kl_to_prior(&post);
        Ok(ElboTerms {
            rec,
            kl,
            weighted_total: rec + kl_weight * kl,
        })
    }

    fn decoder_start(&self, z: &Mat) -> (Mat, Mat) {
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, false);
        let zv = g.constant(z.clone());
        let h0 = self.init_head.forward(&mut g, &mut p, zv);
        let h0 = g.tanh(h0);
        let gz = self.decoder_z.forward(&mut g, &mut p, zv);
        (g.value(h0).clone(), g.value(gz).clone())
    }

    /// One decoder step for each row: returns `(log_probs B x V, h' B x H)`.
    fn decoder_step(&self, h: &Mat, gz: &Mat, inputs: &[usize]) -> (Mat, Mat) {
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, false);
        let table = p.get(&mut g, self.embedding);
        let x = g.select_rows(table, inputs);
        let gx = self.decoder.project_input(&mut g, &mut p, x);
        let gzv = g.constant(gz.clone());
        let gx = g.add(gx, gzv);
        let hv = g.constant(h.clone());
        let h2 = self.decoder.step(&mut g, &mut p, gx, hv);
        let logits = self.output.forward(&mut g, &mut p, h2);
        let lp = g.log_softmax(logits);
        (g.value(lp).clone(), g.value(h2).clone())
    }

    fn emittable(id: usize) -> bool {
        id != PAD && id != BOS
    }

    /// Greedy decoding of every row of `z` (`B x d`). Output ids exclude EOS.
    pub fn decode_greedy_batch(&self, z: &Mat, max_len: usize) -> Vec<Vec<usize>> {
        let b = z.nrows();
        let (mut h, gz) = self.decoder_start(z);
        let mut inputs = vec![BOS; b];
        let mut out = vec![Vec::new(); b];
        let mut done = vec![false; b];
        for _ in 0..max_len {
            if done.iter().all(|d| *d) {
                break;
            }
            let (lp, h2) = self.decoder_step(&h, &gz, &inputs);
            h = h2;
            for i in 0..b {
                if done[i] {
                    continue;
                }
                let best = argmax_emittable(lp.row(i).as_slice().expect("contiguous"));
                if best == EOS {
                    done[i] = true;
                } else {
                    out[i].push(best);
                    inputs[i] = best;
                }
            }
        }
        out
    }

    pub fn decode(&self, z: &LatentCode, cfg: &DecodeConfig) -> Result<Vec<usize>> {
        self.check_latent(z)?;
        cfg.validate()?;
        match cfg.mode {
            DecodeMode::Greedy => Ok(self.decode_greedy_batch(&z.as_row(), cfg.max_len).remove(0)),
            DecodeMode::Beam => Ok(self.beam_search(z, cfg).tokens),
        }
    }

    /// Beam search where finished hypotheses occupy beam slots. A hypothesis
    /// finishes on EOS or when it reaches `max_len` tokens. Candidates are
    /// ranked by total log-probability; ties go to the lower (parent, token)
    /// index. The best finished hypothesis by length-normalized score wins.
    pub fn beam_search(&self, z: &LatentCode, cfg: &DecodeConfig) -> Hypothesis {
        let (h0, gz) = self.decoder_start(&z.as_row());
        let mut alive = vec![Beam {
            tokens: Vec::new(),
            log_prob: 0.0,
            h: h0.row(0).to_owned(),
        }];
        let mut finished: Vec<Hypothesis> = Vec::new();
        while !alive.is_empty() {
            let n = alive.len();
            let h = ndarray::stack(
                Axis(0),
                &alive.iter().map(|b| b.h.view()).collect::<Vec<_>>(),
            )
            .expect("same width");
            let gz_rows = gz.broadcast((n, gz.ncols())).expect("broadcast").to_owned();
            let inputs: Vec<usize> = alive
                .iter()
                .map(|b| b.tokens.last().copied().unwrap_or(BOS))
                .collect();
            let (lp, h2) = self.decoder_step(&h, &gz_rows, &inputs);
            let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(n * lp.ncols());
            for i in 0..n {
                for w in (0..lp.ncols()).filter(|&w| Self::emittable(w)) {
                    candidates.push((alive[i].log_prob + lp[[i, w]], i, w));
                }
            }
            // stable sort keeps (parent, token) order among equal scores
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut next = Vec::new();
            for &(score, parent, w) in candidates.iter().take(cfg.beam_width) {
                let mut tokens = alive[parent].tokens.clone();
                if w == EOS {
                    finished.push(Hypothesis::new(tokens, score, true, cfg.length_norm_alpha));
                    continue;
                }
                tokens.push(w);
                if tokens.len() >= cfg.max_len {
                    finished.push(Hypothesis::new(tokens, score, false, cfg.length_norm_alpha));
                } else {
                    next.push(Beam {
                        tokens,
                        log_prob: score,
                        h: h2.row(parent).to_owned(),
                    });
                }
            }
            alive = next;
        }
        let mut best = 0;
        for (i, hyp) in finished.iter().enumerate() {
            if hyp.score > finished[best].score {
                best = i;
            }
        }
        finished.swap_remove(best)
    }
}

fn argmax_emittable(row: &[f64]) -> usize {
    let mut best = EOS;
    for (w, &v) in row.iter().enumerate() {
        if Vae::emittable(w) && v > row[best] {
            best = w;
        }
    }
    best
}

struct Beam {
    tokens: Vec<usize>,
    log_prob: f64,
    h: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub ended_with_eos: bool,
    /// `log_prob / len^alpha`, with `len` counting EOS when present.
    pub score: f64,
}

impl Hypothesis {
    fn new(tokens: Vec<usize>, log_prob: f64, eos: bool, alpha: f64) -> Self {
        let len = (tokens.len() + usize::from(eos)).max(1) as f64;
        let score = if alpha == 0.0 {
            log_prob
        } else {
            log_prob / len.powf(alpha)
        };
        Self {
            tokens,
            log_prob,
            ended_with_eos: eos,
            score,
        }
    }
}
