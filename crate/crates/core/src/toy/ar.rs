//! Fixed-window next-token model with a condition embedding.
//!
//! Input at position n is the concatenated embeddings of the previous
//! `window` tokens (a pad row fills positions before the start) plus the
//! embedding of the condition, whose last row is the null condition. One
//! tanh hidden layer feeds the vocabulary logits.

use std::io::Write;

use flate2::write::ZlibEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::toy::corpus::ArSample;
use crate::trace::{ArmStep, ArmTrace};

pub const DEFAULT_VOCAB: usize = 32;
pub const DEFAULT_WINDOW: usize = 16;
pub const DEFAULT_EMBED: usize = 8;
pub const DEFAULT_HIDDEN: usize = 64;
pub const BATCH_SIZE: usize = 32;
/// Probability of training a sequence under the null condition.
pub const CONDITION_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyArModel {
    pub vocab: usize,
    pub window: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub n_conditions: usize,
    /// (vocab + 1) x embed_dim; the last row is the pad token.
    token_emb: Vec<f64>,
    /// (n_conditions + 1) x embed_dim; the last row is the null condition.
    cond_emb: Vec<f64>,
    /// hidden x input_dim
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// vocab x hidden
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Which conditioning row to feed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    Label(u32),
    Null,
}

struct Activations {
    input: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
    log_probs: Vec<f64>,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

impl ToyArModel {
    pub fn new(vocab: usize, window: usize, embed_dim: usize, hidden: usize, n_conditions: usize, seed: u64) -> Self {
        let mut r = rng::split(seed, "ar-init");
        let input = window * embed_dim + embed_dim;
        let mut gauss = |n: usize, sd: f64| -> Vec<f64> {
            let d = Normal::new(0.0, sd).expect("positive sd");
            (0..n).map(|_| d.sample(&mut r)).collect()
        };
        Self {
            vocab,
            window,
            embed_dim,
            hidden,
            n_conditions,
            token_emb: gauss((vocab + 1) * embed_dim, 0.5),
            cond_emb: gauss((n_conditions + 1) * embed_dim, 0.5),
            w1: gauss(hidden * input, 1.0 / (input as f64).sqrt()),
            b1: vec![0.0; hidden],
            w2: gauss(vocab * hidden, 1.0 / (hidden as f64).sqrt()),
            b2: vec![0.0; vocab],
        }
    }

    fn input_dim(&self) -> usize {
        self.window * self.embed_dim + self.embed_dim
    }

    fn cond_row(&self, c: Conditioning) -> usize {
        match c {
            Conditioning::Label(l) => (l as usize).min(self.n_conditions),
            Conditioning::Null => self.n_conditions,
        }
    }

    /// Token ids of the context window ending before `pos`; `vocab` marks padding.
    fn context(&self, tokens: &[u32], pos: usize) -> Vec<usize> {
        (0..self.window)
            .map(|j| {
                let back = self.window - j;
                if pos >= back { tokens[pos - back] as usize } else { self.vocab }
            })
            .collect()
    }

    fn forward(&self, ctx: &[usize], cond_row: usize) -> Activations {
        let e = self.embed_dim;
        let mut input = Vec::with_capacity(self.input_dim());
        for &tok in ctx {
            input.extend_from_slice(&self.token_emb[tok * e..(tok + 1) * e]);
        }
        input.extend_from_slice(&self.cond_emb[cond_row * e..(cond_row + 1) * e]);
        let n_in = input.len();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * n_in..(h + 1) * n_in];
                (self.b1[h] + row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>()).tanh()
            })
            .collect();
        let logits: Vec<f64> = (0..self.vocab)
            .map(|v| {
                let row = &self.w2[v * self.hidden..(v + 1) * self.hidden];
                self.b2[v] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        let log_probs = log_softmax(&logits);
        Activations { input, hidden, logits, log_probs }
    }

    /// Natural-log next-token distribution at position `pos` of `tokens`.
    pub fn log_probs(&self, tokens: &[u32], pos: usize, cond: Conditioning) -> Vec<f64> {
        self.forward(&self.context(tokens, pos), self.cond_row(cond)).log_probs
    }

    /// Mean per-token negative log-likelihood of a sample.
    pub fn mean_nll(&self, sample: &ArSample) -> f64 {
        let cond = Conditioning::Label(sample.condition);
        let n = sample.tokens.len();
        (0..n)
            .map(|p| -self.log_probs(&sample.tokens, p, cond)[sample.tokens[p] as usize])
            .sum::<f64>()
            / n as f64
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab) {
            Some(&t) => Err(Error::TokenOutOfRange { token: t as usize, vocab: self.vocab }),
            None => Ok(()),
        }
    }
}

/// Accumulated parameter gradients, same layout as the model.
struct Grads {
    token_emb: Vec<f64>,
    cond_emb: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Grads {
    fn zeros(m: &ToyArModel) -> Self {
        Self {
            token_emb: vec![0.0; m.token_emb.len()],
            cond_emb: vec![0.0; m.cond_emb.len()],
            w1: vec![0.0; m.w1.len()],
            b1: vec![0.0; m.b1.len()],
            w2: vec![0.0; m.w2.len()],
            b2: vec![0.0; m.b2.len()],
        }
    }
}

impl ToyArModel {
    /// Adds `scale * d(-log p(target))/d(params)` into `g`; returns the loss.
    fn accumulate(&self, ctx: &[usize], cond_row: usize, target: usize, scale: f64, g: &mut Grads) -> f64 {
        let act = self.forward(ctx, cond_row);
        let (h_n, n_in, e) = (self.hidden, act.input.len(), self.embed_dim);
        let mut dh = vec![0.0; h_n];
        for v in 0..self.vocab {
            let dz = scale * (act.log_probs[v].exp() - if v == target { 1.0 } else { 0.0 });
            g.b2[v] += dz;
            let row = v * h_n;
            for h in 0..h_n {
                g.w2[row + h] += dz * act.hidden[h];
                dh[h] += dz * self.w2[row + h];
            }
        }
        let mut dx = vec![0.0; n_in];
        for h in 0..h_n {
            let dpre = dh[h] * (1.0 - act.hidden[h] * act.hidden[h]);
            g.b1[h] += dpre;
            let row = h * n_in;
            for i in 0..n_in {
                g.w1[row + i] += dpre * act.input[i];
                dx[i] += dpre * self.w1[row + i];
            }
        }
        for (j, &tok) in ctx.iter().enumerate() {
            for k in 0..e {
                g.token_emb[tok * e + k] += dx[j * e + k];
            }
        }
        let off = ctx.len() * e;
        for k in 0..e {
            g.cond_emb[cond_row * e + k] += dx[off + k];
        }
        let _ = act.logits;
        -act.log_probs[target]
    }

    fn apply(&mut self, g: &Grads, lr: f64) {
        let step = |p: &mut [f64], d: &[f64]| p.iter_mut().zip(d).for_each(|(p, d)| *p -= lr * d);
        step(&mut self.token_emb, &g.token_emb);
        step(&mut self.cond_emb, &g.cond_emb);
        step(&mut self.w1, &g.w1);
        step(&mut self.b1, &g.b1);
        step(&mut self.w2, &g.w2);
        step(&mut self.b2, &g.b2);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    /// Mean training loss of each epoch (as seen during the epoch).
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap_or(&self.initial_loss)
    }
}

/// Stateful trainer so callers can checkpoint between epochs.
pub struct ArTrainer<'a> {
    pub model: ToyArModel,
    data: &'a [ArSample],
    lr: f64,
    rng: rng::AuditRng,
    order: Vec<usize>,
    pub report: TrainReport,
}

impl<'a> ArTrainer<'a> {
    pub fn new(data: &'a [ArSample], lr: f64, seed: u64) -> Result<Self> {
        Self::with_model(
            ToyArModel::new(DEFAULT_VOCAB, DEFAULT_WINDOW, DEFAULT_EMBED, DEFAULT_HIDDEN, crate::toy::corpus::DEFAULT_CONDITIONS, seed),
            data,
            lr,
            seed,
        )
    }

    pub fn with_model(model: ToyArModel, data: &'a [ArSample], lr: f64, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be finite and non-negative".into()));
        }
        for s in data {
            model.check_tokens(&s.tokens)?;
        }
        let initial_loss = data.iter().map(|s| model.mean_nll(s)).sum::<f64>() / data.len() as f64;
        Ok(Self {
            model,
            data,
            lr,
            rng: rng::split(seed, "ar-train"),
            order: (0..data.len()).collect(),
            report: TrainReport { initial_loss, epoch_losses: Vec::new() },
        })
    }

    pub fn run_epoch(&mut self) -> Result<f64> {
        self.order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut count = 0usize;
        let order = self.order.clone();
        for batch in order.chunks(BATCH_SIZE) {
            let positions: usize = batch.iter().map(|&i| self.data[i].tokens.len()).sum();
            let scale = 1.0 / positions as f64;
            let mut g = Grads::zeros(&self.model);
            for &i in batch {
                let sample = &self.data[i];
                let cond = if self.rng.random::<f64>() < CONDITION_DROPOUT {
                    Conditioning::Null
                } else {
                    Conditioning::Label(sample.condition)
                };
                let cond_row = self.model.cond_row(cond);
                for pos in 0..sample.tokens.len() {
                    let ctx = self.model.context(&sample.tokens, pos);
                    total += self.model.accumulate(&ctx, cond_row, sample.tokens[pos] as usize, scale, &mut g);
                    count += 1;
                }
            }
            self.model.apply(&g, self.lr);
        }
        let epoch_loss = total / count as f64;
        let epoch = self.report.epoch_losses.len() + 1;
        if !epoch_loss.is_finite() || epoch_loss > 10.0 * self.report.initial_loss {
            return Err(Error::DivergenceDetected { epoch, loss: epoch_loss });
        }
        self.report.epoch_losses.push(epoch_loss);
        Ok(epoch_loss)
    }
}

/// Minibatch gradient descent on the token cross-entropy of `members`.
pub fn train_toy_ar(members: &[ArSample], epochs: usize, lr: f64, seed: u64) -> Result<(ToyArModel, TrainReport)> {
    if epochs < 1 {
        return Err(Error::InvalidConfig("epochs must be at least 1".into()));
    }
    let mut trainer = ArTrainer::new(members, lr, seed)?;
    for _ in 0..epochs {
        trainer.run_epoch()?;
    }
    Ok((trainer.model, trainer.report))
}

/// zlib (RFC 1950) size of the token stream, one byte per token when the vocabulary fits.
pub fn zlib_size(tokens: &[u32], vocab: usize) -> u64 {
    let bytes: Vec<u8> = if vocab <= 256 {
        tokens.iter().map(|&t| t as u8).collect()
    } else {
        tokens.iter().flat_map(|&t| t.to_le_bytes()).collect()
    };
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&bytes).expect("in-memory write");
    enc.finish().expect("in-memory write").len() as u64
}

fn step_stats(model: &ToyArModel, act: &Activations, target: usize) -> (f64, f64, f64, f64, f64, f64) {
    let lp = &act.log_probs;
    let entropy = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
    let mu = lp.iter().sum::<f64>() / lp.len() as f64;
    let sd = (lp.iter().map(|l| (l - mu) * (l - mu)).sum::<f64>() / lp.len() as f64).sqrt();
    let zt = act.logits[target];
    let zo = (0..model.vocab)
        .filter(|&v| v != target)
        .map(|v| act.logits[v])
        .fold(f64::NEG_INFINITY, f64::max);
    (lp[target], entropy.max(0.0), mu, sd, zt, zo)
}

/// Runs the model over one sample and records every per-position statistic.
///
/// Besides the conditional pass this makes a null-condition pass (for the
/// guidance difference) and a pass over the sample repeated twice.
pub fn trace_ar(model: &ToyArModel, sample_id: &str, sample: &ArSample) -> Result<ArmTrace> {
    model.check_tokens(&sample.tokens)?;
    let cond_row = model.cond_row(Conditioning::Label(sample.condition));
    let null_row = model.cond_row(Conditioning::Null);
    let tokens = &sample.tokens;
    let steps = (0..tokens.len())
        .map(|pos| {
            let ctx = model.context(tokens, pos);
            let target = tokens[pos] as usize;
            let act = model.forward(&ctx, cond_row);
            let (lp, h, mu, sd, zt, zo) = step_stats(model, &act, target);
            let lpu = model.forward(&ctx, null_row).log_probs[target];
            ArmStep {
                logp_true: lp.min(0.0),
                logp_true_uncond: Some(lpu.min(0.0)),
                entropy: h,
                mu_vocab: mu,
                sigma_vocab: sd,
                logit_true: zt,
                max_other_logit: zo,
            }
        })
        .collect();
    let doubled: Vec<u32> = tokens.iter().chain(tokens).copied().collect();
    let repeated = (0..doubled.len())
        .map(|pos| (-model.forward(&model.context(&doubled, pos), cond_row).log_probs[doubled[pos] as usize]).max(0.0))
        .collect();
    let trace = ArmTrace {
        sample_id: sample_id.to_string(),
        condition_id: Some(format!("c{}", sample.condition)),
        zlib_size: zlib_size(tokens, model.vocab),
        steps,
        repeated_losses: Some(repeated),
    };
    trace.validate()?;
    Ok(trace)
}
