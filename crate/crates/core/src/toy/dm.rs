//! Two-hidden-layer noise predictor with a sinusoidal timestep embedding.
//!
//! f(z, t) = W3 tanh(W2 tanh(W1 [z; emb(t)] + b1) + b2) + b3

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dm::{add_noise, Denoiser, Schedule};
use crate::error::{Error, Result};
use crate::rng;
use crate::toy::ar::TrainReport;

pub const DEFAULT_DIM: usize = 8;
pub const TIME_EMBED: usize = 16;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_T_MAX: u32 = 1000;
pub const BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDmModel {
    pub dim: usize,
    pub hidden: usize,
    schedule: Schedule,
    /// hidden x (dim + TIME_EMBED)
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// hidden x hidden
    w2: Vec<f64>,
    b2: Vec<f64>,
    /// dim x hidden
    w3: Vec<f64>,
    b3: Vec<f64>,
}

/// sin/cos pairs at geometrically spaced frequencies.
pub fn time_embedding(t: u32) -> [f64; TIME_EMBED] {
    let mut out = [0.0; TIME_EMBED];
    let half = TIME_EMBED / 2;
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let a = t as f64 * freq;
        out[k] = a.sin();
        out[half + k] = a.cos();
    }
    out
}

struct Activations {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
}

fn affine_tanh(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(i, bi)| (bi + w[i * n..(i + 1) * n].iter().zip(x).map(|(a, c)| a * c).sum::<f64>()).tanh())
        .collect()
}

/// Returns w^T g for a row-major w with `g.len()` rows.
fn transpose_mul(w: &[f64], g: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (i, gi) in g.iter().enumerate() {
        if *gi == 0.0 {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
            *o += gi * wij;
        }
    }
    out
}

struct Grads {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
}

impl ToyDmModel {
    pub fn new(dim: usize, hidden: usize, schedule: Schedule, seed: u64) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        let mut r = rng::split(seed, "dm-init");
        let n_in = dim + TIME_EMBED;
        let mut gauss = |n: usize, fan_in: usize| -> Vec<f64> {
            let d = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive sd");
            (0..n).map(|_| d.sample(&mut r)).collect()
        };
        Ok(Self {
            dim,
            hidden,
            w1: gauss(hidden * n_in, n_in),
            b1: vec![0.0; hidden],
            w2: gauss(hidden * hidden, hidden),
            b2: vec![0.0; hidden],
            w3: gauss(dim * hidden, hidden),
            b3: vec![0.0; dim],
            schedule,
        })
    }

    pub fn with_defaults(seed: u64) -> Self {
        Self::new(DEFAULT_DIM, DEFAULT_HIDDEN, Schedule::linear(DEFAULT_T_MAX), seed).expect("valid defaults")
    }

    fn forward(&self, z: &[f64], t: u32) -> Activations {
        let mut input = z.to_vec();
        input.extend_from_slice(&time_embedding(t));
        let h1 = affine_tanh(&self.w1, &self.b1, &input);
        let h2 = affine_tanh(&self.w2, &self.b2, &h1);
        let out = (0..self.dim)
            .map(|i| {
                self.b3[i] + self.w3[i * self.hidden..(i + 1) * self.hidden].iter().zip(&h2).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        Activations { input, h1, h2, out }
    }

    /// Backpropagates d(loss)/d(out) to the pre-activations of both hidden layers.
    fn backward_hidden(&self, act: &Activations, d_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dh2 = transpose_mul(&self.w3, d_out, self.hidden);
        let dpre2: Vec<f64> = dh2.iter().zip(&act.h2).map(|(g, h)| g * (1.0 - h * h)).collect();
        let dh1 = transpose_mul(&self.w2, &dpre2, self.hidden);
        let dpre1: Vec<f64> = dh1.iter().zip(&act.h1).map(|(g, h)| g * (1.0 - h * h)).collect();
        (dpre1, dpre2)
    }

    fn check(&self, z: &[f64], t: u32, eps: &[f64]) -> Result<()> {
        for got in [z.len(), eps.len()] {
            if got != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got });
            }
        }
        if t > self.schedule.t_max() {
            return Err(Error::InvalidConfig(format!("timestep {t} outside [0, {}]", self.schedule.t_max())));
        }
        Ok(())
    }

    /// Exact gradient of ||eps - f(z_t, t)||^2 with respect to `z_t`.
    pub fn input_gradient(&self, z_t: &[f64], t: u32, eps: &[f64]) -> Result<Vec<f64>> {
        self.check(z_t, t, eps)?;
        let act = self.forward(z_t, t);
        let d_out: Vec<f64> = act.out.iter().zip(eps).map(|(o, e)| 2.0 * (o - e)).collect();
        let (dpre1, _) = self.backward_hidden(&act, &d_out);
        let n_in = self.dim + TIME_EMBED;
        Ok(transpose_mul(&self.w1, &dpre1, n_in)[..self.dim].to_vec())
    }

    fn zero_grads(&self) -> Grads {
        Grads {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
            w3: vec![0.0; self.w3.len()],
            b3: vec![0.0; self.b3.len()],
        }
    }

    /// Adds `scale * d||eps - f(z_t, t)||^2 / d(params)` into `g`; returns the loss.
    fn accumulate(&self, z_t: &[f64], t: u32, eps: &[f64], scale: f64, g: &mut Grads) -> f64 {
        let act = self.forward(z_t, t);
        let d_out: Vec<f64> = act.out.iter().zip(eps).map(|(o, e)| 2.0 * scale * (o - e)).collect();
        let loss = act.out.iter().zip(eps).map(|(o, e)| (o - e) * (o - e)).sum();
        let (dpre1, dpre2) = self.backward_hidden(&act, &d_out);
        let outer = |gw: &mut [f64], gb: &mut [f64], delta: &[f64], x: &[f64]| {
            let n = x.len();
            for (i, di) in delta.iter().enumerate() {
                gb[i] += di;
                for (gwij, xj) in gw[i * n..(i + 1) * n].iter_mut().zip(x) {
                    *gwij += di * xj;
                }
            }
        };
        outer(&mut g.w3, &mut g.b3, &d_out, &act.h2);
        outer(&mut g.w2, &mut g.b2, &dpre2, &act.h1);
        outer(&mut g.w1, &mut g.b1, &dpre1, &act.input);
        loss
    }

    fn apply(&mut self, g: &Grads, lr: f64) {
        let step = |p: &mut [f64], d: &[f64]| p.iter_mut().zip(d).for_each(|(p, d)| *p -= lr * d);
        step(&mut self.w1, &g.w1);
        step(&mut self.b1, &g.b1);
        step(&mut self.w2, &g.w2);
        step(&mut self.b2, &g.b2);
        step(&mut self.w3, &g.w3);
        step(&mut self.b3, &g.b3);
    }
}

impl Denoiser for ToyDmModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    fn predict(&self, z_t: &[f64], t: u32) -> Vec<f64> {
        self.forward(z_t, t).out
    }

    fn loss_input_gradient(&self, z_t: &[f64], t: u32, eps: &[f64]) -> Result<Vec<f64>> {
        self.input_gradient(z_t, t, eps)
    }
}

/// Minibatch gradient descent on the noise-prediction loss.
///
/// Each example in each step draws its own timestep uniformly from
/// 1..=T and its own Gaussian noise.
pub struct DmTrainer<'a> {
    pub model: ToyDmModel,
    data: &'a [Vec<f64>],
    lr: f64,
    rng: rng::AuditRng,
    order: Vec<usize>,
    pub report: TrainReport,
}

impl<'a> DmTrainer<'a> {
    pub fn with_model(model: ToyDmModel, data: &'a [Vec<f64>], lr: f64, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be finite and non-negative".into()));
        }
        for x in data {
            if x.len() != model.dim {
                return Err(Error::DimensionMismatch { expected: model.dim, got: x.len() });
            }
        }
        let mut trainer = Self {
            model,
            data,
            lr,
            rng: rng::split(seed, "dm-train"),
            order: (0..data.len()).collect(),
            report: TrainReport { initial_loss: 0.0, epoch_losses: Vec::new() },
        };
        trainer.report.initial_loss = trainer.reference_loss();
        Ok(trainer)
    }

    /// Mean loss over the data on a fixed timestep/noise set, used as the divergence baseline.
    fn reference_loss(&self) -> f64 {
        let mut r = rng::split(0, "dm-train-reference");
        let t_max = self.model.schedule.t_max();
        let mut total = 0.0;
        for x in self.data {
            let t = r.random_range(1..=t_max);
            let eps: Vec<f64> = (0..self.model.dim).map(|_| r.sample(StandardNormal)).collect();
            let z_t = add_noise(x, t, &eps, &self.model.schedule).expect("checked dims");
            let out = self.model.predict(&z_t, t);
            total += out.iter().zip(&eps).map(|(o, e)| (o - e) * (o - e)).sum::<f64>();
        }
        total / self.data.len() as f64
    }

    pub fn run_epoch(&mut self) -> Result<f64> {
        self.order.shuffle(&mut self.rng);
        let t_max = self.model.schedule.t_max();
        let dim = self.model.dim;
        let mut total = 0.0;
        let order = self.order.clone();
        for batch in order.chunks(BATCH_SIZE) {
            let scale = 1.0 / batch.len() as f64;
            let mut g = self.model.zero_grads();
            for &i in batch {
                let t = self.rng.random_range(1..=t_max);
                let eps: Vec<f64> = (0..dim).map(|_| self.rng.sample(StandardNormal)).collect();
                let z_t = add_noise(&self.data[i], t, &eps, &self.model.schedule)?;
                total += self.model.accumulate(&z_t, t, &eps, scale, &mut g);
            }
            self.model.apply(&g, self.lr);
        }
        let epoch_loss = total / self.data.len() as f64;
        let epoch = self.report.epoch_losses.len() + 1;
        if !epoch_loss.is_finite() || epoch_loss > 10.0 * self.report.initial_loss {
            return Err(Error::DivergenceDetected { epoch, loss: epoch_loss });
        }
        self.report.epoch_losses.push(epoch_loss);
        Ok(epoch_loss)
    }
}

pub fn train_toy_dm(data: &[Vec<f64>], epochs: usize, lr: f64, seed: u64) -> Result<(ToyDmModel, TrainReport)> {
    if epochs < 1 {
        return Err(Error::InvalidConfig("epochs must be at least 1".into()));
    }
    let dim = data.first().map_or(DEFAULT_DIM, |x| x.len());
    let model = ToyDmModel::new(dim, DEFAULT_HIDDEN, Schedule::linear(DEFAULT_T_MAX), seed)?;
    let mut trainer = DmTrainer::with_model(model, data, lr, seed)?;
    for _ in 0..epochs {
        trainer.run_epoch()?;
    }
    Ok((trainer.model, trainer.report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dm::denoising_loss;

    fn fd_gradient(m: &ToyDmModel, z: &[f64], t: u32, eps: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        let loss = |z: &[f64]| m.predict(z, t).iter().zip(eps).map(|(o, e)| (e - o) * (e - o)).sum::<f64>();
        (0..z.len())
            .map(|i| {
                let mut p = z.to_vec();
                p[i] += h;
                let mut q = z.to_vec();
                q[i] -= h;
                (loss(&p) - loss(&q)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = ToyDmModel::with_defaults(3);
        let mut r = rng::seeded_rng(1);
        for _ in 0..10 {
            let z: Vec<f64> = (0..8).map(|_| r.sample(StandardNormal)).collect();
            let eps: Vec<f64> = (0..8).map(|_| r.sample(StandardNormal)).collect();
            let t = r.random_range(0..=1000);
            let g = m.input_gradient(&z, t, &eps).unwrap();
            let fd = fd_gradient(&m, &z, t, &eps);
            let scale = g.iter().map(|v| v.abs()).fold(1e-8, f64::max);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() / scale < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_loss_point_has_zero_gradient() {
        let m = ToyDmModel::with_defaults(0);
        let z = vec![0.3; 8];
        let eps = m.predict(&z, 50);
        assert!(m.input_gradient(&z, 50, &eps).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn dimension_checks() {
        let m = ToyDmModel::with_defaults(0);
        assert_eq!(m.input_gradient(&[0.0; 3], 1, &[0.0; 8]).unwrap_err(), Error::DimensionMismatch { expected: 8, got: 3 });
    }

    #[test]
    fn training_rules() {
        let data: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.1; 8]).collect();
        assert!(matches!(train_toy_dm(&data, 0, 0.01, 0), Err(Error::InvalidConfig(_))));
        let a = train_toy_dm(&data, 3, 0.01, 4).unwrap();
        let b = train_toy_dm(&data, 3, 0.01, 4).unwrap();
        assert_eq!(a, b);
        let init = ToyDmModel::with_defaults(4);
        let mut t = DmTrainer::with_model(init.clone(), &data, 0.0, 4).unwrap();
        t.run_epoch().unwrap();
        assert_eq!(t.model, init);
    }

    #[test]
    fn outputs_stay_finite() {
        let m = ToyDmModel::with_defaults(7);
        for z in [vec![1e300; 8], vec![-1e12; 8], vec![0.0; 8]] {
            assert!(m.predict(&z, 1000).iter().all(|v| v.is_finite()));
        }
        assert!(denoising_loss(&m, &[0.5; 8], 100, &[1.0; 8]).unwrap().is_finite());
    }
}
