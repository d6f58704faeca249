//! Three interactive views over the audit statistics, compiled to wasm.
//!
//! All inputs are synthetic Gaussians so the page needs no model files.

use dinfer::di::{di_test, DiConfig, Scoring};
use dinfer::dm::{add_noise, NoiseDraws, Schedule};
use dinfer::stats::{auc, tpr_at_fpr};
use dinfer::toy::synth_dm_corpus;
use dinfer::FeatureMatrix;
use wasm_bindgen::prelude::*;

fn js_err(e: dinfer::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Empirical ROC of members N(shift, 1) against non-members N(0, 1).
#[wasm_bindgen]
pub struct Roc {
    auc: f64,
    tpr_at_1pct: f64,
    fpr: Vec<f64>,
    tpr: Vec<f64>,
}

#[wasm_bindgen]
impl Roc {
    #[wasm_bindgen(getter)]
    pub fn auc(&self) -> f64 {
        self.auc
    }

    #[wasm_bindgen(getter = tprAt1pct)]
    pub fn tpr_at_1pct(&self) -> f64 {
        self.tpr_at_1pct
    }

    #[wasm_bindgen(getter)]
    pub fn fpr(&self) -> Vec<f64> {
        self.fpr.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn tpr(&self) -> Vec<f64> {
        self.tpr.clone()
    }
}

fn gaussian_scores(seed: u64, n: usize, shift: f64) -> Result<(Vec<f64>, Vec<f64>), dinfer::Error> {
    let c = synth_dm_corpus(seed, n, n, 2)?;
    Ok((c.members.iter().map(|x| x[0] + shift).collect(), c.nonmembers.iter().map(|x| x[0]).collect()))
}

/// Sweep the threshold from high to low; ties move both rates at once.
fn roc_points(members: &[f64], nonmembers: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut all: Vec<(f64, bool)> = members.iter().map(|&s| (s, true)).chain(nonmembers.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nu) = (members.len() as f64, nonmembers.len() as f64);
    let (mut fpr, mut tpr) = (vec![0.0], vec![0.0]);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        fpr.push(fp as f64 / nu);
        tpr.push(tp as f64 / np);
    }
    (fpr, tpr)
}

#[wasm_bindgen]
pub fn roc(shift: f64, n: usize, seed: u32) -> Result<Roc, JsError> {
    let (m, u) = gaussian_scores(seed.into(), n, shift).map_err(js_err)?;
    let (fpr, tpr) = roc_points(&m, &u);
    Ok(Roc {
        auc: auc(&m, &u).map_err(js_err)?,
        tpr_at_1pct: tpr_at_fpr(&m, &u, 0.01).map_err(js_err)?,
        fpr,
        tpr,
    })
}

/// Mean DI p-value at each set size, four features shifted by `shift` for suspects.
///
/// Returns `[n0, p0, n1, p1, ...]`; sizes where the test cannot run are skipped.
#[wasm_bindgen(js_name = diCurve)]
pub fn di_curve(shift: f64, sizes: Vec<usize>, seed: u32) -> Result<Vec<f64>, JsError> {
    let cfg = DiConfig::default();
    let seed = u64::from(seed);
    let mut out = Vec::new();
    for &n in &sizes {
        let c = synth_dm_corpus(seed ^ n as u64, n, n, 4).map_err(js_err)?;
        let names: Vec<String> = (0..4).map(|j| format!("f{j}")).collect();
        let (mut p, mut u) = (FeatureMatrix::new(names.clone()), FeatureMatrix::new(names));
        for (i, x) in c.members.iter().enumerate() {
            p.push_row(&format!("p{i}"), x.iter().map(|v| v + shift).collect()).map_err(js_err)?;
        }
        for (i, x) in c.nonmembers.iter().enumerate() {
            u.push_row(&format!("u{i}"), x.clone()).map_err(js_err)?;
        }
        match di_test(&p, &u, Scoring::Sum, &cfg, seed) {
            Ok(r) => out.extend([n as f64, r.mean_p]),
            Err(dinfer::Error::TooFewSamples { .. }) => {}
            Err(e) => return Err(js_err(e)),
        }
    }
    Ok(out)
}

/// A ring of `n` points noised to step `t` of a 1000-step linear schedule.
///
/// Returns interleaved `[x0, y0, x1, y1, ...]`.
#[wasm_bindgen(js_name = noisedRing)]
pub fn noised_ring(n: usize, t: u32, seed: u32) -> Result<Vec<f64>, JsError> {
    let sched = Schedule::linear(1000);
    if t > sched.t_max() {
        return Err(JsError::new("t must be at most 1000"));
    }
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let a = i as f64 / n as f64 * std::f64::consts::TAU;
        let x = [1.5 * a.cos(), 1.5 * a.sin()];
        let eps = NoiseDraws::new(seed.into(), i as u64).at(0, 0, 2);
        out.extend(add_noise(&x, t, &eps, &sched).map_err(js_err)?);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = signalFraction)]
pub fn signal_fraction(t: u32) -> f64 {
    Schedule::linear(1000).alpha(t.min(1000))
}
