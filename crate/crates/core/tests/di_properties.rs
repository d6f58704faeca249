use dinfer::di::{audit, di_test, mia_eval, minimal_p_search, DiConfig, Scoring};
use dinfer::rng::split_indexed;
use dinfer::{FeatureMatrix, Modality};
use rand::Rng;
use rand_distr::StandardNormal;

const NAMES: [&str; 4] = ["loss", "min_k@10", "min_k@20", "zlib"];

fn matrix(prefix: &str, rows: Vec<Vec<f64>>) -> FeatureMatrix {
    let mut m = FeatureMatrix::new(NAMES.iter().map(|s| s.to_string()).collect());
    for (i, r) in rows.into_iter().enumerate() {
        m.push_row(&format!("{prefix}{i}"), r).unwrap();
    }
    m
}

fn gaussian(seed: u64, which: u64, n: usize, shift: f64) -> FeatureMatrix {
    let mut r = split_indexed(seed, "test-features", &[which]);
    let rows = (0..n).map(|_| (0..NAMES.len()).map(|_| r.sample::<f64, _>(StandardNormal) + shift).collect()).collect();
    matrix(if which == 0 { "p" } else { "u" }, rows)
}

#[test]
fn verdict_is_a_function_of_seed() {
    let (p, u) = (gaussian(1, 0, 120, 0.3), gaussian(1, 1, 120, 0.0));
    let cfg = DiConfig { trials: 3, ..DiConfig::default() };
    for modality in [Modality::Arm, Modality::Dm] {
        let a = audit(&p, &u, modality, &cfg, 9).unwrap();
        let b = audit(&p, &u, modality, &cfg, 9).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = audit(&p, &u, modality, &cfg, 10).unwrap();
        assert_ne!(a.partitions, c.partitions);
    }
}

#[test]
fn best_entry_dominates_its_sweep() {
    let (p, u) = (gaussian(2, 0, 200, 0.2), gaussian(2, 1, 200, 0.0));
    let m = mia_eval(&p, &u).unwrap();
    let best = m["min_k@best"];
    for k in ["min_k@10", "min_k@20"] {
        assert!(best.auc >= m[k].auc && best.tpr_at_1pct >= m[k].tpr_at_1pct);
    }
    assert!(best.auc == m["min_k@10"].auc || best.auc == m["min_k@20"].auc);
    assert!(!m.contains_key("loss@best"));
    // relabelling rows does not move the argmax
    let rev = |m: &FeatureMatrix, pre: &str| matrix(pre, m.rows().iter().rev().cloned().collect());
    assert_eq!(mia_eval(&rev(&p, "q"), &rev(&u, "v")).unwrap(), m);
}

#[test]
fn minimal_p_shrinks_as_the_shift_grows() {
    let cfg = DiConfig { trials: 4, ..DiConfig::default() };
    let u = gaussian(3, 1, 256, 0.0);
    let base = gaussian(3, 0, 256, 0.0);
    let mut last = usize::MAX;
    for mu in [0.0, 0.5, 1.0, 2.0] {
        let p = matrix("p", base.rows().iter().map(|r| r.iter().map(|x| x + mu).collect()).collect());
        let got = minimal_p_search(&p, &u, Scoring::Sum, &cfg, 4).unwrap().minimal_p.unwrap_or(usize::MAX - 1);
        assert!(got <= last, "mu={mu}: {got} after {last}");
        last = got;
    }
    assert!(last <= 32, "a two-sigma shift is found at small sizes, got {last}");
}

#[test]
fn null_rejection_rate_stays_near_alpha() {
    let cfg = DiConfig::default();
    for scoring in [Scoring::Sum, Scoring::Logistic] {
        let rejects = (0..100u64)
            .filter(|&s| {
                let (p, u) = (gaussian(100 + s, 0, 100, 0.0), gaussian(100 + s, 1, 100, 0.0));
                di_test(&p, &u, scoring, &cfg, s).unwrap().rejected
            })
            .count();
        assert!(rejects <= 5, "{scoring:?}: {rejects}/100");
    }
}
