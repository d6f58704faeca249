//! Welch p-values against 50-digit quadrature of the Student-t density.

use dinfer::stats::welch_one_sided;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    p_scores: Vec<f64>,
    u_scores: Vec<f64>,
    t: f64,
    dof: f64,
    p: f64,
}

fn cases() -> Vec<Case> {
    serde_json::from_str(include_str!("fixtures/welch_mpmath.json")).unwrap()
}

#[test]
fn p_values_match_high_precision_reference() {
    let cases = cases();
    assert_eq!(cases.len(), 50);
    for (i, c) in cases.iter().enumerate() {
        let r = welch_one_sided(&c.p_scores, &c.u_scores).unwrap();
        assert!((r.p_value - c.p).abs() <= 1e-9, "case {i}: {} vs {}", r.p_value, c.p);
        assert!((r.t_stat - c.t).abs() <= 1e-9 * c.t.abs().max(1.0), "case {i}: t");
        assert!((r.dof - c.dof).abs() <= 1e-9 * c.dof, "case {i}: dof");
    }
}
