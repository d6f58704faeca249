//! Limited-memory BFGS with backtracking Armijo line search.
//!
//! Every internal is pinned so that a run is reproducible: the two-loop
//! recursion keeps the last `history` curvature pairs, the initial inverse
//! Hessian is scaled by s'y / y'y of the newest pair (identity before the
//! first pair), and each step starts at length 1 and halves until the
//! Armijo condition holds. A pair failing the curvature test
//! s'y > 1e-10 |s| |y| clears the history, so the next direction is
//! steepest descent.

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub history: usize,
    /// Number of outer iterations (each one line search).
    pub max_iters: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Stop early once the gradient norm falls below this.
    pub grad_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            history: 5,
            max_iters: 5,
            armijo_c: 1e-4,
            shrink: 0.5,
            max_backtracks: 20,
            grad_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
    /// Set when a line search exhausted its backtracks; `x` is then the last accepted iterate.
    pub line_search_failed: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `objective`, which returns the value and gradient at a point.
pub fn minimize<F>(mut objective: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0;
    let (mut value, mut grad) = objective(&x)?;
    let initial_value = value;
    let mut pairs: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(opts.history);
    let mut iterations = 0;
    let mut line_search_failed = false;

    while iterations < opts.max_iters {
        if dot(&grad, &grad).sqrt() <= opts.grad_tol {
            break;
        }
        let mut direction = two_loop(&grad, &pairs);
        let mut slope = dot(&grad, &direction);
        if !(slope < 0.0) {
            // stale curvature: restart from steepest descent
            pairs.clear();
            direction = grad.iter().map(|g| -g).collect();
            slope = -dot(&grad, &grad);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&direction).map(|(xi, di)| xi + step * di).collect();
            let (trial_value, trial_grad) = objective(&trial)?;
            if trial_value.is_finite() && trial_value <= value + opts.armijo_c * step * slope {
                accepted = Some((trial, trial_value, trial_grad));
                break;
            }
            step *= opts.shrink;
        }
        iterations += 1;
        let Some((new_x, new_value, new_grad)) = accepted else {
            line_search_failed = true;
            break;
        };

        let s: Vec<f64> = new_x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if pairs.len() == opts.history {
                pairs.remove(0);
            }
            pairs.push((s, y, 1.0 / sy));
        } else {
            pairs.clear();
        }
        x = new_x;
        value = new_value;
        grad = new_grad;
    }

    Ok(LbfgsOutcome { x, value, initial_value, iterations, line_search_failed })
}

fn two_loop(grad: &[f64], pairs: &[(Vec<f64>, Vec<f64>, f64)]) -> Vec<f64> {
    let mut q: Vec<f64> = grad.to_vec();
    let mut alphas = vec![0.0; pairs.len()];
    for (i, (s, y, rho)) in pairs.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[i] = a;
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
    }
    let gamma = pairs.last().map_or(1.0, |(s, y, _)| dot(s, y) / dot(y, y));
    let mut r: Vec<f64> = q.iter().map(|v| gamma * v).collect();
    for (i, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * dot(y, &r);
        r.iter_mut().zip(s).for_each(|(ri, si)| *ri += (alphas[i] - b) * si);
    }
    r.iter_mut().for_each(|v| *v = -*v);
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn quadratic_converges_in_few_steps() {
        let target = [3.0, -1.0, 0.5];
        let obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let r: Vec<f64> = x.iter().zip(&target).map(|(a, b)| a - b).collect();
            Ok((dot(&r, &r), r.iter().map(|v| 2.0 * v).collect()))
        };
        let out = minimize(obj, vec![0.0; 3], &LbfgsOptions::default()).unwrap();
        assert!(out.value < 1e-20, "{}", out.value);
        assert!(!out.line_search_failed);
    }

    #[test]
    fn rosenbrock_converges() {
        let opts = LbfgsOptions { max_iters: 200, ..Default::default() };
        let out = minimize(rosenbrock, vec![-1.2, 1.0], &opts).unwrap();
        assert!(out.value <= out.initial_value);
        assert!(out.value < 1e-8, "{:?}", (out.value, out.iterations, out.line_search_failed));
    }

    #[test]
    fn stationary_start_does_not_move() {
        let obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((0.0, vec![0.0; x.len()])) };
        let out = minimize(obj, vec![0.0; 4], &LbfgsOptions::default()).unwrap();
        assert_eq!(out.x, vec![0.0; 4]);
        assert_eq!(out.iterations, 0);
    }
}
