//! Limited-memory BFGS with Armijo backtracking.
//!
//! Whenever the two-loop recursion yields a direction that is not a descent
//! direction the curvature history is discarded and the iteration restarts
//! from steepest descent.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// stop when `‖g‖∞ ≤ grad_tol`
    pub grad_tol: f64,
    /// stop when the relative decrease over one iteration is below this
    pub f_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig { memory: 10, max_iters: 200, grad_tol: 1e-6, f_tol: 1e-10, armijo: 1e-4, max_backtracks: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport {
    pub iterations: usize,
    pub converged: bool,
    /// number of history resets
    pub restarts: usize,
    /// objective after every accepted step, starting with the initial value
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f`, which returns the objective and writes the gradient into
/// its second argument.
pub fn lbfgs<F>(mut x: Vec<f64>, cfg: &LbfgsConfig, mut f: F) -> (Vec<f64>, LbfgsReport)
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut report = LbfgsReport { iterations: 0, converged: false, restarts: 0, history: vec![fx] };
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha = vec![0.0; cfg.memory];

    for it in 0..cfg.max_iters {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= cfg.grad_tol {
            report.converged = true;
            break;
        }
        // two-loop recursion
        d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
        for (i, (s, y, rho)) in hist.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha[i] = a;
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for (i, (s, y, rho)) in hist.iter().enumerate() {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (alpha[i] - b) * si);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            report.restarts += 1;
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            slope = -dot(&g, &g);
        }
        let mut step = if hist.is_empty() { 1.0 / libm::sqrt(-slope).max(1.0) } else { 1.0 };
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..cfg.max_backtracks {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + cfg.armijo * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        report.iterations = it + 1;
        if !accepted {
            if hist.is_empty() {
                break;
            }
            // retry from steepest descent next iteration
            hist.clear();
            report.restarts += 1;
            continue;
        }
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * libm::sqrt(dot(&s, &s) * dot(&y, &y)) {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        core::mem::swap(&mut x, &mut x_new);
        core::mem::swap(&mut g, &mut g_new);
        let decrease = fx - f_new;
        fx = f_new;
        report.history.push(fx);
        if decrease <= cfg.f_tol * fx.abs().max(1e-300) {
            report.converged = true;
            break;
        }
    }
    (x, report)
}
