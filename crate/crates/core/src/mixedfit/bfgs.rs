//! Dense BFGS with a backtracking Armijo line search.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when `‖g‖∞` falls below this.
    pub grad_tol: f64,
    /// A run that stalls or hits `max_iter` still counts as converged below this.
    pub accept_grad: f64,
    /// Relative objective change treated as stalled.
    pub rel_tol: f64,
    /// Largest move of any coordinate in one step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-6,
            accept_grad: 1e-3,
            rel_tol: 1e-8,
            max_step: 3.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after every accepted step.
    pub trace: Vec<f64>,
    /// Final inverse-Hessian approximation.
    pub inv_hessian: DMatrix<f64>,
}

/// Objective returning `None` where it cannot be evaluated (overflow etc.).
pub trait Objective {
    fn value(&self, x: &DVector<f64>) -> Option<f64>;
    fn value_and_grad(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)>;
}

pub fn minimize(obj: &impl Objective, x0: DVector<f64>, opts: &BfgsOptions) -> Option<BfgsResult> {
    minimize_warm(obj, x0, None, opts)
}

/// As [`minimize`], starting from an inverse-Hessian approximation (e.g. the
/// one left by a nearby problem) instead of a scaled identity.
pub fn minimize_warm(
    obj: &impl Objective,
    x0: DVector<f64>,
    h0: Option<DMatrix<f64>>,
    opts: &BfgsOptions,
) -> Option<BfgsResult> {
    let d = x0.len();
    let (mut f, mut g) = obj.value_and_grad(&x0)?;
    let mut x = x0;
    let warm = h0.as_ref().is_some_and(|h| h.nrows() == d && h.ncols() == d);
    let mut h = if warm { h0.unwrap() } else { DMatrix::<f64>::identity(d, d) };
    let mut trace = vec![f];
    if d == 0 {
        return Some(BfgsResult {
            x,
            value: f,
            grad: g,
            iterations: 0,
            converged: true,
            trace,
            inv_hessian: h,
        });
    }
    let mut first = !warm;
    let mut small_changes = 0;
    for it in 0..opts.max_iter {
        let gmax = g.amax();
        if gmax < opts.grad_tol {
            return Some(BfgsResult {
                x,
                value: f,
                grad: g,
                iterations: it,
                converged: true,
                trace,
                inv_hessian: h,
            });
        }
        let mut dir = -(&h * &g);
        if dir.dot(&g) >= 0.0 {
            h.fill_with_identity();
            dir = -g.clone();
        }
        if first {
            dir /= gmax.max(1.0);
        }
        let dmax = dir.amax();
        if dmax > opts.max_step {
            dir *= opts.max_step / dmax;
        }
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &x + &dir * step;
            if let Some(ft) = obj.value(&trial) {
                if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            step *= 0.5;
        }
        if accepted.is_none() {
            // Near the optimum f differences drown in rounding; fall back on an
            // approximate Wolfe test that uses the (exact) gradient instead.
            let noise = 1e-12 * f.abs().max(1.0);
            step = 1.0;
            for _ in 0..40 {
                let trial = &x + &dir * step;
                if let Some((ft, gt)) = obj.value_and_grad(&trial) {
                    if ft.is_finite() && ft <= f + noise && gt.dot(&dir).abs() <= 0.9 * slope.abs() {
                        accepted = Some(trial);
                        break;
                    }
                }
                step *= 0.5;
            }
        }
        let Some(x_new) = accepted else {
            // No further decrease is resolvable at this precision.
            let converged = gmax < opts.accept_grad;
            return Some(BfgsResult {
                x,
                value: f,
                grad: g,
                iterations: it,
                converged,
                trace,
                inv_hessian: h,
            });
        };
        let (f_new, g_new) = obj.value_and_grad(&x_new)?;
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                // Scale the initial inverse Hessian before the first update.
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * ((1.0 + rho * yhy) * rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            first = false;
        }
        let rel = (f - f_new).abs() / f.abs().max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
        if rel < opts.rel_tol {
            small_changes += 1;
            if small_changes >= 3 && g.amax() < 10.0 * opts.grad_tol {
                return Some(BfgsResult {
                    x,
                    value: f,
                    grad: g,
                    iterations: it + 1,
                    converged: true,
                    trace,
                    inv_hessian: h,
                });
            }
        } else {
            small_changes = 0;
        }
    }
    let converged = g.amax() < opts.accept_grad;
    Some(BfgsResult {
        x,
        value: f,
        grad: g,
        iterations: opts.max_iter,
        converged,
        trace,
        inv_hessian: h,
    })
}
