//! Restricted pseudo-likelihood for the logistic mixed model.

use nalgebra::DVector;

use crate::dyaddesign::DesignMatrices;
use crate::error::{Error, Result};

use super::bfgs::BfgsOptions;
use super::{check_full_rank, lmm_from_optimum, optimize_warm, Curvature, FitOptions, GlmmFit, RemlProblem};

/// Linear predictors beyond this magnitude are treated as diverging.
const ETA_LIMIT: f64 = 30.0;
/// Inner gradient tolerance while the working response is still moving.
const LOOSE_INNER_TOL: f64 = 1e-4;

pub fn logistic(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// Fits the logistic mixed model to the binary `design.response`.
pub fn pql_fit(design: &DesignMatrices) -> Result<GlmmFit> {
    pql_fit_with(design, None, &FitOptions::default())
}

/// As [`pql_fit`], with an optional warm start for the variance ratios.
pub fn pql_fit_with(design: &DesignMatrices, warm: Option<&[f64]>, opts: &FitOptions) -> Result<GlmmFit> {
    let y = &design.response;
    let n = design.n_rows();
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Domain("presence response must be 0 or 1".into()));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if n == 0 || ones == 0 || ones == n {
        return Err(Error::ConstantResponse);
    }
    check_full_rank(design)?;
    check_separation(design)?;

    // The inner tolerance tracks the outer change, reaching `pql_bfgs.grad_tol`
    // before the loop may stop.
    let floor = opts.pql_bfgs.grad_tol;
    let mut inner_tol = LOOSE_INNER_TOL.max(floor);
    let mut eta: Vec<f64> = y.iter().map(|&v| ((v + 0.5) / 2.0f64).ln() - (1.0 - (v + 0.5) / 2.0f64).ln()).collect();
    let mut gamma: Option<Vec<f64>> = warm.map(<[f64]>::to_vec);
    let mut curvature: Option<Curvature> = None;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut outer_trace = Vec::new();
    let mut inner_trace = Vec::new();
    let mut inner_iterations = 0;
    for outer in 1..=opts.pql_max_iter {
        let mu: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
        let w: Vec<f64> = mu.iter().map(|&m| (m * (1.0 - m)).max(1e-12)).collect();
        let ystar: Vec<f64> = (0..n).map(|i| eta[i] + (y[i] - mu[i]) / w[i]).collect();
        let problem = RemlProblem::new(design, &ystar, Some(&w))?;
        let inner = FitOptions {
            bfgs: BfgsOptions {
                grad_tol: inner_tol,
                ..opts.pql_bfgs
            },
            ..*opts
        };
        let opt = optimize_warm(&problem, gamma.as_deref(), curvature.as_ref(), &inner)?;
        inner_iterations += opt.iterations;
        inner_trace.extend_from_slice(&opt.trace);
        outer_trace.push(opt.eval.value);

        let beta = opt.eval.beta.clone();
        let tau: Vec<f64> = opt.gamma.iter().map(|g| g * opt.eval.sigma2).collect();
        let blups = problem.blups(&opt.gamma, &beta);
        eta = linear_predictor(design, &beta, &blups);
        let diverged = eta.iter().filter(|e| e.abs() > ETA_LIMIT).count();
        if diverged as f64 > 0.01 * n as f64 {
            return Err(Error::Separation(format!(
                "linear predictor exceeds ±{ETA_LIMIT} on {diverged} of {n} rows"
            )));
        }

        let beta_v: Vec<f64> = beta.iter().copied().collect();
        let change = prev
            .as_ref()
            .map(|(pb, pt)| max_rel_change(pb, &beta_v).max(max_rel_change(pt, &tau)));
        let done = inner_tol <= floor && change.is_some_and(|c| c < opts.pql_tol);
        if let Some(c) = change {
            inner_tol = (1e-3 * c).clamp(floor, LOOSE_INNER_TOL.max(floor));
        }
        gamma = Some(opt.gamma.clone());
        curvature = Some(opt.curvature.clone());
        prev = Some((beta_v, tau));
        if done {
            if !opt.converged {
                return Err(Error::NonConvergence {
                    iterations: inner_iterations,
                    last_objective: opt.eval.value,
                    trace: inner_trace,
                });
            }
            let mut lmm = lmm_from_optimum(design, &problem, &opt);
            lmm.trace = inner_trace;
            lmm.iterations = inner_iterations;
            let fitted = eta.iter().map(|&e| logistic(e)).collect::<Vec<_>>();
            let working_weights = fitted.iter().map(|m| m * (1.0 - m)).collect();
            return Ok(GlmmFit {
                lmm,
                working_weights,
                fitted,
                outer_iterations: outer,
                outer_trace,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.pql_max_iter,
        last_objective: outer_trace.last().copied().unwrap_or(f64::NAN),
        trace: outer_trace,
    })
}

fn max_rel_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(o, n)| (n - o).abs() / o.abs().max(1e-2))
        .fold(0.0, f64::max)
}

/// `Xβ + Zb` with `b` given per subject in design group order.
pub(crate) fn linear_predictor(design: &DesignMatrices, beta: &DVector<f64>, blups: &[(usize, DVector<f64>)]) -> Vec<f64> {
    let mut eta = (&design.x * beta).iter().copied().collect::<Vec<_>>();
    for ((_, rows), (_, b)) in design.groups.iter().zip(blups) {
        for r in rows.clone() {
            let mut s = 0.0;
            design.z.for_each_nonzero(r, |c, v| s += v * b[c]);
            eta[r] += s;
        }
    }
    eta
}

/// Errors when a single non-constant fixed-effect column separates the classes.
fn check_separation(design: &DesignMatrices) -> Result<()> {
    let y = &design.response;
    for c in 0..design.p() {
        let col = design.x.column(c);
        let (mut lo0, mut hi0, mut lo1, mut hi1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (r, &v) in col.iter().enumerate() {
            if y[r] == 1.0 {
                lo1 = lo1.min(v);
                hi1 = hi1.max(v);
            } else {
                lo0 = lo0.min(v);
                hi0 = hi0.max(v);
            }
        }
        if lo0.min(lo1) == hi0.max(hi1) {
            continue;
        }
        if hi0 < lo1 || hi1 < lo0 {
            return Err(Error::Separation(format!(
                "column `{}` perfectly separates present from absent dyads",
                design.x_names[c]
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixedfit::tests::one_way;

    #[test]
    fn all_zero_response_is_rejected() {
        let y = vec![0.0; 20];
        let d = one_way(&y, 4, 5);
        assert!(matches!(pql_fit(&d), Err(Error::ConstantResponse)));
    }

    #[test]
    fn separating_column_is_rejected() {
        let y: Vec<f64> = (0..20).map(|i| f64::from(u8::from(i % 2 == 0))).collect();
        let mut d = one_way(&y, 4, 5);
        d.x = nalgebra::DMatrix::from_fn(20, 2, |r, c| if c == 0 { 1.0 } else { y[r] * 2.0 - 1.0 + 0.01 * r as f64 });
        d.x_names = vec!["intercept".into(), "sep".into()];
        match pql_fit(&d) {
            Err(Error::Separation(msg)) => assert!(msg.contains("sep")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
