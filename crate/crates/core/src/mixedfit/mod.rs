//! REML and pseudo-likelihood fitting of the two-part mixed model.

pub mod bfgs;
mod pql;
mod reml;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dyaddesign::{
    build_design, CenteringRecord, ComponentKey, DesignMatrices, DyadTable, ModelSpec, NodeVariance, RandomTerm,
    Response,
};
use crate::error::{Error, Part, Result};

use bfgs::minimize_warm;
pub use bfgs::BfgsOptions;
pub use pql::{logistic, pql_fit, pql_fit_with};
pub use reml::{RemlEvaluation, RemlProblem};
use reml::LogGammaObjective;

/// Variance ratios below this (relative to σ²) are pinned to zero.
const PIN_ABSOLUTE: f64 = 1e-10;
/// Scaled variance below which a component is tested for pinning.
const PIN_CANDIDATE: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub bfgs: BfgsOptions,
    /// Refits allowed after pinning or releasing boundary components.
    pub max_pin_rounds: usize,
    pub pql_max_iter: usize,
    /// Inner optimizer settings inside the PQL loop; tighter than `bfgs` so
    /// that successive outer iterations can agree to `pql_tol`.
    pub pql_bfgs: BfgsOptions,
    /// Relative change in β and τ that ends the PQL loop.
    pub pql_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bfgs: BfgsOptions::default(),
            max_pin_rounds: 8,
            pql_max_iter: 50,
            pql_bfgs: BfgsOptions {
                grad_tol: 1e-9,
                ..BfgsOptions::default()
            },
            pql_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub keys: Vec<ComponentKey>,
    pub tau: Vec<f64>,
    pub at_bound: Vec<bool>,
    /// Residual variance; the pseudo-dispersion for the presence part.
    pub sigma2: f64,
}

impl VarianceComponents {
    pub fn labels(&self, part: char) -> Vec<String> {
        self.keys.iter().map(|k| k.label(part)).collect()
    }

    pub fn get(&self, key: ComponentKey) -> Option<f64> {
        self.keys.iter().position(|k| *k == key).map(|i| self.tau[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectBlup {
    pub subject: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub x_names: Vec<String>,
    pub beta: Vec<f64>,
    pub beta_cov: Vec<Vec<f64>>,
    pub vc: VarianceComponents,
    pub z_names: Vec<String>,
    /// Variance component of every Z column.
    pub component_of_column: Vec<usize>,
    pub blups: Vec<SubjectBlup>,
    /// Restricted log-likelihood at the optimum.
    pub reml_loglik: f64,
    pub residual_df: usize,
    pub n_rows: usize,
    /// Objective (−2 REML) after every accepted optimizer step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LmmFit {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_cov_matrix(&self) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_fn(p, p, |i, j| self.beta_cov[i][j])
    }

    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.p()).map(|i| self.beta_cov[i][i].max(0.0).sqrt()).collect()
    }

    pub fn blup(&self, subject: usize) -> Option<&[f64]> {
        self.blups.iter().find(|b| b.subject == subject).map(|b| b.values.as_slice())
    }

    /// Variance ratios τ/σ², used to warm-start a refit.
    pub(crate) fn gamma(&self) -> Vec<f64> {
        self.vc.tau.iter().map(|t| t / self.vc.sigma2).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmmFit {
    pub lmm: LmmFit,
    /// Final PQL working weights p(1−p), one per design row.
    #[serde(skip)]
    pub working_weights: Vec<f64>,
    /// Final fitted probabilities, one per design row.
    #[serde(skip)]
    pub fitted: Vec<f64>,
    pub outer_iterations: usize,
    /// Pseudo-likelihood objective after each outer iteration.
    pub outer_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPartFit {
    pub presence_spec: ModelSpec,
    pub strength_spec: ModelSpec,
    pub presence: GlmmFit,
    pub strength: LmmFit,
    pub centering: CenteringRecord,
    pub n_nodes: usize,
}

impl TwoPartFit {
    pub fn spec(&self, part: Part) -> &ModelSpec {
        match part {
            Part::Presence => &self.presence_spec,
            Part::Strength => &self.strength_spec,
        }
    }

    pub fn lmm(&self, part: Part) -> &LmmFit {
        match part {
            Part::Presence => &self.presence.lmm,
            Part::Strength => &self.strength,
        }
    }

    /// One line per part describing convergence.
    pub fn convergence_report(&self) -> String {
        let p = &self.presence;
        let s = &self.strength;
        format!(
            "presence: {} outer iterations, {} inner steps, -2 REPL {:.4}, {} of {} components at bound\n\
             strength: {} steps, -2 REML {:.4}, {} of {} components at bound\n",
            p.outer_iterations,
            p.lmm.iterations,
            -2.0 * p.lmm.reml_loglik,
            p.lmm.vc.at_bound.iter().filter(|b| **b).count(),
            p.lmm.vc.tau.len(),
            s.iterations,
            -2.0 * s.reml_loglik,
            s.vc.at_bound.iter().filter(|b| **b).count(),
            s.vc.tau.len(),
        )
    }
}

/// Errors with the first fixed-effect column that is a linear combination of earlier ones.
pub fn check_full_rank(design: &DesignMatrices) -> Result<()> {
    let p = design.p();
    if p > design.n_rows() {
        return Err(Error::RankDeficient {
            column: design.x_names.get(design.n_rows()).cloned().unwrap_or_default(),
        });
    }
    let g = design.x.tr_mul(&design.x);
    let scale: Vec<f64> = (0..p).map(|i| g[(i, i)].sqrt()).collect();
    // Column-by-column Cholesky of the correlation-scaled Gram matrix; a
    // vanishing pivot identifies the aliased column.
    let mut l = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        if !(scale[j] > 0.0) {
            return Err(Error::RankDeficient {
                column: design.x_names[j].clone(),
            });
        }
        for i in 0..=j {
            let gij = g[(j, i)] / (scale[i] * scale[j]);
            let s: f64 = (0..i).map(|k| l[(j, k)] * l[(i, k)]).sum();
            if i == j {
                let d = gij - s;
                if d < 1e-10 {
                    return Err(Error::RankDeficient {
                        column: design.x_names[j].clone(),
                    });
                }
                l[(j, j)] = d.sqrt();
            } else {
                l[(j, i)] = (gij - s) / l[(i, i)];
            }
        }
    }
    Ok(())
}

/// −2 restricted log-likelihood at `theta = (log τ_1, …, log τ_G, log σ²)`,
/// together with its gradient.
pub fn reml_objective(
    theta: &[f64],
    design: &DesignMatrices,
    response: &[f64],
    weights: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    let problem = RemlProblem::new(design, response, weights)?;
    let g = problem.n_components();
    if theta.len() != g + 1 {
        return Err(Error::DimensionMismatch(format!("theta has {} entries, expected {}", theta.len(), g + 1)));
    }
    problem
        .full_objective(&theta[..g], theta[g])
        .map(|(v, grad)| (v, grad.iter().copied().collect()))
        .ok_or_else(|| Error::Domain("REML objective is not finite at theta".into()))
}

/// Result of optimizing the variance ratios.
pub(crate) struct Optimum {
    pub gamma: Vec<f64>,
    pub pinned: Vec<bool>,
    pub eval: RemlEvaluation,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub curvature: Curvature,
}

/// Inverse-Hessian approximation over the free components, in log γ.
#[derive(Debug, Clone)]
pub(crate) struct Curvature {
    pub free: Vec<usize>,
    pub inv_hessian: DMatrix<f64>,
}

impl Curvature {
    /// The approximation over `free`: shared components keep their block,
    /// newly freed ones start from the mean old diagonal.
    fn restricted_to(&self, free: &[usize]) -> Option<DMatrix<f64>> {
        let d = self.free.len();
        if d == 0 || free.is_empty() {
            return None;
        }
        let mean_diag = self.inv_hessian.diagonal().mean();
        let pos: Vec<Option<usize>> = free.iter().map(|k| self.free.iter().position(|f| f == k)).collect();
        Some(DMatrix::from_fn(free.len(), free.len(), |a, b| match (pos[a], pos[b]) {
            (Some(i), Some(j)) => self.inv_hessian[(i, j)],
            _ if a == b => mean_diag,
            _ => 0.0,
        }))
    }
}

/// Maximizes the restricted likelihood over `γ ≥ 0`. With a warm start a
/// single run is made from it (zeros stay pinned unless released); otherwise
/// three scaled moment-based starts are tried and the best kept.
pub(crate) fn optimize(problem: &RemlProblem, warm: Option<&[f64]>, opts: &FitOptions) -> Result<Optimum> {
    optimize_warm(problem, warm, None, opts)
}

/// As [`optimize`]; a warm run also reuses `curvature` when its free set matches.
pub(crate) fn optimize_warm(
    problem: &RemlProblem,
    warm: Option<&[f64]>,
    curvature: Option<&Curvature>,
    opts: &FitOptions,
) -> Result<Optimum> {
    let g = problem.n_components();
    let starts: Vec<Vec<f64>> = match warm {
        Some(w) => vec![w.to_vec()],
        None => [1.0, 0.1, 10.0]
            .iter()
            .map(|c| problem.component_scale.iter().map(|s| c / (g as f64 * s)).collect())
            .collect(),
    };
    let mut best: Option<Optimum> = None;
    let mut last_err = None;
    for start in starts {
        match optimize_from(problem, start, curvature, opts) {
            Ok(o) => {
                let better = match &best {
                    None => true,
                    Some(b) => (o.converged && !b.converged) || (o.converged == b.converged && o.eval.value < b.eval.value),
                };
                if better {
                    best = Some(o);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or(Error::NonConvergence {
            iterations: 0,
            last_objective: f64::NAN,
            trace: Vec::new(),
        })
    })
}

fn optimize_from(
    problem: &RemlProblem,
    start: Vec<f64>,
    mut curvature: Option<&Curvature>,
    opts: &FitOptions,
) -> Result<Optimum> {
    let g = problem.n_components();
    let scale = &problem.component_scale;
    let mut gamma = start;
    let mut pinned: Vec<bool> = gamma.iter().map(|&v| !(v > 0.0)).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut last = Curvature {
        free: Vec::new(),
        inv_hessian: DMatrix::zeros(0, 0),
    };
    for _round in 0..=opts.max_pin_rounds {
        let free: Vec<usize> = (0..g).filter(|&k| !pinned[k]).collect();
        let base: Vec<f64> = (0..g).map(|k| if pinned[k] { 0.0 } else { gamma[k] }).collect();
        let obj = LogGammaObjective {
            problem,
            free: &free,
            base: &base,
        };
        let x0 = DVector::from_iterator(free.len(), free.iter().map(|&k| gamma[k].ln()));
        let h0 = curvature.take().and_then(|c| c.restricted_to(&free));
        let res = minimize_warm(&obj, x0, h0, &opts.bfgs).ok_or_else(|| Error::NonConvergence {
            iterations,
            last_objective: trace.last().copied().unwrap_or(f64::NAN),
            trace: trace.clone(),
        })?;
        iterations += res.iterations;
        trace.extend_from_slice(&res.trace);
        converged = res.converged;
        last = Curvature {
            free: free.clone(),
            inv_hessian: res.inv_hessian.clone(),
        };
        gamma = obj.gamma(&res.x).expect("optimizer returns an evaluable point");
        let f = res.value;

        let mut changed = false;
        for &k in &free {
            if gamma[k] < PIN_ABSOLUTE {
                pinned[k] = true;
                gamma[k] = 0.0;
                changed = true;
            } else if gamma[k] * scale[k] < PIN_CANDIDATE {
                let mut trial = gamma.clone();
                trial[k] = 0.0;
                if let Some(ev) = problem.evaluate(&trial, false) {
                    if ev.value <= f + 1e-9 * f.abs().max(1.0) {
                        pinned[k] = true;
                        gamma[k] = 0.0;
                        changed = true;
                    }
                }
            }
        }
        if !changed && pinned.iter().any(|p| *p) {
            // Release a boundary component if moving inward lowers the objective.
            if let Some(ev) = problem.evaluate(&gamma, true) {
                let grad = ev.grad_gamma().expect("gradient requested");
                for k in 0..g {
                    if pinned[k] && grad[k] < 0.0 {
                        let mut trial = gamma.clone();
                        trial[k] = 1e-3 / scale[k];
                        if let Some(t) = problem.evaluate(&trial, false) {
                            if t.value < ev.value {
                                pinned[k] = false;
                                gamma[k] = trial[k];
                                changed = true;
                            }
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let eval = problem.evaluate(&gamma, false).ok_or_else(|| Error::NonConvergence {
        iterations,
        last_objective: trace.last().copied().unwrap_or(f64::NAN),
        trace: trace.clone(),
    })?;
    Ok(Optimum {
        gamma,
        pinned,
        eval,
        trace,
        iterations,
        converged,
        curvature: last,
    })
}

pub(crate) fn lmm_from_optimum(design: &DesignMatrices, problem: &RemlProblem, opt: &Optimum) -> LmmFit {
    let ev = &opt.eval;
    let p = design.p();
    let cov = &ev.xtvx_inv * ev.sigma2;
    let beta_cov = (0..p)
        .map(|i| (0..p).map(|j| 0.5 * (cov[(i, j)] + cov[(j, i)])).collect())
        .collect();
    let blups = problem
        .blups(&opt.gamma, &ev.beta)
        .into_iter()
        .map(|(subject, b)| SubjectBlup {
            subject,
            values: b.iter().copied().collect(),
        })
        .collect();
    let n = design.n_rows();
    LmmFit {
        x_names: design.x_names.clone(),
        beta: ev.beta.iter().copied().collect(),
        beta_cov,
        vc: VarianceComponents {
            keys: design.components.clone(),
            tau: opt.gamma.iter().map(|g| g * ev.sigma2).collect(),
            at_bound: opt.pinned.clone(),
            sigma2: ev.sigma2,
        },
        z_names: design.z_names.clone(),
        component_of_column: design.component_of_column.clone(),
        blups,
        reml_loglik: -0.5 * ev.value,
        residual_df: n - p,
        n_rows: n,
        trace: opt.trace.clone(),
        iterations: opt.iterations,
        converged: opt.converged,
    }
}

/// Gaussian REML fit of `response` on the design, with optional prior weights.
pub fn reml_fit(design: &DesignMatrices, response: &[f64], weights: Option<&[f64]>) -> Result<LmmFit> {
    reml_fit_with(design, response, weights, None, &FitOptions::default())
}

/// As [`reml_fit`], optionally warm-started from variance ratios `τ/σ²`
/// (zeros start pinned at the boundary).
pub fn reml_fit_with(
    design: &DesignMatrices,
    response: &[f64],
    weights: Option<&[f64]>,
    warm: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<LmmFit> {
    if design.p() > design.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} fixed effects for {} rows",
            design.p(),
            design.n_rows()
        )));
    }
    check_full_rank(design)?;
    let problem = RemlProblem::new(design, response, weights)?;
    if let Some(w) = warm {
        if w.len() != problem.n_components() {
            return Err(Error::DimensionMismatch("warm start has the wrong number of components".into()));
        }
    }
    let opt = optimize(&problem, warm, opts)?;
    if !opt.converged {
        return Err(Error::NonConvergence {
            iterations: opt.iterations,
            last_objective: opt.eval.value,
            trace: opt.trace,
        });
    }
    Ok(lmm_from_optimum(design, &problem, &opt))
}

/// The model spec with every random term whose variance was estimated at zero removed.
pub fn drop_zero_variance(fit: &LmmFit, spec: &ModelSpec) -> ModelSpec {
    let mut out = spec.clone();
    let mut node_components = 0;
    let mut nodes_dropped = 0;
    for (key, &bound) in fit.vc.keys.iter().zip(&fit.vc.at_bound) {
        if matches!(key, ComponentKey::Node(_)) {
            node_components += 1;
        }
        if !bound {
            continue;
        }
        match *key {
            ComponentKey::Intercept => out.random.retain(|t| *t != RandomTerm::Intercept),
            ComponentKey::Slope(c) => out.random.retain(|t| *t != RandomTerm::Slope(c)),
            ComponentKey::Nodes => out.random.retain(|t| *t != RandomTerm::Nodes),
            ComponentKey::Node(j) => {
                nodes_dropped += 1;
                if !out.excluded_nodes.contains(&j) {
                    out.excluded_nodes.push(j);
                }
            }
        }
    }
    out.excluded_nodes.sort_unstable();
    if node_components > 0 && nodes_dropped == node_components && out.node_variance == NodeVariance::PerNode {
        out.random.retain(|t| *t != RandomTerm::Nodes);
        out.excluded_nodes.clear();
    }
    out
}

/// Fits the presence part on every dyad and the strength part on dyads with an edge.
pub fn fit_two_part(table: &DyadTable, spec: &ModelSpec) -> Result<TwoPartFit> {
    fit_two_part_specs(
        table,
        &spec.with_response(Response::Presence),
        &spec.with_response(Response::Strength),
        None,
        &FitOptions::default(),
    )
}

/// Fits both parts with separate specs, optionally warm-started from an
/// earlier fit whose variance components are matched by key.
pub fn fit_two_part_specs(
    table: &DyadTable,
    presence_spec: &ModelSpec,
    strength_spec: &ModelSpec,
    warm: Option<&TwoPartFit>,
    opts: &FitOptions,
) -> Result<TwoPartFit> {
    let centering = table
        .centering
        .clone()
        .ok_or_else(|| Error::InvalidSpec("dyad table must be centered before fitting".into()))?;
    let presence_spec = presence_spec.with_response(Response::Presence);
    let strength_spec = strength_spec.with_response(Response::Strength);

    let pdesign = build_design(table, &presence_spec).map_err(|e| e.in_part(Part::Presence))?;
    let pwarm = warm.map(|w| matched_gamma(&w.presence.lmm, &pdesign));
    let presence = pql_fit_with(&pdesign, pwarm.as_deref(), opts).map_err(|e| e.in_part(Part::Presence))?;
    log::info!(
        "presence part converged in {} outer iterations",
        presence.outer_iterations
    );

    let sdesign = build_design(table, &strength_spec).map_err(|e| e.in_part(Part::Strength))?;
    if sdesign.n_rows() == 0 {
        return Err(Error::NoEdges.in_part(Part::Strength));
    }
    let swarm = warm.map(|w| matched_gamma(&w.strength, &sdesign));
    let strength = reml_fit_with(&sdesign, &sdesign.response, None, swarm.as_deref(), opts)
        .map_err(|e| e.in_part(Part::Strength))?;
    log::info!("strength part converged in {} steps", strength.iterations);

    Ok(TwoPartFit {
        presence_spec,
        strength_spec,
        presence,
        strength,
        centering,
        n_nodes: table.n_nodes,
    })
}

/// Refits both parts after dropping zero-variance random terms from each.
pub fn refit_reduced(table: &DyadTable, full: &TwoPartFit) -> Result<TwoPartFit> {
    let ps = drop_zero_variance(&full.presence.lmm, &full.presence_spec);
    let ss = drop_zero_variance(&full.strength, &full.strength_spec);
    if ps == full.presence_spec && ss == full.strength_spec {
        return Ok(full.clone());
    }
    fit_two_part_specs(table, &ps, &ss, Some(full), &FitOptions::default())
}

/// Warm-start ratios for `design` taken from `fit` by component key; new
/// components get a moderate positive start.
pub(crate) fn matched_gamma(fit: &LmmFit, design: &DesignMatrices) -> Vec<f64> {
    let old = fit.gamma();
    design
        .components
        .iter()
        .map(|k| match fit.vc.keys.iter().position(|o| o == k) {
            Some(i) if fit.vc.at_bound[i] => 0.0,
            Some(i) => old[i].max(1e-6),
            None => 0.1,
        })
        .collect()
}
