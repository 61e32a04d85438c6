//! Restricted likelihood for linear mixed models with subject-blocked random effects.
//!
//! With prior weights `W`, the marginal covariance of subject `i` is
//! `V_i = σ²(W_i⁻¹ + Z_i Γ Z_iᵀ)` where `Γ = diag(γ)` holds the variance
//! ratios `τ/σ²`. Writing `Λ = Γ^{1/2}` and `M_i = I + Λ Z_iᵀ W_i Z_i Λ`,
//! every quantity the likelihood needs reduces to q×q and q×p algebra on
//! the per-subject cross products, so the N×N matrix `V` is never formed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::dyaddesign::DesignMatrices;
use crate::error::{Error, Result};

use super::bfgs::Objective;

/// Weighted cross products of one subject's block.
#[derive(Debug, Clone)]
pub(crate) struct SubjectStats {
    pub subject: usize,
    /// ZᵀWZ
    a: DMatrix<f64>,
    /// ZᵀWX
    b: DMatrix<f64>,
    /// ZᵀWy
    zy: DVector<f64>,
    /// XᵀWX
    d: DMatrix<f64>,
    /// XᵀWy
    xy: DVector<f64>,
    /// yᵀWy
    yy: f64,
    sum_log_w: f64,
}

/// The REML problem for one design, response and weight vector.
pub struct RemlProblem {
    stats: Vec<SubjectStats>,
    n: usize,
    p: usize,
    q: usize,
    component_of_column: Vec<usize>,
    n_components: usize,
    /// Average weighted Σz² per row contributed by each component.
    pub(crate) component_scale: Vec<f64>,
}

/// Everything the profiled objective produces at one `γ`.
#[derive(Debug, Clone)]
pub struct RemlEvaluation {
    /// −2 × restricted log-likelihood with σ² profiled out.
    pub value: f64,
    pub beta: DVector<f64>,
    /// Xᵀ(W⁻¹ + ZΓZᵀ)⁻¹X
    pub xtvx: DMatrix<f64>,
    /// Inverse of `xtvx`.
    pub xtvx_inv: DMatrix<f64>,
    /// Weighted residual quadratic form at the GLS solution.
    pub r_tilde: f64,
    pub sigma2: f64,
    /// Σ_i log|W_i⁻¹ + Z_i Γ Z_iᵀ|
    pub logdet_v: f64,
    pub logdet_xtvx: f64,
    /// tr(P ∂V/∂γ_g) per component, when requested.
    pub trace_term: Option<DVector<f64>>,
    /// yᵀP ∂V/∂γ_g P y per component, when requested.
    pub quad_term: Option<DVector<f64>>,
}

impl RemlEvaluation {
    /// Gradient of `value` with respect to `γ`.
    pub fn grad_gamma(&self) -> Option<DVector<f64>> {
        let t = self.trace_term.as_ref()?;
        let h = self.quad_term.as_ref()?;
        Some(t - h / self.sigma2)
    }
}

struct Factor {
    chol: Cholesky<f64, Dyn>,
    lambda: Vec<f64>,
    /// L⁻¹ΛB
    y: DMatrix<f64>,
    logdet_m: f64,
}

impl RemlProblem {
    pub fn new(design: &DesignMatrices, response: &[f64], weights: Option<&[f64]>) -> Result<Self> {
        let n = design.n_rows();
        if response.len() != n {
            return Err(Error::DimensionMismatch(format!("{} responses for {} rows", response.len(), n)));
        }
        if let Some((i, _)) = response.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite response at row {i}")));
        }
        if let Some(w) = weights {
            if w.len() != n || w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::Domain("prior weights must be positive and finite".into()));
            }
        }
        let p = design.p();
        let q = design.q();
        let stats: Vec<SubjectStats> = design
            .groups
            .par_iter()
            .map(|(subject, rows)| subject_stats(design, response, weights, *subject, rows.clone()))
            .collect();
        let n_components = design.n_components();
        let mut component_scale = vec![0.0; n_components];
        for s in &stats {
            for (c, &g) in design.component_of_column.iter().enumerate() {
                component_scale[g] += s.a[(c, c)];
            }
        }
        component_scale.iter_mut().for_each(|v| *v = (*v / n.max(1) as f64).max(1e-300));
        Ok(Self {
            stats,
            n,
            p,
            q,
            component_of_column: design.component_of_column.clone(),
            n_components,
            component_scale,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    fn lambda(&self, gamma: &[f64]) -> Vec<f64> {
        self.component_of_column.iter().map(|&g| gamma[g].max(0.0).sqrt()).collect()
    }

    fn factor(&self, s: &SubjectStats, lambda: &[f64]) -> Option<Factor> {
        let q = self.q;
        let m = DMatrix::from_fn(q, q, |i, j| {
            let v = lambda[i] * s.a[(i, j)] * lambda[j];
            if i == j {
                1.0 + v
            } else {
                v
            }
        });
        if m.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let chol = Cholesky::new(m)?;
        let l = chol.l_dirty();
        let logdet_m = 2.0 * (0..q).map(|i| l[(i, i)].ln()).sum::<f64>();
        let mut y = s.b.clone();
        scale_rows(&mut y, lambda);
        l.solve_lower_triangular_mut(&mut y);
        Some(Factor {
            chol,
            lambda: lambda.to_vec(),
            y,
            logdet_m,
        })
    }

    /// Profiled objective at `γ`; `None` where the likelihood cannot be evaluated.
    pub fn evaluate(&self, gamma: &[f64], with_grad: bool) -> Option<RemlEvaluation> {
        assert_eq!(gamma.len(), self.n_components);
        if gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return None;
        }
        let lambda = self.lambda(gamma);
        let factors: Vec<Option<(Factor, DVector<f64>)>> = self
            .stats
            .par_iter()
            .map(|s| {
                let f = self.factor(s, &lambda)?;
                let mut uy = s.zy.clone();
                scale_vec(&mut uy, &f.lambda);
                f.chol.l_dirty().solve_lower_triangular_mut(&mut uy);
                Some((f, uy))
            })
            .collect();
        let mut xtvx = DMatrix::zeros(self.p, self.p);
        let mut xtvy = DVector::zeros(self.p);
        let mut ytvy = 0.0;
        let mut logdet_v = 0.0;
        let mut parts = Vec::with_capacity(factors.len());
        for (s, f) in self.stats.iter().zip(factors) {
            let (f, uy) = f?;
            xtvx += &s.d - f.y.tr_mul(&f.y);
            xtvy += &s.xy - f.y.tr_mul(&uy);
            ytvy += s.yy - uy.dot(&uy);
            logdet_v += f.logdet_m - s.sum_log_w;
            parts.push(f);
        }
        let xtvx = symmetrize(xtvx);
        let chol = Cholesky::new(xtvx.clone())?;
        let logdet_xtvx = 2.0 * (0..self.p).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
        let beta = chol.solve(&xtvy);
        let r_tilde = ytvy - beta.dot(&xtvy);
        let df = (self.n - self.p) as f64;
        if !(r_tilde > 0.0) || !r_tilde.is_finite() {
            return None;
        }
        let sigma2 = r_tilde / df;
        let value = df * (1.0 + (2.0 * std::f64::consts::PI * sigma2).ln()) + logdet_v + logdet_xtvx;
        if !value.is_finite() {
            return None;
        }
        let xtvx_inv = chol.inverse();
        let (trace_term, quad_term) = if with_grad {
            let (t, h) = self.gradient_terms(&parts, &beta, &xtvx_inv);
            (Some(t), Some(h))
        } else {
            (None, None)
        };
        Some(RemlEvaluation {
            value,
            beta,
            xtvx,
            xtvx_inv,
            r_tilde,
            sigma2,
            logdet_v,
            logdet_xtvx,
            trace_term,
            quad_term,
        })
    }

    fn gradient_terms(
        &self,
        parts: &[Factor],
        beta: &DVector<f64>,
        xtvx_inv: &DMatrix<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let q = self.q;
        let per_subject: Vec<(Vec<f64>, Vec<f64>)> = self
            .stats
            .par_iter()
            .zip(parts.par_iter())
            .map(|(s, f)| {
                let l = f.chol.l_dirty();
                // T = L⁻¹ΛA
                let mut t = s.a.clone();
                scale_rows(&mut t, &f.lambda);
                l.solve_lower_triangular_mut(&mut t);
                // E = ZᵀV⁻¹X (up to σ²) = B − TᵀY
                let e = &s.b - t.tr_mul(&f.y);
                let ec = &e * xtvx_inv;
                let u = &s.zy - &s.b * beta;
                let mut v = u.clone();
                scale_vec(&mut v, &f.lambda);
                l.solve_lower_triangular_mut(&mut v);
                let zs = &u - t.tr_mul(&v);
                let mut tr = vec![0.0; q];
                let mut quad = vec![0.0; q];
                for c in 0..q {
                    let tcol = t.column(c);
                    let diag = s.a[(c, c)] - tcol.dot(&tcol);
                    let corr = ec.row(c).dot(&e.row(c));
                    tr[c] = diag - corr;
                    quad[c] = zs[c] * zs[c];
                }
                (tr, quad)
            })
            .collect();
        let mut trace = DVector::zeros(self.n_components);
        let mut quad = DVector::zeros(self.n_components);
        for (tr, qd) in per_subject {
            for c in 0..q {
                let g = self.component_of_column[c];
                trace[g] += tr[c];
                quad[g] += qd[c];
            }
        }
        (trace, quad)
    }

    /// Unprofiled −2 restricted log-likelihood and its gradient in
    /// `(log τ_1, …, log τ_G, log σ²)`.
    pub fn full_objective(&self, log_tau: &[f64], log_sigma2: f64) -> Option<(f64, DVector<f64>)> {
        let sigma2 = log_sigma2.exp();
        let gamma: Vec<f64> = log_tau.iter().map(|lt| lt.exp() / sigma2).collect();
        let ev = self.evaluate(&gamma, true)?;
        let df = (self.n - self.p) as f64;
        let value = df * ((2.0 * std::f64::consts::PI).ln() + log_sigma2) + ev.logdet_v + ev.logdet_xtvx + ev.r_tilde / sigma2;
        let t = ev.trace_term.as_ref()?;
        let h = ev.quad_term.as_ref()?;
        let g = self.n_components;
        let mut grad = DVector::zeros(g + 1);
        let mut total = 0.0;
        for k in 0..g {
            let d = gamma[k] * (t[k] - h[k] / sigma2);
            grad[k] = d;
            total += d;
        }
        grad[g] = df - ev.r_tilde / sigma2 - total;
        Some((value, grad))
    }

    /// Per-subject BLUPs of the random effects, in units of the response.
    pub fn blups(&self, gamma: &[f64], beta: &DVector<f64>) -> Vec<(usize, DVector<f64>)> {
        let lambda = self.lambda(gamma);
        self.stats
            .par_iter()
            .map(|s| {
                let f = self.factor(s, &lambda).expect("factorization succeeded during the fit");
                let mut u = &s.zy - &s.b * beta;
                scale_vec(&mut u, &lambda);
                f.chol.solve_mut(&mut u);
                scale_vec(&mut u, &lambda);
                (s.subject, u)
            })
            .collect()
    }
}

fn subject_stats(
    design: &DesignMatrices,
    response: &[f64],
    weights: Option<&[f64]>,
    subject: usize,
    rows: std::ops::Range<usize>,
) -> SubjectStats {
    let p = design.p();
    let q = design.q();
    let mut a = DMatrix::zeros(q, q);
    let mut b = DMatrix::zeros(q, p);
    let mut zy = DVector::zeros(q);
    let mut d = DMatrix::zeros(p, p);
    let mut xy = DVector::zeros(p);
    let mut yy = 0.0;
    let mut sum_log_w = 0.0;
    let mut nz: Vec<(usize, f64)> = Vec::with_capacity(design.z.n_dense() + 2);
    let mut xr = vec![0.0; p];
    for r in rows {
        let w = weights.map_or(1.0, |w| w[r]);
        let y = response[r];
        sum_log_w += w.ln();
        for (c, v) in xr.iter_mut().enumerate() {
            *v = design.x[(r, c)];
        }
        nz.clear();
        design.z.for_each_nonzero(r, |c, v| nz.push((c, v)));
        for (i, &(c1, v1)) in nz.iter().enumerate() {
            let wv1 = w * v1;
            a[(c1, c1)] += wv1 * v1;
            for &(c2, v2) in &nz[i + 1..] {
                let t = wv1 * v2;
                a[(c1, c2)] += t;
                a[(c2, c1)] += t;
            }
            for (j, &xv) in xr.iter().enumerate() {
                b[(c1, j)] += wv1 * xv;
            }
            zy[c1] += wv1 * y;
        }
        for j in 0..p {
            let wx = w * xr[j];
            for k in j..p {
                d[(j, k)] += wx * xr[k];
            }
            xy[j] += wx * y;
        }
        yy += w * y * y;
    }
    for j in 0..p {
        for k in 0..j {
            d[(j, k)] = d[(k, j)];
        }
    }
    SubjectStats {
        subject,
        a,
        b,
        zy,
        d,
        xy,
        yy,
        sum_log_w,
    }
}

fn scale_rows(m: &mut DMatrix<f64>, s: &[f64]) {
    for (i, &f) in s.iter().enumerate() {
        m.row_mut(i).scale_mut(f);
    }
}

fn scale_vec(v: &mut DVector<f64>, s: &[f64]) {
    v.iter_mut().zip(s).for_each(|(x, f)| *x *= f);
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// The profiled objective restricted to the free components, in `log γ`.
pub(crate) struct LogGammaObjective<'a> {
    pub problem: &'a RemlProblem,
    pub free: &'a [usize],
    pub base: &'a [f64],
}

impl LogGammaObjective<'_> {
    pub fn gamma(&self, x: &DVector<f64>) -> Option<Vec<f64>> {
        let mut g = self.base.to_vec();
        for (i, &k) in self.free.iter().enumerate() {
            if x[i] > 300.0 {
                return None;
            }
            g[k] = x[i].exp();
        }
        Some(g)
    }
}

impl Objective for LogGammaObjective<'_> {
    fn value(&self, x: &DVector<f64>) -> Option<f64> {
        Some(self.problem.evaluate(&self.gamma(x)?, false)?.value)
    }

    fn value_and_grad(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let gamma = self.gamma(x)?;
        let ev = self.problem.evaluate(&gamma, true)?;
        let gg = ev.grad_gamma()?;
        let grad = DVector::from_iterator(self.free.len(), self.free.iter().map(|&k| gamma[k] * gg[k]));
        Some((ev.value, grad))
    }
}
