//! Prediction bands, two-part network simulation and goodness-of-fit tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dyaddesign::{
    dense_random_value, fixed_row, inv_fisher_z, random_layout, ComponentKey, Covariate, DyadRow, DyadTable,
    FixedTerm, ModelSpec, RandomLayout,
};
use crate::error::{Error, Part, Result};
use crate::graphmetrics::{metric_suite, MetricSettings, NetworkMetrics};
use crate::mixedfit::{LmmFit, TwoPartFit};
use crate::netdata::SubjectNetwork;

/// Redraws allowed before a strength draw is clamped to the smallest positive weight.
pub const MAX_STRENGTH_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    Probability,
    Strength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Grid value on the raw covariate scale.
    pub grid: f64,
    pub group: f64,
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionCurve {
    pub vary: Covariate,
    pub scale: Scale,
    pub df: usize,
    pub points: Vec<CurvePoint>,
    pub warnings: Vec<String>,
}

impl PredictionCurve {
    /// `group,grid,point,lo,hi` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,grid,point,lo,hi\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{:.6},{:.6},{:.6}", p.group, p.grid, p.point, p.lo, p.hi);
        }
        for w in &self.warnings {
            let _ = writeln!(out, "# warning: {w}");
        }
        out
    }

    pub fn for_group(&self, group: f64) -> impl Iterator<Item = &CurvePoint> {
        self.points.iter().filter(move |p| p.group == group)
    }
}

/// What to predict: a grid over one covariate with the rest held fixed.
#[derive(Debug, Clone)]
pub struct PredictRequest {
    pub vary: Covariate,
    /// Raw-scale values of `vary`.
    pub grid: Vec<f64>,
    pub group_levels: Vec<f64>,
    /// Raw-scale values for other covariates; anything absent sits at its
    /// sample mean (continuous) or at 0 (sex).
    pub others: BTreeMap<Covariate, f64>,
    /// Use both nodes' variances from this dyad instead of the average node.
    pub dyad: Option<(usize, usize)>,
    /// Observed raw range of `vary`, used to flag extrapolation.
    pub observed_range: Option<(f64, f64)>,
    pub level: f64,
}

impl PredictRequest {
    pub fn new(vary: Covariate, grid: Vec<f64>) -> Self {
        Self {
            vary,
            grid,
            group_levels: vec![0.0, 1.0],
            others: BTreeMap::new(),
            dyad: None,
            observed_range: None,
            level: 0.95,
        }
    }
}

/// The design row for predicting at `value` of the varied covariate, on the model's centered scale.
pub fn prediction_row(fit: &TwoPartFit, req: &PredictRequest, value: f64, group: f64) -> DyadRow {
    let c = &fit.centering;
    let raw = |cov: Covariate| -> f64 {
        if cov == req.vary {
            value
        } else {
            req.others.get(&cov).copied().unwrap_or_else(|| c.mean(cov))
        }
    };
    let centered = |cov: Covariate| c.center_value(cov, raw(cov));
    let dist2 = if req.vary == Covariate::Dist2 {
        c.center_value(Covariate::Dist2, value)
    } else {
        c.dist2_for(raw(Covariate::Dist))
    };
    let (node_j, node_k) = req.dyad.unwrap_or((0, 1));
    DyadRow {
        subject: 0,
        node_j,
        node_k,
        weight: 0.0,
        presence: false,
        strength: None,
        clustering: centered(Covariate::Clustering),
        efficiency: centered(Covariate::Efficiency),
        degree_diff: centered(Covariate::DegreeDiff),
        modularity: centered(Covariate::Modularity),
        leverage: Some(centered(Covariate::Leverage)),
        dist: centered(Covariate::Dist),
        dist2,
        group,
        sex: req.others.get(&Covariate::Sex).copied().unwrap_or(0.0),
        education: centered(Covariate::Education),
    }
}

/// Random-effect variance `z′diag(τ)z` for a new subject at `row`.
pub(crate) fn random_variance(fit: &LmmFit, spec: &ModelSpec, n_nodes: usize, row: &DyadRow, dyad: Option<(usize, usize)>) -> f64 {
    let layout = random_layout(spec, n_nodes);
    let tau_col = |col: usize| fit.vc.tau[layout.component_of_column[col]];
    let mut v = 0.0;
    for (c, t) in layout.dense_terms.iter().enumerate() {
        let z = dense_random_value(t, row);
        v += z * z * tau_col(c);
    }
    if layout.n_node_columns > 0 {
        let nd = layout.dense_terms.len();
        let node_tau = |j: usize| layout.node_column[j].map_or(0.0, |c| tau_col(nd + c));
        v += match dyad {
            Some((j, k)) => node_tau(j) + node_tau(k),
            None => 2.0 * (0..n_nodes).map(node_tau).sum::<f64>() / n_nodes as f64,
        };
    }
    v
}

/// Point predictions and prediction bands for a new subject over a covariate grid.
pub fn predict_curve(fit: &TwoPartFit, part: Part, req: &PredictRequest) -> Result<PredictionCurve> {
    let spec = fit.spec(part);
    let lmm = fit.lmm(part);
    let uses = spec
        .fixed
        .iter()
        .any(|t| matches!(t, FixedTerm::Main(c) | FixedTerm::CoiBy(c) if *c == req.vary))
        || (req.vary == Covariate::Dist && spec.fixed.contains(&FixedTerm::Main(Covariate::Dist2)));
    if !uses {
        return Err(Error::UnknownTerm(format!(
            "{} is not a fixed-effect covariate of the {part} model",
            req.vary.token()
        )));
    }
    if let Some((j, k)) = req.dyad {
        if j >= k || k >= fit.n_nodes {
            return Err(Error::Domain(format!("dyad ({j},{k}) is not a node pair of this fit")));
        }
    }
    if !(req.level > 0.0 && req.level < 1.0) {
        return Err(Error::Domain("prediction level must lie in (0,1)".into()));
    }
    let df = lmm.residual_df;
    let t = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::Domain(e.to_string()))?
        .inverse_cdf(0.5 + req.level / 2.0);
    let beta = DVector::from_vec(lmm.beta.clone());
    let cov = lmm.beta_cov_matrix();
    let resid = match part {
        Part::Presence => 0.0,
        Part::Strength => lmm.vc.sigma2,
    };
    let mut warnings = Vec::new();
    if let Some((lo, hi)) = req.observed_range {
        let (mid, span) = (0.5 * (lo + hi), hi - lo);
        for &g in &req.grid {
            if (g - mid).abs() > 1.5 * span {
                warnings.push(format!(
                    "grid value {g} lies outside three times the observed span of {} [{lo}, {hi}]",
                    req.vary.token()
                ));
            }
        }
    }
    let mut points = Vec::with_capacity(req.grid.len() * req.group_levels.len());
    for &group in &req.group_levels {
        for &g in &req.grid {
            let row = prediction_row(fit, req, g, group);
            let x = DVector::from_vec(fixed_row(spec, &row));
            let eta = x.dot(&beta);
            let var = (x.transpose() * &cov * &x)[(0, 0)]
                + random_variance(lmm, spec, fit.n_nodes, &row, req.dyad)
                + resid;
            let half = t * var.max(0.0).sqrt();
            let link = |v: f64| match part {
                Part::Presence => crate::mixedfit::logistic(v),
                Part::Strength => inv_fisher_z(v),
            };
            points.push(CurvePoint {
                grid: g,
                group,
                point: link(eta),
                lo: link(eta - half),
                hi: link(eta + half),
            });
        }
    }
    Ok(PredictionCurve {
        vary: req.vary,
        scale: match part {
            Part::Presence => Scale::Probability,
            Part::Strength => Scale::Strength,
        },
        df,
        points,
        warnings,
    })
}

/// Covariate rows that simulated networks condition on.
#[derive(Debug, Clone)]
pub enum CovariateSource {
    /// Each simulated network takes the rows of one observed subject, cycling.
    Observed(DyadTable),
    /// One representative subject whose rows average a group's dyad rows.
    GroupMean { table: DyadTable, group: u8 },
}

impl CovariateSource {
    pub fn observed(table: DyadTable) -> Self {
        CovariateSource::Observed(table)
    }

    /// Averages every dyad's covariates over the subjects of `group`.
    pub fn group_mean(table: &DyadTable, group: u8) -> Result<Self> {
        let members: Vec<usize> = (0..table.subjects.len())
            .filter(|&s| table.subjects[s].group == group)
            .collect();
        if members.is_empty() {
            return Err(Error::EmptyArm(format!("no subjects in group {group}")));
        }
        let ranges = table.subject_ranges();
        let first = &ranges.iter().find(|(s, _)| *s == members[0]).expect("subject has rows").1;
        let mut rows: Vec<DyadRow> = table.rows[first.clone()].to_vec();
        for r in rows.iter_mut() {
            *r = DyadRow {
                subject: 0,
                weight: 0.0,
                presence: false,
                strength: None,
                clustering: 0.0,
                efficiency: 0.0,
                degree_diff: 0.0,
                modularity: 0.0,
                leverage: Some(0.0),
                dist2: 0.0,
                sex: 0.0,
                education: 0.0,
                ..r.clone()
            };
        }
        let m = members.len() as f64;
        for &s in &members {
            let range = &ranges.iter().find(|(t, _)| *t == s).expect("subject has rows").1;
            for (acc, r) in rows.iter_mut().zip(&table.rows[range.clone()]) {
                acc.clustering += r.clustering / m;
                acc.efficiency += r.efficiency / m;
                acc.degree_diff += r.degree_diff / m;
                acc.modularity += r.modularity / m;
                acc.leverage = Some(acc.leverage.unwrap_or(0.0) + r.leverage.unwrap_or(0.0) / m);
                acc.dist2 += r.dist2 / m;
                acc.sex += r.sex / m;
                acc.education += r.education / m;
            }
        }
        let mut subject = table.subjects[members[0]].clone();
        subject.subject_id = format!("group{group}_mean");
        Ok(CovariateSource::GroupMean {
            table: DyadTable {
                subjects: vec![subject],
                n_nodes: table.n_nodes,
                rows,
                centering: table.centering.clone(),
            },
            group,
        })
    }

    fn table(&self) -> &DyadTable {
        match self {
            CovariateSource::Observed(t) | CovariateSource::GroupMean { table: t, .. } => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub n_sims: usize,
    pub seed: u64,
    /// Reuse each source subject's predicted random effects instead of drawing new ones.
    pub use_blups: bool,
    pub metrics: MetricSettings,
}

impl SimulationOptions {
    pub fn new(n_sims: usize, seed: u64) -> Self {
        Self {
            n_sims,
            seed,
            use_blups: false,
            metrics: MetricSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedEnsemble {
    pub options: SimulationOptions,
    pub networks: Vec<SubjectNetwork>,
    /// Index of the covariate subject each network was drawn for.
    pub source_subjects: Vec<usize>,
    /// `None` where a network had no edges to measure.
    pub metrics: Vec<Option<NetworkMetrics>>,
    /// Strength draws clamped after exhausting the redraw budget.
    pub truncated_draws: usize,
}

impl SimulatedEnsemble {
    /// `network,source_subject,edges` rows describing the ensemble.
    pub fn manifest(&self) -> String {
        let mut out = format!(
            "# seed={} n_sims={} use_blups={} truncated_draws={}\nnetwork,source_subject,edges\n",
            self.options.seed, self.options.n_sims, self.options.use_blups, self.truncated_draws
        );
        for (net, s) in self.networks.iter().zip(&self.source_subjects) {
            let _ = writeln!(out, "{},{},{}", net.subject_id, s, net.n_edges());
        }
        out
    }
}

/// Fixed effects and per-column random-effect variances for one part.
#[derive(Debug, Clone)]
pub(crate) struct PartParams {
    pub spec: ModelSpec,
    pub beta: Vec<f64>,
    /// Variance of every Z column in `random_layout(spec)` order.
    pub tau_col: Vec<f64>,
    pub sigma2: f64,
    layout: RandomLayoutOwned,
}

#[derive(Debug, Clone)]
struct RandomLayoutOwned {
    dense_terms: Vec<crate::dyaddesign::RandomTerm>,
    node_column: Vec<Option<usize>>,
    q: usize,
}

impl From<RandomLayout> for RandomLayoutOwned {
    fn from(l: RandomLayout) -> Self {
        Self {
            q: l.dense_terms.len() + l.n_node_columns,
            dense_terms: l.dense_terms,
            node_column: l.node_column,
        }
    }
}

impl PartParams {
    pub fn new(spec: &ModelSpec, n_nodes: usize, beta: Vec<f64>, tau: impl Fn(&ComponentKey) -> f64, sigma2: f64) -> Self {
        let layout = random_layout(spec, n_nodes);
        let tau_col = layout
            .component_of_column
            .iter()
            .map(|&g| tau(&layout.components[g]))
            .collect();
        Self {
            spec: spec.clone(),
            beta,
            tau_col,
            sigma2,
            layout: layout.into(),
        }
    }

    pub fn from_fit(fit: &LmmFit, spec: &ModelSpec, n_nodes: usize) -> Self {
        Self::new(
            spec,
            n_nodes,
            fit.beta.clone(),
            |k| fit.vc.get(*k).unwrap_or(0.0),
            fit.vc.sigma2,
        )
    }

    pub fn q(&self) -> usize {
        self.layout.q
    }

    fn draw_effects(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.tau_col
            .iter()
            .map(|t| {
                let e: f64 = rng.sample(StandardNormal);
                e * t.max(0.0).sqrt()
            })
            .collect()
    }

    /// `x′β + z′b` for one row.
    pub fn linear_predictor(&self, row: &DyadRow, b: &[f64]) -> f64 {
        let x = fixed_row(&self.spec, row);
        let mut eta: f64 = x.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        let nd = self.layout.dense_terms.len();
        for (c, t) in self.layout.dense_terms.iter().enumerate() {
            eta += dense_random_value(t, row) * b[c];
        }
        if self.layout.q > nd {
            for j in [row.node_j, row.node_k] {
                if let Some(c) = self.layout.node_column[j] {
                    eta += b[nd + c];
                }
            }
        }
        eta
    }
}

/// Both parts' parameters, as fitted or as a generator truth.
#[derive(Debug, Clone)]
pub(crate) struct TwoPartParams {
    pub presence: PartParams,
    pub strength: PartParams,
}

impl TwoPartParams {
    pub fn from_fit(fit: &TwoPartFit) -> Self {
        Self {
            presence: PartParams::from_fit(&fit.presence.lmm, &fit.presence_spec, fit.n_nodes),
            strength: PartParams::from_fit(&fit.strength, &fit.strength_spec, fit.n_nodes),
        }
    }
}

/// Draws one network from `rows`; returns the weights and the number of clamped strength draws.
pub(crate) fn simulate_rows(
    params: &TwoPartParams,
    rows: &[DyadRow],
    n_nodes: usize,
    id: String,
    rng: &mut ChaCha8Rng,
    effects: Option<(&[f64], &[f64])>,
) -> (SubjectNetwork, usize) {
    let (br, bs) = match effects {
        Some((r, s)) => (r.to_vec(), s.to_vec()),
        None => (params.presence.draw_effects(rng), params.strength.draw_effects(rng)),
    };
    let sd = params.strength.sigma2.max(0.0).sqrt();
    let mut net = SubjectNetwork::empty(id, n_nodes);
    let mut truncated = 0;
    for row in rows {
        let p = crate::mixedfit::logistic(params.presence.linear_predictor(row, &br));
        let u: f64 = rng.random();
        if u >= p {
            continue;
        }
        let mean = params.strength.linear_predictor(row, &bs);
        let mut w = None;
        for _ in 0..MAX_STRENGTH_DRAWS {
            let e: f64 = rng.sample(StandardNormal);
            let v = inv_fisher_z(mean + sd * e);
            if v > 0.0 && v < 1.0 {
                w = Some(v);
                break;
            }
        }
        let w = w.unwrap_or_else(|| {
            truncated += 1;
            f64::MIN_POSITIVE
        });
        net.set_weight(row.node_j, row.node_k, w);
    }
    (net, truncated)
}

/// Seeded generator for the `index`-th network of a run.
pub(crate) fn stream_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Simulates `n_sims` networks from a fitted two-part model.
pub fn simulate_networks(fit: &TwoPartFit, source: &CovariateSource, opts: &SimulationOptions) -> Result<SimulatedEnsemble> {
    let params = TwoPartParams::from_fit(fit);
    let table = source.table();
    if table.n_nodes != fit.n_nodes {
        return Err(Error::DimensionMismatch(format!(
            "covariate rows have {} nodes, fit has {}",
            table.n_nodes, fit.n_nodes
        )));
    }
    let ranges = table.subject_ranges();
    if ranges.is_empty() {
        return Err(Error::EmptyArm("covariate source has no rows".into()));
    }
    if opts.use_blups && matches!(source, CovariateSource::GroupMean { .. }) {
        return Err(Error::Domain("predicted random effects need observed covariate rows".into()));
    }
    let blups = |part: &LmmFit, subject: usize, q: usize| -> Result<Vec<f64>> {
        let b = part
            .blup(subject)
            .ok_or_else(|| Error::Domain(format!("no predicted random effects for subject {subject}")))?;
        if b.len() != q {
            return Err(Error::DimensionMismatch("random-effect layout differs from the fit".into()));
        }
        Ok(b.to_vec())
    };
    let sims: Vec<Result<(SubjectNetwork, usize, usize)>> = (0..opts.n_sims)
        .into_par_iter()
        .map(|i| {
            let (subject, range) = &ranges[i % ranges.len()];
            let mut rng = stream_rng(opts.seed, i);
            let effects = if opts.use_blups {
                Some((
                    blups(&fit.presence.lmm, *subject, params.presence.q())?,
                    blups(&fit.strength, *subject, params.strength.q())?,
                ))
            } else {
                None
            };
            let (net, trunc) = simulate_rows(
                &params,
                &table.rows[range.clone()],
                table.n_nodes,
                format!("sim{:04}", i + 1),
                &mut rng,
                effects.as_ref().map(|(r, s)| (r.as_slice(), s.as_slice())),
            );
            Ok((net, *subject, trunc))
        })
        .collect();
    let mut networks = Vec::with_capacity(opts.n_sims);
    let mut source_subjects = Vec::with_capacity(opts.n_sims);
    let mut truncated = 0;
    for s in sims {
        let (net, subj, t) = s?;
        networks.push(net);
        source_subjects.push(subj);
        truncated += t;
    }
    if truncated > 0 {
        log::warn!("{truncated} strength draws hit the redraw limit and were set to the smallest positive weight");
    }
    let metrics = network_metrics(&networks, &opts.metrics);
    Ok(SimulatedEnsemble {
        options: *opts,
        networks,
        source_subjects,
        metrics,
        truncated_draws: truncated,
    })
}

/// Whole-network metrics per network; `None` for networks without edges.
pub fn network_metrics(networks: &[SubjectNetwork], settings: &MetricSettings) -> Vec<Option<NetworkMetrics>> {
    networks
        .par_iter()
        .map(|n| metric_suite(n, settings).ok().map(|(_, m)| m))
        .collect()
}

/// The six summary metrics compared between observed and simulated networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GofMetric {
    Clustering,
    GlobalEfficiency,
    PathLength,
    MeanDegree,
    Leverage,
    Modularity,
}

impl GofMetric {
    pub const ALL: [GofMetric; 6] = [
        GofMetric::Clustering,
        GofMetric::GlobalEfficiency,
        GofMetric::PathLength,
        GofMetric::MeanDegree,
        GofMetric::Leverage,
        GofMetric::Modularity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GofMetric::Clustering => "Clustering coefficient (C)",
            GofMetric::GlobalEfficiency => "Global Efficiency (E_glob)",
            GofMetric::PathLength => "Characteristic path length (L)",
            GofMetric::MeanDegree => "Mean Nodal Degree (K)",
            GofMetric::Leverage => "Leverage Centrality (l)",
            GofMetric::Modularity => "Modularity (Q)",
        }
    }

    pub fn of(self, m: &NetworkMetrics) -> f64 {
        match self {
            GofMetric::Clustering => m.clustering,
            GofMetric::GlobalEfficiency => m.global_efficiency,
            GofMetric::PathLength => m.path_length,
            GofMetric::MeanDegree => m.mean_degree,
            GofMetric::Leverage => m.leverage,
            GofMetric::Modularity => m.modularity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, se, n }
    }

    /// `mean (SE)` to three decimals.
    pub fn cell(&self) -> String {
        format!("{:.3} ({:.3})", self.mean, self.se)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofRow {
    pub condition: String,
    pub metric: GofMetric,
    pub observed: MeanSe,
    pub simulated: MeanSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofTable {
    pub rows: Vec<GofRow>,
    pub n_observed: usize,
    pub n_simulated: usize,
    /// Networks left out of an arm because they had no edges.
    pub skipped: usize,
}

impl GofTable {
    /// Stacks several conditions into one table.
    pub fn merge(tables: Vec<GofTable>) -> Result<GofTable> {
        let mut it = tables.into_iter();
        let mut out = it.next().ok_or_else(|| Error::EmptyArm("no conditions".into()))?;
        for t in it {
            out.n_observed = out.n_observed.max(t.n_observed);
            out.n_simulated = out.n_simulated.max(t.n_simulated);
            out.skipped += t.skipped;
            out.rows.extend(t.rows);
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "Condition,Metric,Observed (N={}),Simulated (N={})\n,,Mean (SE),Mean (SE)\n",
            self.n_observed, self.n_simulated
        );
        let mut last: Option<&str> = None;
        for r in &self.rows {
            let cond = if last == Some(r.condition.as_str()) { "" } else { r.condition.as_str() };
            last = Some(&r.condition);
            let _ = writeln!(
                out,
                "{},{},{},{}",
                cond,
                r.metric.name(),
                r.observed.cell(),
                r.simulated.cell()
            );
        }
        out
    }
}

/// Means and standard errors of the six metrics for observed and simulated networks.
pub fn gof_compare(
    condition: &str,
    observed: &[SubjectNetwork],
    ensemble: &SimulatedEnsemble,
) -> Result<GofTable> {
    let obs = network_metrics(observed, &ensemble.options.metrics);
    gof_from_metrics(condition, &obs, &ensemble.metrics)
}

pub fn gof_from_metrics(
    condition: &str,
    observed: &[Option<NetworkMetrics>],
    simulated: &[Option<NetworkMetrics>],
) -> Result<GofTable> {
    let obs: Vec<&NetworkMetrics> = observed.iter().flatten().collect();
    let sim: Vec<&NetworkMetrics> = simulated.iter().flatten().collect();
    if obs.is_empty() {
        return Err(Error::EmptyArm("observed arm has no measurable networks".into()));
    }
    if sim.is_empty() {
        return Err(Error::EmptyArm("simulated arm has no measurable networks".into()));
    }
    let rows = GofMetric::ALL
        .iter()
        .map(|&m| GofRow {
            condition: condition.to_string(),
            metric: m,
            observed: MeanSe::of(&obs.iter().map(|x| m.of(x)).collect::<Vec<_>>()),
            simulated: MeanSe::of(&sim.iter().map(|x| m.of(x)).collect::<Vec<_>>()),
        })
        .collect();
    Ok(GofTable {
        rows,
        n_observed: obs.len(),
        n_simulated: sim.len(),
        skipped: observed.len() - obs.len() + simulated.len() - sim.len(),
    })
}
