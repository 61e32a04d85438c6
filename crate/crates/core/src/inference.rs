//! Wald tests, coefficient reports, group-difference classification and
//! dyad thresholding.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::dyaddesign::{build_design, Covariate, DyadTable, FixedTerm, ModelSpec, Response};
use crate::error::{Error, Part, Result};
use crate::mixedfit::{matched_gamma, reml_fit_with, FitOptions, LmmFit, TwoPartFit};
use crate::netdata::SubjectNetwork;

/// Largest number of indicator columns added to one thresholding refit.
pub const MAX_INDICATORS_PER_BATCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// First contrast row times β.
    pub estimate: f64,
    /// Standard error of `estimate`.
    pub se: f64,
    pub f: f64,
    pub df1: usize,
    pub df2: usize,
    pub p: f64,
}

/// Wald F test of `contrast · β = 0` with residual denominator degrees of freedom.
pub fn wald_f_test(fit: &LmmFit, contrast: &DMatrix<f64>) -> Result<TestResult> {
    let p = fit.p();
    if contrast.ncols() != p || contrast.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "contrast is {}×{}, fit has {p} fixed effects",
            contrast.nrows(),
            contrast.ncols()
        )));
    }
    let beta = DVector::from_vec(fit.beta.clone());
    let cov = fit.beta_cov_matrix();
    let cb = contrast * &beta;
    let m = contrast * &cov * contrast.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let redundant = redundant_rows(&m);
    if !redundant.is_empty() {
        return Err(Error::SingularContrast { rows: redundant });
    }
    let minv = m.clone().cholesky().expect("checked positive definite").inverse();
    let rank = contrast.nrows();
    let f = ((cb.transpose() * &minv * &cb)[(0, 0)] / rank as f64).max(0.0);
    let df2 = fit.residual_df;
    let dist = FisherSnedecor::new(rank as f64, df2 as f64).map_err(|e| Error::Domain(e.to_string()))?;
    let pval = dist.sf(f).clamp(0.0, 1.0);
    Ok(TestResult {
        estimate: cb[0],
        se: m[(0, 0)].sqrt(),
        f,
        df1: rank,
        df2,
        p: pval,
    })
}

/// Rows whose pivot vanishes in a sequential Cholesky of `m`.
fn redundant_rows(m: &DMatrix<f64>) -> Vec<usize> {
    // Factor rows of the rows kept so far, with their original indices.
    let mut kept: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut redundant = Vec::new();
    for j in 0..m.nrows() {
        let mut lj = Vec::with_capacity(kept.len() + 1);
        for (a, (i, li)) in kept.iter().enumerate() {
            let s: f64 = (0..a).map(|b| lj[b] * li[b]).sum();
            lj.push((m[(j, *i)] - s) / li[a]);
        }
        let d = m[(j, j)] - lj.iter().map(|v| v * v).sum::<f64>();
        if !(d > 1e-10 * m[(j, j)].abs()) || !d.is_finite() {
            redundant.push(j);
        } else {
            lj.push(d.sqrt());
            kept.push((j, lj));
        }
    }
    redundant
}

/// Contrast picking one coefficient.
pub fn unit_contrast(p: usize, index: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(1, p);
    c[(0, index)] = 1.0;
    c
}

/// Significance pattern of the covariate-of-interest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupDifference {
    None,
    TopologicalOnly,
    OverallOnly,
    OverallAndTopological,
}

impl GroupDifference {
    pub fn key(self) -> &'static str {
        match self {
            GroupDifference::None => "none",
            GroupDifference::TopologicalOnly => "topological-only",
            GroupDifference::OverallOnly => "overall-only",
            GroupDifference::OverallAndTopological => "overall+topological",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            GroupDifference::None => "no overall or topological differences",
            GroupDifference::TopologicalOnly | GroupDifference::OverallAndTopological => {
                "differences vary by the values of the network metrics"
            }
            GroupDifference::OverallOnly => "overall differences without topological differences",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub part: Part,
    pub term: FixedTerm,
    /// Parameter label, e.g. `β_s,age×l`.
    pub label: String,
    pub test: TestResult,
    pub interpretation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub part: Part,
    pub pattern: GroupDifference,
    /// Labels of the significant covariate-of-interest terms.
    pub significant: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub coi_label: String,
    pub alpha: f64,
    pub rows: Vec<ReportRow>,
    pub classification: Vec<Classification>,
    pub notes: Vec<String>,
}

pub(crate) fn part_char(part: Part) -> char {
    match part {
        Part::Presence => 'r',
        Part::Strength => 's',
    }
}

/// Formats a p-value the way coefficient tables print it.
pub fn format_p(p: f64) -> String {
    if p < 1e-4 {
        "< 0.0001".to_string()
    } else {
        format!("{p:.4}")
    }
}

impl ComparisonReport {
    /// `Parameter,Estimate,SE,P-value` table, presence rows then strength rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("Parameter,Estimate,SE,P-value\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.4},{:.4},{}",
                r.label,
                r.test.estimate,
                r.test.se,
                format_p(r.test.p)
            );
        }
        out
    }

    /// Table plus interpretations and the classification, for reading.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:>10.4} {:>9.4} {:>9}  {}",
                r.label,
                r.test.estimate,
                r.test.se,
                format_p(r.test.p),
                r.interpretation
            );
        }
        let _ = writeln!(out);
        for c in &self.classification {
            let _ = writeln!(
                out,
                "{} part: {} ({}){}",
                c.part,
                c.pattern.key(),
                c.pattern.description(),
                if c.significant.is_empty() {
                    String::new()
                } else {
                    format!("; significant: {}", c.significant.join(", "))
                }
            );
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn pattern(&self, part: Part) -> Option<GroupDifference> {
        self.classification.iter().find(|c| c.part == part).map(|c| c.pattern)
    }
}

fn interpretation(part: Part, term: &FixedTerm, coi: &str) -> String {
    let what = match part {
        Part::Presence => "log odds of an edge",
        Part::Strength => "mean Fisher-Z strength of an existing edge",
    };
    let metric = |c: &Covariate| c.description();
    match term {
        FixedTerm::Intercept => format!(
            "{what} for a dyad at average covariate values for a male subject with {coi}=0 and average education"
        ),
        FixedTerm::Main(Covariate::Coi) => {
            format!("difference in the {what} for {coi}=1 males at average covariate values")
        }
        FixedTerm::Main(Covariate::Sex) => format!("difference in the {what} for {coi}=0 females"),
        FixedTerm::Main(Covariate::Education) => {
            format!("change in the {what} per additional year of education")
        }
        FixedTerm::Main(Covariate::Dist) => {
            format!("linear change in the {what} per dm of inter-node distance")
        }
        FixedTerm::Main(Covariate::Dist2) => {
            format!("quadratic change in the {what} with inter-node distance (dm²)")
        }
        FixedTerm::Main(c) => format!("change in the {what} per unit of {} in {coi}=0 networks", metric(c)),
        FixedTerm::CoiBy(Covariate::Sex) => {
            format!("additional difference in the {what} for {coi}=1 females beyond the sex effect")
        }
        FixedTerm::CoiBy(c) => format!(
            "additional change in the {what} per unit of {} in {coi}=1 networks",
            metric(c)
        ),
        FixedTerm::Dyad(j, k) => format!("shift in the {what} for dyad ({j},{k})"),
        FixedTerm::CoiDyad(j, k) => format!("additional shift in the {what} for dyad ({j},{k}) in {coi}=1 networks"),
    }
}

/// Coefficient table for both parts with 1-df Wald tests, classified at `alpha`.
pub fn explain_report(fit: &TwoPartFit, alpha: f64) -> Result<ComparisonReport> {
    let mut rows = Vec::new();
    let mut classification = Vec::new();
    let mut notes = Vec::new();
    let coi = fit.presence_spec.coi_label.clone();
    for part in [Part::Presence, Part::Strength] {
        let spec = fit.spec(part);
        let lmm = fit.lmm(part);
        let start = rows.len();
        for (i, term) in spec.fixed.iter().enumerate() {
            let test = wald_f_test(lmm, &unit_contrast(lmm.p(), i))?;
            rows.push(ReportRow {
                part,
                term: *term,
                label: spec.fixed_label(part_char(part), term),
                test,
                interpretation: interpretation(part, term, &coi),
            });
        }
        let c = classify_group_difference(&rows[start..], alpha);
        classification.push(Classification { part, ..c });
        if !spec.fixed.iter().any(|t| matches!(t, FixedTerm::CoiBy(_))) {
            notes.push(format!(
                "{part} model has no {coi} interactions; only overall differences can be assessed"
            ));
        }
    }
    Ok(ComparisonReport {
        coi_label: coi,
        alpha,
        rows,
        classification,
        notes,
    })
}

/// Maps the significance of the covariate-of-interest terms onto the four
/// comparison patterns. The main effect and the interaction with sex form the
/// overall family; interactions with network metrics form the topological
/// family. Each family is tested with Holm's step-down procedure at `alpha`,
/// so a pattern is reported with family-wise error at most `alpha`.
pub fn classify_group_difference(rows: &[ReportRow], alpha: f64) -> Classification {
    let family = |keep: &dyn Fn(&FixedTerm) -> bool| -> Vec<&ReportRow> {
        rows.iter().filter(|r| keep(&r.term)).collect()
    };
    let overall_family = family(&|t| matches!(t, FixedTerm::Main(Covariate::Coi) | FixedTerm::CoiBy(Covariate::Sex)));
    let topo_family = family(&|t| matches!(t, FixedTerm::CoiBy(c) if c.is_net()));
    let overall = holm_rejections(&overall_family, alpha);
    let topological = holm_rejections(&topo_family, alpha);
    let pattern = match (!overall.is_empty(), !topological.is_empty()) {
        (false, false) => GroupDifference::None,
        (false, true) => GroupDifference::TopologicalOnly,
        (true, false) => GroupDifference::OverallOnly,
        (true, true) => GroupDifference::OverallAndTopological,
    };
    let significant = rows
        .iter()
        .filter(|r| overall.contains(&r.label) || topological.contains(&r.label))
        .map(|r| r.label.clone())
        .collect();
    Classification {
        part: rows.first().map_or(Part::Presence, |r| r.part),
        pattern,
        significant,
    }
}

/// Labels rejected by Holm's step-down procedure.
fn holm_rejections(family: &[&ReportRow], alpha: f64) -> Vec<String> {
    let mut sorted: Vec<&&ReportRow> = family.iter().collect();
    sorted.sort_by(|a, b| a.test.p.total_cmp(&b.test.p));
    let m = sorted.len();
    sorted
        .iter()
        .enumerate()
        .take_while(|(i, r)| r.test.p < alpha / (m - i) as f64)
        .map(|(_, r)| r.label.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Correction {
    Fdr,
    Bonferroni,
}

impl FromStr for Correction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fdr" | "bh" => Ok(Correction::Fdr),
            "bonferroni" => Ok(Correction::Bonferroni),
            other => Err(Error::InvalidSpec(format!("unknown correction `{other}`"))),
        }
    }
}

/// Adjusted p-values; Benjamini–Hochberg step-up or Bonferroni.
pub fn adjust_p_values(p: &[f64], correction: Correction) -> Vec<f64> {
    let m = p.len();
    match correction {
        Correction::Bonferroni => p.iter().map(|v| (v * m as f64).min(1.0)).collect(),
        Correction::Fdr => {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
            let mut adj = vec![0.0; m];
            let mut running: f64 = 1.0;
            for (rank, &i) in order.iter().enumerate().rev() {
                running = running.min(p[i] * m as f64 / (rank + 1) as f64);
                // Guards against p·m/k rounding just below p.
                adj[i] = running.min(1.0).max(p[i]);
            }
            adj
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub dyad: (usize, usize),
    /// Group the contrast refers to when tested per group.
    pub group: Option<u8>,
    pub n_obs: usize,
    /// `None` when the dyad had no strength observations in the tested arm.
    pub test: Option<TestResult>,
    pub p_adjusted: Option<f64>,
    pub candidate_for_removal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub correction: Correction,
    pub alpha: f64,
    pub per_group: bool,
    pub rows: Vec<ThresholdRow>,
}

impl ThresholdReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dyad_j,dyad_k,group,n_obs,estimate,se,p,p_adjusted,candidate_for_removal\n");
        for r in &self.rows {
            let g = r.group.map_or(String::from("all"), |g| g.to_string());
            match (&r.test, r.p_adjusted) {
                (Some(t), Some(pa)) => {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{:.6},{:.6},{:.6e},{:.6e},{}",
                        r.dyad.0, r.dyad.1, g, r.n_obs, t.estimate, t.se, t.p, pa, r.candidate_for_removal
                    );
                }
                _ => {
                    let _ = writeln!(out, "{},{},{},{},,,,,untestable", r.dyad.0, r.dyad.1, g, r.n_obs);
                }
            }
        }
        out
    }

    /// Dyads flagged as removal candidates (any arm).
    pub fn candidates(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .rows
            .iter()
            .filter(|r| r.candidate_for_removal)
            .map(|r| r.dyad)
            .collect();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ThresholdOptions {
    pub per_group: bool,
    pub correction: Correction,
    pub alpha: f64,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        Self {
            per_group: false,
            correction: Correction::Fdr,
            alpha: 0.05,
        }
    }
}

/// Adds an indicator (and group × indicator when per group) for each dyad to
/// the strength model, refits in batches and tests each indicator.
pub fn dyad_threshold_test(
    table: &DyadTable,
    spec: &ModelSpec,
    dyads: &[(usize, usize)],
    opts: &ThresholdOptions,
) -> Result<ThresholdReport> {
    let mut report = ThresholdReport {
        correction: opts.correction,
        alpha: opts.alpha,
        per_group: opts.per_group,
        rows: Vec::new(),
    };
    if dyads.is_empty() {
        return Ok(report);
    }
    let base_spec = spec.with_response(Response::Strength);
    for &(j, k) in dyads {
        if j >= k || k >= table.n_nodes {
            return Err(Error::Domain(format!("({j},{k}) is not a node pair with j < k")));
        }
        if base_spec
            .fixed
            .iter()
            .any(|t| matches!(t, FixedTerm::Dyad(a, b) | FixedTerm::CoiDyad(a, b) if (*a, *b) == (j, k)))
        {
            return Err(Error::InvalidSpec(format!("dyad ({j},{k}) is already a fixed term")));
        }
    }
    let base_design = build_design(table, &base_spec).map_err(|e| e.in_part(Part::Strength))?;
    let opts_fit = FitOptions::default();
    let base_fit = reml_fit_with(&base_design, &base_design.response, None, None, &opts_fit)
        .map_err(|e| e.in_part(Part::Strength))?;

    // Observations per dyad and group among strength rows.
    let count = |j: usize, k: usize, group: Option<u8>| {
        table
            .rows
            .iter()
            .filter(|r| r.presence && r.node_j == j && r.node_k == k)
            .filter(|r| group.is_none_or(|g| r.group == f64::from(g)))
            .count()
    };
    let arms: Vec<Option<u8>> = if opts.per_group { vec![Some(0), Some(1)] } else { vec![None] };
    let testable: Vec<(usize, usize)> = dyads
        .iter()
        .copied()
        .filter(|&(j, k)| arms.iter().all(|&g| count(j, k, g) > 0))
        .collect();
    let per_batch = if opts.per_group {
        MAX_INDICATORS_PER_BATCH / 2
    } else {
        MAX_INDICATORS_PER_BATCH
    };
    let mut results: std::collections::HashMap<(usize, usize), Vec<TestResult>> = Default::default();
    for batch in testable.chunks(per_batch) {
        let mut s = base_spec.clone();
        for &(j, k) in batch {
            s.fixed.push(FixedTerm::Dyad(j, k));
            if opts.per_group {
                s.fixed.push(FixedTerm::CoiDyad(j, k));
            }
        }
        let design = build_design(table, &s).map_err(|e| e.in_part(Part::Strength))?;
        let warm = matched_gamma(&base_fit, &design);
        let fit = reml_fit_with(&design, &design.response, None, Some(&warm), &opts_fit)
            .map_err(|e| e.in_part(Part::Strength))?;
        let p = fit.p();
        for &(j, k) in batch {
            let idx = |t: FixedTerm| s.fixed.iter().position(|x| *x == t).expect("term added above");
            let d = idx(FixedTerm::Dyad(j, k));
            let mut tests = vec![wald_f_test(&fit, &unit_contrast(p, d))?];
            if opts.per_group {
                let mut c = unit_contrast(p, d);
                c[(0, idx(FixedTerm::CoiDyad(j, k)))] = 1.0;
                tests.push(wald_f_test(&fit, &c)?);
            }
            results.insert((j, k), tests);
        }
    }
    for &(j, k) in dyads {
        for (a, &g) in arms.iter().enumerate() {
            report.rows.push(ThresholdRow {
                dyad: (j, k),
                group: g,
                n_obs: count(j, k, g),
                test: results.get(&(j, k)).map(|t| t[a]),
                p_adjusted: None,
                candidate_for_removal: false,
            });
        }
    }
    let tested: Vec<usize> = (0..report.rows.len()).filter(|&i| report.rows[i].test.is_some()).collect();
    let raw: Vec<f64> = tested.iter().map(|&i| report.rows[i].test.expect("tested").p).collect();
    let adj = adjust_p_values(&raw, opts.correction);
    for (&i, a) in tested.iter().zip(adj) {
        report.rows[i].p_adjusted = Some(a);
        report.rows[i].candidate_for_removal = a >= opts.alpha;
    }
    Ok(report)
}

/// Zeroes removal-candidate dyads only in subjects whose weight there is below `weak_cutoff`.
pub fn mask_networks(networks: &[SubjectNetwork], report: &ThresholdReport, weak_cutoff: f64) -> Vec<SubjectNetwork> {
    let candidates = report.candidates();
    networks
        .iter()
        .map(|n| {
            let mut out = n.clone();
            for &(j, k) in &candidates {
                if n.weight(j, k) < weak_cutoff {
                    out.set_weight(j, k, 0.0);
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bh_adjustment_is_monotone_and_bounded() {
        let p = [0.01, 0.04, 0.03, 0.2, 0.001];
        let adj = adjust_p_values(&p, Correction::Fdr);
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
        for w in order.windows(2) {
            assert!(adj[w[0]] <= adj[w[1]]);
        }
        for i in 0..p.len() {
            assert!(adj[i] >= p[i] && adj[i] <= 1.0);
        }
        assert!((adj[4] - 0.005).abs() < 1e-15);
        let b = adjust_p_values(&p, Correction::Bonferroni);
        assert_eq!(b[3], 1.0);
    }

    #[test]
    fn redundant_contrast_rows_are_named() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 1.0, 0.5, 1.0, 0.5, 1.0, 0.5, 1.0]);
        assert_eq!(redundant_rows(&m), vec![2]);
        assert!(redundant_rows(&DMatrix::identity(3, 3)).is_empty());
    }

    #[test]
    fn p_formatting() {
        assert_eq!(format_p(0.00001), "< 0.0001");
        assert_eq!(format_p(0.5179), "0.5179");
    }
}
