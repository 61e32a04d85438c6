//! Synthetic studies drawn from a known two-part model.
//!
//! Covariates come from latent networks: each subject gets a smooth,
//! distance-decaying weighted network whose metrics fill the dyad table.
//! The observed networks are then drawn from the two-part model on those
//! covariate rows, so the generating covariates are exactly the ones the
//! truth applies to. They are written next to the networks so recovery can
//! be checked without the feedback of re-measuring the drawn networks.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyaddesign::{
    build_dyad_table, center_covariates, ComponentKey, Covariate, DyadRow, DyadTable, ModelSpec, RandomTerm,
};
use crate::error::{Error, Result};
use crate::graphmetrics::{metric_suite, MetricSettings};
use crate::netdata::{
    compute_distances, write_connection_matrix, write_subjects, write_text, NodeAtlas, SubjectCovariates,
    SubjectNetwork,
};
use crate::predictsim::{simulate_rows, stream_rng, PartParams, TwoPartParams};

/// Generating values for one part, keyed by fixed-term token
/// (`intercept`, `C`, `coi:C`, …) and random-term token (`intercept`, `C`,
/// …, `dist2`, `node`). Missing keys are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartTruth {
    pub beta: BTreeMap<String, f64>,
    pub tau: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    #[serde(default = "default_coi")]
    pub coi_label: String,
    pub presence: PartTruth,
    pub strength: PartTruth,
    pub sigma2: f64,
}

fn default_coi() -> String {
    "age".into()
}

fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl Truth {
    /// The parameter set used by the bundled demo study.
    pub fn demo() -> Self {
        Self {
            coi_label: "age".into(),
            presence: PartTruth {
                beta: map(&[
                    ("intercept", 1.0),
                    ("C", 1.0),
                    ("Eglob", 2.0),
                    ("k", -0.15),
                    ("Q", -0.5),
                    ("l", 0.3),
                    ("coi", -0.2),
                    ("sex", 0.05),
                    ("educ", 0.02),
                    ("dist", -1.5),
                    ("dist2", 0.8),
                    ("coi:C", 0.5),
                    ("coi:Eglob", -1.0),
                    ("coi:k", 0.05),
                    ("coi:Q", 0.5),
                    ("coi:l", -0.2),
                    ("coi:sex", 0.1),
                ]),
                tau: map(&[
                    ("intercept", 0.1),
                    ("C", 0.5),
                    ("Eglob", 0.5),
                    ("k", 0.001),
                    ("Q", 0.0),
                    ("l", 0.05),
                    ("dist", 0.05),
                    ("dist2", 0.0),
                    ("node", 0.05),
                ]),
            },
            strength: PartTruth {
                beta: map(&[
                    ("intercept", 0.35),
                    ("C", 0.8),
                    ("Eglob", 0.5),
                    ("k", -0.02),
                    ("Q", -0.1),
                    ("l", 0.02),
                    ("coi", -0.03),
                    ("sex", 0.0),
                    ("educ", 0.0),
                    ("dist", -0.15),
                    ("dist2", 0.1),
                    ("coi:C", 0.2),
                    ("coi:Eglob", 0.1),
                    ("coi:k", 0.005),
                    ("coi:Q", -0.1),
                    ("coi:l", 0.01),
                    ("coi:sex", 0.01),
                ]),
                tau: map(&[
                    ("intercept", 0.001),
                    ("C", 0.01),
                    ("Eglob", 0.005),
                    ("k", 1e-5),
                    ("Q", 0.0),
                    ("l", 0.001),
                    ("dist", 0.001),
                    ("dist2", 0.0),
                    ("node", 0.001),
                ]),
            },
            sigma2: 0.005,
        }
    }

    /// All variances zero: networks depend on the fixed effects and Bernoulli draws only.
    pub fn without_variance(&self) -> Self {
        let mut t = self.clone();
        for part in [&mut t.presence, &mut t.strength] {
            part.tau.values_mut().for_each(|v| *v = 0.0);
        }
        t.sigma2 = 0.0;
        t
    }

    pub fn parse(text: &str) -> Result<Self> {
        let t: Truth = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth serializes")
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if !self.sigma2.is_finite() || self.sigma2 < 0.0 {
            return Err(Error::InfeasibleTruth(format!("σ² = {} must be finite and ≥ 0", self.sigma2)));
        }
        let tokens: Vec<String> = spec.fixed.iter().map(|t| spec.fixed_token(t)).collect();
        for (name, part) in [("presence", &self.presence), ("strength", &self.strength)] {
            for (k, v) in &part.beta {
                if !v.is_finite() {
                    return Err(Error::InfeasibleTruth(format!("{name} β for `{k}` is not finite")));
                }
                if !tokens.contains(k) {
                    return Err(Error::InfeasibleTruth(format!("{name} β names unknown term `{k}`")));
                }
            }
            for (k, v) in &part.tau {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::InfeasibleTruth(format!("{name} τ for `{k}` = {v} must be finite and ≥ 0")));
                }
            }
        }
        Ok(())
    }

    /// β in the order of `spec.fixed`.
    pub fn beta(&self, part: &PartTruth, spec: &ModelSpec) -> Vec<f64> {
        spec.fixed
            .iter()
            .map(|t| part.beta.get(&spec.fixed_token(t)).copied().unwrap_or(0.0))
            .collect()
    }

    pub fn tau(part: &PartTruth, key: &ComponentKey) -> f64 {
        let token = match key {
            ComponentKey::Intercept => "intercept",
            ComponentKey::Slope(c) => c.token(),
            ComponentKey::Node(_) | ComponentKey::Nodes => "node",
        };
        part.tau.get(token).copied().unwrap_or(0.0)
    }

    pub(crate) fn params(&self, spec: &ModelSpec, n_nodes: usize) -> TwoPartParams {
        TwoPartParams {
            presence: PartParams::new(
                spec,
                n_nodes,
                self.beta(&self.presence, spec),
                |k| Truth::tau(&self.presence, k),
                1.0,
            ),
            strength: PartParams::new(
                spec,
                n_nodes,
                self.beta(&self.strength, spec),
                |k| Truth::tau(&self.strength, k),
                self.sigma2,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStudy {
    pub atlas: NodeAtlas,
    pub subjects: Vec<SubjectCovariates>,
    pub networks: Vec<SubjectNetwork>,
    /// Generating covariates (centered) with the drawn responses filled in.
    pub table: DyadTable,
    pub spec: ModelSpec,
    pub truth: Truth,
    pub seed: u64,
}

/// Draws a study of `n_subjects` networks on `n_nodes` nodes from `truth` under the full model.
pub fn generate_synthetic_study(n_subjects: usize, n_nodes: usize, truth: &Truth, seed: u64) -> Result<SyntheticStudy> {
    if n_subjects < 2 || n_nodes < 3 {
        return Err(Error::Domain("a study needs at least 2 subjects and 3 nodes".into()));
    }
    let spec = ModelSpec::full(&truth.coi_label);
    truth.validate(&spec)?;

    let mut rng = stream_rng(seed, 0);
    let radii = [70.0, 100.0, 60.0];
    let coords_mm: Vec<[f64; 3]> = (0..n_nodes)
        .map(|_| loop {
            let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                break std::array::from_fn(|i| (p[i] * radii[i] * 10.0).round() / 10.0);
            }
        })
        .collect();
    let atlas = NodeAtlas {
        labels: (1..=n_nodes).map(|j| format!("N{j:02}")).collect(),
        coords_mm,
    };
    let dist = compute_distances(&atlas)?;
    let subjects: Vec<SubjectCovariates> = (0..n_subjects)
        .map(|s| {
            let e: f64 = rng.sample(StandardNormal);
            SubjectCovariates {
                subject_id: format!("sub{:02}", s + 1),
                group: (s % 2) as u8,
                sex: u8::from(rng.random::<f64>() < 0.5),
                education_years: (15.0 + 2.5 * e).round().clamp(8.0, 22.0),
            }
        })
        .collect();

    let latent: Vec<SubjectNetwork> = (0..n_subjects)
        .map(|s| latent_network(&subjects[s].subject_id, &dist.0, seed, s))
        .collect();
    let settings = MetricSettings::default();
    let metrics = latent
        .par_iter()
        .map(|n| metric_suite(n, &settings))
        .collect::<Result<Vec<_>>>()?;
    let covs: BTreeMap<String, SubjectCovariates> =
        subjects.iter().map(|c| (c.subject_id.clone(), c.clone())).collect();
    let raw = build_dyad_table(&latent, &metrics, &covs, &dist)?;
    let (table, _) = center_covariates(raw);

    let params = truth.params(&spec, n_nodes);
    let (networks, table) = draw_outcomes(&params, table, &subjects, seed)?;
    Ok(SyntheticStudy {
        atlas,
        subjects,
        networks,
        table,
        spec,
        truth: truth.clone(),
        seed,
    })
}

/// Smooth positive-weight network that supplies one subject's covariates.
fn latent_network(id: &str, dist: &nalgebra::DMatrix<f64>, seed: u64, s: usize) -> SubjectNetwork {
    let n = dist.nrows();
    let mut rng = stream_rng(seed, 1_000_000 + s);
    let level: f64 = 0.1 * rng.sample::<f64, _>(StandardNormal);
    let node: Vec<f64> = (0..n).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut net = SubjectNetwork::empty(id, n);
    for j in 0..n {
        for k in j + 1..n {
            let e: f64 = rng.sample(StandardNormal);
            let v = 0.25 + level + node[j] + node[k] - 0.3 * dist[(j, k)] + 0.25 * e;
            if v > 0.0 {
                net.set_weight(j, k, v.tanh());
            }
        }
    }
    net
}

/// Draws every subject's network on the table's covariate rows and records
/// the drawn weights in the table.
fn draw_outcomes(
    params: &TwoPartParams,
    mut table: DyadTable,
    subjects: &[SubjectCovariates],
    seed: u64,
) -> Result<(Vec<SubjectNetwork>, DyadTable)> {
    let ranges = table.subject_ranges();
    let n_nodes = table.n_nodes;
    let drawn: Vec<(SubjectNetwork, usize)> = ranges
        .par_iter()
        .map(|(s, range)| {
            let mut rng = stream_rng(seed, 2_000_000 + s);
            simulate_rows(
                params,
                &table.rows[range.clone()],
                n_nodes,
                subjects[*s].subject_id.clone(),
                &mut rng,
                None,
            )
        })
        .collect();
    let truncated: usize = drawn.iter().map(|(_, t)| t).sum();
    if truncated > 0 {
        log::warn!("{truncated} strength draws hit the redraw limit");
    }
    let networks: Vec<SubjectNetwork> = drawn.into_iter().map(|(n, _)| n).collect();
    for row in table.rows.iter_mut() {
        row.set_weight(networks[row.subject].weight(row.node_j, row.node_k))?;
    }
    Ok((networks, table))
}

impl SyntheticStudy {
    /// Fresh responses on the same covariate rows, with new random effects.
    pub fn redraw(&self, seed: u64) -> Result<SyntheticStudy> {
        let params = self.truth.params(&self.spec, self.table.n_nodes);
        let (networks, table) = draw_outcomes(&params, self.table.clone(), &self.subjects, seed)?;
        Ok(SyntheticStudy {
            networks,
            table,
            seed,
            ..self.clone()
        })
    }

    /// Redraws the responses from `truth` under `spec` (e.g. the full model plus
    /// planted dyad terms), keeping the covariate rows.
    pub fn with_model(&self, spec: ModelSpec, truth: Truth, seed: u64) -> Result<SyntheticStudy> {
        spec.validate()?;
        truth.validate(&spec)?;
        let params = truth.params(&spec, self.table.n_nodes);
        let (networks, table) = draw_outcomes(&params, self.table.clone(), &self.subjects, seed)?;
        Ok(SyntheticStudy {
            networks,
            table,
            spec,
            truth,
            seed,
            ..self.clone()
        })
    }

    /// Fixed effects of the generator in the order of `spec.fixed` for each part.
    pub fn true_beta(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.truth.beta(&self.truth.presence, &self.spec),
            self.truth.beta(&self.truth.strength, &self.spec),
        )
    }

    /// Writes `networks/`, `atlas.csv`, `subjects.csv`, `truth.json` and the
    /// generating covariates `covariates.csv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let nets = dir.join("networks");
        std::fs::create_dir_all(&nets).map_err(|e| Error::io(&nets, e))?;
        for n in &self.networks {
            write_connection_matrix(nets.join(format!("{}.csv", n.subject_id)), n)?;
        }
        self.atlas.write(dir.join("atlas.csv"))?;
        write_subjects(dir.join("subjects.csv"), &self.subjects)?;
        write_text(&dir.join("truth.json"), &format!("{}\n", self.truth.to_json()))?;
        write_covariates(&dir.join("covariates.csv"), &self.table)
    }
}

const COVARIATE_HEADER: [&str; 13] = [
    "subject_id", "node_j", "node_k", "weight", "C", "Eglob", "k", "Q", "l", "dist", "dist2", "coi", "sex",
];

/// Writes the centered covariate rows of a table (education last).
pub fn write_covariates(path: &Path, table: &DyadTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = COVARIATE_HEADER.to_vec();
    header.push("educ");
    w.write_record(&header).map_err(csv_err)?;
    for r in &table.rows {
        let rec: Vec<String> = vec![
            table.subjects[r.subject].subject_id.clone(),
            r.node_j.to_string(),
            r.node_k.to_string(),
            r.weight.to_string(),
            r.clustering.to_string(),
            r.efficiency.to_string(),
            r.degree_diff.to_string(),
            r.modularity.to_string(),
            r.leverage.map_or(String::new(), |v| v.to_string()),
            r.dist.to_string(),
            r.dist2.to_string(),
            r.group.to_string(),
            r.sex.to_string(),
            r.education.to_string(),
        ];
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    write_text(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

/// Reads covariate rows written by [`write_covariates`]. Values are taken
/// as already centered; the table's centering record is empty.
pub fn load_covariates(path: &Path, subjects: &BTreeMap<String, SubjectCovariates>, n_nodes: usize) -> Result<DyadTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut order: Vec<String> = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: path.into(),
            line,
            msg: e.to_string(),
        })?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c).unwrap_or("").trim().parse::<f64>().map_err(|_| Error::Parse {
                path: path.into(),
                line,
                msg: format!("column {} is not numeric", c + 1),
            })
        };
        let id = rec.get(0).unwrap_or("").to_string();
        if !subjects.contains_key(&id) {
            return Err(Error::MissingCovariates(id));
        }
        if order.last() != Some(&id) {
            if order.contains(&id) {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    msg: format!("rows of subject {id} are not contiguous"),
                });
            }
            order.push(id.clone());
        }
        let (j, k) = (num(1)? as usize, num(2)? as usize);
        if j >= k || k >= n_nodes {
            return Err(Error::Parse {
                path: path.into(),
                line,
                msg: format!("({j},{k}) is not a node pair"),
            });
        }
        let mut row = DyadRow {
            subject: order.len() - 1,
            node_j: j,
            node_k: k,
            weight: 0.0,
            presence: false,
            strength: None,
            clustering: num(4)?,
            efficiency: num(5)?,
            degree_diff: num(6)?,
            modularity: num(7)?,
            leverage: if rec.get(8).unwrap_or("").is_empty() { None } else { Some(num(8)?) },
            dist: num(9)?,
            dist2: num(10)?,
            group: num(11)?,
            sex: num(12)?,
            education: num(13)?,
        };
        row.set_weight(num(3)?)?;
        rows.push(row);
    }
    Ok(DyadTable {
        subjects: order.iter().map(|id| subjects[id].clone()).collect(),
        n_nodes,
        rows,
        centering: Some(Default::default()),
    })
}

/// Random terms of the full model that a truth leaves at zero variance.
pub fn zero_variance_terms(truth: &PartTruth) -> Vec<RandomTerm> {
    let mut out = Vec::new();
    if truth.tau.get("intercept").copied().unwrap_or(0.0) == 0.0 {
        out.push(RandomTerm::Intercept);
    }
    for c in Covariate::NET.into_iter().chain([Covariate::Dist, Covariate::Dist2]) {
        if truth.tau.get(c.token()).copied().unwrap_or(0.0) == 0.0 {
            out.push(RandomTerm::Slope(c));
        }
    }
    if truth.tau.get("node").copied().unwrap_or(0.0) == 0.0 {
        out.push(RandomTerm::Nodes);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_zero_variance_study_is_deterministic() {
        let truth = Truth::demo().without_variance();
        let a = generate_synthetic_study(2, 4, &truth, 3).unwrap();
        let b = generate_synthetic_study(2, 4, &truth, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.networks.len(), 2);
        assert_eq!(a.table.rows.len(), 12);
    }

    #[test]
    fn negative_sigma2_is_infeasible() {
        let mut t = Truth::demo();
        t.sigma2 = -1.0;
        assert!(matches!(generate_synthetic_study(4, 6, &t, 1), Err(Error::InfeasibleTruth(_))));
    }

    #[test]
    fn covariates_round_trip() {
        let s = generate_synthetic_study(3, 6, &Truth::demo(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cov.csv");
        write_covariates(&path, &s.table).unwrap();
        let covs = s.subjects.iter().map(|c| (c.subject_id.clone(), c.clone())).collect();
        let t = load_covariates(&path, &covs, 6).unwrap();
        assert_eq!(t.rows.len(), s.table.rows.len());
        for (a, b) in t.rows.iter().zip(&s.table.rows) {
            assert_eq!(a.weight, b.weight);
            assert_eq!(a.clustering, b.clustering);
            assert_eq!(a.dist2, b.dist2);
        }
    }
}
