//! Long-format dyad tables and fixed/random design matrices.
//!
//! Every unordered node pair of every subject becomes one [`DyadRow`]
//! carrying the presence indicator, the Fisher-Z strength when an edge
//! exists, the dyadic network covariates and the replicated subject
//! covariates. [`build_design`] turns a centered table plus a [`ModelSpec`]
//! into the per-subject blocks used by the mixed-model fitters.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphmetrics::{NetworkMetrics, NodalMetrics};
use crate::netdata::{DistanceMatrix, SubjectCovariates, SubjectNetwork};

/// `atanh(r)`; errors when `|r| ≥ 1`.
pub fn fisher_z(r: f64) -> Result<f64> {
    if !(r.abs() < 1.0) {
        return Err(Error::Domain(format!("Fisher-Z undefined for r = {r}")));
    }
    Ok(r.atanh())
}

pub fn inv_fisher_z(z: f64) -> f64 {
    z.tanh()
}

/// Dyad-level and subject-level covariates known to the design builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Covariate {
    Clustering,
    Efficiency,
    DegreeDiff,
    Modularity,
    Leverage,
    Coi,
    Sex,
    Education,
    Dist,
    Dist2,
}

impl Covariate {
    pub const NET: [Covariate; 5] = [
        Covariate::Clustering,
        Covariate::Efficiency,
        Covariate::DegreeDiff,
        Covariate::Modularity,
        Covariate::Leverage,
    ];

    pub const ALL: [Covariate; 10] = [
        Covariate::Clustering,
        Covariate::Efficiency,
        Covariate::DegreeDiff,
        Covariate::Modularity,
        Covariate::Leverage,
        Covariate::Coi,
        Covariate::Sex,
        Covariate::Education,
        Covariate::Dist,
        Covariate::Dist2,
    ];

    /// Short name used in spec files and parameter labels.
    pub fn token(self) -> &'static str {
        match self {
            Covariate::Clustering => "C",
            Covariate::Efficiency => "Eglob",
            Covariate::DegreeDiff => "k",
            Covariate::Modularity => "Q",
            Covariate::Leverage => "l",
            Covariate::Coi => "coi",
            Covariate::Sex => "sex",
            Covariate::Education => "educ",
            Covariate::Dist => "dist",
            Covariate::Dist2 => "dist2",
        }
    }

    pub fn is_net(self) -> bool {
        Self::NET.contains(&self)
    }

    /// Continuous covariates are grand-mean centered; binary ones are not.
    pub fn is_continuous(self) -> bool {
        !matches!(self, Covariate::Coi | Covariate::Sex)
    }

    /// Plain-language name.
    pub fn description(self) -> &'static str {
        match self {
            Covariate::Clustering => "clustering coefficient",
            Covariate::Efficiency => "global efficiency",
            Covariate::DegreeDiff => "degree difference",
            Covariate::Modularity => "modularity",
            Covariate::Leverage => "leverage centrality",
            Covariate::Coi => "covariate of interest",
            Covariate::Sex => "sex",
            Covariate::Education => "education",
            Covariate::Dist => "distance",
            Covariate::Dist2 => "squared distance",
        }
    }

    fn label(self, coi_label: &str) -> String {
        match self {
            Covariate::Coi => coi_label.to_string(),
            Covariate::Dist2 => "dist^2".to_string(),
            c => c.token().to_string(),
        }
    }
}

impl FromStr for Covariate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Covariate::ALL
            .into_iter()
            .find(|c| c.token() == s || (s == "dist^2" && *c == Covariate::Dist2))
            .ok_or_else(|| Error::UnknownTerm(s.to_string()))
    }
}

/// One (subject, node pair) observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadRow {
    /// Index into [`DyadTable::subjects`].
    pub subject: usize,
    pub node_j: usize,
    pub node_k: usize,
    pub weight: f64,
    pub presence: bool,
    pub strength: Option<f64>,
    pub clustering: f64,
    pub efficiency: f64,
    pub degree_diff: f64,
    pub modularity: f64,
    pub leverage: Option<f64>,
    pub dist: f64,
    pub dist2: f64,
    pub group: f64,
    pub sex: f64,
    pub education: f64,
}

impl DyadRow {
    /// Covariate value; an absent leverage reads as 0 (the centered mean).
    pub fn value(&self, c: Covariate) -> f64 {
        match c {
            Covariate::Clustering => self.clustering,
            Covariate::Efficiency => self.efficiency,
            Covariate::DegreeDiff => self.degree_diff,
            Covariate::Modularity => self.modularity,
            Covariate::Leverage => self.leverage.unwrap_or(0.0),
            Covariate::Coi => self.group,
            Covariate::Sex => self.sex,
            Covariate::Education => self.education,
            Covariate::Dist => self.dist,
            Covariate::Dist2 => self.dist2,
        }
    }

    fn value_mut(&mut self, c: Covariate) -> Option<&mut f64> {
        match c {
            Covariate::Clustering => Some(&mut self.clustering),
            Covariate::Efficiency => Some(&mut self.efficiency),
            Covariate::DegreeDiff => Some(&mut self.degree_diff),
            Covariate::Modularity => Some(&mut self.modularity),
            Covariate::Leverage => self.leverage.as_mut(),
            Covariate::Coi => Some(&mut self.group),
            Covariate::Sex => Some(&mut self.sex),
            Covariate::Education => Some(&mut self.education),
            Covariate::Dist => Some(&mut self.dist),
            Covariate::Dist2 => Some(&mut self.dist2),
        }
    }

    /// Sets the observed weight and the derived presence/strength fields.
    pub fn set_weight(&mut self, w: f64) -> Result<()> {
        self.weight = w;
        self.presence = w > 0.0;
        self.strength = if w > 0.0 { Some(fisher_z(w)?) } else { None };
        Ok(())
    }
}

/// Grand means subtracted from each continuous covariate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CenteringRecord {
    /// Keyed by covariate token. `dist2` holds the mean of the squared centered distance.
    pub means: BTreeMap<String, f64>,
    /// Dyads whose leverage was undefined and set to the centered mean.
    pub absent_leverage: usize,
}

impl CenteringRecord {
    pub fn mean(&self, c: Covariate) -> f64 {
        self.means.get(c.token()).copied().unwrap_or(0.0)
    }

    /// Maps a raw covariate value onto the centered model scale.
    pub fn center_value(&self, c: Covariate, raw: f64) -> f64 {
        if c.is_continuous() {
            raw - self.mean(c)
        } else {
            raw
        }
    }

    /// Centered `dist2` for a raw distance in dm.
    pub fn dist2_for(&self, raw_dist: f64) -> f64 {
        let d = raw_dist - self.mean(Covariate::Dist);
        d * d - self.mean(Covariate::Dist2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadTable {
    pub subjects: Vec<SubjectCovariates>,
    pub n_nodes: usize,
    pub rows: Vec<DyadRow>,
    pub centering: Option<CenteringRecord>,
}

impl DyadTable {
    pub fn n_strength_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.presence).count()
    }

    /// Row ranges per subject, in subject order.
    pub fn subject_ranges(&self) -> Vec<(usize, Range<usize>)> {
        subject_ranges(self.rows.iter().map(|r| r.subject))
    }
}

fn subject_ranges(subjects: impl Iterator<Item = usize>) -> Vec<(usize, Range<usize>)> {
    let mut out: Vec<(usize, Range<usize>)> = Vec::new();
    for (i, s) in subjects.enumerate() {
        match out.last_mut() {
            Some((last, r)) if *last == s => r.end = i + 1,
            _ => out.push((s, i..i + 1)),
        }
    }
    out
}

/// Per-subject metric bundle as produced by `metric_suite`.
pub type SubjectMetrics = (NodalMetrics, NetworkMetrics);

/// Assembles one row per (subject, j<k).
pub fn build_dyad_table(
    networks: &[SubjectNetwork],
    metrics: &[SubjectMetrics],
    covs: &BTreeMap<String, SubjectCovariates>,
    dist: &DistanceMatrix,
) -> Result<DyadTable> {
    if networks.len() != metrics.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} networks but {} metric sets",
            networks.len(),
            metrics.len()
        )));
    }
    let n_nodes = dist.n();
    let mut subjects = Vec::with_capacity(networks.len());
    let mut rows = Vec::with_capacity(networks.len() * n_nodes * n_nodes.saturating_sub(1) / 2);
    for (s, (net, (nodal, network))) in networks.iter().zip(metrics).enumerate() {
        if net.n() != n_nodes || nodal.degree.len() != n_nodes {
            return Err(Error::DimensionMismatch(format!(
                "subject {} has {} nodes, atlas has {}",
                net.subject_id,
                net.n(),
                n_nodes
            )));
        }
        let cov = covs
            .get(&net.subject_id)
            .ok_or_else(|| Error::MissingCovariates(net.subject_id.clone()))?;
        subjects.push(cov.clone());
        for (j, k) in net.dyads() {
            let w = net.weight(j, k);
            let leverage = match (nodal.leverage[j], nodal.leverage[k]) {
                (Some(a), Some(b)) => Some(0.5 * (a + b)),
                _ => None,
            };
            let d = dist.get(j, k);
            let mut row = DyadRow {
                subject: s,
                node_j: j,
                node_k: k,
                weight: 0.0,
                presence: false,
                strength: None,
                clustering: 0.5 * (nodal.clustering[j] + nodal.clustering[k]),
                efficiency: 0.5 * (nodal.efficiency[j] + nodal.efficiency[k]),
                degree_diff: (nodal.degree[j] - nodal.degree[k]).abs(),
                modularity: network.modularity,
                leverage,
                dist: d,
                dist2: d * d,
                group: f64::from(cov.group),
                sex: f64::from(cov.sex),
                education: cov.education_years,
            };
            row.set_weight(w)?;
            rows.push(row);
        }
    }
    Ok(DyadTable {
        subjects,
        n_nodes,
        rows,
        centering: None,
    })
}

fn grand_mean<'a>(rows: impl Iterator<Item = &'a DyadRow>, c: Covariate) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for r in rows {
        let v = match c {
            Covariate::Leverage => match r.leverage {
                Some(v) => v,
                None => continue,
            },
            _ => r.value(c),
        };
        s += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Subtracts grand means from the continuous covariates.
///
/// `dist2` is rebuilt as the square of the centered distance and then
/// centered itself. Undefined leverage values become 0 afterwards.
pub fn center_covariates(mut table: DyadTable) -> (DyadTable, CenteringRecord) {
    let mut record = table.centering.take().unwrap_or_default();
    for c in Covariate::ALL {
        if !c.is_continuous() || c == Covariate::Dist2 {
            continue;
        }
        let m = grand_mean(table.rows.iter(), c);
        for r in &mut table.rows {
            if let Some(v) = r.value_mut(c) {
                *v -= m;
            }
        }
        *record.means.entry(c.token().to_string()).or_insert(0.0) += m;
    }
    for r in &mut table.rows {
        r.dist2 = r.dist * r.dist;
    }
    let m2 = grand_mean(table.rows.iter(), Covariate::Dist2);
    for r in &mut table.rows {
        r.dist2 -= m2;
    }
    // Mean of the squared centered distance, not of the raw square.
    record.means.insert("dist2".to_string(), m2);
    let absent = table.rows.iter().filter(|r| r.leverage.is_none()).count();
    if absent > 0 && record.absent_leverage == 0 {
        log::warn!("{absent} dyads involve a node with undefined leverage centrality; set to the mean");
    }
    for r in &mut table.rows {
        if r.leverage.is_none() {
            r.leverage = Some(0.0);
        }
    }
    record.absent_leverage = record.absent_leverage.max(absent);
    table.centering = Some(record.clone());
    (table, record)
}

/// Fixed-effect terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FixedTerm {
    Intercept,
    Main(Covariate),
    /// Covariate of interest times another covariate.
    CoiBy(Covariate),
    /// Indicator for one dyad `(j, k)`, `j < k`.
    Dyad(usize, usize),
    /// Covariate of interest times a dyad indicator.
    CoiDyad(usize, usize),
}

/// Random-effect terms, each grouped by subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RandomTerm {
    Intercept,
    Slope(Covariate),
    /// One indicator column per node; a dyad row has 1 at both of its nodes.
    Nodes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NodeVariance {
    #[default]
    PerNode,
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Response {
    #[default]
    Presence,
    Strength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub coi_label: String,
    pub fixed: Vec<FixedTerm>,
    pub random: Vec<RandomTerm>,
    pub node_variance: NodeVariance,
    /// Nodes whose indicator column is dropped from the random part.
    pub excluded_nodes: Vec<usize>,
    pub response: Response,
}

impl ModelSpec {
    /// Intercept, the five network terms, the covariate of interest, sex,
    /// education, distance and squared distance, then interactions of the
    /// covariate of interest with each network term and with sex. Random
    /// intercept, network slopes, distance slopes and per-node effects.
    pub fn full(coi_label: &str) -> Self {
        let mut fixed = vec![FixedTerm::Intercept];
        fixed.extend(Covariate::NET.map(FixedTerm::Main));
        fixed.extend(
            [
                Covariate::Coi,
                Covariate::Sex,
                Covariate::Education,
                Covariate::Dist,
                Covariate::Dist2,
            ]
            .map(FixedTerm::Main),
        );
        fixed.extend(Covariate::NET.map(FixedTerm::CoiBy));
        fixed.push(FixedTerm::CoiBy(Covariate::Sex));
        let mut random = vec![RandomTerm::Intercept];
        random.extend(Covariate::NET.map(RandomTerm::Slope));
        random.push(RandomTerm::Slope(Covariate::Dist));
        random.push(RandomTerm::Slope(Covariate::Dist2));
        random.push(RandomTerm::Nodes);
        Self {
            coi_label: coi_label.to_string(),
            fixed,
            random,
            node_variance: NodeVariance::PerNode,
            excluded_nodes: Vec::new(),
            response: Response::Presence,
        }
    }

    pub fn with_response(&self, response: Response) -> Self {
        Self {
            response,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.fixed {
            if !seen.insert(*t) {
                return Err(Error::InvalidSpec(format!("duplicate fixed term {}", self.fixed_token(t))));
            }
            match t {
                FixedTerm::CoiBy(Covariate::Coi) => {
                    return Err(Error::InvalidSpec("coi:coi is not a valid interaction".into()))
                }
                FixedTerm::Dyad(j, k) | FixedTerm::CoiDyad(j, k) if j >= k => {
                    return Err(Error::InvalidSpec(format!("dyad ({j},{k}) must have j < k")))
                }
                _ => {}
            }
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.random {
            if !seen.insert(*t) {
                return Err(Error::InvalidSpec("duplicate random term".into()));
            }
            if let RandomTerm::Slope(c) = t {
                if !(c.is_net() || matches!(c, Covariate::Dist | Covariate::Dist2)) {
                    return Err(Error::InvalidSpec(format!(
                        "random slope on `{}` is not supported; use network or distance terms",
                        c.token()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn fixed_token(&self, t: &FixedTerm) -> String {
        match t {
            FixedTerm::Intercept => "intercept".into(),
            FixedTerm::Main(c) => c.token().into(),
            FixedTerm::CoiBy(c) => format!("coi:{}", c.token()),
            FixedTerm::Dyad(j, k) => format!("dyad({j},{k})"),
            FixedTerm::CoiDyad(j, k) => format!("coi:dyad({j},{k})"),
        }
    }

    /// Parameter label in report form, e.g. `β_s,age×l`.
    pub fn fixed_label(&self, part: char, t: &FixedTerm) -> String {
        let body = match t {
            FixedTerm::Intercept => "0".to_string(),
            FixedTerm::Main(c) => c.label(&self.coi_label),
            FixedTerm::CoiBy(c) => format!("{}×{}", self.coi_label, c.label(&self.coi_label)),
            FixedTerm::Dyad(j, k) => format!("dyad({j},{k})"),
            FixedTerm::CoiDyad(j, k) => format!("{}×dyad({j},{k})", self.coi_label),
        };
        format!("β_{part},{body}")
    }

    pub fn has_nodes(&self) -> bool {
        self.random.contains(&RandomTerm::Nodes)
    }
}

fn parse_fixed(token: &str, coi_label: &str) -> Result<FixedTerm> {
    let token = token.trim();
    if token == "intercept" || token == "0" {
        return Ok(FixedTerm::Intercept);
    }
    let inter = token
        .split_once(':')
        .or_else(|| token.split_once('×'))
        .filter(|(a, _)| *a == "coi" || *a == coi_label);
    if let Some((_, rhs)) = inter {
        if let Some((j, k)) = parse_dyad(rhs) {
            return Ok(FixedTerm::CoiDyad(j, k));
        }
        let c = if rhs == coi_label { Covariate::Coi } else { rhs.parse()? };
        return Ok(FixedTerm::CoiBy(c));
    }
    if let Some((j, k)) = parse_dyad(token) {
        return Ok(FixedTerm::Dyad(j, k));
    }
    if token == coi_label {
        return Ok(FixedTerm::Main(Covariate::Coi));
    }
    Ok(FixedTerm::Main(token.parse()?))
}

fn parse_dyad(s: &str) -> Option<(usize, usize)> {
    let inner = s.strip_prefix("dyad(")?.strip_suffix(')')?;
    let (a, b) = inner.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn parse_random(token: &str) -> Result<RandomTerm> {
    match token.trim() {
        "intercept" | "0" => Ok(RandomTerm::Intercept),
        "nodes" | "node" => Ok(RandomTerm::Nodes),
        other => Ok(RandomTerm::Slope(other.parse()?)),
    }
}

/// On-disk model specification (TOML).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecFile {
    #[serde(default = "default_coi_label")]
    pub coi_label: String,
    #[serde(default = "default_grouping")]
    pub grouping: String,
    pub fixed: Vec<String>,
    #[serde(default)]
    pub random: Vec<String>,
    #[serde(default)]
    pub node_variance: Option<String>,
    #[serde(default)]
    pub excluded_nodes: Vec<usize>,
}

fn default_coi_label() -> String {
    "age".into()
}

fn default_grouping() -> String {
    "subject_id".into()
}

impl SpecFile {
    pub fn into_spec(self) -> Result<ModelSpec> {
        if self.grouping != "subject_id" {
            return Err(Error::InvalidSpec(format!(
                "grouping column `{}` is not available; only subject_id is supported",
                self.grouping
            )));
        }
        let fixed = self
            .fixed
            .iter()
            .map(|t| parse_fixed(t, &self.coi_label))
            .collect::<Result<Vec<_>>>()?;
        let random = self.random.iter().map(|t| parse_random(t)).collect::<Result<Vec<_>>>()?;
        let node_variance = match self.node_variance.as_deref() {
            None | Some("per-node") | Some("per_node") => NodeVariance::PerNode,
            Some("shared") => NodeVariance::Shared,
            Some(other) => return Err(Error::InvalidSpec(format!("unknown node_variance `{other}`"))),
        };
        let spec = ModelSpec {
            coi_label: self.coi_label,
            fixed,
            random,
            node_variance,
            excluded_nodes: self.excluded_nodes,
            response: Response::Presence,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_spec(spec: &ModelSpec) -> Self {
        SpecFile {
            coi_label: spec.coi_label.clone(),
            grouping: default_grouping(),
            fixed: spec.fixed.iter().map(|t| spec.fixed_token(t)).collect(),
            random: spec
                .random
                .iter()
                .map(|t| match t {
                    RandomTerm::Intercept => "intercept".to_string(),
                    RandomTerm::Slope(c) => c.token().to_string(),
                    RandomTerm::Nodes => "nodes".to_string(),
                })
                .collect(),
            node_variance: Some(match spec.node_variance {
                NodeVariance::PerNode => "per-node".into(),
                NodeVariance::Shared => "shared".into(),
            }),
            excluded_nodes: spec.excluded_nodes.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec file serializes")
    }

    pub fn parse(text: &str) -> Result<ModelSpec> {
        let file: SpecFile = toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        file.into_spec()
    }
}

/// Identity of one variance parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComponentKey {
    Intercept,
    Slope(Covariate),
    Node(usize),
    Nodes,
}

impl ComponentKey {
    pub fn label(&self, part: char) -> String {
        let body = match self {
            ComponentKey::Intercept => "0".to_string(),
            ComponentKey::Slope(Covariate::Dist2) => "dist^2".to_string(),
            ComponentKey::Slope(c) => c.token().to_string(),
            ComponentKey::Node(j) => format!("node{}", j + 1),
            ComponentKey::Nodes => "node".to_string(),
        };
        format!("σ²_{part},{body}")
    }
}

/// Random-effects design: dense intercept/slope columns followed by node indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomDesign {
    /// rows × `n_dense()`.
    pub dense: DMatrix<f64>,
    /// Node pair per row; empty when the model has no node term.
    pub pairs: Vec<(u32, u32)>,
    /// Z column (offset past the dense block) for each node, if included.
    pub node_column: Vec<Option<usize>>,
    pub n_node_columns: usize,
}

impl RandomDesign {
    pub fn n_dense(&self) -> usize {
        self.dense.ncols()
    }

    pub fn q(&self) -> usize {
        self.n_dense() + self.n_node_columns
    }

    /// Calls `f(column, value)` for each structurally nonzero entry of row `r`.
    #[inline]
    pub fn for_each_nonzero(&self, r: usize, mut f: impl FnMut(usize, f64)) {
        let nd = self.n_dense();
        for c in 0..nd {
            f(c, self.dense[(r, c)]);
        }
        if !self.pairs.is_empty() {
            let (j, k) = self.pairs[r];
            if let Some(c) = self.node_column[j as usize] {
                f(nd + c, 1.0);
            }
            if let Some(c) = self.node_column[k as usize] {
                f(nd + c, 1.0);
            }
        }
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.q()];
        self.for_each_nonzero(r, |c, v| out[c] += v);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dense.nrows();
        let mut z = DMatrix::zeros(n, self.q());
        for r in 0..n {
            self.for_each_nonzero(r, |c, v| z[(r, c)] += v);
        }
        z
    }
}

/// Realized design for one response.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub x: DMatrix<f64>,
    pub x_names: Vec<String>,
    pub z: RandomDesign,
    pub z_names: Vec<String>,
    /// Variance component index of every Z column.
    pub component_of_column: Vec<usize>,
    pub components: Vec<ComponentKey>,
    /// Contiguous row ranges per subject (subject index, rows).
    pub groups: Vec<(usize, Range<usize>)>,
    pub response: Vec<f64>,
    /// Table row index for every design row.
    pub source_rows: Vec<usize>,
    pub centering: CenteringRecord,
}

impl DesignMatrices {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.q()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Column indices belonging to each variance component.
    pub fn columns_by_component(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.components.len()];
        for (col, &g) in self.component_of_column.iter().enumerate() {
            out[g].push(col);
        }
        out
    }
}

/// The fixed-effect row for one dyad under `spec`.
pub fn fixed_row(spec: &ModelSpec, row: &DyadRow) -> Vec<f64> {
    spec.fixed.iter().map(|t| fixed_value(t, row)).collect()
}

fn fixed_value(t: &FixedTerm, row: &DyadRow) -> f64 {
    let is = |j: usize, k: usize| if row.node_j == j && row.node_k == k { 1.0 } else { 0.0 };
    match *t {
        FixedTerm::Intercept => 1.0,
        FixedTerm::Main(c) => row.value(c),
        FixedTerm::CoiBy(c) => row.group * row.value(c),
        FixedTerm::Dyad(j, k) => is(j, k),
        FixedTerm::CoiDyad(j, k) => row.group * is(j, k),
    }
}

/// Z-column layout implied by a spec: dense terms, node columns, component keys.
pub(crate) struct RandomLayout {
    pub dense_terms: Vec<RandomTerm>,
    pub node_column: Vec<Option<usize>>,
    pub n_node_columns: usize,
    pub component_of_column: Vec<usize>,
    pub components: Vec<ComponentKey>,
    pub z_names: Vec<String>,
}

pub(crate) fn random_layout(spec: &ModelSpec, n_nodes: usize) -> RandomLayout {
    let dense_terms: Vec<RandomTerm> = spec
        .random
        .iter()
        .copied()
        .filter(|t| !matches!(t, RandomTerm::Nodes))
        .collect();
    let mut components = Vec::new();
    let mut component_of_column = Vec::new();
    let mut z_names = Vec::new();
    for t in &dense_terms {
        let key = match t {
            RandomTerm::Intercept => ComponentKey::Intercept,
            RandomTerm::Slope(c) => ComponentKey::Slope(*c),
            RandomTerm::Nodes => unreachable!(),
        };
        component_of_column.push(components.len());
        z_names.push(key.label('·'));
        components.push(key);
    }
    let mut node_column = vec![None; n_nodes];
    let mut n_node_columns = 0;
    if spec.has_nodes() {
        let shared = spec.node_variance == NodeVariance::Shared;
        let shared_idx = components.len();
        if shared {
            components.push(ComponentKey::Nodes);
        }
        for (j, slot) in node_column.iter_mut().enumerate() {
            if spec.excluded_nodes.contains(&j) {
                continue;
            }
            *slot = Some(n_node_columns);
            n_node_columns += 1;
            z_names.push(format!("node{}", j + 1));
            if shared {
                component_of_column.push(shared_idx);
            } else {
                component_of_column.push(components.len());
                components.push(ComponentKey::Node(j));
            }
        }
        if shared && n_node_columns == 0 {
            components.pop();
        }
    }
    RandomLayout {
        dense_terms,
        node_column,
        n_node_columns,
        component_of_column,
        components,
        z_names,
    }
}

pub(crate) fn dense_random_value(t: &RandomTerm, row: &DyadRow) -> f64 {
    match t {
        RandomTerm::Intercept => 1.0,
        RandomTerm::Slope(c) => row.value(*c),
        RandomTerm::Nodes => unreachable!(),
    }
}

/// Realizes X, Z and the response for `spec.response` from a centered table.
///
/// Presence uses every row with response R; strength uses only rows with an
/// edge, with the Fisher-Z strength as response.
pub fn build_design(table: &DyadTable, spec: &ModelSpec) -> Result<DesignMatrices> {
    spec.validate()?;
    let centering = table
        .centering
        .clone()
        .ok_or_else(|| Error::InvalidSpec("dyad table must be centered before building a design".into()))?;
    for t in &spec.fixed {
        if let FixedTerm::Dyad(j, k) | FixedTerm::CoiDyad(j, k) = t {
            if *k >= table.n_nodes {
                return Err(Error::UnknownTerm(format!("dyad({j},{k})")));
            }
        }
    }
    let source_rows: Vec<usize> = match spec.response {
        Response::Presence => (0..table.rows.len()).collect(),
        Response::Strength => (0..table.rows.len()).filter(|&i| table.rows[i].presence).collect(),
    };
    let n = source_rows.len();
    let p = spec.fixed.len();
    let layout = random_layout(spec, table.n_nodes);
    let nd = layout.dense_terms.len();
    let mut x = DMatrix::zeros(n, p);
    let mut dense = DMatrix::zeros(n, nd);
    let mut pairs = Vec::new();
    let mut response = Vec::with_capacity(n);
    for (r, &src) in source_rows.iter().enumerate() {
        let row = &table.rows[src];
        for (c, t) in spec.fixed.iter().enumerate() {
            x[(r, c)] = fixed_value(t, row);
        }
        for (c, t) in layout.dense_terms.iter().enumerate() {
            dense[(r, c)] = dense_random_value(t, row);
        }
        if layout.n_node_columns > 0 {
            pairs.push((row.node_j as u32, row.node_k as u32));
        }
        response.push(match spec.response {
            Response::Presence => f64::from(u8::from(row.presence)),
            Response::Strength => row.strength.unwrap_or(f64::NAN),
        });
    }
    let groups = subject_ranges(source_rows.iter().map(|&i| table.rows[i].subject));
    Ok(DesignMatrices {
        x,
        x_names: spec.fixed.iter().map(|t| spec.fixed_token(t)).collect(),
        z: RandomDesign {
            dense,
            pairs,
            node_column: layout.node_column,
            n_node_columns: layout.n_node_columns,
        },
        z_names: layout.z_names,
        component_of_column: layout.component_of_column,
        components: layout.components,
        groups,
        response,
        source_rows,
        centering,
    })
}

impl fmt::Display for DesignMatrices {
    /// Column headers and centering record, for auditing a design.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows,{}", self.n_rows())?;
        writeln!(f, "X,{}", self.x_names.join(","))?;
        writeln!(f, "Z,{}", self.z_names.join(","))?;
        writeln!(f, "subjects,{}", self.groups.len())?;
        for (k, v) in &self.centering.means {
            writeln!(f, "center,{k},{v}")?;
        }
        writeln!(f, "absent_leverage,{}", self.centering.absent_leverage)
    }
}
