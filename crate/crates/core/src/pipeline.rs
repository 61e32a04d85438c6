//! File-level plumbing shared by the command-line tool and the examples.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyaddesign::{build_dyad_table, Covariate, center_covariates, DyadTable, ModelSpec, SpecFile};
use crate::error::{Error, Result};
use crate::graphmetrics::{metric_suite, MetricSettings, NodalMetrics, NetworkMetrics};
use crate::mixedfit::{fit_two_part, refit_reduced, TwoPartFit};
use crate::netdata::{compute_distances, load_networks_dir, load_subjects, write_connection_matrix, write_text, NodeAtlas, SubjectNetwork};
use crate::study::load_covariates;

/// Where a study's inputs live.
#[derive(Debug, Clone, Default)]
pub struct StudyConfig {
    pub networks_dir: PathBuf,
    pub atlas: PathBuf,
    pub subjects: PathBuf,
    pub spec: Option<PathBuf>,
    /// Pre-computed (centered) covariate rows to use instead of measuring the networks.
    pub covariates: Option<PathBuf>,
    pub metrics: MetricSettings,
}

/// Networks plus the centered dyad table built from them.
#[derive(Debug, Clone)]
pub struct LoadedStudy {
    pub networks: Vec<SubjectNetwork>,
    pub atlas: NodeAtlas,
    pub table: DyadTable,
}

impl StudyConfig {
    pub fn check_paths(&self) -> Result<()> {
        let mut paths = vec![&self.networks_dir, &self.atlas, &self.subjects];
        paths.extend(self.spec.iter());
        paths.extend(self.covariates.iter());
        for p in paths {
            if !p.exists() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "path does not exist"),
                ));
            }
        }
        Ok(())
    }

    pub fn load_spec(&self) -> Result<ModelSpec> {
        match &self.spec {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                SpecFile::parse(&text)
            }
            None => Ok(ModelSpec::full("age")),
        }
    }

    pub fn load(&self) -> Result<LoadedStudy> {
        self.check_paths()?;
        let networks = load_networks_dir(&self.networks_dir)?;
        let atlas = NodeAtlas::load(&self.atlas)?;
        let subjects = load_subjects(&self.subjects)?;
        let table = match &self.covariates {
            Some(path) => {
                let mut t = load_covariates(path, &subjects, atlas.n())?;
                // Observed weights come from the networks directory.
                for row in t.rows.iter_mut() {
                    let id = &t.subjects[row.subject].subject_id;
                    let net = networks
                        .iter()
                        .find(|n| &n.subject_id == id)
                        .ok_or_else(|| Error::MissingCovariates(id.clone()))?;
                    row.set_weight(net.weight(row.node_j, row.node_k))?;
                }
                t
            }
            None => {
                let metrics = measure(&networks, &self.metrics)?;
                let dist = compute_distances(&atlas)?;
                let raw = build_dyad_table(&networks, &metrics, &subjects, &dist)?;
                center_covariates(raw).0
            }
        };
        Ok(LoadedStudy { networks, atlas, table })
    }
}

/// Metric suite for every network, in order.
pub fn measure(networks: &[SubjectNetwork], settings: &MetricSettings) -> Result<Vec<(NodalMetrics, NetworkMetrics)>> {
    networks
        .par_iter()
        .map(|n| {
            metric_suite(n, settings).map_err(|e| Error::Domain(format!("subject {}: {e}", n.subject_id)))
        })
        .collect()
}

/// Per-node and per-network metric tables as comma-separated text.
pub fn metric_tables(networks: &[SubjectNetwork], metrics: &[(NodalMetrics, NetworkMetrics)]) -> (String, String) {
    let mut nodal = String::from("subject_id,node,clustering,efficiency,degree,leverage\n");
    let mut network = String::from(
        "subject_id,clustering,global_efficiency,path_length,disconnected_pairs,mean_degree,leverage,modularity\n",
    );
    for (net, (nm, wm)) in networks.iter().zip(metrics) {
        for j in 0..net.n() {
            nodal.push_str(&format!(
                "{},{},{},{},{},{}\n",
                net.subject_id,
                j,
                nm.clustering[j],
                nm.efficiency[j],
                nm.degree[j],
                nm.leverage[j].map_or(String::new(), |v| v.to_string())
            ));
        }
        network.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            net.subject_id,
            wm.clustering,
            wm.global_efficiency,
            wm.path_length,
            wm.disconnected_pairs,
            wm.mean_degree,
            wm.leverage,
            wm.modularity
        ));
    }
    (nodal, network)
}

/// A full-model fit and its refit without zero-variance terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArchive {
    pub metric_settings: MetricSettings,
    /// Used for prediction and simulation.
    pub full: TwoPartFit,
    /// Used for reporting, comparison and thresholding.
    pub reduced: TwoPartFit,
}

impl FitArchive {
    pub fn fit(table: &DyadTable, spec: &ModelSpec, metric_settings: MetricSettings) -> Result<Self> {
        let full = fit_two_part(table, spec)?;
        let reduced = refit_reduced(table, &full)?;
        Ok(Self {
            metric_settings,
            full,
            reduced,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit archive serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &format!("{}\n", self.to_json()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }
}

/// Observed range of `c` on the raw (uncentered) scale.
pub fn observed_range(table: &DyadTable, c: Covariate) -> Option<(f64, f64)> {
    let mean = table.centering.as_ref().map_or(0.0, |r| if c.is_continuous() { r.mean(c) } else { 0.0 });
    let (lo, hi) = table
        .rows
        .iter()
        .map(|r| r.value(c) + mean)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    (lo <= hi).then_some((lo, hi))
}

/// Writes each network as `<dir>/<subject_id>.csv`.
pub fn write_networks(dir: &Path, networks: &[SubjectNetwork]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for n in networks {
        write_connection_matrix(dir.join(format!("{}.csv", n.subject_id)), n)?;
    }
    Ok(())
}

/// Parses `a:b:n` (n evenly spaced values) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidSpec(format!("cannot parse grid `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if n < 2 {
            return Ok(vec![a]);
        }
        return Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect());
    }
    s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
}

/// Parses `j-k,j-k,…` or `all` into dyads with `j < k`.
pub fn parse_dyads(s: &str, n_nodes: usize) -> Result<Vec<(usize, usize)>> {
    if s.trim() == "all" {
        return Ok((0..n_nodes).flat_map(|j| (j + 1..n_nodes).map(move |k| (j, k))).collect());
    }
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let (a, b) = t
                .split_once('-')
                .ok_or_else(|| Error::InvalidSpec(format!("dyad `{t}` must look like j-k")))?;
            let j: usize = a.trim().parse().map_err(|_| Error::InvalidSpec(format!("bad dyad `{t}`")))?;
            let k: usize = b.trim().parse().map_err(|_| Error::InvalidSpec(format!("bad dyad `{t}`")))?;
            Ok((j.min(k), j.max(k)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_and_dyads_parse() {
        assert_eq!(parse_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("1, 2.5").unwrap(), vec![1.0, 2.5]);
        assert!(parse_grid("x").is_err());
        assert_eq!(parse_dyads("2-1,0-3", 4).unwrap(), vec![(1, 2), (0, 3)]);
        assert_eq!(parse_dyads("all", 3).unwrap().len(), 3);
    }
}
