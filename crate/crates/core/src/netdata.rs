//! Connection matrices, node atlases and subject covariate tables.
//!
//! Weighted networks are stored with every entry in `[0, 1)` and a zero
//! diagonal. Negative correlations are treated as absent connections and an
//! entry of exactly 1 is rejected, since its Fisher-Z transform is infinite.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest tolerated |w[j][k] − w[k][j]| before a matrix is rejected.
pub const ASYMMETRY_TOLERANCE: f64 = 1e-8;

/// One participant's weighted connection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectNetwork {
    pub subject_id: String,
    weights: DMatrix<f64>,
}

impl SubjectNetwork {
    /// Builds a network from an already nonnegative symmetric matrix.
    pub fn new(subject_id: impl Into<String>, weights: DMatrix<f64>) -> Result<Self> {
        let subject_id = subject_id.into();
        validate_square(&weights)?;
        let n = weights.nrows();
        for j in 0..n {
            for k in 0..n {
                let w = weights[(j, k)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidWeight { row: j, col: k, value: w });
                }
                if w >= 1.0 && j != k {
                    return Err(Error::WeightTooLarge { row: j, col: k });
                }
                if (w - weights[(k, j)]).abs() > 0.0 {
                    return Err(Error::Asymmetric {
                        row: j,
                        col: k,
                        diff: (w - weights[(k, j)]).abs(),
                    });
                }
            }
        }
        let mut weights = weights;
        weights.fill_diagonal(0.0);
        Ok(Self { subject_id, weights })
    }

    /// An edgeless network on `n` nodes.
    pub fn empty(subject_id: impl Into<String>, n: usize) -> Self {
        Self {
            subject_id: subject_id.into(),
            weights: DMatrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, j: usize, k: usize) -> f64 {
        self.weights[(j, k)]
    }

    /// Sets a symmetric pair of entries. Panics on diagonal or out-of-range weights.
    pub fn set_weight(&mut self, j: usize, k: usize, w: f64) {
        assert!(j != k, "diagonal entries are fixed at zero");
        assert!((0.0..1.0).contains(&w), "weight {w} outside [0,1)");
        self.weights[(j, k)] = w;
        self.weights[(k, j)] = w;
    }

    pub fn n_dyads(&self) -> usize {
        let n = self.n();
        n * n.saturating_sub(1) / 2
    }

    /// Number of dyads with a positive weight.
    pub fn n_edges(&self) -> usize {
        self.dyads().filter(|&(j, k)| self.weights[(j, k)] > 0.0).count()
    }

    /// Upper-triangle node pairs `(j, k)` with `j < k`, row-major.
    pub fn dyads(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n();
        (0..n).flat_map(move |j| (j + 1..n).map(move |k| (j, k)))
    }

    /// Zeroes every weight strictly below `cutoff`.
    pub fn apply_weak_cutoff(&self, cutoff: f64) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| {
            if *w < cutoff {
                *w = 0.0
            }
        });
        out
    }

    /// Relabels nodes: node `i` of the result is node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        assert_eq!(perm.len(), n);
        let weights = DMatrix::from_fn(n, n, |a, b| self.weights[(perm[a], perm[b])]);
        Self {
            subject_id: self.subject_id.clone(),
            weights,
        }
    }

    /// Multiplies every weight by `c` in `(0, 1]`.
    pub fn scaled(&self, c: f64) -> Self {
        assert!(c > 0.0 && c <= 1.0);
        Self {
            subject_id: self.subject_id.clone(),
            weights: &self.weights * c,
        }
    }
}

fn validate_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare {
            rows: m.nrows(),
            row: 0,
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Replaces negative entries by 0 and returns the validated network.
///
/// The input must be square, symmetric to [`ASYMMETRY_TOLERANCE`], and have
/// every off-diagonal entry in `(−1, 1)`. Small asymmetries are averaged out
/// and the diagonal is zeroed.
pub fn clamp_negative_weights(subject_id: impl Into<String>, raw: &DMatrix<f64>) -> Result<SubjectNetwork> {
    validate_square(raw)?;
    let n = raw.nrows();
    for j in 0..n {
        for k in 0..n {
            let w = raw[(j, k)];
            if w.is_nan() || (j != k && w <= -1.0) || !w.is_finite() {
                return Err(Error::InvalidWeight { row: j, col: k, value: w });
            }
            if j != k && w >= 1.0 {
                return Err(Error::WeightTooLarge { row: j, col: k });
            }
        }
    }
    for j in 0..n {
        for k in j + 1..n {
            let diff = (raw[(j, k)] - raw[(k, j)]).abs();
            if diff > ASYMMETRY_TOLERANCE {
                return Err(Error::Asymmetric { row: j, col: k, diff });
            }
        }
    }
    let weights = DMatrix::from_fn(n, n, |j, k| {
        if j == k {
            0.0
        } else {
            (0.5 * (raw[(j, k)] + raw[(k, j)])).max(0.0)
        }
    });
    Ok(SubjectNetwork {
        subject_id: subject_id.into(),
        weights,
    })
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses dense comma-separated matrix text. A first line that does not
/// parse as numbers is treated as a header and skipped.
pub fn parse_matrix_text(text: &str, path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(parse_err(path, i + 1, e.to_string())),
        }
    }
    let n = rows.len();
    if n == 0 {
        return Err(parse_err(path, 1, "empty matrix"));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(Error::NonSquare {
                rows: n,
                row: i,
                cols: r.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(n, n, |j, k| rows[j][k]))
}

/// Reads a dense comma-separated connection matrix.
pub fn load_connection_matrix(path: impl AsRef<Path>, subject_id: impl Into<String>) -> Result<SubjectNetwork> {
    let path = path.as_ref();
    let raw = parse_matrix_text(&read_to_string(path)?, path)?;
    clamp_negative_weights(subject_id, &raw)
}

/// Writes a network in the same text format [`load_connection_matrix`] reads.
pub fn write_connection_matrix(path: impl AsRef<Path>, net: &SubjectNetwork) -> Result<()> {
    let path = path.as_ref();
    let n = net.n();
    let mut out = String::with_capacity(n * n * 8);
    for j in 0..n {
        for k in 0..n {
            if k > 0 {
                out.push(',');
            }
            out.push_str(&format_weight(net.weights[(j, k)]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn format_weight(w: f64) -> String {
    if w == 0.0 {
        "0".to_string()
    } else {
        format!("{w}")
    }
}

/// Node labels and MNI-style coordinates in millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAtlas {
    pub labels: Vec<String>,
    pub coords_mm: Vec<[f64; 3]>,
}

#[derive(Debug, Deserialize, Serialize)]
struct AtlasRecord {
    node: usize,
    label: String,
    x_mm: f64,
    y_mm: f64,
    z_mm: f64,
}

impl NodeAtlas {
    pub fn n(&self) -> usize {
        self.coords_mm.len()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| parse_err(path, 0, e.to_string()))?;
        let mut records: Vec<AtlasRecord> = Vec::new();
        for (i, rec) in reader.deserialize().enumerate() {
            let rec: AtlasRecord = rec.map_err(|e| parse_err(path, i + 2, e.to_string()))?;
            records.push(rec);
        }
        records.sort_by_key(|r| r.node);
        for (i, r) in records.iter().enumerate() {
            if r.node != i {
                return Err(parse_err(path, i + 2, format!("node indices must be 0..n, found {}", r.node)));
            }
        }
        let atlas = NodeAtlas {
            labels: records.iter().map(|r| r.label.clone()).collect(),
            coords_mm: records.iter().map(|r| [r.x_mm, r.y_mm, r.z_mm]).collect(),
        };
        Ok(atlas)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| parse_err(path, 0, e.to_string()))?;
        for (i, (label, c)) in self.labels.iter().zip(&self.coords_mm).enumerate() {
            w.serialize(AtlasRecord {
                node: i,
                label: label.clone(),
                x_mm: c[0],
                y_mm: c[1],
                z_mm: c[2],
            })
            .map_err(|e| parse_err(path, i + 2, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Symmetric Euclidean distances between nodes, in decimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(pub DMatrix<f64>);

impl DistanceMatrix {
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.0[(j, k)]
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }
}

/// Euclidean node distances, converted from mm to dm.
pub fn compute_distances(atlas: &NodeAtlas) -> Result<DistanceMatrix> {
    for (i, c) in atlas.coords_mm.iter().enumerate() {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite coordinate for node {i}")));
        }
    }
    let n = atlas.n();
    let d = DMatrix::from_fn(n, n, |j, k| {
        if j == k {
            return 0.0;
        }
        let (a, b) = (atlas.coords_mm[j], atlas.coords_mm[k]);
        let sq: f64 = (0..3).map(|t| (a[t] - b[t]).powi(2)).sum();
        sq.sqrt() / 100.0
    });
    Ok(DistanceMatrix(d))
}

/// Subject-level covariates: the binary covariate of interest plus confounders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectCovariates {
    pub subject_id: String,
    pub group: u8,
    pub sex: u8,
    pub education_years: f64,
}

/// Reads `subject_id,group,sex,education_years`.
pub fn load_subjects(path: impl AsRef<Path>) -> Result<BTreeMap<String, SubjectCovariates>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let mut out = BTreeMap::new();
    for (i, rec) in reader.deserialize().enumerate() {
        let rec: SubjectCovariates = rec.map_err(|e| parse_err(path, i + 2, e.to_string()))?;
        if rec.group > 1 || rec.sex > 1 || !rec.education_years.is_finite() {
            return Err(parse_err(path, i + 2, "group and sex must be 0/1, education finite"));
        }
        out.insert(rec.subject_id.clone(), rec);
    }
    Ok(out)
}

pub fn write_subjects(path: impl AsRef<Path>, subjects: &[SubjectCovariates]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| parse_err(path, 0, e.to_string()))?;
    for s in subjects {
        w.serialize(s).map_err(|e| parse_err(path, 0, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads every `*.csv` in `dir` as a network, keyed by file stem, in sorted order.
pub fn load_networks_dir(dir: impl AsRef<Path>) -> Result<Vec<SubjectNetwork>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            load_connection_matrix(p, id)
        })
        .collect()
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
