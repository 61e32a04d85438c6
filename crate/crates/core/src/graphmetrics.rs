//! Weighted nodal and whole-network metrics.
//!
//! The weighted variants are the usual brain-connectivity choices: strength
//! for degree, Onnela's geometric-mean clustering, inverse-weight edge
//! lengths for path-based measures, Newman modularity maximized with a
//! seeded Louvain pass, and leverage centrality on weighted degree.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netdata::SubjectNetwork;

/// Which degree enters leverage centrality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DegreeMode {
    #[default]
    Weighted,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSettings {
    pub louvain_seed: u64,
    pub leverage_degree: DegreeMode,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            louvain_seed: 1,
            leverage_degree: DegreeMode::Weighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalMetrics {
    pub clustering: Vec<f64>,
    pub efficiency: Vec<f64>,
    pub degree: Vec<f64>,
    /// `None` for isolated nodes.
    pub leverage: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkMetrics {
    pub clustering: f64,
    pub global_efficiency: f64,
    pub path_length: f64,
    /// Unordered node pairs with no connecting path, left out of `path_length`.
    pub disconnected_pairs: usize,
    pub mean_degree: f64,
    pub leverage: f64,
    pub modularity: f64,
    pub partition: Vec<usize>,
}

pub fn weighted_degree(net: &SubjectNetwork, node: usize) -> f64 {
    net.weights().row(node).iter().sum()
}

pub fn weighted_degrees(net: &SubjectNetwork) -> Vec<f64> {
    (0..net.n()).map(|i| weighted_degree(net, i)).collect()
}

fn binary_degrees(net: &SubjectNetwork) -> Vec<f64> {
    (0..net.n())
        .map(|i| net.weights().row(i).iter().filter(|&&w| w > 0.0).count() as f64)
        .collect()
}

fn cube_root_normalized(net: &SubjectNetwork) -> DMatrix<f64> {
    let max = net.weights().max();
    if max <= 0.0 {
        return DMatrix::zeros(net.n(), net.n());
    }
    net.weights().map(|w| (w / max).cbrt())
}

fn clustering_from_roots(roots: &DMatrix<f64>, net: &SubjectNetwork, node: usize) -> f64 {
    let n = net.n();
    let nbrs: Vec<usize> = (0..n).filter(|&j| net.weight(node, j) > 0.0).collect();
    let kb = nbrs.len();
    if kb < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for (a, &j) in nbrs.iter().enumerate() {
        for &h in &nbrs[a + 1..] {
            sum += roots[(node, j)] * roots[(node, h)] * roots[(j, h)];
        }
    }
    2.0 * sum / (kb * (kb - 1)) as f64
}

/// Onnela weighted clustering coefficient of one node.
pub fn weighted_clustering(net: &SubjectNetwork, node: usize) -> f64 {
    clustering_from_roots(&cube_root_normalized(net), net, node)
}

/// All-pairs shortest path lengths with edge length `1/w`; unreachable pairs are `∞`.
pub fn shortest_path_lengths(net: &SubjectNetwork) -> DMatrix<f64> {
    let n = net.n();
    let mut d = DMatrix::from_fn(n, n, |j, k| {
        let w = net.weight(j, k);
        if j == k {
            0.0
        } else if w > 0.0 {
            1.0 / w
        } else {
            f64::INFINITY
        }
    });
    for via in 0..n {
        for j in 0..n {
            let dj = d[(j, via)];
            if dj.is_infinite() {
                continue;
            }
            for k in 0..n {
                let cand = dj + d[(via, k)];
                if cand < d[(j, k)] {
                    d[(j, k)] = cand;
                }
            }
        }
    }
    d
}

/// Mean inverse path length from `node` to every other node.
pub fn nodal_efficiency(paths: &DMatrix<f64>, node: usize) -> f64 {
    let n = paths.nrows();
    if n < 2 {
        return 0.0;
    }
    let s: f64 = (0..n)
        .filter(|&j| j != node)
        .map(|j| {
            let d = paths[(node, j)];
            if d.is_finite() {
                1.0 / d
            } else {
                0.0
            }
        })
        .sum();
    s / (n - 1) as f64
}

fn leverage_from_degrees(net: &SubjectNetwork, degrees: &[f64], node: usize) -> Option<f64> {
    let ki = degrees[node];
    let nbrs: Vec<usize> = (0..net.n()).filter(|&j| net.weight(node, j) > 0.0).collect();
    if ki <= 0.0 || nbrs.is_empty() {
        return None;
    }
    let s: f64 = nbrs.iter().map(|&j| (ki - degrees[j]) / (ki + degrees[j])).sum();
    Some(s / nbrs.len() as f64)
}

/// Leverage centrality; `None` for an isolated node.
pub fn leverage_centrality(net: &SubjectNetwork, node: usize, mode: DegreeMode) -> Option<f64> {
    let degrees = match mode {
        DegreeMode::Weighted => weighted_degrees(net),
        DegreeMode::Binary => binary_degrees(net),
    };
    leverage_from_degrees(net, &degrees, node)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modularity {
    pub q: f64,
    /// Community label per node, numbered by first appearance in node order.
    pub partition: Vec<usize>,
}

/// Newman weighted modularity of a given partition.
pub fn modularity_of_partition(weights: &DMatrix<f64>, partition: &[usize]) -> f64 {
    let n = weights.nrows();
    let n_comm = partition.iter().copied().max().map_or(0, |m| m + 1);
    let mut inside = vec![0.0; n_comm];
    let mut total = vec![0.0; n_comm];
    let mut two_m = 0.0;
    for j in 0..n {
        for k in 0..n {
            let w = weights[(j, k)];
            two_m += w;
            total[partition[j]] += w;
            if partition[j] == partition[k] {
                inside[partition[j]] += w;
            }
        }
    }
    if two_m <= 0.0 {
        return 0.0;
    }
    inside
        .iter()
        .zip(&total)
        .map(|(&a, &t)| a / two_m - (t / two_m).powi(2))
        .sum()
}

/// Louvain passes per network, each with its own seeded visiting order.
pub const LOUVAIN_RESTARTS: usize = 8;

/// Best Louvain modularity over [`LOUVAIN_RESTARTS`] visiting orders drawn from `seed`.
pub fn modularity(net: &SubjectNetwork, seed: u64) -> Result<Modularity> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orders: Vec<Vec<usize>> = (0..LOUVAIN_RESTARTS)
        .map(|_| {
            let mut order: Vec<usize> = (0..net.n()).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect();
    modularity_with_orders(net, &orders)
}

/// Best result over several visiting orders; ties keep the earliest order.
pub fn modularity_with_orders(net: &SubjectNetwork, orders: &[Vec<usize>]) -> Result<Modularity> {
    let mut best: Option<Modularity> = None;
    for order in orders {
        let m = modularity_with_order(net, order)?;
        if best.as_ref().is_none_or(|b| m.q > b.q) {
            best = Some(m);
        }
    }
    best.ok_or_else(|| Error::Domain("no visiting order given".into()))
}

/// Louvain modularity visiting nodes in the given order.
///
/// The network is first relabeled so that `order[t]` becomes node `t`, which
/// makes the result equivariant under node relabeling when the order is
/// relabeled along with it.
pub fn modularity_with_order(net: &SubjectNetwork, order: &[usize]) -> Result<Modularity> {
    if net.n_edges() == 0 {
        return Err(Error::NoEdges);
    }
    let n = net.n();
    let reordered = DMatrix::from_fn(n, n, |a, b| net.weight(order[a], order[b]));
    let local = louvain(&reordered);
    let q = modularity_of_partition(&reordered, &local);
    let mut partition = vec![0; n];
    for (t, &node) in order.iter().enumerate() {
        partition[node] = local[t];
    }
    Ok(Modularity {
        q,
        partition: renumber(&partition),
    })
}

fn renumber(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

fn louvain(weights: &DMatrix<f64>) -> Vec<usize> {
    let n = weights.nrows();
    let mut membership: Vec<usize> = (0..n).collect();
    let mut graph = weights.clone();
    loop {
        let level = local_moving(&graph);
        let level = renumber(&level);
        let n_comm = level.iter().max().map_or(0, |m| m + 1);
        for m in membership.iter_mut() {
            *m = level[*m];
        }
        if n_comm == graph.nrows() {
            break;
        }
        let mut agg = DMatrix::zeros(n_comm, n_comm);
        for a in 0..graph.nrows() {
            for b in 0..graph.nrows() {
                agg[(level[a], level[b])] += graph[(a, b)];
            }
        }
        graph = agg;
    }
    membership
}

fn local_moving(a: &DMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    let k: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut comm: Vec<usize> = (0..n).collect();
    let mut tot = k.clone();
    let mut links = vec![0.0; n];
    let mut seen: Vec<usize> = Vec::with_capacity(n);
    let eps = 1e-14 * two_m.max(1.0);
    loop {
        let mut moved = false;
        for i in 0..n {
            let own = comm[i];
            tot[own] -= k[i];
            seen.clear();
            links[own] = 0.0;
            seen.push(own);
            for j in 0..n {
                if j == i || a[(i, j)] <= 0.0 {
                    continue;
                }
                let c = comm[j];
                if !seen.contains(&c) {
                    links[c] = 0.0;
                    seen.push(c);
                }
                links[c] += a[(i, j)];
            }
            let gain = |c: usize| links[c] - tot[c] * k[i] / two_m;
            let mut best = own;
            let mut best_gain = gain(own);
            for &c in &seen[1..] {
                let g = gain(c);
                if g > best_gain + eps {
                    best = c;
                    best_gain = g;
                }
            }
            tot[best] += k[i];
            if best != own {
                comm[i] = best;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    comm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLength {
    pub mean: f64,
    pub disconnected_pairs: usize,
}

/// Mean of the finite off-diagonal shortest path lengths.
pub fn characteristic_path_length(paths: &DMatrix<f64>) -> Result<PathLength> {
    let n = paths.nrows();
    let (mut sum, mut count, mut inf) = (0.0, 0usize, 0usize);
    for j in 0..n {
        for k in j + 1..n {
            let d = paths[(j, k)];
            if d.is_finite() {
                sum += d;
                count += 1;
            } else {
                inf += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Disconnected);
    }
    Ok(PathLength {
        mean: sum / count as f64,
        disconnected_pairs: inf,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if c == 0 {
        0.0
    } else {
        s / c as f64
    }
}

/// Every nodal metric and every whole-network summary in one pass.
pub fn metric_suite(net: &SubjectNetwork, settings: &MetricSettings) -> Result<(NodalMetrics, NetworkMetrics)> {
    let modularity = modularity(net, settings.louvain_seed)?;
    let n = net.n();
    let roots = cube_root_normalized(net);
    let paths = shortest_path_lengths(net);
    let degree = weighted_degrees(net);
    let lev_degrees = match settings.leverage_degree {
        DegreeMode::Weighted => degree.clone(),
        DegreeMode::Binary => binary_degrees(net),
    };
    let nodal = NodalMetrics {
        clustering: (0..n).map(|i| clustering_from_roots(&roots, net, i)).collect(),
        efficiency: (0..n).map(|i| nodal_efficiency(&paths, i)).collect(),
        leverage: (0..n).map(|i| leverage_from_degrees(net, &lev_degrees, i)).collect(),
        degree,
    };
    let pl = characteristic_path_length(&paths)?;
    let network = NetworkMetrics {
        clustering: mean(nodal.clustering.iter().copied()),
        global_efficiency: mean(nodal.efficiency.iter().copied()),
        path_length: pl.mean,
        disconnected_pairs: pl.disconnected_pairs,
        mean_degree: mean(nodal.degree.iter().copied()),
        leverage: mean(nodal.leverage.iter().flatten().copied()),
        modularity: modularity.q,
        partition: modularity.partition,
    };
    Ok((nodal, network))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net_from(n: usize, edges: &[(usize, usize, f64)]) -> SubjectNetwork {
        let mut net = SubjectNetwork::empty("t", n);
        for &(j, k, w) in edges {
            net.set_weight(j, k, w);
        }
        net
    }

    #[test]
    fn degree_cases() {
        let empty = SubjectNetwork::empty("e", 4);
        assert!(weighted_degrees(&empty).iter().all(|&k| k == 0.0));
        let tri = net_from(3, &[(0, 1, 0.5), (1, 2, 0.5), (0, 2, 0.5)]);
        assert_eq!(weighted_degrees(&tri), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn clustering_triangle_and_star() {
        let tri = net_from(3, &[(0, 1, 0.4), (1, 2, 0.4), (0, 2, 0.4)]);
        for i in 0..3 {
            assert!((weighted_clustering(&tri, i) - 1.0).abs() < 1e-12);
        }
        let star = net_from(4, &[(0, 1, 0.3), (0, 2, 0.6), (0, 3, 0.9)]);
        for i in 0..4 {
            assert_eq!(weighted_clustering(&star, i), 0.0);
        }
    }

    #[test]
    fn path_lengths_take_the_shorter_route() {
        let two = net_from(2, &[(0, 1, 0.5)]);
        assert_eq!(shortest_path_lengths(&two)[(0, 1)], 2.0);
        let tri = net_from(3, &[(0, 1, 0.5), (1, 2, 0.5), (0, 2, 0.2)]);
        assert_eq!(shortest_path_lengths(&tri)[(0, 2)], 4.0);
        let disc = net_from(3, &[(0, 1, 0.5)]);
        assert!(shortest_path_lengths(&disc)[(0, 2)].is_infinite());
    }

    #[test]
    fn efficiency_extremes() {
        // Hypothetical unit weights bypass the [0,1) check.
        let paths = DMatrix::from_fn(4, 4, |j, k| if j == k { 0.0 } else { 1.0 });
        assert_eq!(nodal_efficiency(&paths, 2), 1.0);
        let net = net_from(3, &[(0, 1, 0.5)]);
        assert_eq!(nodal_efficiency(&shortest_path_lengths(&net), 2), 0.0);
    }

    #[test]
    fn leverage_regular_and_star() {
        let tri = net_from(3, &[(0, 1, 0.5), (1, 2, 0.5), (0, 2, 0.5)]);
        for i in 0..3 {
            assert_eq!(leverage_centrality(&tri, i, DegreeMode::Weighted), Some(0.0));
        }
        let star = net_from(4, &[(0, 1, 0.5), (0, 2, 0.5), (0, 3, 0.5)]);
        assert_eq!(leverage_centrality(&star, 0, DegreeMode::Binary), Some(0.5));
        assert_eq!(leverage_centrality(&star, 2, DegreeMode::Binary), Some(-0.5));
        assert_eq!(leverage_centrality(&star, 0, DegreeMode::Weighted), Some(0.5));
        let iso = net_from(3, &[(0, 1, 0.5)]);
        assert_eq!(leverage_centrality(&iso, 2, DegreeMode::Weighted), None);
    }

    #[test]
    fn modularity_two_triangles() {
        let net = net_from(
            6,
            &[(0, 1, 0.9), (1, 2, 0.9), (0, 2, 0.9), (3, 4, 0.9), (4, 5, 0.9), (3, 5, 0.9)],
        );
        let m = modularity(&net, 3).unwrap();
        assert!((m.q - 0.5).abs() < 1e-12);
        assert_eq!(m.partition[0], m.partition[1]);
        assert_eq!(m.partition[1], m.partition[2]);
        assert_eq!(m.partition[3], m.partition[4]);
        assert_ne!(m.partition[0], m.partition[3]);
    }

    #[test]
    fn modularity_clique_is_one_community() {
        let mut edges = vec![];
        for j in 0..5 {
            for k in j + 1..5 {
                edges.push((j, k, 0.5));
            }
        }
        let m = modularity(&net_from(5, &edges), 11).unwrap();
        assert!(m.q <= 1e-12);
        assert!(m.partition.iter().all(|&c| c == 0));
    }

    #[test]
    fn modularity_requires_edges() {
        assert!(matches!(modularity(&SubjectNetwork::empty("e", 3), 1), Err(Error::NoEdges)));
        assert!(metric_suite(&SubjectNetwork::empty("e", 3), &MetricSettings::default()).is_err());
    }

    #[test]
    fn path_length_cases() {
        let two = net_from(2, &[(0, 1, 0.5)]);
        assert_eq!(characteristic_path_length(&shortest_path_lengths(&two)).unwrap().mean, 2.0);
        // binary-like 3-path: weights just below 1 stand in for unit lengths
        let path = net_from(3, &[(0, 1, 0.5), (1, 2, 0.5)]);
        let pl = characteristic_path_length(&shortest_path_lengths(&path)).unwrap();
        assert!((pl.mean - 2.0 * (1.0 + 1.0 + 2.0) / 3.0).abs() < 1e-12);
        let none = net_from(3, &[]);
        assert!(characteristic_path_length(&shortest_path_lengths(&none)).is_err());
    }

    #[test]
    fn suite_on_uniform_triangle() {
        let tri = net_from(3, &[(0, 1, 0.5), (1, 2, 0.5), (0, 2, 0.5)]);
        let (nodal, net) = metric_suite(&tri, &MetricSettings::default()).unwrap();
        assert!((net.clustering - 1.0).abs() < 1e-12);
        assert_eq!(net.mean_degree, 1.0);
        assert_eq!(net.leverage, 0.0);
        assert!(net.modularity <= 1e-12);
        assert_eq!(nodal.degree, vec![1.0; 3]);
    }
}
