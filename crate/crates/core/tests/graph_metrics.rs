mod common;

use common::*;
use nalgebra::DMatrix;
use netmix::graphmetrics::*;
use netmix::netdata::SubjectNetwork;
use proptest::prelude::*;

fn net(w: &DMatrix<f64>) -> SubjectNetwork {
    SubjectNetwork::new("g", w.clone()).unwrap()
}

#[test]
fn every_metric_matches_brute_force_on_small_graphs() {
    for (g, w) in connected_suite(2024, 250).iter().enumerate() {
        let nw = net(w);
        let n = w.nrows();
        let paths = shortest_path_lengths(&nw);
        let oracle = brute_paths(w);
        for j in 0..n {
            for k in 0..n {
                assert!((paths[(j, k)] - oracle[(j, k)]).abs() < 1e-10, "graph {g} path {j},{k}");
            }
        }
        for i in 0..n {
            assert!((weighted_degree(&nw, i) - brute_degree(w, i)).abs() < 1e-10);
            assert!((weighted_clustering(&nw, i) - brute_clustering(w, i)).abs() < 1e-10, "graph {g} C{i}");
            assert!((nodal_efficiency(&paths, i) - brute_efficiency(w, i)).abs() < 1e-10);
            let l = leverage_centrality(&nw, i, DegreeMode::Weighted).unwrap();
            assert!((l - brute_leverage(w, i).unwrap()).abs() < 1e-10);
        }
        let pl = characteristic_path_length(&paths).unwrap();
        assert!((pl.mean - brute_path_length(w)).abs() < 1e-10);
        assert_eq!(pl.disconnected_pairs, 0);
        if nw.n_edges() > 0 {
            let m = modularity(&nw, 1).unwrap();
            assert!((m.q - brute_q(w, &m.partition)).abs() < 1e-10, "graph {g} Q of partition");
            assert!((m.q - brute_max_q(w)).abs() < 1e-10, "graph {g} Q below exhaustive optimum");
        }
    }
}

#[test]
fn two_triangles_reach_the_exhaustive_optimum() {
    let mut w = DMatrix::zeros(6, 6);
    for &(j, k) in &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)] {
        w[(j, k)] = 0.5;
        w[(k, j)] = 0.5;
    }
    let m = modularity(&net(&w), 3).unwrap();
    assert!((m.q - 0.5).abs() < 1e-12);
    assert!((brute_max_q(&w) - 0.5).abs() < 1e-12);
    assert_eq!(m.partition, vec![0, 0, 0, 1, 1, 1]);
}

#[test]
fn planted_blocks_are_recovered() {
    let n = 12;
    let w = DMatrix::from_fn(n, n, |j, k| {
        if j == k {
            0.0
        } else if (j < 6) == (k < 6) {
            0.8
        } else {
            0.05
        }
    });
    for seed in 0..5 {
        let m = modularity(&net(&w), seed).unwrap();
        let expect: Vec<usize> = (0..n).map(|j| usize::from(j >= 6)).collect();
        assert_eq!(m.partition, expect, "seed {seed}");
    }
}

#[test]
fn hand_computed_cases() {
    // a–b–c with 0.5 each plus a direct a–c at 0.2: the detour (4.0) beats 1/0.2.
    let mut w = DMatrix::zeros(3, 3);
    for &(j, k, v) in &[(0, 1, 0.5), (1, 2, 0.5), (0, 2, 0.2)] {
        w[(j, k)] = v;
        w[(k, j)] = v;
    }
    assert!((shortest_path_lengths(&net(&w))[(0, 2)] - 4.0).abs() < 1e-12);

    // Binary star with three leaves (weights equal, so weighted = binary ratios).
    let mut s = DMatrix::zeros(4, 4);
    for k in 1..4 {
        s[(0, k)] = 0.5;
        s[(k, 0)] = 0.5;
    }
    let star = net(&s);
    assert!((leverage_centrality(&star, 0, DegreeMode::Binary).unwrap() - 0.5).abs() < 1e-12);
    assert!((leverage_centrality(&star, 1, DegreeMode::Binary).unwrap() + 0.5).abs() < 1e-12);

    // Binary 3-path: L = (1 + 1 + 2) / 3 with unit lengths (weights 1 are not storable,
    // so use 0.5 and halve).
    let mut p = DMatrix::zeros(3, 3);
    for &(j, k) in &[(0, 1), (1, 2)] {
        p[(j, k)] = 0.5;
        p[(k, j)] = 0.5;
    }
    let pl = characteristic_path_length(&shortest_path_lengths(&net(&p))).unwrap();
    assert!((pl.mean / 2.0 - 4.0 / 3.0).abs() < 1e-12);
}

#[test]
fn suite_composes_the_individual_metrics() {
    let study = netmix::study::generate_synthetic_study(2, 90, &netmix::study::Truth::demo(), 9).unwrap();
    let nw = &study.networks[0];
    let settings = MetricSettings::default();
    let (nodal, whole) = metric_suite(nw, &settings).unwrap();
    let paths = shortest_path_lengths(nw);
    for i in 0..nw.n() {
        assert_eq!(nodal.degree[i], weighted_degree(nw, i));
        assert_eq!(nodal.clustering[i], weighted_clustering(nw, i));
        assert_eq!(nodal.efficiency[i], nodal_efficiency(&paths, i));
        assert_eq!(nodal.leverage[i], leverage_centrality(nw, i, DegreeMode::Weighted));
    }
    assert_eq!(whole.modularity, modularity(nw, settings.louvain_seed).unwrap().q);
    assert_eq!(whole.path_length, characteristic_path_length(&paths).unwrap().mean);
    assert!((-0.5..=1.0).contains(&whole.modularity));
}

#[test]
fn disconnected_pairs_are_counted_not_averaged() {
    let mut w = DMatrix::zeros(4, 4);
    w[(0, 1)] = 0.5;
    w[(1, 0)] = 0.5;
    w[(2, 3)] = 0.25;
    w[(3, 2)] = 0.25;
    let pl = characteristic_path_length(&shortest_path_lengths(&net(&w))).unwrap();
    assert_eq!(pl.disconnected_pairs, 4);
    assert!((pl.mean - 3.0).abs() < 1e-12);
    assert!(characteristic_path_length(&shortest_path_lengths(&SubjectNetwork::empty("e", 3))).is_err());
}

fn graph_strategy() -> impl Strategy<Value = (DMatrix<f64>, Vec<usize>)> {
    (3usize..9)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(proptest::option::weighted(0.6, 0.01f64..0.99), n * (n - 1) / 2),
                Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
            )
        })
        .prop_map(|(edges, perm)| {
            let n = perm.len();
            let mut w = DMatrix::zeros(n, n);
            let mut e = edges.into_iter();
            for j in 0..n {
                for k in j + 1..n {
                    if let Some(v) = e.next().flatten() {
                        w[(j, k)] = v;
                        w[(k, j)] = v;
                    }
                }
            }
            (w, perm)
        })
        .prop_filter("needs an edge", |(w, _)| w.iter().any(|&v| v > 0.0))
}

proptest! {
    #[test]
    fn relabeling_permutes_nodal_and_preserves_network_metrics((w, perm) in graph_strategy()) {
        let a = net(&w);
        let b = a.permuted(&perm);
        let n = w.nrows();
        // b's node t is a's node perm[t]; visiting b in inverse-permuted order replays a's search.
        let order_a: Vec<usize> = (0..n).collect();
        let mut order_b = vec![0; n];
        for (t, &p) in perm.iter().enumerate() {
            order_b[p] = t;
        }
        let qa = modularity_with_order(&a, &order_a).unwrap().q;
        let qb = modularity_with_order(&b, &order_b).unwrap().q;
        prop_assert!((qa - qb).abs() < 1e-12);
        let pa = shortest_path_lengths(&a);
        let pb = shortest_path_lengths(&b);
        for j in 0..n {
            let i = perm[j];
            prop_assert!((weighted_degree(&a, i) - weighted_degree(&b, j)).abs() < 1e-12);
            prop_assert!((weighted_clustering(&a, i) - weighted_clustering(&b, j)).abs() < 1e-12);
            prop_assert!((nodal_efficiency(&pa, i) - nodal_efficiency(&pb, j)).abs() < 1e-12);
            let (la, lb) = (leverage_centrality(&a, i, DegreeMode::Weighted), leverage_centrality(&b, j, DegreeMode::Weighted));
            prop_assert_eq!(la.is_some(), lb.is_some());
            if let (Some(x), Some(y)) = (la, lb) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
        if let (Ok(x), Ok(y)) = (characteristic_path_length(&pa), characteristic_path_length(&pb)) {
            prop_assert!((x.mean - y.mean).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_scaling((w, _) in graph_strategy(), c in 0.05f64..=1.0) {
        let a = net(&w);
        let b = a.scaled(c);
        for i in 0..w.nrows() {
            prop_assert!((weighted_degree(&b, i) - c * weighted_degree(&a, i)).abs() < 1e-12);
            prop_assert!((weighted_clustering(&b, i) - weighted_clustering(&a, i)).abs() < 1e-12);
            let (la, lb) = (leverage_centrality(&a, i, DegreeMode::Weighted), leverage_centrality(&b, i, DegreeMode::Weighted));
            if let (Some(x), Some(y)) = (la, lb) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn metric_ranges((w, _) in graph_strategy()) {
        let a = net(&w);
        let (nodal, whole) = metric_suite(&a, &MetricSettings::default()).unwrap();
        for i in 0..w.nrows() {
            prop_assert!((0.0..=1.0).contains(&nodal.clustering[i]));
            prop_assert!((0.0..=1.0).contains(&nodal.efficiency[i]));
            prop_assert!(nodal.degree[i] >= 0.0);
            prop_assert_eq!(nodal.leverage[i].is_some(), nodal.degree[i] > 0.0);
        }
        prop_assert!((-0.5..=1.0).contains(&whole.modularity));
        prop_assert!(whole.path_length >= 0.0);
    }
}
