mod common;

use std::collections::BTreeMap;

use common::*;
use nalgebra::{DMatrix, DVector};
use netmix::dyaddesign::*;
use netmix::graphmetrics::{metric_suite, MetricSettings, NetworkMetrics, NodalMetrics};
use netmix::netdata::*;
use proptest::prelude::*;

/// atanh by its power series; fine for |x| ≤ 0.9.
fn atanh_series(x: f64) -> f64 {
    let (mut term, mut sum, x2) = (x, 0.0, x * x);
    for n in 0..2000 {
        sum += term / (2 * n + 1) as f64;
        term *= x2;
    }
    sum
}

#[test]
fn fisher_z_against_independent_formulas() {
    assert!((fisher_z(0.5).unwrap() - atanh_series(0.5)).abs() < 1e-14);
    assert!((fisher_z(0.5).unwrap() - 0.549_306_144_334_054_8).abs() < 1e-15);
    let near = 0.999_999;
    let oracle = 0.5 * (f64::ln_1p(near) - f64::ln_1p(-near));
    assert!((fisher_z(near).unwrap() - oracle).abs() < 1e-9);
    assert!((fisher_z(near).unwrap() - 7.254_329).abs() < 1e-5);
    let e4 = 4f64.exp();
    assert!((inv_fisher_z(2.0) - (e4 - 1.0) / (e4 + 1.0)).abs() < 1e-15);
    assert_eq!(inv_fisher_z(0.0), 0.0);
}

fn subjects(ids: &[&str]) -> BTreeMap<String, SubjectCovariates> {
    ids.iter()
        .enumerate()
        .map(|(i, id)| {
            (
                id.to_string(),
                SubjectCovariates {
                    subject_id: id.to_string(),
                    group: (i % 2) as u8,
                    sex: ((i / 2) % 2) as u8,
                    education_years: 10.0 + i as f64,
                },
            )
        })
        .collect()
}

fn line_atlas(n: usize) -> NodeAtlas {
    NodeAtlas {
        labels: (0..n).map(|j| format!("N{j}")).collect(),
        coords_mm: (0..n).map(|j| [10.0 * j as f64, 0.0, 0.0]).collect(),
    }
}

#[test]
fn hand_built_four_node_table() {
    let w = DMatrix::from_row_slice(4, 4, &[
        0.0, 0.5, 0.0, 0.2, //
        0.5, 0.0, 0.3, 0.0, //
        0.0, 0.3, 0.0, 0.0, //
        0.2, 0.0, 0.0, 0.0,
    ]);
    let net = SubjectNetwork::new("s1", w).unwrap();
    let nodal = NodalMetrics {
        clustering: vec![0.1, 0.2, 0.3, 0.4],
        efficiency: vec![1.0, 2.0, 3.0, 4.0],
        degree: vec![3.0, 1.0, 4.0, 1.5],
        leverage: vec![Some(0.5), Some(-0.5), None, Some(0.25)],
    };
    let network = NetworkMetrics {
        clustering: 0.0,
        global_efficiency: 0.0,
        path_length: 0.0,
        disconnected_pairs: 0,
        mean_degree: 0.0,
        leverage: 0.0,
        modularity: 0.37,
        partition: vec![0; 4],
    };
    let dist = compute_distances(&line_atlas(4)).unwrap();
    let t = build_dyad_table(&[net], &[(nodal, network)], &subjects(&["s1"]), &dist).unwrap();
    assert_eq!(t.rows.len(), 6);
    let r = |j, k| t.rows.iter().find(|r| r.node_j == j && r.node_k == k).unwrap();
    let r01 = r(0, 1);
    assert!((r01.clustering - 0.15).abs() < 1e-15);
    assert_eq!(r01.efficiency, 1.5);
    assert_eq!(r01.degree_diff, 2.0);
    assert_eq!(r01.leverage, Some(0.0));
    assert_eq!(r01.modularity, 0.37);
    assert!((r01.strength.unwrap() - 0.5f64.atanh()).abs() < 1e-15);
    assert_eq!(r(1, 3).degree_diff, 0.5);
    assert_eq!(r(0, 2).leverage, None);
    assert!(!r(0, 2).presence && r(0, 2).strength.is_none());
    // 30 mm along the line is 0.3 dm.
    assert!((r(0, 3).dist - 0.3).abs() < 1e-15);
    assert_eq!(r(0, 3).dist2, r(0, 3).dist * r(0, 3).dist);
}

#[test]
fn ninety_nodes_give_ninety_eight_random_columns() {
    let n = 90;
    let mut r = rng(3);
    let nets: Vec<SubjectNetwork> = (0..2)
        .map(|s| SubjectNetwork::new(format!("s{s}"), random_graph(&mut r, n, 0.2)).unwrap())
        .collect();
    let settings = MetricSettings::default();
    let metrics: Vec<_> = nets.iter().map(|n| metric_suite(n, &settings).unwrap()).collect();
    let atlas = NodeAtlas {
        labels: (0..n).map(|j| format!("N{j}")).collect(),
        coords_mm: (0..n).map(|j| [j as f64, (j * j % 17) as f64, (j % 5) as f64]).collect(),
    };
    let raw = build_dyad_table(&nets, &metrics, &subjects(&["s0", "s1"]), &compute_distances(&atlas).unwrap()).unwrap();
    assert_eq!(raw.rows.len(), 2 * 4005);
    let strength_rows = raw.rows.iter().filter(|r| r.strength.is_some()).count();
    assert_eq!(strength_rows, nets.iter().map(|n| n.n_edges()).sum::<usize>());
    let (table, _) = center_covariates(raw);
    let d = build_design(&table, &ModelSpec::full("age")).unwrap();
    assert_eq!(d.q(), 98);
    let nd = d.q() - n;
    for row in 0..d.n_rows() {
        let z = d.z.row(row);
        assert_eq!(z[nd..].iter().sum::<f64>(), 2.0);
    }
}

/// Least-squares fitted values of `y` on the columns of `x`.
fn ls_fitted(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let svd = x.clone().svd(true, true);
    x * svd.solve(y, 1e-12).unwrap()
}

#[test]
fn centering_keeps_least_squares_fits() {
    let mut r = rng(11);
    let n = 7;
    let nets: Vec<SubjectNetwork> = (0..4)
        .map(|s| {
            let w = loop {
                let w = random_graph(&mut r, n, 0.8);
                if is_connected(&w) {
                    break w;
                }
            };
            SubjectNetwork::new(format!("s{s}"), w).unwrap()
        })
        .collect();
    let metrics: Vec<_> = nets.iter().map(|n| metric_suite(n, &MetricSettings::default()).unwrap()).collect();
    let atlas = NodeAtlas {
        labels: (0..n).map(|j| format!("N{j}")).collect(),
        coords_mm: (0..n).map(|j| [3.0 * j as f64, (j * j) as f64, 1.0]).collect(),
    };
    let raw = build_dyad_table(&nets, &metrics, &subjects(&["s0", "s1", "s2", "s3"]), &compute_distances(&atlas).unwrap())
        .unwrap();
    let (centered, _) = center_covariates(raw.clone());
    let spec = ModelSpec::full("age");
    let xr = DMatrix::from_row_iterator(raw.rows.len(), 17, raw.rows.iter().flat_map(|row| fixed_row(&spec, row)));
    let xc = DMatrix::from_row_iterator(centered.rows.len(), 17, centered.rows.iter().flat_map(|row| fixed_row(&spec, row)));
    let y = DVector::from_fn(raw.rows.len(), |i, _| ((i * 7919) % 101) as f64 / 101.0);
    let (a, b) = (ls_fitted(&xr, &y), ls_fitted(&xc, &y));
    assert!((a - b).amax() < 1e-8);
}

fn arb_coords() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-100.0..100.0f64), 2..8)
}

fn arb_raw_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..7).prop_flat_map(|n| {
        prop::collection::vec(-0.99..0.99f64, n * n).prop_map(move |v| {
            let m = DMatrix::from_vec(n, n, v);
            let mut s = (&m + m.transpose()) * 0.5;
            s.fill_diagonal(0.0);
            s
        })
    })
}

proptest! {
    #[test]
    fn distances_survive_rigid_translation(coords in arb_coords(), shift in prop::array::uniform3(-1e3..1e3f64)) {
        let a = NodeAtlas { labels: coords.iter().map(|_| String::new()).collect(), coords_mm: coords.clone() };
        let moved = NodeAtlas {
            coords_mm: coords.iter().map(|c| [c[0] + shift[0], c[1] + shift[1], c[2] + shift[2]]).collect(),
            ..a.clone()
        };
        let (d0, d1) = (compute_distances(&a).unwrap(), compute_distances(&moved).unwrap());
        prop_assert!((&d0.0 - &d1.0).amax() < 1e-12);
    }

    #[test]
    fn clamping_is_idempotent_and_splits_dyads(raw in arb_raw_matrix()) {
        let once = clamp_negative_weights("s", &raw).unwrap();
        let twice = clamp_negative_weights("s", once.weights()).unwrap();
        prop_assert_eq!(once.weights(), twice.weights());
        let n = raw.nrows();
        let present = once.dyads().filter(|&(j, k)| once.weight(j, k) > 0.0).count();
        let absent = once.dyads().filter(|&(j, k)| once.weight(j, k) == 0.0).count();
        prop_assert_eq!(present + absent, n * (n - 1) / 2);
        prop_assert_eq!(present, once.n_edges());
    }

    #[test]
    fn table_is_invariant_under_relabeling(seed in 0u64..500, n in 3usize..7) {
        let mut r = rng(seed);
        let w = loop {
            let w = random_graph(&mut r, n, 0.7);
            if w.iter().any(|&v| v > 0.0) {
                break w;
            }
        };
        let net = SubjectNetwork::new("s0", w).unwrap();
        let (nodal, network) = metric_suite(&net, &MetricSettings::default()).unwrap();
        let atlas = NodeAtlas {
            labels: (0..n).map(|j| format!("N{j}")).collect(),
            coords_mm: (0..n).map(|j| [(seed % 7) as f64 * j as f64, (j * j) as f64, 2.0]).collect(),
        };
        // Reverse the node order: new node t is old node perm[t].
        let perm: Vec<usize> = (0..n).rev().collect();
        let pnet = net.permuted(&perm);
        let pick = |v: &Vec<f64>| perm.iter().map(|&o| v[o]).collect::<Vec<_>>();
        let pnodal = NodalMetrics {
            clustering: pick(&nodal.clustering),
            efficiency: pick(&nodal.efficiency),
            degree: pick(&nodal.degree),
            leverage: perm.iter().map(|&o| nodal.leverage[o]).collect(),
        };
        let patlas = NodeAtlas {
            labels: perm.iter().map(|&o| atlas.labels[o].clone()).collect(),
            coords_mm: perm.iter().map(|&o| atlas.coords_mm[o]).collect(),
        };
        let covs = subjects(&["s0"]);
        let a = build_dyad_table(&[net], &[(nodal, network.clone())], &covs, &compute_distances(&atlas).unwrap()).unwrap();
        let b = build_dyad_table(&[pnet], &[(pnodal, network)], &covs, &compute_distances(&patlas).unwrap()).unwrap();
        let key = |t: &DyadTable, relabel: &dyn Fn(usize) -> usize| -> Vec<String> {
            let mut v: Vec<String> = t.rows.iter().map(|row| {
                let (j, k) = (relabel(row.node_j), relabel(row.node_k));
                format!("{:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}", (j.min(k), j.max(k)), row.weight, row.clustering,
                    row.efficiency, row.degree_diff, row.leverage, row.modularity, row.dist)
            }).collect();
            v.sort();
            v
        };
        prop_assert_eq!(key(&a, &|j| j), key(&b, &|t| perm[t]));
    }
}

#[test]
fn same_seed_writes_identical_studies() {
    use netmix::study::{generate_synthetic_study, Truth};
    let tmp = tempfile::tempdir().unwrap();
    let read_all = |dir: &std::path::Path| -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<_> = ["atlas.csv", "subjects.csv", "truth.json", "covariates.csv"]
            .iter()
            .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap()))
            .collect();
        for e in std::fs::read_dir(dir.join("networks")).unwrap() {
            let p = e.unwrap().path();
            files.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()));
        }
        files.sort();
        files
    };
    for (name, seed) in [("a", 5), ("b", 5), ("c", 6)] {
        generate_synthetic_study(4, 8, &Truth::demo(), seed).unwrap().write(tmp.path().join(name)).unwrap();
    }
    let (a, b, c) = (read_all(&tmp.path().join("a")), read_all(&tmp.path().join("b")), read_all(&tmp.path().join("c")));
    assert_eq!(a.len(), 4 + 4);
    assert_eq!(a, b);
    assert_ne!(a, c);
}
