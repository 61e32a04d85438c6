//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use netmix::dyaddesign::{CenteringRecord, ComponentKey, Covariate, DesignMatrices, RandomDesign};
use netmix::mixedfit::logistic;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Small mixed design: `subjects` groups with `rows` rows each, `p` fixed
/// columns (intercept first), a random intercept, one random slope and
/// `n_nodes` node indicators (each row touches two distinct nodes).
pub fn small_design(seed: u64, subjects: usize, rows: usize, p: usize, n_nodes: usize) -> DesignMatrices {
    let mut r = rng(seed);
    let n = subjects * rows;
    let x = DMatrix::from_fn(n, p, |_, c| if c == 0 { 1.0 } else { 0.0 });
    let mut x = x;
    for i in 0..n {
        for c in 1..p {
            x[(i, c)] = normal(&mut r);
        }
    }
    let mut dense = DMatrix::zeros(n, 2);
    let mut pairs = Vec::new();
    for i in 0..n {
        dense[(i, 0)] = 1.0;
        dense[(i, 1)] = normal(&mut r);
        if n_nodes > 0 {
            let j = r.random_range(0..n_nodes);
            let mut k = r.random_range(0..n_nodes - 1);
            if k >= j {
                k += 1;
            }
            pairs.push((j.min(k) as u32, j.max(k) as u32));
        }
    }
    let mut components = vec![ComponentKey::Intercept, ComponentKey::Slope(Covariate::Dist)];
    let mut component_of_column = vec![0, 1];
    let mut z_names = vec!["0".to_string(), "dist".to_string()];
    for j in 0..n_nodes {
        component_of_column.push(components.len());
        components.push(ComponentKey::Node(j));
        z_names.push(format!("node{}", j + 1));
    }
    let response: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    DesignMatrices {
        x,
        x_names: (0..p).map(|c| format!("x{c}")).collect(),
        z: RandomDesign {
            dense,
            pairs,
            node_column: (0..n_nodes).map(Some).collect(),
            n_node_columns: n_nodes,
        },
        z_names,
        component_of_column,
        components,
        groups: (0..subjects).map(|s| (s, s * rows..(s + 1) * rows)).collect(),
        response,
        source_rows: (0..n).collect(),
        centering: CenteringRecord::default(),
    }
}

/// Block-diagonal N×N marginal covariance `σ²(W⁻¹ + Z diag(τ/σ²) Zᵀ)`.
pub fn dense_v(d: &DesignMatrices, tau: &[f64], sigma2: f64, w: Option<&[f64]>) -> DMatrix<f64> {
    let n = d.n_rows();
    let z = d.z.to_dense();
    let mut v = DMatrix::zeros(n, n);
    for (_, rows) in &d.groups {
        for a in rows.clone() {
            for b in rows.clone() {
                let mut s = 0.0;
                for c in 0..z.ncols() {
                    s += z[(a, c)] * z[(b, c)] * tau[d.component_of_column[c]];
                }
                v[(a, b)] = s;
            }
        }
    }
    for i in 0..n {
        v[(i, i)] += sigma2 / w.map_or(1.0, |w| w[i]);
    }
    v
}

pub struct DenseReml {
    pub value: f64,
    pub beta: DVector<f64>,
    pub vinv: DMatrix<f64>,
}

/// −2 restricted log-likelihood evaluated directly from N×N matrices.
pub fn dense_reml(d: &DesignMatrices, y: &[f64], tau: &[f64], sigma2: f64, w: Option<&[f64]>) -> DenseReml {
    let n = d.n_rows();
    let p = d.p();
    let v = dense_v(d, tau, sigma2, w);
    let chol = v.clone().cholesky().expect("V positive definite");
    let logdet_v = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let vinv = chol.inverse();
    let x = &d.x;
    let xtvx = x.transpose() * &vinv * x;
    let c2 = xtvx.clone().cholesky().unwrap();
    let logdet_xtvx = 2.0 * c2.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let yv = DVector::from_column_slice(y);
    let beta = c2.solve(&(x.transpose() * &vinv * &yv));
    let r = &yv - x * &beta;
    let quad = (r.transpose() * &vinv * &r)[(0, 0)];
    let value = (n - p) as f64 * (2.0 * std::f64::consts::PI).ln() + logdet_v + logdet_xtvx + quad;
    DenseReml { value, beta, vinv }
}

/// Newton–Raphson logistic regression.
pub fn irls_logistic(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    for _ in 0..100 {
        let eta = x * &beta;
        let mu: Vec<f64> = eta.iter().map(|e| 1.0 / (1.0 + (-e).exp())).collect();
        let mut h = DMatrix::zeros(p, p);
        let mut g = DVector::zeros(p);
        for i in 0..x.nrows() {
            let wi = mu[i] * (1.0 - mu[i]);
            let xi = x.row(i).transpose();
            h += &xi * xi.transpose() * wi;
            g += &xi * (y[i] - mu[i]);
        }
        let step = h.cholesky().unwrap().solve(&g);
        beta += &step;
        if step.amax() < 1e-13 {
            break;
        }
    }
    beta
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden(mut a: f64, mut b: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

// ---- graph oracles -------------------------------------------------------

/// Random symmetric weighted graph on `n` nodes; each edge present with probability `density`.
pub fn random_graph(r: &mut ChaCha8Rng, n: usize, density: f64) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in j + 1..n {
            if r.random::<f64>() < density {
                let v = r.random_range(0.01..0.99);
                w[(j, k)] = v;
                w[(k, j)] = v;
            }
        }
    }
    w
}

pub fn is_connected(w: &DMatrix<f64>) -> bool {
    let n = w.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(j) = stack.pop() {
        for k in 0..n {
            if w[(j, k)] > 0.0 && !seen[k] {
                seen[k] = true;
                stack.push(k);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Seeded suite of connected weighted graphs with 2–5 nodes.
pub fn connected_suite(seed: u64, count: usize) -> Vec<DMatrix<f64>> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let n = r.random_range(2..=5);
        let w = random_graph(&mut r, n, 0.7);
        if is_connected(&w) {
            out.push(w);
        }
    }
    out
}

pub fn brute_degree(w: &DMatrix<f64>, i: usize) -> f64 {
    let mut s = 0.0;
    for j in 0..w.ncols() {
        s += w[(i, j)];
    }
    s
}

/// Onnela clustering by enumerating every ordered neighbour pair.
pub fn brute_clustering(w: &DMatrix<f64>, i: usize) -> f64 {
    let n = w.nrows();
    let max = w.iter().cloned().fold(0.0, f64::max);
    let kb = (0..n).filter(|&j| w[(i, j)] > 0.0).count();
    if kb < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for j in 0..n {
        for h in 0..n {
            if j != h && w[(i, j)] > 0.0 && w[(i, h)] > 0.0 && w[(j, h)] > 0.0 {
                s += (w[(i, j)] / max * w[(i, h)] / max * w[(j, h)] / max).powf(1.0 / 3.0);
            }
        }
    }
    s / (kb * (kb - 1)) as f64
}

/// Shortest path lengths by exhausting all simple paths (length = 1/w).
pub fn brute_paths(w: &DMatrix<f64>) -> DMatrix<f64> {
    fn walk(w: &DMatrix<f64>, at: usize, len: f64, seen: &mut Vec<bool>, best: &mut [f64]) {
        if len < best[at] {
            best[at] = len;
        }
        for k in 0..w.nrows() {
            if !seen[k] && w[(at, k)] > 0.0 {
                seen[k] = true;
                walk(w, k, len + 1.0 / w[(at, k)], seen, best);
                seen[k] = false;
            }
        }
    }
    let n = w.nrows();
    let mut d = DMatrix::from_element(n, n, f64::INFINITY);
    for s in 0..n {
        let mut best = vec![f64::INFINITY; n];
        let mut seen = vec![false; n];
        seen[s] = true;
        walk(w, s, 0.0, &mut seen, &mut best);
        for t in 0..n {
            d[(s, t)] = best[t];
        }
    }
    d
}

pub fn brute_efficiency(w: &DMatrix<f64>, i: usize) -> f64 {
    let d = brute_paths(w);
    let n = w.nrows();
    (0..n).filter(|&j| j != i).map(|j| 1.0 / d[(i, j)]).sum::<f64>() / (n - 1) as f64
}

pub fn brute_leverage(w: &DMatrix<f64>, i: usize) -> Option<f64> {
    let n = w.nrows();
    let ki = brute_degree(w, i);
    let nb: Vec<usize> = (0..n).filter(|&j| w[(i, j)] > 0.0).collect();
    if nb.is_empty() {
        return None;
    }
    let s: f64 = nb.iter().map(|&j| {
        let kj = brute_degree(w, j);
        (ki - kj) / (ki + kj)
    }).sum();
    Some(s / nb.len() as f64)
}

pub fn brute_path_length(w: &DMatrix<f64>) -> f64 {
    let d = brute_paths(w);
    let n = w.nrows();
    let mut v = Vec::new();
    for j in 0..n {
        for k in j + 1..n {
            if d[(j, k)].is_finite() {
                v.push(d[(j, k)]);
            }
        }
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Newman Q from the modularity-matrix form `(1/2m) Σ (A_ij − k_i k_j / 2m) δ(c_i, c_j)`.
pub fn brute_q(w: &DMatrix<f64>, part: &[usize]) -> f64 {
    let n = w.nrows();
    let two_m: f64 = w.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if part[i] == part[j] {
                q += w[(i, j)] - brute_degree(w, i) * brute_degree(w, j) / two_m;
            }
        }
    }
    q / two_m
}

/// Every set partition of `0..n` as restricted-growth label vectors.
pub fn all_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(i: usize, n: usize, cur: &mut Vec<usize>, max: usize, out: &mut Vec<Vec<usize>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for l in 0..=max + 1 {
            cur.push(l);
            rec(i + 1, n, cur, max.max(l), out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        let mut cur = vec![0];
        rec(1, n, &mut cur, 0, &mut out);
    }
    out
}

/// Best modularity over all partitions.
pub fn brute_max_q(w: &DMatrix<f64>) -> f64 {
    all_partitions(w.nrows()).iter().map(|p| brute_q(w, p)).fold(f64::NEG_INFINITY, f64::max)
}

// ---- small hand-built designs ---------------------------------------------

/// Design with fixed columns `x`, grouped in consecutive blocks of `rows`,
/// and (when `random_intercept`) a single random intercept.
pub fn grouped_design(x: DMatrix<f64>, y: Vec<f64>, rows: usize, random_intercept: bool) -> DesignMatrices {
    let n = x.nrows();
    let groups = n / rows;
    let q = usize::from(random_intercept);
    DesignMatrices {
        x_names: (0..x.ncols()).map(|c| if c == 0 { "intercept".to_string() } else { format!("x{c}") }).collect(),
        x,
        z: RandomDesign {
            dense: DMatrix::from_element(n, q, 1.0),
            pairs: Vec::new(),
            node_column: Vec::new(),
            n_node_columns: 0,
        },
        z_names: if random_intercept { vec!["0".into()] } else { vec![] },
        component_of_column: if random_intercept { vec![0] } else { vec![] },
        components: if random_intercept { vec![ComponentKey::Intercept] } else { vec![] },
        groups: (0..groups).map(|g| (g, g * rows..(g + 1) * rows)).collect(),
        response: y,
        source_rows: (0..n).collect(),
        centering: CenteringRecord::default(),
    }
}

/// Minimizes `f` over `[a, b]` by a coarse grid followed by golden-section polishing.
pub fn grid_golden(a: f64, b: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    let n = 80;
    let h = (b - a) / n as f64;
    let (mut best, mut arg) = (f64::INFINITY, a);
    for i in 0..=n {
        let t = a + h * i as f64;
        let v = f(t);
        if v < best {
            best = v;
            arg = t;
        }
    }
    golden((arg - h).max(a), (arg + h).min(b), 1e-10, f)
}

// ---- logistic oracles -------------------------------------------------------

/// Logistic data with a slope, a binary covariate and per-block offsets.
pub fn logistic_data(seed: u64, n: usize, offsets: &[f64], rows: usize) -> (DMatrix<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let x = DMatrix::from_fn(n, 3, |_, c| if c == 0 { 1.0 } else { 0.0 });
    let mut x = x;
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        x[(i, 1)] = normal(&mut r);
        x[(i, 2)] = f64::from(u8::from(r.random::<f64>() < 0.5));
        let off = offsets.get(i / rows).copied().unwrap_or(0.0);
        let p = logistic(0.3 + 0.8 * x[(i, 1)] - 0.6 * x[(i, 2)] + off);
        y.push(f64::from(u8::from(r.random::<f64>() < p)));
    }
    (x, y)
}

/// Independent PQL: dense working LMM, (log τ, log σ²) by nested grid + golden search.
pub fn brute_pql(x: &DMatrix<f64>, y: &[f64], rows: usize) -> (DVector<f64>, f64, f64) {
    let n = x.nrows();
    let mut eta: Vec<f64> = y.iter().map(|&v| { let m = (v + 0.5) / 2.0; (m / (1.0 - m)).ln() }).collect();
    let mut last = (DVector::zeros(x.ncols()), 0.0, 0.0);
    for _ in 0..200 {
        let mu: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
        let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
        let ys: Vec<f64> = (0..n).map(|i| eta[i] + (y[i] - mu[i]) / w[i]).collect();
        let d = grouped_design(x.clone(), ys.clone(), rows, true);
        // For fixed γ = τ/σ² the restricted likelihood is maximized at σ² = quad/(N − p).
        let profile = |lg: f64| {
            let unit = dense_reml(&d, &ys, &[lg.exp()], 1.0, Some(&w));
            let r = DVector::from_column_slice(&ys) - x * &unit.beta;
            let s2 = (r.transpose() * &unit.vinv * &r)[(0, 0)] / (n - x.ncols()) as f64;
            (s2, dense_reml(&d, &ys, &[lg.exp() * s2], s2, Some(&w)).value)
        };
        let lg = grid_golden(-14.0, 4.0, &|lg| profile(lg).1);
        let s2 = profile(lg).0;
        let tau = lg.exp() * s2;
        let fit = dense_reml(&d, &ys, &[tau], s2, Some(&w));
        let r = DVector::from_column_slice(&ys) - x * &fit.beta;
        let vr = &fit.vinv * r;
        eta = (x * &fit.beta).iter().copied().collect();
        for g in 0..n / rows {
            let b: f64 = tau * (g * rows..(g + 1) * rows).map(|i| vr[i]).sum::<f64>();
            for i in g * rows..(g + 1) * rows {
                eta[i] += b;
            }
        }
        let change = (&fit.beta - &last.0).amax().max((tau - last.1).abs()).max((s2 - last.2).abs());
        last = (fit.beta, tau, s2);
        if change < 1e-10 {
            break;
        }
    }
    last
}

