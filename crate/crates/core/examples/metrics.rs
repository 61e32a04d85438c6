//! Graph metrics for one weighted network.
//!
//! ```bash
//! cargo run --example metrics
//! ```

use netmix::graphmetrics::{metric_suite, MetricSettings};
use netmix::study::{generate_synthetic_study, Truth};

fn main() -> netmix::Result<()> {
    let study = generate_synthetic_study(2, 20, &Truth::demo(), 3)?;
    let net = &study.networks[0];
    let (nodal, whole) = metric_suite(net, &MetricSettings::default())?;

    println!("subject {} — {} nodes, {} edges", net.subject_id, net.n(), net.n_edges());
    println!("node  clustering  efficiency  degree  leverage");
    for j in 0..net.n() {
        let lev = nodal.leverage[j].map_or("   n/a".to_string(), |v| format!("{v:>8.3}"));
        println!(
            "{j:>4}  {:>10.3}  {:>10.3}  {:>6.2}  {lev}",
            nodal.clustering[j], nodal.efficiency[j], nodal.degree[j]
        );
    }
    println!(
        "C = {:.3}  Eglob = {:.3}  L = {:.3} ({} disconnected pairs)  K = {:.2}  l = {:.3}  Q = {:.3}",
        whole.clustering,
        whole.global_efficiency,
        whole.path_length,
        whole.disconnected_pairs,
        whole.mean_degree,
        whole.leverage,
        whole.modularity
    );
    Ok(())
}
