//! Simulate networks from a fit and compare their metrics with the observed ones.
//!
//! ```bash
//! cargo run --example simulate_gof
//! ```

use netmix::mixedfit::fit_two_part;
use netmix::predictsim::{gof_compare, simulate_networks, CovariateSource, SimulationOptions};
use netmix::study::{generate_synthetic_study, Truth};

fn main() -> netmix::Result<()> {
    let study = generate_synthetic_study(20, 30, &Truth::demo(), 7)?;
    let fit = fit_two_part(&study.table, &study.spec)?;

    let opts = SimulationOptions::new(200, 42);
    let ensemble = simulate_networks(&fit, &CovariateSource::observed(study.table.clone()), &opts)?;
    let table = gof_compare("Synthetic", &study.networks, &ensemble)?;
    print!("{}", table.to_csv());

    // Same seed, same networks, whatever the thread count.
    let again = simulate_networks(&fit, &CovariateSource::observed(study.table.clone()), &opts)?;
    assert_eq!(again.networks, ensemble.networks);

    // A single "average group-1 subject" as the covariate source.
    let avg = CovariateSource::group_mean(&study.table, 1)?;
    let ensemble = simulate_networks(&fit, &avg, &SimulationOptions::new(50, 43))?;
    let edges: f64 = ensemble.networks.iter().map(|n| n.n_edges() as f64).sum::<f64>() / 50.0;
    println!("mean edges in networks of an average group-1 subject: {edges:.1}");
    Ok(())
}
