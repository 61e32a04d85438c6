//! A plain linear mixed model: one-way random-intercept data fitted by REML.
//!
//! ```bash
//! cargo run --example reml_basics
//! ```

use netmix::dyaddesign::{build_design, Covariate, FixedTerm, ModelSpec, NodeVariance, RandomTerm, Response};
use netmix::mixedfit::reml_fit;
use netmix::study::{generate_synthetic_study, Truth};

fn main() -> netmix::Result<()> {
    let study = generate_synthetic_study(20, 15, &Truth::demo(), 2)?;
    // Strength on distance with a subject intercept and a distance slope.
    let spec = ModelSpec {
        coi_label: "age".into(),
        fixed: vec![FixedTerm::Intercept, FixedTerm::Main(Covariate::Dist)],
        random: vec![RandomTerm::Intercept, RandomTerm::Slope(Covariate::Dist)],
        node_variance: NodeVariance::PerNode,
        excluded_nodes: vec![],
        response: Response::Strength,
    };
    let design = build_design(&study.table, &spec)?;
    let fit = reml_fit(&design, &design.response, None)?;
    println!("{} rows, REML log-likelihood {:.3}", fit.n_rows, fit.reml_loglik);
    for ((name, b), se) in fit.x_names.iter().zip(&fit.beta).zip(fit.std_errors()) {
        println!("{name:<10} {b:>8.4} ({se:.4})");
    }
    for (label, tau) in fit.vc.labels('s').iter().zip(&fit.vc.tau) {
        println!("{label:<10} {tau:.3e}");
    }
    println!("σ²_ε       {:.3e}", fit.vc.sigma2);
    Ok(())
}
