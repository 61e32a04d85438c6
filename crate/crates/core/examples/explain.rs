//! Fit the two-part model and print the parameter table with interpretations.
//!
//! ```bash
//! cargo run --example explain
//! ```

use netmix::inference::explain_report;
use netmix::mixedfit::{fit_two_part, refit_reduced};
use netmix::study::{generate_synthetic_study, Truth};

fn main() -> netmix::Result<()> {
    let study = generate_synthetic_study(20, 30, &Truth::demo(), 7)?;
    let full = fit_two_part(&study.table, &study.spec)?;
    println!("{}", full.convergence_report());

    // Terms whose variance sits at zero are dropped before reporting.
    let reduced = refit_reduced(&study.table, &full)?;
    for part in [&reduced.presence.lmm, &reduced.strength] {
        for (label, (tau, at_bound)) in part.vc.labels('·').iter().zip(part.vc.tau.iter().zip(&part.vc.at_bound)) {
            if !at_bound {
                println!("{label:<16} {tau:.4e}");
            }
        }
    }

    let report = explain_report(&reduced, 0.05)?;
    print!("{}", report.to_text());
    Ok(())
}
