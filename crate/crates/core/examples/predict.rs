//! Predicted edge probability and strength across degree difference, with 95% intervals.
//!
//! ```bash
//! cargo run --example predict
//! ```

use netmix::dyaddesign::Covariate;
use netmix::error::Part;
use netmix::mixedfit::fit_two_part;
use netmix::pipeline::observed_range;
use netmix::predictsim::{predict_curve, PredictRequest};
use netmix::study::{generate_synthetic_study, Truth};

fn main() -> netmix::Result<()> {
    let study = generate_synthetic_study(20, 30, &Truth::demo(), 7)?;
    let fit = fit_two_part(&study.table, &study.spec)?;

    let grid: Vec<f64> = (0..=12).map(f64::from).collect();
    let mut req = PredictRequest::new(Covariate::DegreeDiff, grid);
    req.observed_range = observed_range(&study.table, Covariate::DegreeDiff);

    for part in [Part::Presence, Part::Strength] {
        let curve = predict_curve(&fit, part, &req)?;
        println!("{part} ({:?} scale, df = {})", curve.scale, curve.df);
        println!("   k   group 0                group 1");
        for (a, b) in curve.for_group(0.0).zip(curve.for_group(1.0)) {
            println!(
                "{:>4}   {:.3} [{:.3}, {:.3}]   {:.3} [{:.3}, {:.3}]",
                a.grid, a.point, a.lo, a.hi, b.point, b.lo, b.hi
            );
        }
        for w in &curve.warnings {
            println!("warning: {w}");
        }
    }
    Ok(())
}
