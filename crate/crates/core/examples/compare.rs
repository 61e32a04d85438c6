//! Group comparison: classify how two groups differ and run custom Wald F tests.
//!
//! ```bash
//! cargo run --example compare
//! ```

use nalgebra::DMatrix;
use netmix::dyaddesign::{Covariate, FixedTerm};
use netmix::error::Part;
use netmix::inference::{explain_report, wald_f_test};
use netmix::mixedfit::fit_two_part;
use netmix::study::{generate_synthetic_study, Truth};

fn main() -> netmix::Result<()> {
    let study = generate_synthetic_study(20, 30, &Truth::demo(), 11)?;
    let fit = fit_two_part(&study.table, &study.spec)?;
    let report = explain_report(&fit, 0.05)?;
    for part in [Part::Presence, Part::Strength] {
        if let Some(pattern) = report.pattern(part) {
            println!("{part}: {} — {}", pattern.key(), pattern.description());
        }
    }

    // Joint test that the group effect does not depend on any network metric.
    let spec = fit.spec(Part::Strength);
    let lmm = fit.lmm(Part::Strength);
    let rows: Vec<usize> = spec
        .fixed
        .iter()
        .enumerate()
        .filter(|(_, t)| matches!(t, FixedTerm::CoiBy(c) if c.is_net()))
        .map(|(i, _)| i)
        .collect();
    let mut l = DMatrix::zeros(rows.len(), lmm.p());
    for (r, &i) in rows.iter().enumerate() {
        l[(r, i)] = 1.0;
    }
    let joint = wald_f_test(lmm, &l)?;
    println!("strength, all group × metric terms: F({}, {}) = {:.3}, p = {}", joint.df1, joint.df2, joint.f, netmix::inference::format_p(joint.p));

    // Group-1 slope of degree difference: β_k + β_coi×k.
    let k = spec.fixed.iter().position(|t| *t == FixedTerm::Main(Covariate::DegreeDiff)).expect("k in model");
    let ck = spec.fixed.iter().position(|t| *t == FixedTerm::CoiBy(Covariate::DegreeDiff)).expect("coi:k in model");
    let mut l = DMatrix::zeros(1, lmm.p());
    l[(0, k)] = 1.0;
    l[(0, ck)] = 1.0;
    let slope = wald_f_test(lmm, &l)?;
    println!("strength, group-1 slope of k: {:.4} (SE {:.4}), p = {}", slope.estimate, slope.se, netmix::inference::format_p(slope.p));
    Ok(())
}
