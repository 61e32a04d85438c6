//! Dyad-wise thresholding: test whether each dyad's mean strength departs from
//! the model baseline, then mask weak weights in dyads that do not.
//!
//! ```bash
//! cargo run --example threshold
//! ```

use netmix::dyaddesign::FixedTerm;
use netmix::inference::{dyad_threshold_test, mask_networks, ThresholdOptions};
use netmix::study::{generate_synthetic_study, Truth};

fn main() -> netmix::Result<()> {
    let truth = Truth::demo();
    let base = generate_synthetic_study(20, 30, &truth, 5)?;

    // Plant two dyads whose strength sits 0.5 above baseline.
    let planted = [(0, 1), (2, 9)];
    let mut spec = base.spec.clone();
    let mut planted_truth = truth.clone();
    for &(j, k) in &planted {
        spec.fixed.push(FixedTerm::Dyad(j, k));
        planted_truth.strength.beta.insert(format!("dyad({j},{k})"), 0.5);
    }
    let study = base.with_model(spec, planted_truth, 6)?;

    let dyads: Vec<(usize, usize)> = (0..3).flat_map(|j| (j + 1..12).map(move |k| (j, k))).collect();
    let report = dyad_threshold_test(&study.table, &base.spec, &dyads, &ThresholdOptions::default())?;
    print!("{}", report.to_csv());

    let kept: Vec<_> = dyads.iter().filter(|d| !report.candidates().contains(d)).collect();
    println!("retained dyads: {kept:?} (planted: {planted:?})");

    let masked = mask_networks(&study.networks, &report, 0.2);
    let before: usize = study.networks.iter().map(|n| n.n_edges()).sum();
    let after: usize = masked.iter().map(|n| n.n_edges()).sum();
    println!("edges before/after masking weights below 0.2: {before} / {after}");
    Ok(())
}
