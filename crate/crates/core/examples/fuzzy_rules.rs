//! Train a fuzzy model, export one bin's rule base as text, edit it and
//! load it back.
//!
//! cargo run --release --example fuzzy_rules

use dvhpred::dvh::{DoseGrid, Organ};
use dvhpred::frbp::{apply_rules, bin_rules, frbp_train, parse_rules, rules_to_text, FrbpParams};
use dvhpred::regress::predict_dvh;
use dvhpred::synth::{synth_cohort, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = DoseGrid::new(100.0, 100.0, 64)?;
    let cohort = synth_cohort(&SynthConfig { n_patients: 60, ..SynthConfig::default() }, &grid)?;
    let mut model = frbp_train(Organ::Bladder, &cohort, &FrbpParams::default(), 7)?;
    let partitions = model.partitions.clone().expect("fuzzy models keep their partitions");

    for p in &partitions {
        let labels: Vec<&str> = p.sets.iter().map(|s| s.label.as_str()).collect();
        println!("partition {}: {}", p.feature_index, labels.join(", "));
    }

    let bin = grid.bin_of(4000.0).expect("4000 cGy is on the grid");
    let rules = bin_rules(&cohort, Organ::Bladder, &partitions, bin)?;
    let text = rules_to_text(&rules, &partitions, "dose_cgy = 4000");
    println!("\n{} rules at 4000 cGy, first three:", rules.len());
    for line in text.lines().take(4) {
        println!("{line}");
    }

    // An expert caps every rule at 20 %.
    let mut edited = parse_rules(&text, &partitions)?;
    for r in &mut edited {
        r.consequent = r.consequent.min(20.0);
    }
    let features = cohort[0].features;
    let before = predict_dvh(&model, &features).values()[bin];
    apply_rules(&mut model, bin, &edited)?;
    let after = predict_dvh(&model, &features).values()[bin];
    println!("\nV4000 for {}: {before:.2}% -> {after:.2}% after capping", cohort[0].case_id);
    Ok(())
}
