//! Weibull confidence band of a cohort and its coverage on new patients.
//!
//! cargo run --release --example weibull_band

use dvhpred::dvh::{CumulativeDvh, DoseGrid, Organ};
use dvhpred::synth::{synth_cohort, SynthConfig};
use dvhpred::weibull::{band_coverage, build_band, BandParams, FitStatus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = DoseGrid::canonical();
    let cohort = synth_cohort(&SynthConfig { n_patients: 94, ..SynthConfig::default() }, &grid)?;
    let fresh = synth_cohort(&SynthConfig { seed: 99, n_patients: 50, ..SynthConfig::default() }, &grid)?;

    for organ in [Organ::Bladder, Organ::Rectum] {
        let curves: Vec<CumulativeDvh> = cohort.iter().map(|r| r.curve(organ).clone()).collect();
        let band = build_band(&curves, &BandParams::default())?;
        let fitted = band.fit_status.iter().filter(|s| **s == FitStatus::Fitted).count();
        let others: Vec<CumulativeDvh> = fresh.iter().map(|r| r.curve(organ).clone()).collect();
        println!("{organ}: {fitted}/{} bins fitted", band.fit_status.len());
        for dose in [2000.0, 4000.0, 5300.0, 6000.0] {
            let b = grid.bin_of(dose).expect("dose on the grid");
            println!("  {dose:>6.0} cGy: [{:6.2}, {:6.2}] %", band.lower[b], band.upper[b]);
        }
        println!("  training coverage {:.3}", band_coverage(&band, &curves)?);
        println!("  new-patient coverage {:.3}", band_coverage(&band, &others)?);
    }
    Ok(())
}
