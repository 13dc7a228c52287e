//! Cross-validated hyperparameter search for one algorithm.
//!
//! cargo run --release --example grid_search

use dvhpred::dvh::{DoseGrid, Organ};
use dvhpred::regress::{default_grid, grid_search_cv, AlgorithmId};
use dvhpred::synth::{synth_cohort, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = DoseGrid::new(100.0, 100.0, 64)?;
    let cohort = synth_cohort(&SynthConfig { n_patients: 50, ..SynthConfig::default() }, &grid)?;
    let candidates = default_grid(AlgorithmId::EN);
    let (best, table) = grid_search_cv(Organ::Bladder, &cohort, &candidates, 5, 42)?;
    for s in &table {
        println!("{:8.4}  {}", s.score, serde_json::to_string(&s.params)?);
    }
    println!("best: {}", serde_json::to_string(&best)?);
    Ok(())
}
