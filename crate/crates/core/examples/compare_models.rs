//! Train several algorithms and compare them on a held-out cohort with band
//! errors and Kruskal-Wallis tests.
//!
//! cargo run --release --example compare_models

use dvhpred::config::{GridConfig, PipelineConfig};
use dvhpred::eval::{kruskal_csv, report_csv};
use dvhpred::pipeline::{cmd_evaluate, cmd_train, Library};
use dvhpred::regress::AlgorithmId;
use dvhpred::synth::{synth_cohort, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = PipelineConfig::default();
    config.grid = GridConfig { start_cgy: 100.0, step_cgy: 100.0, n_bins: 64 };
    config.synth.n_patients = 60;
    config.train.algorithms =
        vec![AlgorithmId::LR, AlgorithmId::EN, AlgorithmId::DT, AlgorithmId::RF, AlgorithmId::FRBP];

    let grid = config.dose_grid()?;
    let train = synth_cohort(&config.synth, &grid)?;
    let validation = synth_cohort(&SynthConfig { seed: 1000, n_patients: 30, ..config.synth.clone() }, &grid)?;

    let bundle = cmd_train(&Library::new(grid, train), &config)?.bundle;
    let outcome = cmd_evaluate(&bundle, &validation, "validation")?;
    for (organ, reports) in &outcome.reports {
        println!("== {organ}");
        print!("{}", report_csv(reports));
        print!("{}", kruskal_csv(&outcome.kruskal[organ]));
    }
    Ok(())
}
