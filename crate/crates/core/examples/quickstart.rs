//! Synthetic cohort, three fast models, one prediction.
//!
//! cargo run --release --example quickstart

use dvhpred::config::{ConstraintSet, GridConfig, PipelineConfig};
use dvhpred::dvh::Organ;
use dvhpred::eval::report_csv;
use dvhpred::pipeline::{cmd_train, predict_case, Library, PredictRequest};
use dvhpred::regress::AlgorithmId;
use dvhpred::synth::synth_cohort;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = PipelineConfig::default();
    config.grid = GridConfig { start_cgy: 100.0, step_cgy: 100.0, n_bins: 64 };
    config.synth.n_patients = 40;
    config.train.algorithms = vec![AlgorithmId::LR, AlgorithmId::EN, AlgorithmId::DT];

    let grid = config.dose_grid()?;
    let cohort = synth_cohort(&config.synth, &grid)?;
    let outcome = cmd_train(&Library::new(grid, cohort.clone()), &config)?;
    println!("trained on {}, tested on {}", outcome.n_train, outcome.n_test);
    for organ in Organ::ALL {
        let reports: Vec<_> = outcome.test_reports.iter().filter(|r| r.organ == organ).cloned().collect();
        println!("== {organ}");
        print!("{}", report_csv(&reports));
    }

    let request = PredictRequest { features: cohort[0].features, organ: Organ::Rectum, algorithms: vec![] };
    let resp = predict_case(&outcome.bundle, &ConstraintSet::default(), &request)?;
    for (alg, points) in &resp.point_doses {
        let v: Vec<String> = points.iter().map(|p| format!("V{:.0}={:.1}%", p.dose_cgy, p.volume_pct)).collect();
        println!("{alg:>10}: {}", v.join("  "));
    }
    let actual = cohort[0].curve(Organ::Rectum);
    println!("    actual: V5300={:.1}%", actual.value_at(5300.0)?);
    Ok(())
}
