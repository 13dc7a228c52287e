#![allow(dead_code)]

use dvhpred::bundle::ModelBundle;
use dvhpred::config::{GridConfig, PipelineConfig};
use dvhpred::pipeline::{cmd_synth, cmd_train, FixtureLayout, Library};
use dvhpred::regress::AlgorithmId;

/// 100..6400 cGy in 100 cGy steps, three fast algorithms.
pub fn small_config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.grid = GridConfig { start_cgy: 100.0, step_cgy: 100.0, n_bins: 64 };
    c.synth.n_patients = 24;
    c.train.algorithms = vec![AlgorithmId::LR, AlgorithmId::EN, AlgorithmId::DT];
    c
}

pub const SMALL_TOML: &str = r#"
[grid]
start_cgy = 100.0
step_cgy = 100.0
n_bins = 64

[synth]
n_patients = 24

[train]
algorithms = ["LR", "EN", "DT"]
"#;

pub fn small_library(config: &PipelineConfig) -> Library {
    let dir = tempfile::tempdir().unwrap();
    let (cohort, _) = cmd_synth(config, dir.path(), FixtureLayout::Eclipse).unwrap();
    Library::new(config.dose_grid().unwrap(), cohort)
}

pub fn small_bundle() -> ModelBundle {
    let config = small_config();
    cmd_train(&small_library(&config), &config).unwrap().bundle
}
