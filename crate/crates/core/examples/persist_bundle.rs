//! Save a trained bundle, load it back and check that it predicts the same.
//!
//! cargo run --release --example persist_bundle

use dvhpred::bundle::{sidecar_path, ModelBundle};
use dvhpred::config::{GridConfig, PipelineConfig};
use dvhpred::dvh::Organ;
use dvhpred::pipeline::{cmd_train, Library};
use dvhpred::regress::AlgorithmId;
use dvhpred::synth::synth_cohort;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = PipelineConfig::default();
    config.grid = GridConfig { start_cgy: 100.0, step_cgy: 100.0, n_bins: 64 };
    config.synth.n_patients = 40;
    config.train.algorithms = vec![AlgorithmId::LR, AlgorithmId::DT, AlgorithmId::MLP];

    let grid = config.dose_grid()?;
    let cohort = synth_cohort(&config.synth, &grid)?;
    let bundle = cmd_train(&Library::new(grid, cohort.clone()), &config)?.bundle;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.dvhb");
    bundle.save(&path)?;
    println!("{} bytes, sidecar {}", std::fs::metadata(&path)?.len(), sidecar_path(&path).display());
    println!("{}", std::fs::read_to_string(sidecar_path(&path))?.lines().take(6).collect::<Vec<_>>().join("\n"));

    let loaded = ModelBundle::load(&path)?;
    assert_eq!(loaded.meta.fingerprint, bundle.meta.fingerprint);
    let mut compared = 0;
    for organ in Organ::ALL {
        for alg in bundle.roster(organ) {
            for r in &cohort {
                assert_eq!(bundle.predict(alg, organ, &r.features)?, loaded.predict(alg, organ, &r.features)?);
                compared += 1;
            }
        }
    }
    println!("fingerprint {} ok, {compared} predictions identical", loaded.meta.fingerprint);

    let mut bytes = std::fs::read(&path)?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    println!("flipped byte: {}", ModelBundle::from_bytes(&bytes).unwrap_err());
    Ok(())
}
