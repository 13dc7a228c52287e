//! TOML configuration for the pipeline and the clinical constraint set.
//!
//! Every key is optional; see `config/pipeline.toml` for the full list with
//! defaults and `config/constraints.toml` for the constraint layout.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dvh::{CumulativeDvh, DoseGrid, Organ};
use crate::frbp::FrbpParams;
use crate::ingest::{PiiPatterns, StructureNameRules};
use crate::regress::{AlgorithmId, BoostParams, ElasticNetParams, ForestParams, Hyperparams, MlpParams, TreeParams};
use crate::synth::SynthConfig;
use crate::weibull::BandParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.display().to_string(), message: e.to_string() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub start_cgy: f64,
    pub step_cgy: f64,
    pub n_bins: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        let g = DoseGrid::canonical();
        Self { start_cgy: g.start_cgy, step_cgy: g.step_cgy, n_bins: g.n_bins }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithms: Vec<AlgorithmId>,
    /// Fraction of the library used for training; the rest is the test part.
    pub train_ratio: f64,
    /// Grid-search each algorithm before the final fit.
    pub tune: bool,
    pub cv_folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { algorithms: AlgorithmId::BASE.to_vec(), train_ratio: 0.7, tune: false, cv_folds: 5 }
    }
}

/// Untuned hyperparameters per algorithm.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperparamsConfig {
    pub en: ElasticNetParams,
    pub dt: TreeParams,
    pub rf: ForestParams,
    pub gbr: BoostParams,
    pub mlp: MlpParams,
    pub frbp: FrbpParams,
}

impl HyperparamsConfig {
    pub fn for_algorithm(&self, algorithm: AlgorithmId) -> Option<Hyperparams> {
        Some(match algorithm {
            AlgorithmId::LR => Hyperparams::LR,
            AlgorithmId::EN => Hyperparams::EN(self.en),
            AlgorithmId::DT => Hyperparams::DT(self.dt),
            AlgorithmId::RF => Hyperparams::RF(self.rf),
            AlgorithmId::GBR => Hyperparams::GBR(self.gbr),
            AlgorithmId::MLP => Hyperparams::MLP(self.mlp.clone()),
            AlgorithmId::FRBP => Hyperparams::FRBP(self.frbp.clone()),
            AlgorithmId::Ensemble3 | AlgorithmId::Ensemble6 => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub rules: StructureNameRules,
    pub pii_patterns: PiiPatterns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub ingest: IngestConfig,
    pub train: TrainConfig,
    pub hyperparams: HyperparamsConfig,
    pub band: BandParams,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            grid: GridConfig::default(),
            ingest: IngestConfig::default(),
            train: TrainConfig::default(),
            hyperparams: HyperparamsConfig::default(),
            band: BandParams::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let c: Self = read_toml(path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: "<string>".into(), message: e.to_string() })?;
        c.validate()?;
        Ok(c)
    }

    pub fn dose_grid(&self) -> Result<DoseGrid, ConfigError> {
        DoseGrid::new(self.grid.start_cgy, self.grid.step_cgy, self.grid.n_bins)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.dose_grid()?;
        if !(self.train.train_ratio > 0.0 && self.train.train_ratio < 1.0) {
            return bad(format!("train.train_ratio must be in (0, 1), got {}", self.train.train_ratio));
        }
        if self.train.cv_folds < 2 {
            return bad("train.cv_folds must be >= 2".into());
        }
        if self.train.algorithms.is_empty() {
            return bad("train.algorithms is empty".into());
        }
        for a in &self.train.algorithms {
            let Some(p) = self.hyperparams.for_algorithm(*a) else {
                return bad(format!("{a} is built from the trained models and cannot be listed for training"));
            };
            p.validate()
                .map_err(|e| ConfigError::Invalid(format!("hyperparams.{}: {e}", a.as_str().to_lowercase())))?;
        }
        if !(self.band.confidence > 0.0 && self.band.confidence < 1.0) {
            return bad("band.confidence must be in (0, 1)".into());
        }
        self.ingest.rules.validate().map_err(ConfigError::Invalid)?;
        self.synth.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraint {
    pub dose_cgy: f64,
    pub max_volume_pct: f64,
}

/// Dose-volume limits per organ: at `dose_cgy` at most `max_volume_pct`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintSet {
    pub bladder: Vec<Constraint>,
    pub rectum: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFlag {
    pub dose_cgy: f64,
    pub max_volume_pct: f64,
    pub predicted_pct: f64,
    pub pass: bool,
}

impl ConstraintSet {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        read_toml(path)
    }

    pub fn for_organ(&self, organ: Organ) -> &[Constraint] {
        match organ {
            Organ::Bladder => &self.bladder,
            Organ::Rectum => &self.rectum,
        }
    }

    /// Every dose must be readable on `grid` and every limit a percentage.
    pub fn validate(&self, grid: &DoseGrid) -> Result<(), ConfigError> {
        for organ in Organ::ALL {
            for c in self.for_organ(organ) {
                if !(0.0..=grid.max_dose()).contains(&c.dose_cgy) {
                    return Err(ConfigError::Invalid(format!(
                        "{organ} constraint at {} cGy is outside 0..={} cGy",
                        c.dose_cgy,
                        grid.max_dose()
                    )));
                }
                if !(0.0..=100.0).contains(&c.max_volume_pct) {
                    return Err(ConfigError::Invalid(format!(
                        "{organ} constraint limit {} is not a percentage",
                        c.max_volume_pct
                    )));
                }
            }
        }
        Ok(())
    }

    /// Pass/fail per constraint of `organ`. Doses off the curve's range fail.
    pub fn check(&self, organ: Organ, curve: &CumulativeDvh) -> Vec<ConstraintFlag> {
        self.for_organ(organ)
            .iter()
            .map(|c| {
                let v = curve.value_at(c.dose_cgy).unwrap_or(f64::NAN);
                ConstraintFlag {
                    dose_cgy: c.dose_cgy,
                    max_volume_pct: c.max_volume_pct,
                    predicted_pct: v,
                    pass: v <= c.max_volume_pct,
                }
            })
            .collect()
    }

    pub fn by_organ(&self) -> BTreeMap<Organ, Vec<Constraint>> {
        Organ::ALL.iter().map(|o| (*o, self.for_organ(*o).to_vec())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_default() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn shipped_files_parse() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("config");
        let p = PipelineConfig::load(&root.join("pipeline.toml")).unwrap();
        assert_eq!(p, PipelineConfig::default());
        let c = ConstraintSet::load(&root.join("constraints.toml")).unwrap();
        c.validate(&DoseGrid::canonical()).unwrap();
        assert!(!c.rectum.is_empty() && !c.bladder.is_empty());
    }

    #[test]
    fn partial_overrides() {
        let c = PipelineConfig::from_toml(
            "seed = 7\n[train]\nalgorithms = [\"LR\", \"RF\"]\n[hyperparams.rf]\nn_trees = 10\nmax_features = \"third\"\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.algorithms, vec![AlgorithmId::LR, AlgorithmId::RF]);
        assert_eq!(c.hyperparams.rf.n_trees, 10);
        assert_eq!(c.hyperparams.rf.max_depth, ForestParams::default().max_depth);
    }

    #[test]
    fn invalid_configs() {
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
        assert!(PipelineConfig::from_toml("[train]\ntrain_ratio = 1.0").is_err());
        assert!(PipelineConfig::from_toml("[train]\nalgorithms = [\"Ensemble3\"]").is_err());
        assert!(PipelineConfig::from_toml("[hyperparams.mlp]\nepochs = 10\nhidden = []").is_err());
    }

    #[test]
    fn constraint_flags() {
        let g = DoseGrid::new(1000.0, 1000.0, 6).unwrap();
        let curve = CumulativeDvh::new(g, vec![90.0, 70.0, 50.0, 30.0, 10.0, 4.0]).unwrap();
        let set = ConstraintSet {
            rectum: vec![
                Constraint { dose_cgy: 6000.0, max_volume_pct: 5.0 },
                Constraint { dose_cgy: 3000.0, max_volume_pct: 40.0 },
            ],
            bladder: vec![],
        };
        let flags = set.check(Organ::Rectum, &curve);
        assert!(flags[0].pass && flags[0].predicted_pct == 4.0);
        assert!(!flags[1].pass);
        assert!(set.check(Organ::Bladder, &curve).is_empty());
        let far = ConstraintSet { bladder: vec![Constraint { dose_cgy: 7000.0, max_volume_pct: 5.0 }], rectum: vec![] };
        assert!(far.validate(&DoseGrid::canonical()).is_err());
    }
}
