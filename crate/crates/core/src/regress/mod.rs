//! Per-dose-bin regression: one single-output model per grid bin, shared
//! feature standardisation, and the whole-curve prediction wrapper.

pub mod linear;
pub mod mlp;
pub mod tree;
pub mod tuning;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dvh::{CumulativeDvh, DoseGrid, FeatureVector, Organ, PatientRecord};
use crate::frbp::{sample_memberships, FrbpParams, FuzzyDecisionTree, FuzzyPartition, SampleMemberships};

pub use linear::{fit_elastic_net, fit_ols, ElasticNetParams, LinearModel};
pub use mlp::{fit_mlp, Mlp, MlpParams, Network};
pub use tree::{
    fit_cart, fit_gbr, fit_random_forest, BoostParams, BoostedTrees, FeatureSubset, Forest, ForestParams,
    RegressionTree, TreeParams,
};
pub use tuning::{default_grid, grid_search_cv, CvScore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training data: {0}")]
    InvalidInput(String),
    #[error("normal equations are singular even after jitter")]
    SingularSystem,
    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),
    #[error("coordinate descent did not converge in {max_iter} iterations")]
    NotConverged { max_iter: usize },
    #[error("training loss became non-finite")]
    DivergedLoss,
    #[error("feature {0} is constant across the cohort")]
    ConstantFeature(usize),
    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("{0} is a composite of trained models and is not fitted directly")]
    NotTrainable(AlgorithmId),
    #[error("hyperparameters for {got} given to {expected}")]
    ParamsMismatch { expected: AlgorithmId, got: AlgorithmId },
    #[error("dose bin {bin}: {source}")]
    Bin { bin: usize, source: Box<FitError> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AlgorithmId {
    LR,
    EN,
    DT,
    RF,
    GBR,
    MLP,
    FRBP,
    Ensemble3,
    Ensemble6,
}

impl AlgorithmId {
    /// Declaration order; also the final tie-break in model ranking.
    pub const ALL: [AlgorithmId; 9] =
        [Self::LR, Self::EN, Self::DT, Self::RF, Self::GBR, Self::MLP, Self::FRBP, Self::Ensemble3, Self::Ensemble6];

    /// The directly trainable models.
    pub const BASE: [AlgorithmId; 7] = [Self::LR, Self::EN, Self::DT, Self::RF, Self::GBR, Self::MLP, Self::FRBP];

    pub fn is_ensemble(self) -> bool {
        matches!(self, Self::Ensemble3 | Self::Ensemble6)
    }

    /// Number of members averaged by an ensemble.
    pub fn ensemble_size(self) -> Option<usize> {
        match self {
            Self::Ensemble3 => Some(3),
            Self::Ensemble6 => Some(6),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LR => "LR",
            Self::EN => "EN",
            Self::DT => "DT",
            Self::RF => "RF",
            Self::GBR => "GBR",
            Self::MLP => "MLP",
            Self::FRBP => "FRBP",
            Self::Ensemble3 => "Ensemble3",
            Self::Ensemble6 => "Ensemble6",
        }
    }
}

impl fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlgorithmId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

/// Algorithm-specific hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Hyperparams {
    LR,
    EN(ElasticNetParams),
    DT(TreeParams),
    RF(ForestParams),
    GBR(BoostParams),
    MLP(MlpParams),
    FRBP(FrbpParams),
}

impl Hyperparams {
    pub fn algorithm(&self) -> AlgorithmId {
        match self {
            Self::LR => AlgorithmId::LR,
            Self::EN(_) => AlgorithmId::EN,
            Self::DT(_) => AlgorithmId::DT,
            Self::RF(_) => AlgorithmId::RF,
            Self::GBR(_) => AlgorithmId::GBR,
            Self::MLP(_) => AlgorithmId::MLP,
            Self::FRBP(_) => AlgorithmId::FRBP,
        }
    }

    pub fn default_for(algorithm: AlgorithmId) -> Result<Self, FitError> {
        Ok(match algorithm {
            AlgorithmId::LR => Self::LR,
            AlgorithmId::EN => Self::EN(ElasticNetParams::default()),
            AlgorithmId::DT => Self::DT(TreeParams::default()),
            AlgorithmId::RF => Self::RF(ForestParams::default()),
            AlgorithmId::GBR => Self::GBR(BoostParams::default()),
            AlgorithmId::MLP => Self::MLP(MlpParams::default()),
            AlgorithmId::FRBP => Self::FRBP(FrbpParams::default()),
            a => return Err(FitError::NotTrainable(a)),
        })
    }

    pub fn validate(&self) -> Result<(), FitError> {
        match self {
            Self::LR => Ok(()),
            Self::EN(p) => p.validate(),
            Self::DT(p) => p.validate(),
            Self::RF(p) => p.validate(),
            Self::GBR(p) => p.validate(),
            Self::MLP(p) => p.validate(),
            Self::FRBP(p) => p.validate(),
        }
    }
}

/// Per-feature `(mean, sample std)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, FitError> {
        if rows.len() < 2 {
            return Err(FitError::TooFewRecords { needed: 2, got: rows.len() });
        }
        let n = rows.len() as f64;
        let p = rows[0].len();
        let mut mean = vec![0.0; p];
        let mut std = vec![0.0; p];
        for j in 0..p {
            mean[j] = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let ss: f64 = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum();
            std[j] = (ss / (n - 1.0)).sqrt();
            if !(std[j] > 1e-12 * mean[j].abs().max(1.0)) {
                return Err(FitError::ConstantFeature(j));
            }
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

pub fn standardize_fit(features: &[FeatureVector]) -> Result<Standardizer, FitError> {
    let rows: Vec<Vec<f64>> = features.iter().map(|f| f.to_array().to_vec()).collect();
    Standardizer::fit(&rows)
}

/// One fitted single-output predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BinPredictor {
    Linear(LinearModel),
    Tree(RegressionTree),
    Forest(Forest),
    Boosted(BoostedTrees),
    Mlp(Mlp),
    Fuzzy(FuzzyDecisionTree),
}

impl BinPredictor {
    /// `memberships` is required by fuzzy trees and ignored otherwise.
    pub fn predict(&self, x: &[f64], memberships: Option<&SampleMemberships>) -> f64 {
        match self {
            Self::Linear(m) => m.predict(x),
            Self::Tree(m) => m.predict(x),
            Self::Forest(m) => m.predict(x),
            Self::Boosted(m) => m.predict(x),
            Self::Mlp(m) => m.predict(x),
            Self::Fuzzy(m) => m.predict_memberships(memberships.expect("fuzzy trees need set memberships")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedDvhModel {
    pub algorithm: AlgorithmId,
    pub organ: Organ,
    pub grid: DoseGrid,
    pub standardizer: Standardizer,
    pub per_bin_models: Vec<BinPredictor>,
    pub hyperparams: Hyperparams,
    /// Hex SHA-256 of the training data, hyperparameters and seed.
    pub training_fingerprint: String,
    /// Input partitions shared by every bin; fuzzy models only.
    #[serde(default)]
    pub partitions: Option<Vec<FuzzyPartition>>,
}

impl TrainedDvhModel {
    /// Per-bin outputs before any clamping or projection. Fuzzy models read
    /// raw volumes through their partitions; the others see standardised
    /// features.
    pub fn predict_raw(&self, features: &FeatureVector) -> Vec<f64> {
        let raw = features.to_array();
        let (x, mu) = match &self.partitions {
            Some(parts) => (raw.to_vec(), Some(sample_memberships(parts, &raw))),
            None => (self.standardizer.transform(&raw), None),
        };
        self.per_bin_models.iter().map(|m| m.predict(&x, mu.as_ref())).collect()
    }
}

/// Distinct, reproducible seed for each bin.
pub fn bin_seed(seed: u64, bin: usize) -> u64 {
    seed ^ (bin as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Per-bin targets: `targets[bin][patient]`.
pub fn bin_targets(cohort: &[PatientRecord], organ: Organ, grid: &DoseGrid) -> Result<Vec<Vec<f64>>, FitError> {
    for r in cohort {
        let g = r.curve(organ).grid();
        if g != grid {
            return Err(FitError::InvalidInput(format!("record `{}` is not on the training grid", r.case_id)));
        }
    }
    Ok((0..grid.n_bins).map(|b| cohort.iter().map(|r| r.curve(organ).values()[b]).collect()).collect())
}

pub fn training_fingerprint(organ: Organ, cohort: &[PatientRecord], params: &Hyperparams, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(params.algorithm().as_str().as_bytes());
    h.update(organ.as_str().as_bytes());
    h.update(seed.to_le_bytes());
    h.update(serde_json::to_vec(params).unwrap_or_default());
    for r in cohort {
        h.update(r.case_id.as_bytes());
        h.update([0]);
        for v in r.features.to_array() {
            h.update(v.to_le_bytes());
        }
        let c = r.curve(organ);
        h.update(serde_json::to_vec(c.grid()).unwrap_or_default());
        for v in c.values() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn fit_bin(params: &Hyperparams, x: &[Vec<f64>], y: &[f64], seed: u64) -> Result<BinPredictor, FitError> {
    Ok(match params {
        Hyperparams::LR => BinPredictor::Linear(fit_ols(x, y)?),
        Hyperparams::EN(p) => BinPredictor::Linear(fit_elastic_net(x, y, p)?),
        Hyperparams::DT(p) => BinPredictor::Tree(fit_cart(x, y, p)?),
        Hyperparams::RF(p) => BinPredictor::Forest(fit_random_forest(x, y, p, seed)?),
        Hyperparams::GBR(p) => BinPredictor::Boosted(fit_gbr(x, y, p)?),
        Hyperparams::MLP(p) => BinPredictor::Mlp(fit_mlp(x, y, p, seed)?),
        Hyperparams::FRBP(_) => unreachable!("fuzzy models are fitted by frbp_train"),
    })
}

/// Fits one model per grid bin of `organ`, all sharing one standardiser.
/// Bins are trained in parallel; the result does not depend on scheduling.
pub fn train_dvh_model(
    algorithm: AlgorithmId,
    organ: Organ,
    cohort: &[PatientRecord],
    params: &Hyperparams,
    seed: u64,
) -> Result<TrainedDvhModel, FitError> {
    if algorithm.is_ensemble() {
        return Err(FitError::NotTrainable(algorithm));
    }
    if params.algorithm() != algorithm {
        return Err(FitError::ParamsMismatch { expected: algorithm, got: params.algorithm() });
    }
    params.validate()?;
    let needed = FeatureVector::DIM + 1;
    if cohort.len() < needed {
        return Err(FitError::TooFewRecords { needed, got: cohort.len() });
    }
    if let Hyperparams::FRBP(p) = params {
        return crate::frbp::frbp_train(organ, cohort, p, seed);
    }
    let grid = *cohort[0].curve(organ).grid();
    let targets = bin_targets(cohort, organ, &grid)?;
    let features: Vec<FeatureVector> = cohort.iter().map(|r| r.features).collect();
    let standardizer = standardize_fit(&features)?;
    let x: Vec<Vec<f64>> = features.iter().map(|f| standardizer.transform(&f.to_array())).collect();

    let per_bin_models = targets
        .par_iter()
        .enumerate()
        .map(|(bin, y)| {
            fit_bin(params, &x, y, bin_seed(seed, bin)).map_err(|e| FitError::Bin { bin, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(TrainedDvhModel {
        algorithm,
        organ,
        grid,
        standardizer,
        per_bin_models,
        hyperparams: params.clone(),
        training_fingerprint: training_fingerprint(organ, cohort, params, seed),
        partitions: None,
    })
}

/// Whole-curve prediction: raw per-bin outputs are clamped to [0, 100] and
/// then projected onto non-increasing curves.
pub fn predict_dvh(model: &TrainedDvhModel, features: &FeatureVector) -> CumulativeDvh {
    let raw: Vec<f64> =
        model.predict_raw(features).into_iter().map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 100.0) }).collect();
    CumulativeDvh::from_raw(model.grid, raw).expect("model emits one value per grid bin")
}


#[cfg(test)]
mod tests {
    use super::testutil::toy_cohort;
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn standardizer_textbook() {
        let s = Standardizer::fit(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert_abs_diff_eq!(s.std[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn standardized_training_set_centred() {
        let cohort = toy_cohort(20, 4, 1);
        let feats: Vec<FeatureVector> = cohort.iter().map(|r| r.features).collect();
        let s = standardize_fit(&feats).unwrap();
        let z: Vec<Vec<f64>> = feats.iter().map(|f| s.transform(&f.to_array())).collect();
        for j in 0..6 {
            let m = z.iter().map(|r| r[j]).sum::<f64>() / 20.0;
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn constant_feature_rejected() {
        let rows = vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]];
        assert_eq!(Standardizer::fit(&rows), Err(FitError::ConstantFeature(1)));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in AlgorithmId::ALL {
            assert_eq!(a.as_str().parse::<AlgorithmId>().unwrap(), a);
        }
        assert_eq!("gbr".parse::<AlgorithmId>().unwrap(), AlgorithmId::GBR);
        assert!("svr".parse::<AlgorithmId>().is_err());
    }

    #[test]
    fn one_predictor_per_bin_and_monotone() {
        let cohort = toy_cohort(30, 12, 2);
        for alg in [AlgorithmId::LR, AlgorithmId::DT, AlgorithmId::GBR] {
            let p = Hyperparams::default_for(alg).unwrap();
            let m = train_dvh_model(alg, Organ::Rectum, &cohort, &p, 3).unwrap();
            assert_eq!(m.per_bin_models.len(), 12);
            let c = predict_dvh(&m, &cohort[0].features);
            assert!(CumulativeDvh::new(m.grid, c.values().to_vec()).is_ok());
        }
    }

    #[test]
    fn constant_cohort_reproduces_curve() {
        let mut cohort = toy_cohort(12, 8, 4);
        let fixed = cohort[0].curve(Organ::Bladder).clone();
        for r in &mut cohort {
            r.dvh.insert(Organ::Bladder, fixed.clone());
        }
        for alg in [AlgorithmId::LR, AlgorithmId::EN, AlgorithmId::RF, AlgorithmId::MLP] {
            let p = Hyperparams::default_for(alg).unwrap();
            let m = train_dvh_model(alg, Organ::Bladder, &cohort, &p, 5).unwrap();
            let c = predict_dvh(&m, &cohort[3].features);
            for (a, b) in c.values().iter().zip(fixed.values()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cohort = toy_cohort(15, 6, 6);
        let p = Hyperparams::default_for(AlgorithmId::RF).unwrap();
        let a = train_dvh_model(AlgorithmId::RF, Organ::Rectum, &cohort, &p, 9).unwrap();
        let b = train_dvh_model(AlgorithmId::RF, Organ::Rectum, &cohort, &p, 9).unwrap();
        assert_eq!(a, b);
        let c = train_dvh_model(AlgorithmId::RF, Organ::Rectum, &cohort, &p, 10).unwrap();
        assert_ne!(a.training_fingerprint, c.training_fingerprint);
    }

    #[test]
    fn training_preconditions() {
        let cohort = toy_cohort(6, 4, 7);
        assert!(matches!(
            train_dvh_model(AlgorithmId::LR, Organ::Rectum, &cohort, &Hyperparams::LR, 0),
            Err(FitError::TooFewRecords { needed: 7, got: 6 })
        ));
        let cohort = toy_cohort(10, 4, 7);
        assert!(matches!(
            train_dvh_model(AlgorithmId::EN, Organ::Rectum, &cohort, &Hyperparams::LR, 0),
            Err(FitError::ParamsMismatch { .. })
        ));
        assert!(matches!(
            train_dvh_model(AlgorithmId::Ensemble3, Organ::Rectum, &cohort, &Hyperparams::LR, 0),
            Err(FitError::NotTrainable(_))
        ));
    }
}
