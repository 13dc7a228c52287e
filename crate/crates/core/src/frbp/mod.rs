//! Fuzzy rule-based prediction: per-feature fuzzy partitions, a linguistic
//! rule base per dose bin, and a fuzzy decision tree per dose bin.
//!
//! Partitions are fitted once on the raw training features and shared by
//! every bin, since the inputs do not change with dose. Training is fully
//! deterministic.

pub mod fdt;
pub mod partition;
pub mod rules;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dvh::{FeatureVector, Organ, PatientRecord};
use crate::regress::AlgorithmId;
use crate::regress::{
    bin_targets, standardize_fit, training_fingerprint, BinPredictor, FitError, Hyperparams, TrainedDvhModel,
};

pub use fdt::{build_fdt, build_fdt_from_rules, FdtNode, FdtParams, FuzzyDecisionTree};
pub use partition::{
    assign_labels, fit_partition, hfp_partitions, label_ladder, select_partition, subtractive_centers, ClusterParams,
    FuzzyPartition, FuzzySet, SetShape,
};
pub use rules::{
    generate_rules, parse_rules, rules_to_text, sample_memberships, FuzzyRule, RuleError, SampleMemberships,
};

/// What each bin's decision tree is grown from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdtSource {
    /// The resolved rule base, one weighted point per rule.
    Rules,
    /// The training samples with their full memberships.
    Samples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrbpParams {
    pub cluster: ClusterParams,
    /// Parsimony weight per set, as a fraction of the feature's span.
    pub kappa_frac: f64,
    pub fdt: FdtParams,
    pub source: FdtSource,
}

impl Default for FrbpParams {
    fn default() -> Self {
        Self {
            cluster: ClusterParams::default(),
            kappa_frac: 0.01,
            fdt: FdtParams::default(),
            source: FdtSource::Rules,
        }
    }
}

impl FrbpParams {
    pub fn validate(&self) -> Result<(), FitError> {
        let c = &self.cluster;
        if !(c.radius > 0.0 && c.squash > 0.0 && c.accept_ratio > 0.0 && c.accept_ratio < 1.0) {
            return Err(FitError::InvalidParams(
                "cluster radius and squash must be > 0, accept_ratio in (0, 1)".into(),
            ));
        }
        if !(self.kappa_frac >= 0.0) || !(self.fdt.min_mass >= 0.0) {
            return Err(FitError::InvalidParams("kappa_frac and min_mass must be >= 0".into()));
        }
        Ok(())
    }
}

/// One partition per feature, fitted on the raw training features.
pub fn fit_partitions(features: &[FeatureVector], params: &FrbpParams) -> Vec<FuzzyPartition> {
    (0..FeatureVector::DIM)
        .map(|f| {
            let v: Vec<f64> = features.iter().map(|x| x.to_array()[f]).collect();
            fit_partition(&v, f, &params.cluster, params.kappa_frac)
        })
        .collect()
}

/// Rule base of one dose bin generated from a cohort.
pub fn bin_rules(
    cohort: &[PatientRecord],
    organ: Organ,
    partitions: &[FuzzyPartition],
    bin: usize,
) -> Result<Vec<FuzzyRule>, RuleError> {
    let mu: Vec<SampleMemberships> =
        cohort.iter().map(|r| sample_memberships(partitions, &r.features.to_array())).collect();
    let y: Vec<f64> = cohort.iter().map(|r| r.curve(organ).values()[bin]).collect();
    generate_rules(&mu, &y)
}

/// Whole-curve fuzzy model: shared partitions, then per bin a rule base and
/// a decision tree.
pub fn frbp_train(
    organ: Organ,
    cohort: &[PatientRecord],
    params: &FrbpParams,
    seed: u64,
) -> Result<TrainedDvhModel, FitError> {
    params.validate()?;
    if cohort.is_empty() {
        return Err(FitError::EmptyTrainingSet);
    }
    let grid = *cohort[0].curve(organ).grid();
    let targets = bin_targets(cohort, organ, &grid)?;
    let features: Vec<FeatureVector> = cohort.iter().map(|r| r.features).collect();
    let standardizer = standardize_fit(&features)?;
    let partitions = fit_partitions(&features, params);
    let mu: Vec<SampleMemberships> = features.iter().map(|f| sample_memberships(&partitions, &f.to_array())).collect();
    let ones = vec![1.0; mu.len()];

    let per_bin_models = targets
        .par_iter()
        .enumerate()
        .map(|(bin, y)| {
            let tree = match params.source {
                FdtSource::Rules => {
                    generate_rules(&mu, y).map_err(|e| FitError::InvalidInput(e.to_string())).and_then(|rules| {
                        build_fdt_from_rules(&rules, &partitions, &params.fdt).map_err(|_| FitError::EmptyTrainingSet)
                    })
                }
                FdtSource::Samples => build_fdt(&mu, y, &ones, &params.fdt).map_err(|_| FitError::EmptyTrainingSet),
            };
            tree.map(BinPredictor::Fuzzy).map_err(|e| FitError::Bin { bin, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let hyperparams = Hyperparams::FRBP(params.clone());
    Ok(TrainedDvhModel {
        algorithm: AlgorithmId::FRBP,
        organ,
        grid,
        standardizer,
        per_bin_models,
        training_fingerprint: training_fingerprint(organ, cohort, &hyperparams, seed),
        hyperparams,
        partitions: Some(partitions),
    })
}

/// Replaces one bin's tree with one grown from an edited rule base.
pub fn apply_rules(model: &mut TrainedDvhModel, bin: usize, rules: &[FuzzyRule]) -> Result<(), FitError> {
    let partitions = model.partitions.as_ref().ok_or(FitError::NotTrainable(model.algorithm))?;
    let Hyperparams::FRBP(params) = &model.hyperparams else {
        return Err(FitError::NotTrainable(model.algorithm));
    };
    if bin >= model.per_bin_models.len() {
        return Err(FitError::InvalidInput(format!("bin {bin} outside the grid")));
    }
    let tree = build_fdt_from_rules(rules, partitions, &params.fdt).map_err(|_| FitError::EmptyTrainingSet)?;
    model.per_bin_models[bin] = BinPredictor::Fuzzy(tree);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dvh::CumulativeDvh;
    use crate::regress::testutil::toy_cohort;
    use crate::regress::{predict_dvh, train_dvh_model};

    #[test]
    fn output_is_valid_curve() {
        let cohort = toy_cohort(30, 20, 1);
        for source in [FdtSource::Rules, FdtSource::Samples] {
            let p = FrbpParams { source, ..Default::default() };
            let m = train_dvh_model(AlgorithmId::FRBP, Organ::Rectum, &cohort, &Hyperparams::FRBP(p), 0).unwrap();
            assert_eq!(m.per_bin_models.len(), 20);
            for r in &cohort {
                let c = predict_dvh(&m, &r.features);
                assert!(CumulativeDvh::new(m.grid, c.values().to_vec()).is_ok());
            }
        }
    }

    #[test]
    fn constant_cohort_reproduced() {
        let mut cohort = toy_cohort(15, 10, 2);
        let fixed = cohort[0].curve(Organ::Bladder).clone();
        for r in &mut cohort {
            r.dvh.insert(Organ::Bladder, fixed.clone());
        }
        let p = Hyperparams::FRBP(FrbpParams::default());
        let m = train_dvh_model(AlgorithmId::FRBP, Organ::Bladder, &cohort, &p, 0).unwrap();
        let c = predict_dvh(&m, &cohort[4].features);
        for (a, b) in c.values().iter().zip(fixed.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_regardless_of_seed_value() {
        let cohort = toy_cohort(20, 6, 3);
        let p = Hyperparams::FRBP(FrbpParams::default());
        let a = train_dvh_model(AlgorithmId::FRBP, Organ::Rectum, &cohort, &p, 1).unwrap();
        let b = train_dvh_model(AlgorithmId::FRBP, Organ::Rectum, &cohort, &p, 2).unwrap();
        assert_eq!(a.per_bin_models, b.per_bin_models);
        assert_eq!(a.partitions, b.partitions);
    }

    #[test]
    fn edited_rules_change_one_bin() {
        let cohort = toy_cohort(20, 6, 4);
        let p = Hyperparams::FRBP(FrbpParams::default());
        let mut m = train_dvh_model(AlgorithmId::FRBP, Organ::Rectum, &cohort, &p, 0).unwrap();
        let parts = m.partitions.clone().unwrap();
        let mut rules = bin_rules(&cohort, Organ::Rectum, &parts, 3).unwrap();
        let text = rules_to_text(&rules, &parts, "bin 3");
        assert_eq!(parse_rules(&text, &parts).unwrap(), rules);
        rules.iter_mut().for_each(|r| r.consequent = 0.0);
        let before = m.per_bin_models[2].clone();
        apply_rules(&mut m, 3, &rules).unwrap();
        assert_eq!(m.per_bin_models[2], before);
        assert_eq!(m.predict_raw(&cohort[0].features)[3], 0.0);
    }
}
