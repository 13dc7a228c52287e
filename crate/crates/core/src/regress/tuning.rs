//! Exhaustive grid search with k-fold cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    predict_dvh, train_dvh_model, AlgorithmId, BoostParams, ElasticNetParams, FitError, ForestParams, Hyperparams,
    MlpParams, TreeParams,
};
use crate::dvh::{Organ, PatientRecord};
use crate::eval::{median_abs_error, DoseBand};
use crate::frbp::FrbpParams;

/// Cross-validated score of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub params: Hyperparams,
    /// Mean over folds of the per-patient full-band MAE.
    pub score: f64,
}

/// Fold index of every record: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Scores every grid point and returns the best one (first in declaration
/// order on ties) together with the full score table.
pub fn grid_search_cv(
    organ: Organ,
    train: &[PatientRecord],
    grid: &[Hyperparams],
    k: usize,
    seed: u64,
) -> Result<(Hyperparams, Vec<CvScore>), FitError> {
    if k < 2 {
        return Err(FitError::InvalidParams(format!("need at least 2 folds, got {k}")));
    }
    if grid.is_empty() {
        return Err(FitError::InvalidParams("empty hyperparameter grid".into()));
    }
    if train.len() < k {
        return Err(FitError::TooFewRecords { needed: k, got: train.len() });
    }
    let folds = fold_assignment(train.len(), k, seed);
    let mut table = Vec::with_capacity(grid.len());
    for params in grid {
        let mut total = 0.0;
        for f in 0..k {
            let (fit_set, held): (Vec<_>, Vec<_>) = train.iter().zip(&folds).partition(|(_, &fold)| fold != f);
            let fit_set: Vec<PatientRecord> = fit_set.into_iter().map(|(r, _)| r.clone()).collect();
            let model = train_dvh_model(params.algorithm(), organ, &fit_set, params, seed)?;
            let mut fold_sum = 0.0;
            for (r, _) in &held {
                let pred = predict_dvh(&model, &r.features);
                fold_sum += median_abs_error(r.curve(organ), &pred, DoseBand::Full)
                    .map_err(|e| FitError::InvalidInput(e.to_string()))?;
            }
            total += fold_sum / held.len() as f64;
        }
        table.push(CvScore { params: params.clone(), score: total / k as f64 });
    }
    let best = table
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.score.total_cmp(&b.score).then(i.cmp(j)))
        .map(|(_, s)| s.params.clone())
        .expect("grid is non-empty");
    Ok((best, table))
}

/// Default search grids per algorithm.
pub fn default_grid(algorithm: AlgorithmId) -> Vec<Hyperparams> {
    match algorithm {
        AlgorithmId::LR => vec![Hyperparams::LR],
        AlgorithmId::EN => {
            let mut g = Vec::new();
            for lambda in [1e-3, 1e-2, 1e-1, 1.0] {
                for l1_ratio in [0.1, 0.5, 0.9] {
                    g.push(Hyperparams::EN(ElasticNetParams { l1_ratio, lambda, ..Default::default() }));
                }
            }
            g
        }
        AlgorithmId::DT => {
            [2, 3, 4].map(|max_depth| Hyperparams::DT(TreeParams { max_depth, ..Default::default() })).to_vec()
        }
        AlgorithmId::RF => {
            let mut g = Vec::new();
            for n_trees in [50, 200] {
                for max_depth in [3, 5] {
                    g.push(Hyperparams::RF(ForestParams { n_trees, max_depth, ..Default::default() }));
                }
            }
            g
        }
        AlgorithmId::GBR => {
            let mut g = Vec::new();
            for n_stages in [50, 200] {
                for learning_rate in [0.05, 0.1] {
                    g.push(Hyperparams::GBR(BoostParams { n_stages, learning_rate, ..Default::default() }));
                }
            }
            g
        }
        AlgorithmId::MLP => {
            [8, 16].map(|w| Hyperparams::MLP(MlpParams { hidden: vec![w], ..Default::default() })).to_vec()
        }
        AlgorithmId::FRBP => vec![Hyperparams::FRBP(FrbpParams::default())],
        AlgorithmId::Ensemble3 | AlgorithmId::Ensemble6 => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::testutil::toy_cohort;

    #[test]
    fn folds_cover_and_repeat() {
        let a = fold_assignment(23, 5, 1);
        assert_eq!(a, fold_assignment(23, 5, 1));
        for f in 0..5 {
            let c = a.iter().filter(|&&x| x == f).count();
            assert!(c == 4 || c == 5);
        }
    }

    #[test]
    fn single_point_grid() {
        let cohort = toy_cohort(20, 5, 1);
        let grid = vec![Hyperparams::DT(TreeParams::default())];
        let (best, table) = grid_search_cv(Organ::Rectum, &cohort, &grid, 5, 0).unwrap();
        assert_eq!(best, grid[0]);
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn best_has_lowest_score_and_is_deterministic() {
        let cohort = toy_cohort(25, 6, 2);
        let grid = default_grid(AlgorithmId::DT);
        let (best, table) = grid_search_cv(Organ::Bladder, &cohort, &grid, 5, 3).unwrap();
        let best_score = table.iter().find(|s| s.params == best).unwrap().score;
        assert!(table.iter().all(|s| best_score <= s.score));
        assert_eq!(grid_search_cv(Organ::Bladder, &cohort, &grid, 5, 3).unwrap().0, best);
    }

    #[test]
    fn heavy_shrinkage_scores_worse() {
        let cohort = toy_cohort(30, 4, 4);
        let grid: Vec<Hyperparams> = [1.0, 1e-3, 1e-1]
            .map(|lambda| Hyperparams::EN(ElasticNetParams { lambda, l1_ratio: 0.5, ..Default::default() }))
            .to_vec();
        let (_, table) = grid_search_cv(Organ::Rectum, &cohort, &grid, 5, 5).unwrap();
        assert!(table[1].score < table[0].score);
    }

    #[test]
    fn rejects_bad_k_and_empty_grid() {
        let cohort = toy_cohort(10, 3, 6);
        assert!(grid_search_cv(Organ::Rectum, &cohort, &[Hyperparams::LR], 1, 0).is_err());
        assert!(grid_search_cv(Organ::Rectum, &cohort, &[], 5, 0).is_err());
    }
}
