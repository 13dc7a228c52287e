//! Error metrics, cohort reports, Kruskal-Wallis testing, model ranking,
//! ensembles and the train/test split.

mod report;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;
use thiserror::Error;

use crate::dvh::{CumulativeDvh, DoseGrid, DvhError, FeatureVector, Organ, PatientRecord};
use crate::regress::{predict_dvh, AlgorithmId, TrainedDvhModel};

pub use report::{kruskal_csv, kruskal_summary, report_csv, KruskalRow, REPORT_COLUMNS};

/// Clinical point doses reported alongside the band errors.
pub const POINT_DOSES: [f64; 3] = [5300.0, 5600.0, 6000.0];

/// Doses at which predicted and actual volumes are compared with
/// Kruskal-Wallis.
pub const KW_DOSES: [f64; 8] = [3000.0, 4000.0, 4500.0, 5000.0, 5300.0, 5600.0, 5900.0, 6000.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no grid bins fall inside the {0} band")]
    EmptyBand(DoseBand),
    #[error("curves are on different dose grids")]
    GridMismatch,
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("invalid test groups: {0}")]
    InvalidGroups(String),
    #[error("ensemble needs at least one member")]
    NoMembers,
    #[error(transparent)]
    Dvh(#[from] DvhError),
}

/// Inclusive dose ranges of the reporting bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoseBand {
    Full,
    Low,
    Intermediate,
    High,
}

impl DoseBand {
    pub const ALL: [DoseBand; 4] = [Self::Full, Self::Low, Self::Intermediate, Self::High];

    pub fn range_cgy(self) -> (f64, f64) {
        match self {
            Self::Full => (0.0, 6420.0),
            Self::Low => (0.0, 1990.0),
            Self::Intermediate => (2000.0, 3990.0),
            Self::High => (4000.0, 6420.0),
        }
    }

    /// Column label, e.g. `2000-3990`.
    pub fn label(self) -> String {
        let (lo, hi) = self.range_cgy();
        format!("{lo}-{hi}")
    }

    /// Indices of the grid bins whose dose lies in the band.
    pub fn bins(self, grid: &DoseGrid) -> Vec<usize> {
        let (lo, hi) = self.range_cgy();
        (0..grid.n_bins).filter(|&b| (lo..=hi).contains(&grid.dose(b))).collect()
    }
}

impl std::fmt::Display for DoseBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// Median with the even-count convention of averaging the two central
/// order statistics. Sorts `values` in place.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median over the band's bins of `|actual − predicted|`.
pub fn median_abs_error(actual: &CumulativeDvh, predicted: &CumulativeDvh, band: DoseBand) -> Result<f64, EvalError> {
    if actual.grid() != predicted.grid() {
        return Err(EvalError::GridMismatch);
    }
    let bins = band.bins(actual.grid());
    if bins.is_empty() {
        return Err(EvalError::EmptyBand(band));
    }
    let (a, p) = (actual.values(), predicted.values());
    let mut diffs: Vec<f64> = bins.iter().map(|&b| (a[b] - p[b]).abs()).collect();
    Ok(median(&mut diffs))
}

pub fn point_error(actual: &CumulativeDvh, predicted: &CumulativeDvh, dose: f64) -> Result<f64, EvalError> {
    Ok((actual.value_at(dose)? - predicted.value_at(dose)?).abs())
}

/// One value per reporting band.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BandValues {
    pub full: f64,
    pub low: f64,
    pub intermediate: f64,
    pub high: f64,
}

impl BandValues {
    pub fn get(&self, band: DoseBand) -> f64 {
        match band {
            DoseBand::Full => self.full,
            DoseBand::Low => self.low,
            DoseBand::Intermediate => self.intermediate,
            DoseBand::High => self.high,
        }
    }

    fn get_mut(&mut self, band: DoseBand) -> &mut f64 {
        match band {
            DoseBand::Full => &mut self.full,
            DoseBand::Low => &mut self.low,
            DoseBand::Intermediate => &mut self.intermediate,
            DoseBand::High => &mut self.high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientErrors {
    pub case_id: String,
    pub band_mae: BandValues,
    /// Absolute error at each of [`POINT_DOSES`].
    pub point_error: [f64; 3],
}

/// Errors of one model on one organ and dataset split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub algorithm: AlgorithmId,
    pub organ: Organ,
    pub dataset: String,
    pub per_patient: Vec<PatientErrors>,
    /// Mean over patients of the per-patient band MAE.
    pub band_mae: BandValues,
    /// Mean over patients of the point errors.
    pub point_mae: [f64; 3],
    /// Sample variance of the per-patient full-band MAE (0 for one patient).
    pub variance: f64,
}

/// Scores predictions for every patient in `cohort` against its recorded
/// curve for `organ`.
pub fn cohort_error_report<F>(
    algorithm: AlgorithmId,
    organ: Organ,
    dataset: &str,
    cohort: &[PatientRecord],
    mut predict: F,
) -> Result<ErrorReport, EvalError>
where
    F: FnMut(&FeatureVector) -> CumulativeDvh,
{
    if cohort.is_empty() {
        return Err(EvalError::EmptyCohort);
    }
    let mut per_patient = Vec::with_capacity(cohort.len());
    for r in cohort {
        let actual = r.curve(organ);
        let pred = predict(&r.features);
        let mut band_mae = BandValues::default();
        for band in DoseBand::ALL {
            *band_mae.get_mut(band) = median_abs_error(actual, &pred, band)?;
        }
        let mut point = [0.0; 3];
        for (slot, dose) in point.iter_mut().zip(POINT_DOSES) {
            *slot = point_error(actual, &pred, dose)?;
        }
        per_patient.push(PatientErrors { case_id: r.case_id.clone(), band_mae, point_error: point });
    }
    let n = per_patient.len() as f64;
    let mut band_mae = BandValues::default();
    for band in DoseBand::ALL {
        *band_mae.get_mut(band) = per_patient.iter().map(|p| p.band_mae.get(band)).sum::<f64>() / n;
    }
    let mut point_mae = [0.0; 3];
    for (k, slot) in point_mae.iter_mut().enumerate() {
        *slot = per_patient.iter().map(|p| p.point_error[k]).sum::<f64>() / n;
    }
    let variance = if per_patient.len() > 1 {
        per_patient.iter().map(|p| (p.band_mae.full - band_mae.full).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(ErrorReport { algorithm, organ, dataset: dataset.to_string(), per_patient, band_mae, point_mae, variance })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub p_value: f64,
}

/// Survival function of the chi-square distribution.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(df / 2.0, x / 2.0)
}

/// Mid-ranks (1-based) of `values`, plus the tie term `Σ (t³ − t)`.
fn mid_ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (ranks, ties)
}

/// Kruskal-Wallis H with tie correction; p from the chi-square survival
/// function with `groups − 1` degrees of freedom. When every value is
/// identical H is undefined and `(0, 1)` is returned.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis, EvalError> {
    if groups.len() < 2 {
        return Err(EvalError::InvalidGroups(format!("need at least 2 groups, got {}", groups.len())));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(EvalError::InvalidGroups("every group must be non-empty".into()));
    }
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    if all.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::InvalidGroups("values must be finite".into()));
    }
    let n = all.len() as f64;
    if all.len() < 3 {
        return Err(EvalError::InvalidGroups(format!("need at least 3 values, got {}", all.len())));
    }
    let (ranks, ties) = mid_ranks(&all);
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return Ok(KruskalWallis { h: 0.0, p_value: 1.0 });
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = (12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction;
    let h = h.max(0.0);
    Ok(KruskalWallis { h, p_value: chi_square_sf(h, (groups.len() - 1) as f64) })
}

/// Ranks reports by full-band MAE, then variance, then declaration order of
/// the algorithm, and returns the first `count` algorithms.
pub fn select_best(reports: &[ErrorReport], count: usize) -> Vec<AlgorithmId> {
    let mut ranked: Vec<&ErrorReport> = reports.iter().collect();
    ranked.sort_by(|a, b| {
        a.band_mae
            .full
            .total_cmp(&b.band_mae.full)
            .then(a.variance.total_cmp(&b.variance))
            .then(a.algorithm.cmp(&b.algorithm))
    });
    ranked.into_iter().take(count).map(|r| r.algorithm).collect()
}

/// Per-bin arithmetic mean of curves on one grid.
pub fn mean_curve(curves: &[CumulativeDvh]) -> Result<CumulativeDvh, EvalError> {
    let first = curves.first().ok_or(EvalError::NoMembers)?;
    if curves.iter().any(|c| c.grid() != first.grid()) {
        return Err(EvalError::GridMismatch);
    }
    let n = curves.len() as f64;
    let values: Vec<f64> =
        (0..first.grid().n_bins).map(|b| curves.iter().map(|c| c.values()[b]).sum::<f64>() / n).collect();
    // rounding is monotone, so the mean of valid curves is valid
    Ok(CumulativeDvh::new(*first.grid(), values)?)
}

/// Averages the member models' predicted curves.
pub fn ensemble_predict(members: &[&TrainedDvhModel], features: &FeatureVector) -> Result<CumulativeDvh, EvalError> {
    let curves: Vec<CumulativeDvh> = members.iter().map(|m| predict_dvh(m, features)).collect();
    mean_curve(&curves)
}

/// Seeded shuffle; the first `floor(ratio·n)` items (at least one, at most
/// `n − 1`) form the training part.
pub fn split_cohort<T: Clone>(cohort: &[T], ratio: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let n = cohort.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_train = ((ratio * n as f64 + 1e-9).floor() as usize).min(n);
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| cohort[i].clone()).collect::<Vec<T>>();
    (pick(&order[..n_train]), pick(&order[n_train..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn curve(v: &[f64]) -> CumulativeDvh {
        CumulativeDvh::new(DoseGrid::new(10.0, 10.0, v.len()).unwrap(), v.to_vec()).unwrap()
    }

    #[test]
    fn band_bin_counts_on_canonical_grid() {
        let g = DoseGrid::canonical();
        assert_eq!(DoseBand::Full.bins(&g).len(), 642);
        assert_eq!(DoseBand::Low.bins(&g).len(), 199);
        assert_eq!(DoseBand::Intermediate.bins(&g).len(), 200);
        assert_eq!(DoseBand::High.bins(&g).len(), 243);
        assert_eq!(DoseBand::High.label(), "4000-6420");
    }

    #[test]
    fn mae_hand_example() {
        let a = curve(&[30.0, 20.0, 10.0]);
        let p = curve(&[34.0, 19.0, 12.0]);
        assert_eq!(median_abs_error(&a, &p, DoseBand::Full).unwrap(), 2.0);
        assert_eq!(median_abs_error(&a, &a, DoseBand::Full).unwrap(), 0.0);
    }

    #[test]
    fn mae_even_count_and_offset() {
        let a = curve(&[40.0, 30.0, 20.0, 10.0]);
        let p = curve(&[45.0, 35.0, 25.0, 15.0]);
        assert_eq!(median_abs_error(&a, &p, DoseBand::Full).unwrap(), 5.0);
        let q = curve(&[41.0, 33.0, 20.0, 10.0]);
        assert_eq!(median_abs_error(&a, &q, DoseBand::Full).unwrap(), 0.5);
    }

    #[test]
    fn mae_empty_band_and_grid_mismatch() {
        let a = curve(&[40.0, 30.0]);
        assert_eq!(median_abs_error(&a, &a, DoseBand::High), Err(EvalError::EmptyBand(DoseBand::High)));
        let b = curve(&[40.0, 30.0, 1.0]);
        assert_eq!(median_abs_error(&a, &b, DoseBand::Full), Err(EvalError::GridMismatch));
    }

    #[test]
    fn point_error_definition() {
        let g = DoseGrid::canonical();
        let a = CumulativeDvh::from_raw(g, vec![50.0; 642]).unwrap();
        let mut v = vec![50.0; 642];
        v[529..].iter_mut().for_each(|x| *x = 48.8);
        let p = CumulativeDvh::from_raw(g, v).unwrap();
        assert_abs_diff_eq!(point_error(&a, &p, 5300.0).unwrap(), 1.2, epsilon = 1e-12);
        assert_eq!(point_error(&a, &a, 6000.0).unwrap(), 0.0);
        assert!(point_error(&a, &a, 7000.0).is_err());
    }

    fn record(id: &str, c: &CumulativeDvh) -> PatientRecord {
        let f = FeatureVector::from_array([80.0, 200.0, 70.0, 250.0, 0.1, 0.1]);
        PatientRecord::new(id, f, c.clone(), c.clone(), crate::dvh::RecordSource::Synthetic).unwrap()
    }

    #[test]
    fn cohort_report_mean_and_variance() {
        let g = DoseGrid::canonical();
        let base = CumulativeDvh::from_raw(g, vec![50.0; 642]).unwrap();
        let cohort = vec![record("a", &base), record("b", &base)];
        let mut offsets = [2.0, 4.0].into_iter();
        let rep = cohort_error_report(AlgorithmId::LR, Organ::Rectum, "test", &cohort, |_| {
            CumulativeDvh::from_raw(g, vec![50.0 + offsets.next().unwrap(); 642]).unwrap()
        })
        .unwrap();
        assert_eq!(rep.band_mae.full, 3.0);
        assert_eq!(rep.variance, 2.0);
        assert_eq!(rep.point_mae, [3.0; 3]);

        let single = cohort_error_report(AlgorithmId::LR, Organ::Rectum, "v", &cohort[..1], |_| base.clone()).unwrap();
        assert_eq!(single.band_mae, BandValues::default());
        assert_eq!(single.variance, 0.0);
        assert!(cohort_error_report(AlgorithmId::LR, Organ::Rectum, "v", &[], |_| base.clone()).is_err());
    }

    #[test]
    fn kruskal_wallis_hand_case() {
        let kw = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]]).unwrap();
        assert_abs_diff_eq!(kw.h, 7.2, epsilon = 1e-10);
        assert_abs_diff_eq!(kw.p_value, (-3.6f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn kruskal_wallis_no_separation() {
        let g = vec![1.0, 2.0, 3.0];
        let kw = kruskal_wallis(&[g.clone(), g.clone(), g]).unwrap();
        assert_abs_diff_eq!(kw.h, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(kw.p_value, 1.0, epsilon = 1e-12);
        let kw = kruskal_wallis(&[vec![5.0, 5.0], vec![5.0]]).unwrap();
        assert_eq!((kw.h, kw.p_value), (0.0, 1.0));
    }

    #[test]
    fn kruskal_wallis_preconditions() {
        assert!(kruskal_wallis(&[vec![1.0, 2.0]]).is_err());
        assert!(kruskal_wallis(&[vec![1.0, 2.0], vec![]]).is_err());
        assert!(kruskal_wallis(&[vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn chi_square_df2_closed_form() {
        assert_abs_diff_eq!(chi_square_sf(2.0, 2.0), (-1.0f64).exp(), epsilon = 1e-12);
        let mut prev = 1.0;
        for i in 1..50 {
            let p = chi_square_sf(i as f64 * 0.5, 3.0);
            assert!(p < prev);
            prev = p;
        }
    }

    fn report(alg: AlgorithmId, mae: f64, var: f64) -> ErrorReport {
        ErrorReport {
            algorithm: alg,
            organ: Organ::Bladder,
            dataset: "test".into(),
            per_patient: vec![],
            band_mae: BandValues { full: mae, ..Default::default() },
            point_mae: [0.0; 3],
            variance: var,
        }
    }

    #[test]
    fn select_best_ordering() {
        let reps = vec![
            report(AlgorithmId::LR, 3.0, 1.0),
            report(AlgorithmId::EN, 1.0, 2.0),
            report(AlgorithmId::DT, 1.0, 1.0),
            report(AlgorithmId::RF, 0.5, 9.0),
            report(AlgorithmId::GBR, 4.0, 0.0),
            report(AlgorithmId::MLP, 2.0, 0.0),
        ];
        assert_eq!(select_best(&reps, 3), vec![AlgorithmId::RF, AlgorithmId::DT, AlgorithmId::EN]);
        assert_eq!(select_best(&reps, 6).len(), 6);
        let tied = vec![report(AlgorithmId::MLP, 1.0, 1.0), report(AlgorithmId::LR, 1.0, 1.0)];
        assert_eq!(select_best(&tied, 2), vec![AlgorithmId::LR, AlgorithmId::MLP]);
    }

    #[test]
    fn mean_curve_cases() {
        let a = curve(&[60.0, 40.0]);
        let b = curve(&[40.0, 20.0]);
        assert_eq!(mean_curve(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(mean_curve(&[a, b]).unwrap().values(), &[50.0, 30.0]);
        assert_eq!(mean_curve(&[]), Err(EvalError::NoMembers));
    }

    #[test]
    fn split_counts_and_partition() {
        let items: Vec<usize> = (0..94).collect();
        let (train, test) = split_cohort(&items, 0.7, 42);
        assert_eq!((train.len(), test.len()), (65, 29));
        assert_eq!(split_cohort(&items, 0.7, 42), (train.clone(), test.clone()));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort();
        assert_eq!(all, items);
        let thirty: Vec<usize> = (0..30).collect();
        assert_eq!(split_cohort(&thirty, 0.7, 1).0.len(), 21);
    }
}
