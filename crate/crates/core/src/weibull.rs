//! Two-parameter Weibull fitting by least squares on the double-log
//! transform, and per-bin population bands built from the fitted tails.
//!
//! With `F(x) = 1 − exp(−(x/s)^k)`, the transform `y = ln(−ln(1 − F))`
//! is linear in `ln x` with slope `k` and intercept `−k ln s`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dvh::{CumulativeDvh, DoseGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeibullError {
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("need at least 3 positive values, got {0}")]
    InsufficientPositive(usize),
    #[error("fitted line has non-positive slope")]
    DegenerateFit,
    #[error("band needs at least 3 curves, got {0}")]
    EmptyCohort(usize),
    #[error("curve grid differs from the band grid")]
    GridMismatch,
    #[error("confidence must lie in (0, 1), got {0}")]
    InvalidConfidence(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    /// Shape.
    pub k: f64,
    /// Scale, in the sample's units.
    pub s: f64,
}

impl WeibullParams {
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        1.0 - (-(x / self.s).powf(self.k)).exp()
    }
}

/// Empirical CDF assigned to the i-th smallest of n values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlottingPosition {
    /// Bernard's approximation `(i − 0.3) / (n + 0.4)`.
    #[default]
    MedianRanks,
    /// `i / (n + 1)`.
    MeanRanks,
}

impl PlottingPosition {
    /// `i` is 1-based.
    pub fn probability(self, i: usize, n: usize) -> f64 {
        match self {
            Self::MedianRanks => (i as f64 - 0.3) / (n as f64 + 0.4),
            Self::MeanRanks => i as f64 / (n as f64 + 1.0),
        }
    }
}

/// Sample moments. `std` uses the n − 1 divisor; skewness is
/// `m3 / m2^1.5` and kurtosis `m4 / m2²` with central moments over n, so a
/// Gaussian reads 3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

pub fn moments(sample: &[f64]) -> Result<Moments, WeibullError> {
    let n = sample.len();
    if n < 3 {
        return Err(WeibullError::TooFewValues { needed: 3, got: n });
    }
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in sample {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    if m2 <= 0.0 {
        return Err(WeibullError::ZeroVariance);
    }
    let std = (m2 / (nf - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    Ok(Moments { mean, std, skewness: m3 / m2.powf(1.5), kurtosis: m4 / (m2 * m2) })
}

/// Least-squares fit on `(ln x_i, ln(−ln(1 − F_i)))`. Non-positive values
/// are dropped first.
pub fn weibull_fit_lsm(sample: &[f64], position: PlottingPosition) -> Result<WeibullParams, WeibullError> {
    let mut xs: Vec<f64> = sample.iter().copied().filter(|&x| x > 0.0).collect();
    if xs.len() < 3 {
        return Err(WeibullError::InsufficientPositive(xs.len()));
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let pts: Vec<(f64, f64)> =
        xs.iter().enumerate().map(|(i, &x)| (x.ln(), (-(1.0 - position.probability(i + 1, n)).ln()).ln())).collect();
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(WeibullError::DegenerateFit);
    }
    let a = sxy / sxx;
    if !(a > 0.0) || !a.is_finite() {
        return Err(WeibullError::DegenerateFit);
    }
    let b = my - a * mx;
    Ok(WeibullParams { k: a, s: (-b / a).exp() })
}

/// Inverse CDF, `s (−ln(1 − p))^(1/k)` for `0 < p < 1`.
pub fn weibull_quantile(params: &WeibullParams, p: f64) -> f64 {
    params.s * (-(1.0 - p).ln()).powf(1.0 / params.k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Fitted,
    Degenerate,
}

impl FitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fitted => "fitted",
            Self::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub grid: DoseGrid,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub fit_status: Vec<FitStatus>,
    /// Normality check per bin; `None` where the values do not vary.
    pub moments: Vec<Option<Moments>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandParams {
    pub confidence: f64,
    pub position: PlottingPosition,
}

impl Default for BandParams {
    fn default() -> Self {
        Self { confidence: 0.95, position: PlottingPosition::MedianRanks }
    }
}

fn bin_band(values: &[f64], params: &BandParams) -> (f64, f64, FitStatus) {
    let tail = (1.0 - params.confidence) / 2.0;
    match weibull_fit_lsm(values, params.position) {
        Ok(w) => {
            let lo = weibull_quantile(&w, tail).clamp(0.0, 100.0);
            let hi = weibull_quantile(&w, 1.0 - tail).clamp(0.0, 100.0);
            (lo, hi.max(lo), FitStatus::Fitted)
        }
        Err(_) => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo.clamp(0.0, 100.0), hi.clamp(0.0, 100.0), FitStatus::Degenerate)
        }
    }
}

/// Per bin: Weibull fit of the cohort's positive values and its tail
/// quantiles; bins that cannot be fitted fall back to the empirical range.
pub fn build_band(curves: &[CumulativeDvh], params: &BandParams) -> Result<ConfidenceBand, WeibullError> {
    if curves.len() < 3 {
        return Err(WeibullError::EmptyCohort(curves.len()));
    }
    if !(params.confidence > 0.0 && params.confidence < 1.0) {
        return Err(WeibullError::InvalidConfidence(params.confidence));
    }
    let grid = *curves[0].grid();
    if curves.iter().any(|c| *c.grid() != grid) {
        return Err(WeibullError::GridMismatch);
    }
    let per_bin: Vec<_> = (0..grid.n_bins)
        .into_par_iter()
        .map(|b| {
            let mut v: Vec<f64> = curves.iter().map(|c| c.values()[b]).collect();
            v.sort_by(f64::total_cmp);
            (bin_band(&v, params), moments(&v).ok())
        })
        .collect();
    let mut band = ConfidenceBand {
        grid,
        lower: Vec::with_capacity(grid.n_bins),
        upper: Vec::with_capacity(grid.n_bins),
        fit_status: Vec::with_capacity(grid.n_bins),
        moments: Vec::with_capacity(grid.n_bins),
    };
    for ((lo, hi, st), m) in per_bin {
        band.lower.push(lo);
        band.upper.push(hi);
        band.fit_status.push(st);
        band.moments.push(m);
    }
    Ok(band)
}

fn coverage_where(
    band: &ConfidenceBand,
    curves: &[CumulativeDvh],
    keep: impl Fn(usize) -> bool,
) -> Result<f64, WeibullError> {
    let (mut inside, mut total) = (0usize, 0usize);
    for c in curves {
        if *c.grid() != band.grid {
            return Err(WeibullError::GridMismatch);
        }
        for (b, &v) in c.values().iter().enumerate().filter(|(b, _)| keep(*b)) {
            total += 1;
            if v >= band.lower[b] && v <= band.upper[b] {
                inside += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { inside as f64 / total as f64 })
}

/// Fraction of (curve, bin) pairs inside the band.
pub fn band_coverage(band: &ConfidenceBand, curves: &[CumulativeDvh]) -> Result<f64, WeibullError> {
    coverage_where(band, curves, |_| true)
}

/// Coverage restricted to bins with a Weibull fit.
pub fn band_coverage_fitted(band: &ConfidenceBand, curves: &[CumulativeDvh]) -> Result<f64, WeibullError> {
    coverage_where(band, curves, |b| band.fit_status[b] == FitStatus::Fitted)
}

pub const BAND_COLUMNS: [&str; 4] = ["dose_cgy", "lower_pct", "upper_pct", "fit_status"];

pub fn band_csv(band: &ConfidenceBand) -> String {
    let mut out = BAND_COLUMNS.join(",");
    out.push('\n');
    for b in 0..band.grid.n_bins {
        let _ =
            writeln!(out, "{},{},{},{}", band.grid.dose(b), band.lower[b], band.upper[b], band.fit_status[b].as_str());
    }
    out
}

#[derive(Debug, Error)]
pub enum BandCsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error(transparent)]
    Dvh(#[from] crate::dvh::DvhError),
}

#[derive(Deserialize)]
struct BandRow {
    dose_cgy: f64,
    lower_pct: f64,
    upper_pct: f64,
    fit_status: FitStatus,
}

/// Reads the CSV written by [`band_csv`]. The grid is inferred from the
/// dose column, which must be regular.
pub fn parse_band_csv(text: &str) -> Result<ConfidenceBand, BandCsvError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<BandRow> = rdr.deserialize().collect::<Result<_, _>>()?;
    if rows.is_empty() {
        return Err(BandCsvError::Row { row: 0, message: "band has no rows".into() });
    }
    let step = if rows.len() > 1 { rows[1].dose_cgy - rows[0].dose_cgy } else { 1.0 };
    let grid = DoseGrid::new(rows[0].dose_cgy, step, rows.len())?;
    for (i, r) in rows.iter().enumerate() {
        if (r.dose_cgy - grid.dose(i)).abs() > 1e-6 * step {
            return Err(BandCsvError::Row { row: i + 1, message: "dose column is not a regular grid".into() });
        }
        if !(0.0 <= r.lower_pct && r.lower_pct <= r.upper_pct && r.upper_pct <= 100.0) {
            return Err(BandCsvError::Row { row: i + 1, message: "needs 0 <= lower <= upper <= 100".into() });
        }
    }
    Ok(ConfidenceBand {
        grid,
        lower: rows.iter().map(|r| r.lower_pct).collect(),
        upper: rows.iter().map(|r| r.upper_pct).collect(),
        fit_status: rows.iter().map(|r| r.fit_status).collect(),
        moments: vec![None; rows.len()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Weibull};

    fn exact_sample(k: f64, s: f64, n: usize) -> Vec<f64> {
        let w = WeibullParams { k, s };
        (1..=n).map(|i| weibull_quantile(&w, PlottingPosition::MedianRanks.probability(i, n))).collect()
    }

    #[test]
    fn moments_shape() {
        assert_abs_diff_eq!(moments(&[-1.0, 0.0, 1.0]).unwrap().skewness, 0.0, epsilon = 1e-15);
        assert!(moments(&[0.0, 0.0, 0.0, 1.0]).unwrap().skewness > 0.0);
        assert_eq!(moments(&[2.0; 5]), Err(WeibullError::ZeroVariance));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let v: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
        let m = moments(&v).unwrap();
        assert!((m.kurtosis - 3.0).abs() < 0.1, "kurtosis {}", m.kurtosis);
        assert!((m.std - 1.0).abs() < 0.01);
    }

    #[test]
    fn exact_recovery() {
        let x = exact_sample(2.0, 50.0, 20);
        let w = weibull_fit_lsm(&x, PlottingPosition::MedianRanks).unwrap();
        assert_abs_diff_eq!(w.k, 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(w.s, 50.0, epsilon = 1e-6);
        for (i, &xi) in x.iter().enumerate() {
            assert_abs_diff_eq!(w.cdf(xi), PlottingPosition::MedianRanks.probability(i + 1, 20), epsilon = 1e-9);
        }
        let mut rev = x.clone();
        rev.reverse();
        assert_eq!(weibull_fit_lsm(&rev, PlottingPosition::MedianRanks).unwrap(), w);
    }

    #[test]
    fn mean_ranks_are_configurable() {
        let w = WeibullParams { k: 3.0, s: 10.0 };
        let x: Vec<f64> =
            (1..=15).map(|i| weibull_quantile(&w, PlottingPosition::MeanRanks.probability(i, 15))).collect();
        let f = weibull_fit_lsm(&x, PlottingPosition::MeanRanks).unwrap();
        assert_abs_diff_eq!(f.k, 3.0, epsilon = 1e-9);
        let g = weibull_fit_lsm(&x, PlottingPosition::MedianRanks).unwrap();
        assert!((g.k - 3.0).abs() > 1e-6);
    }

    fn fit_draws(seed: u64) -> WeibullParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Weibull::new(30.0, 1.5).unwrap();
        let x: Vec<f64> = (0..200).map(|_| dist.sample(&mut rng)).collect();
        weibull_fit_lsm(&x, PlottingPosition::MedianRanks).unwrap()
    }

    #[test]
    fn statistical_recovery() {
        let w = fit_draws(0);
        assert!((w.k / 1.5 - 1.0).abs() < 0.10, "k = {}", w.k);
        assert!((w.s / 30.0 - 1.0).abs() < 0.05, "s = {}", w.s);
    }

    #[test]
    fn unbiased_over_replicates() {
        let fits: Vec<WeibullParams> = (0..400).map(fit_draws).collect();
        let k = fits.iter().map(|w| w.k).sum::<f64>() / 400.0;
        let s = fits.iter().map(|w| w.s).sum::<f64>() / 400.0;
        assert!((k / 1.5 - 1.0).abs() < 0.02, "mean k = {k}");
        assert!((s / 30.0 - 1.0).abs() < 0.01, "mean s = {s}");
    }

    #[test]
    fn fit_errors() {
        assert_eq!(weibull_fit_lsm(&[5.0; 6], PlottingPosition::MedianRanks), Err(WeibullError::DegenerateFit));
        assert_eq!(
            weibull_fit_lsm(&[0.0, 0.0, 1.0, 2.0], PlottingPosition::MedianRanks),
            Err(WeibullError::InsufficientPositive(2))
        );
    }

    #[test]
    fn quantile_closed_forms() {
        let p = 1.0 - (-1.0f64).exp();
        assert_abs_diff_eq!(weibull_quantile(&WeibullParams { k: 1.0, s: 1.0 }, p), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(weibull_quantile(&WeibullParams { k: 3.7, s: 12.5 }, p), 12.5, epsilon = 1e-12);
        assert_abs_diff_eq!(weibull_quantile(&WeibullParams { k: 2.0, s: 50.0 }, 0.5), 41.628, epsilon = 1e-3);
    }

    fn grid(n: usize) -> DoseGrid {
        DoseGrid::new(10.0, 10.0, n).unwrap()
    }

    #[test]
    fn band_on_constructed_bins() {
        // bin 0 follows an exact Weibull(2, 50) sample, bin 1 is all zero.
        let x = exact_sample(2.0, 50.0, 20);
        let curves: Vec<CumulativeDvh> =
            x.iter().map(|&v| CumulativeDvh::new(grid(2), vec![v, 0.0]).unwrap()).collect();
        let band = build_band(&curves, &BandParams::default()).unwrap();
        assert_abs_diff_eq!(band.lower[0], 50.0 * (-(0.975f64).ln()).sqrt(), epsilon = 1e-6);
        assert_abs_diff_eq!(band.upper[0], 96.04, epsilon = 0.01);
        assert_eq!(band.fit_status, vec![FitStatus::Fitted, FitStatus::Degenerate]);
        assert_eq!((band.lower[1], band.upper[1]), (0.0, 0.0));
        assert!(band.moments[0].is_some() && band.moments[1].is_none());

        let mut shuffled = curves.clone();
        shuffled.reverse();
        shuffled.swap(3, 11);
        assert_eq!(build_band(&shuffled, &BandParams::default()).unwrap(), band);
    }

    #[test]
    fn coverage_extremes() {
        let g = grid(3);
        let band = ConfidenceBand {
            grid: g,
            lower: vec![0.0; 3],
            upper: vec![100.0; 3],
            fit_status: vec![FitStatus::Fitted; 3],
            moments: vec![None; 3],
        };
        let c = CumulativeDvh::new(g, vec![90.0, 50.0, 10.0]).unwrap();
        assert_eq!(band_coverage(&band, std::slice::from_ref(&c)).unwrap(), 1.0);
        let tight = ConfidenceBand { lower: vec![0.0; 3], upper: vec![5.0; 3], ..band };
        assert_eq!(band_coverage(&tight, &[c]).unwrap(), 0.0);
    }

    #[test]
    fn band_csv_round_trip() {
        let x = exact_sample(2.0, 50.0, 10);
        let curves: Vec<CumulativeDvh> =
            x.iter().map(|&v| CumulativeDvh::new(grid(3), vec![v, v / 2.0, 0.0]).unwrap()).collect();
        let band = build_band(&curves, &BandParams::default()).unwrap();
        let text = band_csv(&band);
        assert!(text.starts_with("dose_cgy,lower_pct,upper_pct,fit_status\n10,"));
        let back = parse_band_csv(&text).unwrap();
        assert_eq!(back.lower, band.lower);
        assert_eq!(back.upper, band.upper);
        assert_eq!(back.fit_status, band.fit_status);
        assert!(build_band(&curves[..2], &BandParams::default()).is_err());
    }
}
