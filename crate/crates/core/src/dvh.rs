//! Dose grids, cumulative DVH curves, the six-feature input vector and
//! patient records.
//!
//! Curves are stored in percent of organ volume on a regular dose grid. The
//! canonical grid runs from 10 to 6420 cGy in 10 cGy steps (642 bins); dose 0
//! is never stored and always reads as 100%.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by curve construction and lookup.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DvhError {
    #[error("dose and volume sequences differ in length ({doses} vs {volumes})")]
    MismatchedLengths { doses: usize, volumes: usize },
    #[error("dose axis is not strictly increasing at index {index}")]
    NonMonotoneDoseAxis { index: usize },
    #[error("at least two dose points are required, got {0}")]
    TooFewPoints(usize),
    #[error("volume {value} at index {index} is outside [0, 100]")]
    VolumeOutOfRange { index: usize, value: f64 },
    #[error("dose {dose} cGy is outside [0, {max}]")]
    DoseOutOfRange { dose: f64, max: f64 },
    #[error("invalid dose grid: {0}")]
    InvalidGrid(String),
    #[error("curve has {got} values but the grid has {expected} bins")]
    LengthMismatch { expected: usize, got: usize },
    #[error("curve is not a valid cumulative DVH at bin {index}")]
    InvalidCurve { index: usize },
    #[error("invalid feature `{field}`: {reason}")]
    InvalidFeature { field: &'static str, reason: String },
}

/// Volumes within this distance of [0, 100] are clamped instead of rejected.
const VOLUME_SLACK: f64 = 1e-6;

/// A regular dose axis `start, start + step, ...` with `n_bins` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseGrid {
    pub start_cgy: f64,
    pub step_cgy: f64,
    pub n_bins: usize,
}

impl DoseGrid {
    pub fn new(start_cgy: f64, step_cgy: f64, n_bins: usize) -> Result<Self, DvhError> {
        if !(step_cgy > 0.0) || !step_cgy.is_finite() {
            return Err(DvhError::InvalidGrid(format!("step must be positive, got {step_cgy}")));
        }
        if n_bins == 0 {
            return Err(DvhError::InvalidGrid("grid needs at least one bin".into()));
        }
        if !(start_cgy >= 0.0) || !start_cgy.is_finite() {
            return Err(DvhError::InvalidGrid(format!("start must be >= 0, got {start_cgy}")));
        }
        Ok(Self { start_cgy, step_cgy, n_bins })
    }

    /// 10..=6420 cGy in 10 cGy steps.
    pub const fn canonical() -> Self {
        Self { start_cgy: 10.0, step_cgy: 10.0, n_bins: 642 }
    }

    #[inline]
    pub fn dose(&self, bin: usize) -> f64 {
        self.start_cgy + bin as f64 * self.step_cgy
    }

    pub fn max_dose(&self) -> f64 {
        self.dose(self.n_bins - 1)
    }

    pub fn doses(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_bins).map(move |i| self.dose(i))
    }

    /// Bin index whose dose equals `dose`, if any.
    pub fn bin_of(&self, dose: f64) -> Option<usize> {
        let pos = (dose - self.start_cgy) / self.step_cgy;
        let idx = pos.round();
        if idx < 0.0 || idx >= self.n_bins as f64 {
            return None;
        }
        let idx = idx as usize;
        (self.dose(idx) == dose).then_some(idx)
    }
}

impl Default for DoseGrid {
    fn default() -> Self {
        Self::canonical()
    }
}

/// Cumulative dose-volume histogram in percent of organ volume.
///
/// Values are within [0, 100] and non-increasing along the dose axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CumulativeDvh {
    grid: DoseGrid,
    volume_pct: Vec<f64>,
}

impl CumulativeDvh {
    /// Validates an existing curve without altering it.
    pub fn new(grid: DoseGrid, volume_pct: Vec<f64>) -> Result<Self, DvhError> {
        if volume_pct.len() != grid.n_bins {
            return Err(DvhError::LengthMismatch { expected: grid.n_bins, got: volume_pct.len() });
        }
        for (i, &v) in volume_pct.iter().enumerate() {
            if !(0.0..=100.0).contains(&v) || (i > 0 && v > volume_pct[i - 1]) {
                return Err(DvhError::InvalidCurve { index: i });
            }
        }
        Ok(Self { grid, volume_pct })
    }

    /// Builds a curve from arbitrary finite values by projecting them onto
    /// the set of valid cumulative DVHs.
    pub fn from_raw(grid: DoseGrid, raw: Vec<f64>) -> Result<Self, DvhError> {
        if raw.len() != grid.n_bins {
            return Err(DvhError::LengthMismatch { expected: grid.n_bins, got: raw.len() });
        }
        Ok(Self { grid, volume_pct: monotone_projection(&raw) })
    }

    pub fn grid(&self) -> &DoseGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.volume_pct
    }

    pub fn into_values(self) -> Vec<f64> {
        self.volume_pct
    }

    /// Volume at `dose`, interpolating linearly between bins. Dose 0 reads
    /// as 100% and the segment between 0 and the first bin is interpolated.
    pub fn value_at(&self, dose: f64) -> Result<f64, DvhError> {
        let max = self.grid.max_dose();
        if !(dose >= 0.0) || dose > max {
            return Err(DvhError::DoseOutOfRange { dose, max });
        }
        if dose == 0.0 {
            return Ok(100.0);
        }
        let start = self.grid.start_cgy;
        if dose < start {
            let v0 = self.volume_pct[0];
            return Ok(100.0 + (v0 - 100.0) * dose / start);
        }
        let pos = (dose - start) / self.grid.step_cgy;
        let lo = (pos.floor() as usize).min(self.grid.n_bins - 1);
        if self.grid.dose(lo) == dose || lo + 1 >= self.grid.n_bins {
            return Ok(self.volume_pct[lo]);
        }
        let d0 = self.grid.dose(lo);
        let d1 = self.grid.dose(lo + 1);
        if d1 == dose {
            return Ok(self.volume_pct[lo + 1]);
        }
        Ok(lerp(dose, d0, d1, self.volume_pct[lo], self.volume_pct[lo + 1]))
    }
}

impl<'de> Deserialize<'de> for CumulativeDvh {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            grid: DoseGrid,
            volume_pct: Vec<f64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        CumulativeDvh::new(raw.grid, raw.volume_pct).map_err(serde::de::Error::custom)
    }
}

#[inline]
fn lerp(x: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Least-squares non-increasing projection followed by a clamp to [0, 100].
///
/// Pool-adjacent-violators: each block keeps the sum and length of pooled
/// values; a new value is merged backwards while it exceeds the mean of the
/// block before it.
pub fn monotone_projection(values: &[f64]) -> Vec<f64> {
    let mut sums: Vec<f64> = Vec::with_capacity(values.len());
    let mut lens: Vec<usize> = Vec::with_capacity(values.len());
    for &v in values {
        let mut sum = v;
        let mut len = 1usize;
        while let (Some(&prev_sum), Some(&prev_len)) = (sums.last(), lens.last()) {
            // violation: previous block mean below the current one
            if prev_sum * (len as f64) < sum * (prev_len as f64) {
                sum += prev_sum;
                len += prev_len;
                sums.pop();
                lens.pop();
            } else {
                break;
            }
        }
        sums.push(sum);
        lens.push(len);
    }
    let mut out = Vec::with_capacity(values.len());
    for (sum, len) in sums.into_iter().zip(lens) {
        let mean = (sum / len as f64).clamp(0.0, 100.0);
        out.extend(std::iter::repeat_n(mean, len));
    }
    out
}

/// Restores the cumulative-DVH property of a curve. Idempotent.
pub fn enforce_monotone(curve: &CumulativeDvh) -> CumulativeDvh {
    CumulativeDvh { grid: curve.grid, volume_pct: monotone_projection(&curve.volume_pct) }
}

/// Linearly resamples an exported `(dose, volume)` table onto `grid`.
///
/// Grid doses below the first export dose take the first volume; doses past
/// the last export dose read 0.
pub fn resample_to_grid(doses: &[f64], volumes: &[f64], grid: &DoseGrid) -> Result<CumulativeDvh, DvhError> {
    if doses.len() != volumes.len() {
        return Err(DvhError::MismatchedLengths { doses: doses.len(), volumes: volumes.len() });
    }
    if doses.len() < 2 {
        return Err(DvhError::TooFewPoints(doses.len()));
    }
    for i in 1..doses.len() {
        if !(doses[i] > doses[i - 1]) {
            return Err(DvhError::NonMonotoneDoseAxis { index: i });
        }
    }
    let mut vols = Vec::with_capacity(volumes.len());
    for (i, &v) in volumes.iter().enumerate() {
        if !(-VOLUME_SLACK..=100.0 + VOLUME_SLACK).contains(&v) {
            return Err(DvhError::VolumeOutOfRange { index: i, value: v });
        }
        vols.push(v.clamp(0.0, 100.0));
    }

    let last = doses.len() - 1;
    let mut seg = 0usize;
    let raw: Vec<f64> = grid
        .doses()
        .map(|d| {
            if d < doses[0] {
                return vols[0];
            }
            if d > doses[last] {
                return 0.0;
            }
            while seg + 1 < last && doses[seg + 1] <= d {
                seg += 1;
            }
            if d == doses[seg] {
                vols[seg]
            } else if d == doses[seg + 1] {
                vols[seg + 1]
            } else {
                lerp(d, doses[seg], doses[seg + 1], vols[seg], vols[seg + 1])
            }
        })
        .collect();
    Ok(CumulativeDvh { grid: *grid, volume_pct: monotone_projection(&raw) })
}

/// The two organs at risk whose DVHs are predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Organ {
    Bladder,
    Rectum,
}

impl Organ {
    pub const ALL: [Organ; 2] = [Organ::Bladder, Organ::Rectum];

    pub fn as_str(self) -> &'static str {
        match self {
            Organ::Bladder => "bladder",
            Organ::Rectum => "rectum",
        }
    }
}

impl fmt::Display for Organ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Organ {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bladder" => Ok(Organ::Bladder),
            "rectum" => Ok(Organ::Rectum),
            other => Err(format!("unknown organ `{other}` (expected bladder or rectum)")),
        }
    }
}

/// The six structure-volume inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureVector {
    pub ptv60_cc: f64,
    pub ptv44_cc: f64,
    pub rectum_cc: f64,
    pub bladder_cc: f64,
    /// Rectum ∩ PTV60 as a fraction of rectal volume.
    pub rectum_overlap_frac: f64,
    /// Bladder ∩ PTV60 as a fraction of bladder volume.
    pub bladder_overlap_frac: f64,
}

impl FeatureVector {
    pub const DIM: usize = 6;

    /// Short names used in rule text and reports, in `to_array` order.
    pub const NAMES: [&'static str; 6] = ["ptv60", "ptv44", "rectum", "bladder", "rectum_overlap", "bladder_overlap"];

    pub const FIELDS: [&'static str; 6] =
        ["ptv60_cc", "ptv44_cc", "rectum_cc", "bladder_cc", "rectum_overlap_frac", "bladder_overlap_frac"];

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.ptv60_cc,
            self.ptv44_cc,
            self.rectum_cc,
            self.bladder_cc,
            self.rectum_overlap_frac,
            self.bladder_overlap_frac,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            ptv60_cc: a[0],
            ptv44_cc: a[1],
            rectum_cc: a[2],
            bladder_cc: a[3],
            rectum_overlap_frac: a[4],
            bladder_overlap_frac: a[5],
        }
    }

    /// Checks the field invariants, reporting the first offending field.
    pub fn validate(&self) -> Result<(), DvhError> {
        let a = self.to_array();
        for (i, &v) in a.iter().enumerate() {
            let field = Self::FIELDS[i];
            if !v.is_finite() {
                return Err(DvhError::InvalidFeature { field, reason: "must be finite".into() });
            }
            if v < 0.0 {
                return Err(DvhError::InvalidFeature { field, reason: format!("must be >= 0, got {v}") });
            }
        }
        for (field, v) in [("rectum_cc", self.rectum_cc), ("bladder_cc", self.bladder_cc)] {
            if v <= 0.0 {
                return Err(DvhError::InvalidFeature { field, reason: format!("must be > 0, got {v}") });
            }
        }
        for (field, v) in
            [("rectum_overlap_frac", self.rectum_overlap_frac), ("bladder_overlap_frac", self.bladder_overlap_frac)]
        {
            if v > 1.0 {
                return Err(DvhError::InvalidFeature { field, reason: format!("must be within [0, 1], got {v}") });
            }
        }
        Ok(())
    }
}

/// Where a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordSource {
    EclipseText,
    TomoCsv,
    Synthetic,
}

/// One de-identified case with both organ DVHs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub case_id: String,
    pub features: FeatureVector,
    pub dvh: BTreeMap<Organ, CumulativeDvh>,
    pub source: RecordSource,
}

impl PatientRecord {
    pub fn new(
        case_id: impl Into<String>,
        features: FeatureVector,
        bladder: CumulativeDvh,
        rectum: CumulativeDvh,
        source: RecordSource,
    ) -> Result<Self, DvhError> {
        let case_id = case_id.into();
        if case_id.trim().is_empty() {
            return Err(DvhError::InvalidFeature { field: "case_id", reason: "must be non-empty".into() });
        }
        features.validate()?;
        let mut dvh = BTreeMap::new();
        dvh.insert(Organ::Bladder, bladder);
        dvh.insert(Organ::Rectum, rectum);
        Ok(Self { case_id, features, dvh, source })
    }

    pub fn curve(&self, organ: Organ) -> &CumulativeDvh {
        // both organs are present by construction
        &self.dvh[&organ]
    }
}
