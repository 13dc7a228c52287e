//! Seeded synthetic cohorts with a known feature-to-curve mapping.
//!
//! Each organ curve is a logistic fall-off `100·σ((d50 − d)/w)` with
//! `d50 = 3000 + 3200·overlap_frac` and `w = 300 + 0.5·organ_cc` (cGy),
//! optionally perturbed by Gaussian noise and projected back onto valid
//! curves. The data are synthetic and carry no clinical meaning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dvh::{CumulativeDvh, DoseGrid, FeatureVector, Organ, PatientRecord, RecordSource};
use crate::ingest::{emit_eclipse_text, emit_tomo_csv, StructureDvhBlock, VolumeUnit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic cohort config: {0}")]
    InvalidConfig(String),
}

/// Inclusive `[lo, hi]` sampling range per feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureRanges {
    pub ptv60_cc: [f64; 2],
    pub ptv44_cc: [f64; 2],
    pub rectum_cc: [f64; 2],
    pub bladder_cc: [f64; 2],
    pub rectum_overlap_frac: [f64; 2],
    pub bladder_overlap_frac: [f64; 2],
}

impl Default for FeatureRanges {
    fn default() -> Self {
        Self {
            ptv60_cc: [60.0, 160.0],
            ptv44_cc: [150.0, 400.0],
            rectum_cc: [40.0, 150.0],
            bladder_cc: [100.0, 500.0],
            rectum_overlap_frac: [0.0, 0.4],
            bladder_overlap_frac: [0.0, 0.4],
        }
    }
}

impl FeatureRanges {
    fn as_array(&self) -> [[f64; 2]; 6] {
        [
            self.ptv60_cc,
            self.ptv44_cc,
            self.rectum_cc,
            self.bladder_cc,
            self.rectum_overlap_frac,
            self.bladder_overlap_frac,
        ]
    }
}

/// Logistic curve family: `d50 = d50_base + d50_per_overlap·frac`,
/// `w = width_base + width_per_cc·organ_cc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveFamily {
    pub d50_base: f64,
    pub d50_per_overlap: f64,
    pub width_base: f64,
    pub width_per_cc: f64,
}

impl Default for CurveFamily {
    fn default() -> Self {
        Self { d50_base: 3000.0, d50_per_overlap: 3200.0, width_base: 300.0, width_per_cc: 0.5 }
    }
}

impl CurveFamily {
    /// Noise-free percent volume at `dose`.
    pub fn volume(&self, overlap_frac: f64, organ_cc: f64, dose: f64) -> f64 {
        let d50 = self.d50_base + self.d50_per_overlap * overlap_frac;
        let w = self.width_base + self.width_per_cc * organ_cc;
        100.0 / (1.0 + ((dose - d50) / w).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub ranges: FeatureRanges,
    /// Per-bin Gaussian noise, in percent volume.
    pub noise_std: f64,
    pub curve: CurveFamily,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_patients: 94,
            ranges: FeatureRanges::default(),
            noise_std: 1.0,
            curve: CurveFamily::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_patients == 0 {
            return bad("n_patients must be >= 1".into());
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        for (i, [lo, hi]) in self.ranges.as_array().into_iter().enumerate() {
            let field = FeatureVector::FIELDS[i];
            let valid = |v: f64| {
                let mut a = [1.0; 6];
                a[i] = v;
                FeatureVector::from_array(a).validate().is_ok()
            };
            if !(lo <= hi) || !valid(lo) || !valid(hi) {
                return bad(format!("range for {field} must be ordered and valid, got [{lo}, {hi}]"));
            }
        }
        let c = &self.curve;
        if !(c.width_base > 0.0 && c.width_per_cc >= 0.0) {
            return bad("curve width must be positive".into());
        }
        Ok(())
    }
}

fn patient(config: &SynthConfig, grid: &DoseGrid, index: usize) -> PatientRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let mut a = [0.0; 6];
    for (slot, [lo, hi]) in a.iter_mut().zip(config.ranges.as_array()) {
        *slot = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    }
    let features = FeatureVector::from_array(a);
    let noise = Normal::new(0.0, config.noise_std).expect("noise_std validated");
    let mut curve = |frac: f64, cc: f64| {
        let raw: Vec<f64> = grid
            .doses()
            .map(|d| {
                let v = config.curve.volume(frac, cc, d);
                let v = if config.noise_std > 0.0 { v + noise.sample(&mut rng) } else { v };
                v.clamp(0.0, 100.0)
            })
            .collect();
        CumulativeDvh::from_raw(*grid, raw).expect("grid-length curve")
    };
    let bladder = curve(features.bladder_overlap_frac, features.bladder_cc);
    let rectum = curve(features.rectum_overlap_frac, features.rectum_cc);
    PatientRecord::new(format!("SYN-{}-{index:04}", config.seed), features, bladder, rectum, RecordSource::Synthetic)
        .expect("features sampled within validated ranges")
}

/// Generates `n_patients` records on `grid`. Patient `i` draws from its own
/// stream of the seeded generator, so records do not depend on each other.
pub fn synth_cohort(config: &SynthConfig, grid: &DoseGrid) -> Result<Vec<PatientRecord>, SynthError> {
    config.validate()?;
    Ok((0..config.n_patients).into_par_iter().map(|i| patient(config, grid, i)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Eclipse,
    Tomo,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Eclipse => "txt",
            Self::Tomo => "csv",
        }
    }
}

fn target_curve(grid: &DoseGrid, prescription: f64) -> Vec<(f64, f64)> {
    std::iter::once(0.0)
        .chain(grid.doses())
        .map(|d| (d, 100.0 / (1.0 + ((d - prescription - 100.0) / 40.0).exp())))
        .map(|(d, v)| (d, if d == 0.0 { 100.0 } else { v }))
        .collect()
}

/// The six structure blocks an export of `record` would contain. Organ
/// tables reproduce the record's curves exactly at the grid doses.
pub fn export_blocks(record: &PatientRecord) -> Vec<StructureDvhBlock> {
    let grid = *record.curve(Organ::Bladder).grid();
    let f = &record.features;
    let organ = |organ: Organ| -> Vec<(f64, f64)> {
        std::iter::once((0.0, 100.0)).chain(grid.doses().zip(record.curve(organ).values().iter().copied())).collect()
    };
    let block = |name: &str, cc: f64, rows: Vec<(f64, f64)>| StructureDvhBlock {
        structure_name: name.into(),
        structure_volume_cc: cc,
        unit: VolumeUnit::Percent,
        rows,
    };
    vec![
        block("PTV60", f.ptv60_cc, target_curve(&grid, 6000.0)),
        block("PTV44", f.ptv44_cc, target_curve(&grid, 4400.0)),
        block("Bladder", f.bladder_cc, organ(Organ::Bladder)),
        block("Rectum", f.rectum_cc, organ(Organ::Rectum)),
        block("Bladder_PTV60_overlap", f.bladder_cc * f.bladder_overlap_frac, target_curve(&grid, 6000.0)),
        block("Rectum_PTV60_overlap", f.rectum_cc * f.rectum_overlap_frac, target_curve(&grid, 6000.0)),
    ]
}

/// Renders `record` as an export file in the given layout.
pub fn export_fixture(record: &PatientRecord, format: ExportFormat) -> String {
    let blocks = export_blocks(record);
    match format {
        ExportFormat::Eclipse => emit_eclipse_text(&record.case_id, &blocks),
        ExportFormat::Tomo => emit_tomo_csv(&blocks),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_record, parse_eclipse_text, parse_tomo_csv, StructureNameRules};

    fn clean(n: usize) -> SynthConfig {
        SynthConfig { n_patients: n, noise_std: 0.0, ..Default::default() }
    }

    #[test]
    fn overlap_raises_d50() {
        let c = CurveFamily::default();
        assert!(c.volume(1.0, 5000.0, 5000.0) > c.volume(0.0, 5000.0, 5000.0));
        assert_eq!(c.volume(0.0, 100.0, 3000.0), 50.0);
    }

    #[test]
    fn noise_free_limits() {
        let g = DoseGrid::canonical();
        let cohort = synth_cohort(&clean(20), &g).unwrap();
        for r in &cohort {
            for organ in Organ::ALL {
                let v = r.curve(organ).values();
                assert!(100.0 - v[0] < 0.5);
            }
            if r.features.rectum_overlap_frac < 0.05 && r.features.rectum_cc < 80.0 {
                assert!(r.curve(Organ::Rectum).values()[641] < 0.1);
            }
        }
    }

    #[test]
    fn deterministic_and_independent_per_patient() {
        let g = DoseGrid::canonical();
        let cfg = SynthConfig { n_patients: 12, ..Default::default() };
        let a = synth_cohort(&cfg, &g).unwrap();
        let b = synth_cohort(&cfg, &g).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let longer = synth_cohort(&SynthConfig { n_patients: 20, ..cfg.clone() }, &g).unwrap();
        assert_eq!(&longer[..12], &a[..]);
        assert_eq!(a[3].case_id, "SYN-42-0003");
        assert_ne!(synth_cohort(&SynthConfig { seed: 43, ..cfg }, &g).unwrap()[0].features, a[0].features);
    }

    #[test]
    fn noisy_curves_stay_valid() {
        let g = DoseGrid::canonical();
        let cfg = SynthConfig { n_patients: 5, noise_std: 5.0, ..Default::default() };
        for r in synth_cohort(&cfg, &g).unwrap() {
            for organ in Organ::ALL {
                let c = r.curve(organ);
                assert!(CumulativeDvh::new(g, c.values().to_vec()).is_ok());
            }
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(SynthConfig { n_patients: 0, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { noise_std: -1.0, ..Default::default() }.validate().is_err());
        let mut r = FeatureRanges::default();
        r.rectum_overlap_frac = [0.0, 1.2];
        assert!(SynthConfig { ranges: r, ..Default::default() }.validate().is_err());
        r.rectum_overlap_frac = [0.5, 0.2];
        assert!(SynthConfig { ranges: r, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn fixtures_parse_back() {
        let g = DoseGrid::canonical();
        let cohort = synth_cohort(&SynthConfig { n_patients: 3, ..Default::default() }, &g).unwrap();
        let rules = StructureNameRules::default();
        for r in &cohort {
            for format in [ExportFormat::Eclipse, ExportFormat::Tomo] {
                let text = export_fixture(r, format);
                let blocks = match format {
                    ExportFormat::Eclipse => parse_eclipse_text(&text).unwrap(),
                    ExportFormat::Tomo => parse_tomo_csv(&text).unwrap(),
                };
                let back = build_record(&blocks, &rules, &r.case_id, r.source, &g).unwrap();
                assert_eq!(back.dvh, r.dvh);
                let (a, b) = (back.features.to_array(), r.features.to_array());
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
                }
            }
        }
    }
}
