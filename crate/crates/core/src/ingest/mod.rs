//! Rule-based mining of treatment-planning-system DVH exports.
//!
//! Two plain-text layouts are understood: an Eclipse-style sectioned text
//! export ([`eclipse`]) and a Tomotherapy-style long-format CSV ([`tomo`]).
//! Both yield [`StructureDvhBlock`]s, which [`build_record`] resolves against
//! [`StructureNameRules`] into a [`PatientRecord`].

pub mod deid;
pub mod eclipse;
pub mod rules;
pub mod tomo;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dvh::{resample_to_grid, DoseGrid, DvhError, FeatureVector, PatientRecord, RecordSource};

pub use deid::{deidentify_check, DeidReport, PiiPatterns};
pub use eclipse::{emit_eclipse_text, parse_eclipse_text, read_patient_id};
pub use rules::{StructureNameRules, Target};
pub use tomo::{emit_tomo_csv, parse_tomo_csv};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("missing or malformed dose table for `{structure}` at line {line}")]
    MissingDoseTable { structure: String, line: usize },
    #[error("unrecognized unit `{0}`")]
    UnitNotRecognized(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("no export structure matches target {0}")]
    StructureUnresolved(Target),
    #[error("several export structures match target {target}: {names:?}")]
    AmbiguousMatch { target: Target, names: Vec<String> },
    #[error("structure `{0}` has zero volume")]
    ZeroOrganVolume(String),
    #[error(transparent)]
    Curve(#[from] DvhError),
}

/// Volume column unit of an export block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeUnit {
    Percent,
    Cc,
}

/// One structure's DVH table as exported, before resampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureDvhBlock {
    pub structure_name: String,
    pub structure_volume_cc: f64,
    pub unit: VolumeUnit,
    /// `(dose cGy, volume)` rows, dose strictly increasing.
    pub rows: Vec<(f64, f64)>,
}

impl StructureDvhBlock {
    /// Volume column in percent, converting cc tables with the structure volume.
    pub fn volumes_pct(&self) -> Result<Vec<f64>, RecordError> {
        match self.unit {
            VolumeUnit::Percent => Ok(self.rows.iter().map(|r| r.1).collect()),
            VolumeUnit::Cc => {
                if !(self.structure_volume_cc > 0.0) {
                    return Err(RecordError::ZeroOrganVolume(self.structure_name.clone()));
                }
                Ok(self.rows.iter().map(|r| (r.1 / self.structure_volume_cc * 100.0).clamp(0.0, 100.0)).collect())
            }
        }
    }
}

/// Checks block-level invariants shared by both parsers. `first_line` is the
/// document line of the first row, used for error reporting.
pub(crate) fn check_block(block: &StructureDvhBlock, first_line: usize) -> Result<(), ParseError> {
    let missing = |line| ParseError::MissingDoseTable { structure: block.structure_name.clone(), line };
    if block.rows.is_empty() {
        return Err(missing(first_line));
    }
    for (i, w) in block.rows.windows(2).enumerate() {
        if !(w[1].0 > w[0].0) {
            return Err(missing(first_line + i + 1));
        }
    }
    if !(block.structure_volume_cc >= 0.0) || !block.structure_volume_cc.is_finite() {
        return Err(ParseError::MalformedHeader(format!(
            "structure `{}` has invalid volume {}",
            block.structure_name, block.structure_volume_cc
        )));
    }
    Ok(())
}

/// The six blocks a record is built from.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedStructures<'a> {
    pub ptv60: &'a StructureDvhBlock,
    pub ptv44: &'a StructureDvhBlock,
    pub bladder: &'a StructureDvhBlock,
    pub rectum: &'a StructureDvhBlock,
    pub bladder_overlap: &'a StructureDvhBlock,
    pub rectum_overlap: &'a StructureDvhBlock,
}

/// Assembles the six features from resolved structure volumes.
pub fn extract_features(s: &ResolvedStructures<'_>) -> Result<FeatureVector, RecordError> {
    for organ in [s.bladder, s.rectum] {
        if !(organ.structure_volume_cc > 0.0) {
            return Err(RecordError::ZeroOrganVolume(organ.structure_name.clone()));
        }
    }
    let frac = |overlap: &StructureDvhBlock, organ: &StructureDvhBlock| {
        (overlap.structure_volume_cc / organ.structure_volume_cc).clamp(0.0, 1.0)
    };
    Ok(FeatureVector {
        ptv60_cc: s.ptv60.structure_volume_cc,
        ptv44_cc: s.ptv44.structure_volume_cc,
        rectum_cc: s.rectum.structure_volume_cc,
        bladder_cc: s.bladder.structure_volume_cc,
        rectum_overlap_frac: frac(s.rectum_overlap, s.rectum),
        bladder_overlap_frac: frac(s.bladder_overlap, s.bladder),
    })
}

/// Resolves the six targets, resamples both organ curves onto `grid` and
/// assembles the record.
pub fn build_record(
    blocks: &[StructureDvhBlock],
    rules: &StructureNameRules,
    case_id: &str,
    source: RecordSource,
    grid: &DoseGrid,
) -> Result<PatientRecord, RecordError> {
    let idx = rules.resolve(blocks)?;
    let resolved = ResolvedStructures {
        ptv60: &blocks[idx[Target::Ptv60]],
        ptv44: &blocks[idx[Target::Ptv44]],
        bladder: &blocks[idx[Target::Bladder]],
        rectum: &blocks[idx[Target::Rectum]],
        bladder_overlap: &blocks[idx[Target::BladderOverlap]],
        rectum_overlap: &blocks[idx[Target::RectumOverlap]],
    };
    let features = extract_features(&resolved)?;
    let curve = |b: &StructureDvhBlock| -> Result<_, RecordError> {
        let doses: Vec<f64> = b.rows.iter().map(|r| r.0).collect();
        Ok(resample_to_grid(&doses, &b.volumes_pct()?, grid)?)
    };
    let bladder = curve(resolved.bladder)?;
    let rectum = curve(resolved.rectum)?;
    Ok(PatientRecord::new(case_id, features, bladder, rectum, source)?)
}
