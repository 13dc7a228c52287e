//! Structure-name resolution.
//!
//! Each target structure owns an ordered list of case-insensitive patterns.
//! A pattern matches when its `*`-separated pieces occur in the structure
//! name in order (so `rect*overlap` matches `Rectum_PTV60_Overlap`). For each
//! target the first pattern that matches anything decides; two or more hits
//! for that pattern is an error. Targets are resolved in [`Target::RESOLUTION_ORDER`]
//! and a claimed block is not offered to later targets, which keeps `bladder`
//! from also matching `Bladder_PTV60_overlap`.

use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use super::{RecordError, StructureDvhBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Ptv60,
    Ptv44,
    Bladder,
    Rectum,
    BladderOverlap,
    RectumOverlap,
}

impl Target {
    pub const RESOLUTION_ORDER: [Target; 6] =
        [Target::RectumOverlap, Target::BladderOverlap, Target::Ptv60, Target::Ptv44, Target::Bladder, Target::Rectum];

    fn slot(self) -> usize {
        match self {
            Target::Ptv60 => 0,
            Target::Ptv44 => 1,
            Target::Bladder => 2,
            Target::Rectum => 3,
            Target::BladderOverlap => 4,
            Target::RectumOverlap => 5,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Target::Ptv60 => "PTV60",
            Target::Ptv44 => "PTV44",
            Target::Bladder => "Bladder",
            Target::Rectum => "Rectum",
            Target::BladderOverlap => "BladderOverlap",
            Target::RectumOverlap => "RectumOverlap",
        };
        f.write_str(s)
    }
}

/// Block indices for the six resolved targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolved([usize; 6]);

impl Index<Target> for Resolved {
    type Output = usize;

    fn index(&self, t: Target) -> &usize {
        &self.0[t.slot()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureNameRules {
    pub ptv60: Vec<String>,
    pub ptv44: Vec<String>,
    pub bladder: Vec<String>,
    pub rectum: Vec<String>,
    pub bladder_overlap: Vec<String>,
    pub rectum_overlap: Vec<String>,
}

impl Default for StructureNameRules {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            ptv60: v(&["ptv60", "ptv_60", "ptv 60", "ptv6000"]),
            ptv44: v(&["ptv44", "ptv_44", "ptv 44", "ptv4400"]),
            bladder: v(&["bladder"]),
            rectum: v(&["anorectum", "rectum"]),
            bladder_overlap: v(&["blad*ptv60*overlap", "blad*overlap", "overlap*blad"]),
            rectum_overlap: v(&["rect*ptv60*overlap", "rect*overlap", "overlap*rect"]),
        }
    }
}

impl StructureNameRules {
    pub fn patterns(&self, target: Target) -> &[String] {
        match target {
            Target::Ptv60 => &self.ptv60,
            Target::Ptv44 => &self.ptv44,
            Target::Bladder => &self.bladder,
            Target::Rectum => &self.rectum,
            Target::BladderOverlap => &self.bladder_overlap,
            Target::RectumOverlap => &self.rectum_overlap,
        }
    }

    /// Every target needs at least one non-empty pattern.
    pub fn validate(&self) -> Result<(), String> {
        for t in Target::RESOLUTION_ORDER {
            if !self.patterns(t).iter().any(|p| !p.trim().is_empty()) {
                return Err(format!("no name pattern configured for {t}"));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, blocks: &[StructureDvhBlock]) -> Result<Resolved, RecordError> {
        let mut claimed = vec![false; blocks.len()];
        let mut out = [usize::MAX; 6];
        for target in Target::RESOLUTION_ORDER {
            let mut found = None;
            for pattern in self.patterns(target) {
                let hits: Vec<usize> = (0..blocks.len())
                    .filter(|&i| !claimed[i] && wildcard_match(pattern, &blocks[i].structure_name))
                    .collect();
                match hits.len() {
                    0 => continue,
                    1 => {
                        found = Some(hits[0]);
                        break;
                    }
                    _ => {
                        return Err(RecordError::AmbiguousMatch {
                            target,
                            names: hits.iter().map(|&i| blocks[i].structure_name.clone()).collect(),
                        })
                    }
                }
            }
            let i = found.ok_or(RecordError::StructureUnresolved(target))?;
            claimed[i] = true;
            out[target.slot()] = i;
        }
        Ok(Resolved(out))
    }
}

/// Case-insensitive, unanchored `*` wildcard match.
pub fn wildcard_match(pattern: &str, name: &str) -> bool {
    let pattern = pattern.trim().to_lowercase();
    let name = name.to_lowercase();
    if pattern.is_empty() {
        return false;
    }
    let mut rest = name.as_str();
    for piece in pattern.split('*').filter(|p| !p.is_empty()) {
        match rest.find(piece) {
            Some(pos) => rest = &rest[pos + piece.len()..],
            None => return false,
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::VolumeUnit;

    fn named(name: &str) -> StructureDvhBlock {
        StructureDvhBlock {
            structure_name: name.into(),
            structure_volume_cc: 1.0,
            unit: VolumeUnit::Percent,
            rows: vec![(0.0, 100.0)],
        }
    }

    #[test]
    fn wildcard_semantics() {
        assert!(wildcard_match("rect*ptv60*overlap", "Rectum_PTV60_Overlap"));
        assert!(wildcard_match("bladder", "URINARY BLADDER"));
        assert!(!wildcard_match("rect*overlap", "Overlap_Rectum"));
        assert!(wildcard_match("overlap*rect", "Overlap_Rectum"));
        assert!(!wildcard_match("", "anything"));
    }

    #[test]
    fn resolution_is_claim_ordered() {
        let blocks: Vec<_> = ["Bladder_PTV60_overlap", "Bladder", "PTV60", "PTV44", "Rectum", "rect_ptv60_overlap"]
            .iter()
            .map(|n| named(n))
            .collect();
        let r = StructureNameRules::default().resolve(&blocks).unwrap();
        assert_eq!(r[Target::Bladder], 1);
        assert_eq!(r[Target::BladderOverlap], 0);
        assert_eq!(r[Target::RectumOverlap], 5);
        assert_eq!(r[Target::Rectum], 4);
        // deterministic
        assert_eq!(StructureNameRules::default().resolve(&blocks).unwrap(), r);
    }

    #[test]
    fn first_matching_pattern_wins() {
        // "anorectum" outranks the generic "rectum" pattern
        let blocks: Vec<_> = ["Anorectum", "PTV60", "PTV44", "Bladder", "Bladder_overlap", "Rect_overlap"]
            .iter()
            .map(|n| named(n))
            .collect();
        let r = StructureNameRules::default().resolve(&blocks).unwrap();
        assert_eq!(r[Target::Rectum], 0);
    }

    #[test]
    fn validation_needs_patterns() {
        let mut rules = StructureNameRules::default();
        assert!(rules.validate().is_ok());
        rules.ptv44 = vec!["  ".into()];
        assert!(rules.validate().is_err());
    }
}
