//! Screening exports for patient-identifying field labels.
//!
//! `Patient ID:` is part of the text export layout and carries the
//! pseudonymous case id, so it is not on the default list.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PiiPatterns(pub Vec<String>);

impl Default for PiiPatterns {
    fn default() -> Self {
        Self(
            [
                "patient name",
                "name:",
                "date of birth",
                "birth date",
                "dob:",
                "mrn:",
                "medical record",
                "address:",
                "phone:",
                "ssn:",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeidReport {
    /// `(1-based line number, matched label)`
    pub offending: Vec<(usize, String)>,
}

impl DeidReport {
    pub fn passed(&self) -> bool {
        self.offending.is_empty()
    }
}

pub fn deidentify_check(content: &str, patterns: &PiiPatterns) -> DeidReport {
    let labels: Vec<String> = patterns.0.iter().map(|p| p.to_lowercase()).filter(|p| !p.is_empty()).collect();
    let offending = content
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let lower = line.to_lowercase();
            labels.iter().find(|l| lower.contains(l.as_str())).map(|l| (i + 1, l.clone()))
        })
        .collect();
    DeidReport { offending }
}
