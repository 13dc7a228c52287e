//! Linguistic rule base: generation from training samples, conflict
//! resolution and a line-oriented text format for expert editing.
//!
//! ```text
//! # comment
//! IF ptv60 IS small AND ptv44 IS high AND rectum IS medium AND bladder IS small AND rectum_overlap IS small AND bladder_overlap IS high THEN volume_pct = 42.7 (degree=0.83, support=5)
//! ```
//!
//! All six features must appear once each, in any order. The trailing
//! `(degree=…, support=…)` is optional and defaults to `degree=1, support=1`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::partition::FuzzyPartition;
use crate::dvh::FeatureVector;

/// Rules whose summed degree falls below this are dropped.
pub const PRUNE_BELOW: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyRule {
    /// Set index per feature, in feature order.
    pub antecedent: Vec<usize>,
    /// Predicted percent volume.
    pub consequent: f64,
    /// Mean product-of-memberships of the generating samples.
    pub degree: f64,
    /// Number of generating samples.
    pub support: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("cannot generate rules from an empty cohort")]
    EmptyCohort,
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

/// Memberships of one sample: one vector per feature.
pub type SampleMemberships = Vec<Vec<f64>>;

pub fn sample_memberships(partitions: &[FuzzyPartition], x: &[f64]) -> SampleMemberships {
    partitions.iter().map(|p| p.memberships(x[p.feature_index])).collect()
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &m)| if m > b.1 { (i, m) } else { b })
}

/// One rule per distinct antecedent. A sample's antecedent takes its
/// highest-membership set per feature and its degree is the product of
/// those memberships; samples sharing an antecedent are merged into a
/// degree-weighted mean consequent.
pub fn generate_rules(memberships: &[SampleMemberships], targets: &[f64]) -> Result<Vec<FuzzyRule>, RuleError> {
    if memberships.is_empty() {
        return Err(RuleError::EmptyCohort);
    }
    // antecedent -> (Σ degree, Σ degree·target, count)
    let mut groups: BTreeMap<Vec<usize>, (f64, f64, usize)> = BTreeMap::new();
    for (mu, &y) in memberships.iter().zip(targets) {
        let mut ant = Vec::with_capacity(mu.len());
        let mut degree = 1.0;
        for m in mu {
            let (k, v) = argmax(m);
            ant.push(k);
            degree *= v;
        }
        let g = groups.entry(ant).or_insert((0.0, 0.0, 0));
        g.0 += degree;
        g.1 += degree * y;
        g.2 += 1;
    }
    Ok(groups
        .into_iter()
        .filter(|(_, (d, _, _))| *d >= PRUNE_BELOW)
        .map(|(antecedent, (d, dy, n))| FuzzyRule { antecedent, consequent: dy / d, degree: d / n as f64, support: n })
        .collect())
}

/// Renders rules with the partitions' labels. Numbers use the shortest
/// representation that parses back to the same value.
pub fn rules_to_text(rules: &[FuzzyRule], partitions: &[FuzzyPartition], header: &str) -> String {
    let mut out = String::new();
    for line in header.lines() {
        let _ = writeln!(out, "# {line}");
    }
    for r in rules {
        let terms: Vec<String> = r
            .antecedent
            .iter()
            .zip(partitions)
            .map(|(&k, p)| format!("{} IS {}", FeatureVector::NAMES[p.feature_index], p.sets[k].label))
            .collect();
        let _ = writeln!(
            out,
            "IF {} THEN volume_pct = {} (degree={}, support={})",
            terms.join(" AND "),
            r.consequent,
            r.degree,
            r.support
        );
    }
    out
}

/// Parses the text format back into rules against the given partitions
/// (one per feature, in feature order). Duplicate antecedents are rejected.
pub fn parse_rules(text: &str, partitions: &[FuzzyPartition]) -> Result<Vec<FuzzyRule>, RuleError> {
    let mut rules = Vec::new();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| RuleError::Syntax { line: line_no, message };
        let rule = parse_line(line, partitions).map_err(err)?;
        if let Some(prev) = seen.insert(rule.antecedent.clone(), line_no) {
            return Err(err(format!("antecedent repeats the rule on line {prev}")));
        }
        rules.push(rule);
    }
    Ok(rules)
}

fn parse_line(line: &str, partitions: &[FuzzyPartition]) -> Result<FuzzyRule, String> {
    let body = line.strip_prefix("IF ").ok_or("rule must start with `IF `")?;
    let (lhs, rhs) = body.split_once(" THEN ").ok_or("missing ` THEN `")?;

    let mut antecedent = vec![usize::MAX; partitions.len()];
    for term in lhs.split(" AND ") {
        let (name, label) = term.split_once(" IS ").ok_or_else(|| format!("term `{term}` lacks ` IS `"))?;
        let (name, label) = (name.trim(), label.trim());
        let f =
            FeatureVector::NAMES.iter().position(|n| *n == name).ok_or_else(|| format!("unknown feature `{name}`"))?;
        let p = partitions
            .iter()
            .position(|p| p.feature_index == f)
            .ok_or_else(|| format!("no partition for feature `{name}`"))?;
        if antecedent[p] != usize::MAX {
            return Err(format!("feature `{name}` appears twice"));
        }
        antecedent[p] = partitions[p]
            .label_index(label)
            .ok_or_else(|| format!("feature `{name}` has no set labelled `{label}`"))?;
    }
    if let Some(p) = antecedent.iter().position(|&k| k == usize::MAX) {
        return Err(format!("feature `{}` missing", FeatureVector::NAMES[partitions[p].feature_index]));
    }

    let rhs = rhs.trim().strip_prefix("volume_pct").ok_or("consequent must be `volume_pct = <value>`")?;
    let rhs = rhs.trim_start().strip_prefix('=').ok_or("consequent must be `volume_pct = <value>`")?.trim();
    let (value, extra) = match rhs.split_once('(') {
        Some((v, e)) => (v.trim(), Some(e.strip_suffix(')').ok_or("unclosed `(`")?)),
        None => (rhs, None),
    };
    let consequent: f64 = value.parse().map_err(|_| format!("bad consequent `{value}`"))?;
    if !(0.0..=100.0).contains(&consequent) {
        return Err(format!("consequent {consequent} outside [0, 100]"));
    }
    let (mut degree, mut support) = (1.0, 1);
    if let Some(extra) = extra {
        for kv in extra.split(',') {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad attribute `{kv}`"))?;
            match k.trim() {
                "degree" => degree = v.trim().parse().map_err(|_| format!("bad degree `{v}`"))?,
                "support" => support = v.trim().parse().map_err(|_| format!("bad support `{v}`"))?,
                other => return Err(format!("unknown attribute `{other}`")),
            }
        }
    }
    if !(degree > 0.0 && degree <= 1.0) {
        return Err(format!("degree {degree} outside (0, 1]"));
    }
    if support == 0 {
        return Err("support must be >= 1".into());
    }
    Ok(FuzzyRule { antecedent, consequent, degree, support })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frbp::partition::{assign_labels, hfp_partitions};

    fn partitions() -> Vec<FuzzyPartition> {
        let cores: [&[f64]; 6] = [
            &[50.0, 100.0, 150.0],
            &[100.0, 300.0],
            &[40.0, 90.0, 150.0],
            &[100.0, 300.0, 500.0],
            &[0.0, 0.2, 0.4],
            &[0.0, 0.4],
        ];
        cores.iter().enumerate().map(|(f, c)| assign_labels(hfp_partitions(c, c, f).remove(0))).collect()
    }

    fn crisp(parts: &[FuzzyPartition], sets: [usize; 6]) -> SampleMemberships {
        parts.iter().zip(sets).map(|(p, k)| p.memberships(p.cores()[k])).collect()
    }

    #[test]
    fn single_sample_single_rule() {
        let parts = partitions();
        let rules = generate_rules(&[crisp(&parts, [0, 1, 2, 0, 1, 0])], &[37.5]).unwrap();
        assert_eq!(rules.len(), 1);
        assert_eq!(rules[0].consequent, 37.5);
        assert_eq!(rules[0].antecedent, vec![0, 1, 2, 0, 1, 0]);
        assert_eq!((rules[0].degree, rules[0].support), (1.0, 1));
    }

    #[test]
    fn conflicts_average() {
        let parts = partitions();
        let s = crisp(&parts, [1, 0, 1, 1, 0, 1]);
        let rules = generate_rules(&[s.clone(), s], &[10.0, 30.0]).unwrap();
        assert_eq!(rules.len(), 1);
        assert_eq!(rules[0].consequent, 20.0);
        assert_eq!(rules[0].support, 2);
        assert!(generate_rules(&[], &[]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let parts = partitions();
        let ms = vec![crisp(&parts, [0, 1, 2, 0, 1, 0]), crisp(&parts, [2, 0, 0, 2, 2, 1])];
        let rules = generate_rules(&ms, &[42.7, 3.25]).unwrap();
        let text = rules_to_text(&rules, &parts, "dose_cgy = 5300");
        assert!(text.starts_with("# dose_cgy = 5300\nIF ptv60 IS small AND ptv44 IS high"));
        assert_eq!(parse_rules(&text, &parts).unwrap(), rules);
    }

    #[test]
    fn expert_rule_defaults() {
        let parts = partitions();
        let line = "IF bladder_overlap IS small AND ptv60 IS medium AND ptv44 IS small AND rectum IS high \
                    AND bladder IS small AND rectum_overlap IS medium THEN volume_pct = 12";
        let r = parse_rules(line, &parts).unwrap();
        assert_eq!(r[0].antecedent, vec![1, 0, 2, 0, 1, 0]);
        assert_eq!((r[0].degree, r[0].support), (1.0, 1));
    }

    #[test]
    fn syntax_errors_report_line() {
        let parts = partitions();
        let missing = "# c\nIF ptv60 IS small THEN volume_pct = 1\n";
        assert!(matches!(parse_rules(missing, &parts), Err(RuleError::Syntax { line: 2, .. })));
        let ok = "IF ptv60 IS small AND ptv44 IS small AND rectum IS small AND bladder IS small \
                  AND rectum_overlap IS small AND bladder_overlap IS small THEN volume_pct = 1";
        let dup = format!("{ok}\n{ok}\n");
        assert!(matches!(parse_rules(&dup, &parts), Err(RuleError::Syntax { line: 2, .. })));
        let bad_label = ok.replace("ptv60 IS small", "ptv60 IS tiny");
        assert!(parse_rules(&bad_label, &parts).is_err());
        assert!(parse_rules(&format!("{ok} (degree=1.5)"), &parts).is_err());
    }
}
