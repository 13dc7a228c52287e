//! Eclipse-style sectioned text export.
//!
//! ```text
//! Patient ID: ANON-0001
//!
//! Structure: PTV60
//! Volume [cm3]: 123.4
//!
//! Dose [cGy]  Ratio of Total Structure Volume [%]
//! 0  100
//! 10  100
//! ...
//! ```
//!
//! Sections repeat per structure. The volume column may be
//! `Structure Volume [cm3]` instead, and `Dose [Gy]` tables are converted to
//! cGy. The full grammar is in `docs/export_formats.md`.

use std::fmt::Write as _;

use super::{check_block, ParseError, StructureDvhBlock, VolumeUnit};

const PATIENT_ID: &str = "Patient ID:";
const STRUCTURE: &str = "Structure:";
const VOLUME: &str = "Volume [cm3]:";

pub fn read_patient_id(content: &str) -> Option<String> {
    content
        .lines()
        .take_while(|l| !l.trim_start().starts_with(STRUCTURE))
        .find_map(|l| l.trim().strip_prefix(PATIENT_ID).map(|id| id.trim().to_string()))
        .filter(|id| !id.is_empty())
}

/// Parses every structure section of an Eclipse-style export.
pub fn parse_eclipse_text(content: &str) -> Result<Vec<StructureDvhBlock>, ParseError> {
    let lines: Vec<(usize, &str)> = content.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).collect();
    if lines.iter().all(|(_, l)| l.is_empty()) {
        return Err(ParseError::MalformedHeader("empty document".into()));
    }
    let first_structure = lines.iter().position(|(_, l)| l.starts_with(STRUCTURE));
    let header_end = first_structure.unwrap_or(lines.len());
    if !lines[..header_end].iter().any(|(_, l)| l.starts_with(PATIENT_ID)) {
        return Err(ParseError::MalformedHeader("missing `Patient ID:` line".into()));
    }
    let Some(mut pos) = first_structure else {
        return Err(ParseError::MalformedHeader("no `Structure:` sections".into()));
    };

    let mut blocks = Vec::new();
    while pos < lines.len() {
        let (_, line) = lines[pos];
        if line.is_empty() {
            pos += 1;
            continue;
        }
        let name = line
            .strip_prefix(STRUCTURE)
            .map(str::trim)
            .filter(|n| !n.is_empty())
            .ok_or_else(|| ParseError::MalformedHeader(format!("expected `Structure:` at line {}", lines[pos].0)))?
            .to_string();
        pos += 1;

        pos = skip_blank(&lines, pos);
        let volume_cc = lines
            .get(pos)
            .and_then(|(_, l)| l.strip_prefix(VOLUME))
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| ParseError::MalformedHeader(format!("structure `{name}` lacks a `{VOLUME}` line")))?;
        pos += 1;

        pos = skip_blank(&lines, pos);
        let missing = |line: usize| ParseError::MissingDoseTable { structure: name.clone(), line };
        let (header_line, column_header) = match lines.get(pos) {
            Some(&(n, l)) if l.starts_with("Dose") => (n, l),
            Some(&(n, _)) => return Err(missing(n)),
            None => return Err(missing(lines.len() + 1)),
        };
        let (dose_scale, unit) = parse_column_header(column_header)?;
        pos += 1;

        let mut rows = Vec::new();
        while let Some(&(n, l)) = lines.get(pos) {
            if l.is_empty() || l.starts_with(STRUCTURE) {
                break;
            }
            let mut it = l.split_whitespace();
            let row = match (it.next(), it.next(), it.next()) {
                (Some(d), Some(v), None) => d.parse::<f64>().ok().zip(v.parse::<f64>().ok()),
                _ => None,
            };
            let (d, v) = row.filter(|(d, v)| d.is_finite() && v.is_finite()).ok_or_else(|| missing(n))?;
            rows.push((d * dose_scale, v));
            pos += 1;
        }
        let block = StructureDvhBlock { structure_name: name, structure_volume_cc: volume_cc, unit, rows };
        check_block(&block, header_line + 1)?;
        blocks.push(block);
    }
    Ok(blocks)
}

fn skip_blank(lines: &[(usize, &str)], mut pos: usize) -> usize {
    while pos < lines.len() && lines[pos].1.is_empty() {
        pos += 1;
    }
    pos
}

/// Returns the factor converting the dose column to cGy and the volume unit.
fn parse_column_header(header: &str) -> Result<(f64, VolumeUnit), ParseError> {
    let rest = header.strip_prefix("Dose").unwrap_or(header).trim_start();
    let dose_scale = if rest.starts_with("[cGy]") {
        1.0
    } else if rest.starts_with("[Gy]") {
        100.0
    } else {
        return Err(ParseError::UnitNotRecognized(header.to_string()));
    };
    let volume_part = &rest[rest.find(']').map_or(0, |i| i + 1)..];
    let unit = if volume_part.contains("[%]") {
        VolumeUnit::Percent
    } else if volume_part.contains("[cm3]") || volume_part.contains("[cc]") {
        VolumeUnit::Cc
    } else {
        return Err(ParseError::UnitNotRecognized(header.to_string()));
    };
    Ok((dose_scale, unit))
}

/// Writes blocks in the layout [`parse_eclipse_text`] reads. Dose is always
/// written in cGy; numbers use the shortest round-tripping representation.
pub fn emit_eclipse_text(patient_id: &str, blocks: &[StructureDvhBlock]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{PATIENT_ID} {patient_id}");
    for b in blocks {
        let _ = writeln!(out);
        let _ = writeln!(out, "{STRUCTURE} {}", b.structure_name);
        let _ = writeln!(out, "{VOLUME} {}", b.structure_volume_cc);
        let _ = writeln!(out);
        let column = match b.unit {
            VolumeUnit::Percent => "Ratio of Total Structure Volume [%]",
            VolumeUnit::Cc => "Structure Volume [cm3]",
        };
        let _ = writeln!(out, "Dose [cGy]  {column}");
        for (d, v) in &b.rows {
            let _ = writeln!(out, "{d}  {v}");
        }
    }
    out
}
