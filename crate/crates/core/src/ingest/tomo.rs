//! Tomotherapy-style long-format CSV export.
//!
//! Header `structure,dose_cgy,value,unit,structure_volume_cc` (columns may
//! appear in any order), one row per structure per dose bin, `unit` is
//! `pct` or `cc`. Rows of one structure must be contiguous.

use std::fmt::Write as _;

use super::{check_block, ParseError, StructureDvhBlock, VolumeUnit};

pub const TOMO_HEADER: [&str; 5] = ["structure", "dose_cgy", "value", "unit", "structure_volume_cc"];

struct Columns {
    structure: usize,
    dose: usize,
    value: usize,
    unit: usize,
    volume: usize,
}

fn locate_columns(header: &csv::StringRecord) -> Result<Columns, ParseError> {
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| ParseError::MalformedHeader(format!("missing column `{name}`")))
    };
    Ok(Columns {
        structure: find("structure")?,
        dose: find("dose_cgy")?,
        value: find("value")?,
        unit: find("unit")?,
        volume: find("structure_volume_cc")?,
    })
}

fn parse_unit(s: &str) -> Result<VolumeUnit, ParseError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "pct" | "%" => Ok(VolumeUnit::Percent),
        "cc" | "cm3" => Ok(VolumeUnit::Cc),
        other => Err(ParseError::UnitNotRecognized(other.to_string())),
    }
}

pub fn parse_tomo_csv(content: &str) -> Result<Vec<StructureDvhBlock>, ParseError> {
    if content.trim().is_empty() {
        return Err(ParseError::MalformedHeader("empty document".into()));
    }
    let mut reader =
        csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(content.as_bytes());
    let header = reader.headers().map_err(|e| ParseError::MalformedHeader(e.to_string()))?.clone();
    let cols = locate_columns(&header)?;

    let mut blocks: Vec<StructureDvhBlock> = Vec::new();
    let mut first_lines: Vec<usize> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| ParseError::MissingDoseTable {
            structure: String::new(),
            line: e.position().map_or(0, |p| p.line() as usize),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let name = record.get(cols.structure).unwrap_or("").to_string();
        let missing = || ParseError::MissingDoseTable { structure: name.clone(), line };
        if record.len() != header.len() || name.is_empty() {
            return Err(missing());
        }
        let num = |i: usize| record.get(i).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite());
        let (Some(dose), Some(value), Some(volume)) = (num(cols.dose), num(cols.value), num(cols.volume)) else {
            return Err(missing());
        };
        let unit = parse_unit(&record[cols.unit])?;

        match blocks.last_mut() {
            Some(b) if b.structure_name == name => {
                if b.unit != unit || b.structure_volume_cc != volume {
                    return Err(missing());
                }
                b.rows.push((dose, value));
            }
            _ => {
                if blocks.iter().any(|b| b.structure_name == name) {
                    // rows of one structure split across the file
                    return Err(missing());
                }
                blocks.push(StructureDvhBlock {
                    structure_name: name.clone(),
                    structure_volume_cc: volume,
                    unit,
                    rows: vec![(dose, value)],
                });
                first_lines.push(line);
            }
        }
    }
    if blocks.is_empty() {
        return Err(ParseError::MissingDoseTable { structure: String::new(), line: 2 });
    }
    for (b, &line) in blocks.iter().zip(&first_lines) {
        check_block(b, line)?;
    }
    Ok(blocks)
}

/// Writes blocks with the canonical column order.
pub fn emit_tomo_csv(blocks: &[StructureDvhBlock]) -> String {
    let mut out = TOMO_HEADER.join(",");
    out.push('\n');
    for b in blocks {
        let unit = match b.unit {
            VolumeUnit::Percent => "pct",
            VolumeUnit::Cc => "cc",
        };
        for (d, v) in &b.rows {
            let _ = writeln!(out, "{},{d},{v},{unit},{}", b.structure_name, b.structure_volume_cc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = "structure,dose_cgy,value,unit,structure_volume_cc
Rectum,0,100,pct,75.5
Rectum,10,99,pct,75.5
Rectum,20,97.25,pct,75.5
";

    #[test]
    fn single_structure() {
        let b = parse_tomo_csv(ONE).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].rows.len(), 3);
        assert_eq!(b[0].structure_volume_cc, 75.5);
        assert_eq!(b[0].unit, VolumeUnit::Percent);
    }

    #[test]
    fn shuffled_columns() {
        let doc = "unit,value,structure_volume_cc,structure,dose_cgy
cc,75.5,75.5,Rectum,0
cc,70,75.5,Rectum,10
";
        let b = parse_tomo_csv(doc).unwrap();
        assert_eq!(b[0].rows, vec![(0.0, 75.5), (10.0, 70.0)]);
        assert_eq!(b[0].unit, VolumeUnit::Cc);
    }

    #[test]
    fn ragged_row_reports_line() {
        let doc = "structure,dose_cgy,value,unit,structure_volume_cc
Rectum,0,100,pct,75.5
Rectum,10,99,pct
";
        assert_eq!(parse_tomo_csv(doc), Err(ParseError::MissingDoseTable { structure: "Rectum".into(), line: 3 }));
    }

    #[test]
    fn bad_unit_and_header() {
        let doc = "structure,dose_cgy,value,unit,structure_volume_cc\nR,0,1,ml,3\n";
        assert!(matches!(parse_tomo_csv(doc), Err(ParseError::UnitNotRecognized(_))));
        let doc = "structure,dose,value\nR,0,1\n";
        assert!(matches!(parse_tomo_csv(doc), Err(ParseError::MalformedHeader(_))));
        assert!(matches!(parse_tomo_csv(""), Err(ParseError::MalformedHeader(_))));
    }

    #[test]
    fn split_structure_rejected() {
        let doc = "structure,dose_cgy,value,unit,structure_volume_cc
A,0,100,pct,1
B,0,100,pct,1
A,10,90,pct,1
";
        assert!(matches!(parse_tomo_csv(doc), Err(ParseError::MissingDoseTable { line: 4, .. })));
    }

    #[test]
    fn emit_then_parse_is_identity() {
        let blocks = parse_tomo_csv(ONE).unwrap();
        assert_eq!(parse_tomo_csv(&emit_tomo_csv(&blocks)).unwrap(), blocks);
    }
}
