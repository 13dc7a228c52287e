//! Parse the bundled export fixtures into records and screen a file for
//! identifying labels.
//!
//! cargo run --example ingest_exports

use std::path::Path;

use dvhpred::config::PipelineConfig;
use dvhpred::ingest::{deidentify_check, parse_eclipse_text, PiiPatterns};
use dvhpred::pipeline::cmd_ingest;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/exports");
    let outcome = cmd_ingest(&dir, &PipelineConfig::default())?;
    for r in &outcome.library.records {
        let f = &r.features;
        println!(
            "{}: ptv60 {:.1} cc, bladder {:.1} cc, rectum {:.1} cc, overlap bladder {:.3} rectum {:.3}",
            r.case_id, f.ptv60_cc, f.bladder_cc, f.rectum_cc, f.bladder_overlap_frac, f.rectum_overlap_frac
        );
    }

    let text = std::fs::read_to_string(dir.join("SYN-11-0000.txt"))?;
    for b in parse_eclipse_text(&text)? {
        println!("  {:<16} {:>8.1} cc  {} rows", b.structure_name, b.structure_volume_cc, b.rows.len());
    }

    let tainted = format!("Patient Name: Doe^Jane\n{text}");
    let report = deidentify_check(&tainted, &PiiPatterns::default());
    println!("tainted copy passes screening: {}, hits {:?}", report.passed(), report.offending);
    Ok(())
}
