//! CSV emission of error reports and Kruskal-Wallis summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{kruskal_wallis, DoseBand, ErrorReport, EvalError, KW_DOSES};
use crate::dvh::{CumulativeDvh, Organ, PatientRecord};
use crate::regress::AlgorithmId;

pub const REPORT_COLUMNS: [&str; 9] =
    ["method", "dataset", "0-6420", "0-1990", "2000-3990", "4000-6420", "5300", "5600", "6000"];

/// One row per report, in the given order.
pub fn report_csv(reports: &[ErrorReport]) -> String {
    let mut out = REPORT_COLUMNS.join(",");
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{},{}", r.algorithm, r.dataset);
        for band in DoseBand::ALL {
            let _ = write!(out, ",{:.4}", r.band_mae.get(band));
        }
        for v in r.point_mae {
            let _ = write!(out, ",{v:.4}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KruskalRow {
    pub method: AlgorithmId,
    pub organ: Organ,
    pub dose_cgy: f64,
    pub h_statistic: f64,
    pub p_value: f64,
}

/// Compares actual and predicted volumes across the cohort at each test
/// dose (two groups per dose).
pub fn kruskal_summary<F>(
    method: AlgorithmId,
    organ: Organ,
    cohort: &[PatientRecord],
    mut predict: F,
) -> Result<Vec<KruskalRow>, EvalError>
where
    F: FnMut(&PatientRecord) -> CumulativeDvh,
{
    let preds: Vec<CumulativeDvh> = cohort.iter().map(&mut predict).collect();
    KW_DOSES
        .iter()
        .map(|&dose| {
            let actual = cohort.iter().map(|r| r.curve(organ).value_at(dose)).collect::<Result<Vec<_>, _>>()?;
            let predicted = preds.iter().map(|c| c.value_at(dose)).collect::<Result<Vec<_>, _>>()?;
            let kw = kruskal_wallis(&[actual, predicted])?;
            Ok(KruskalRow { method, organ, dose_cgy: dose, h_statistic: kw.h, p_value: kw.p_value })
        })
        .collect()
}

pub fn kruskal_csv(rows: &[KruskalRow]) -> String {
    let mut out = String::from("method,dose_cgy,h_statistic,p_value\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6},{:.6}", r.method, r.dose_cgy, r.h_statistic, r.p_value);
    }
    out
}
