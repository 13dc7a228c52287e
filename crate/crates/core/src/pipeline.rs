//! The commands behind the CLI: ingest, synth, train, evaluate, predict and
//! band. Each returns typed results; file output is kept in small `write_*`
//! helpers so tests and the HTTP service can reuse the computations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{BundleError, EnsembleMembers, ModelBundle};
use crate::config::{ConfigError, ConstraintFlag, ConstraintSet, PipelineConfig};
use crate::dvh::{CumulativeDvh, DoseGrid, DvhError, FeatureVector, Organ, PatientRecord, RecordSource};
use crate::eval::{
    cohort_error_report, kruskal_csv, kruskal_summary, report_csv, select_best, split_cohort, ErrorReport, EvalError,
    KruskalRow, POINT_DOSES,
};
use crate::ingest::{
    build_record, deidentify_check, parse_eclipse_text, parse_tomo_csv, read_patient_id, StructureDvhBlock,
};
use crate::regress::{default_grid, grid_search_cv, train_dvh_model, AlgorithmId, CvScore, FitError};
use crate::synth::{export_fixture, synth_cohort, ExportFormat, SynthError};
use crate::weibull::{
    band_coverage, band_coverage_fitted, band_csv, build_band, parse_band_csv, ConfidenceBand, FitStatus, WeibullError,
};

/// Minimum training-portion size: one more than the feature count.
pub const MIN_TRAIN_RECORDS: usize = FeatureVector::DIM + 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Input(String),
    #[error("no parseable export files in {0}")]
    NoParseableFiles(String),
    #[error("{file}: line {line} carries patient-identifying label `{label}`")]
    PiiDetected { file: String, line: usize, label: String },
    #[error("need at least {needed} training records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("validation library is empty")]
    EmptyValidation,
    #[error("invalid features: {0}")]
    InvalidFeatures(DvhError),
    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("training failed: {0}")]
    Fit(#[from] FitError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("band construction failed: {0}")]
    Band(#[from] WeibullError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl PipelineError {
    /// Process exit status: 1 for bad input, 2 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Fit(_) | Self::Eval(_) | Self::Band(_) => 2,
            Self::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => 2,
            Self::Bundle(BundleError::Io(e)) if e.kind() != std::io::ErrorKind::NotFound => 2,
            _ => 1,
        }
    }
}

impl From<SynthError> for PipelineError {
    fn from(e: SynthError) -> Self {
        Self::Input(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

const LIBRARY_FORMAT: &str = "dvh-library";

/// Organ dose-volume library with the matching feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Library {
    pub format: String,
    pub version: u32,
    pub grid: DoseGrid,
    pub records: Vec<PatientRecord>,
}

impl Library {
    pub fn new(grid: DoseGrid, records: Vec<PatientRecord>) -> Self {
        Self { format: LIBRARY_FORMAT.into(), version: 1, grid, records }
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let json = serde_json::to_string(self).map_err(|e| PipelineError::Input(e.to_string()))?;
        write_file(path, json)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let lib: Self = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Input(format!("{}: not a library file: {e}", path.display())))?;
        if lib.format != LIBRARY_FORMAT || lib.version != 1 {
            return Err(PipelineError::Input(format!("{}: unsupported library format", path.display())));
        }
        for r in &lib.records {
            if Organ::ALL.iter().any(|o| *r.curve(*o).grid() != lib.grid) {
                return Err(PipelineError::Input(format!("record `{}` is not on the library grid", r.case_id)));
            }
        }
        Ok(lib)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileFailure {
    pub file: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub library: Library,
    pub failures: Vec<FileFailure>,
}

fn ingest_file(path: &Path, content: &str, config: &PipelineConfig, grid: &DoseGrid) -> Result<PatientRecord, String> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("case").to_string();
    let (blocks, case_id, source): (Vec<StructureDvhBlock>, String, RecordSource) = match ext.as_deref() {
        Some("txt") => {
            let blocks = parse_eclipse_text(content).map_err(|e| e.to_string())?;
            (blocks, read_patient_id(content).unwrap_or(stem), RecordSource::EclipseText)
        }
        Some("csv") => (parse_tomo_csv(content).map_err(|e| e.to_string())?, stem, RecordSource::TomoCsv),
        _ => return Err("unsupported extension (expected .txt or .csv)".into()),
    };
    build_record(&blocks, &config.ingest.rules, &case_id, source, grid).map_err(|e| e.to_string())
}

/// Parses every `.txt` (Eclipse) and `.csv` (Tomotherapy) export in `dir`,
/// in file-name order. Unparseable files are reported and skipped; a file
/// carrying identifying labels aborts the whole run.
pub fn cmd_ingest(dir: &Path, config: &PipelineConfig) -> Result<IngestOutcome, PipelineError> {
    let grid = config.dose_grid()?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')))
        .collect();
    paths.sort();

    let mut records: Vec<PatientRecord> = Vec::new();
    let mut failures = Vec::new();
    for path in &paths {
        let file = path.display().to_string();
        let content = match std::fs::read_to_string(path) {
            Ok(c) => c,
            Err(e) => {
                failures.push(FileFailure { file, reason: e.to_string() });
                continue;
            }
        };
        let deid = deidentify_check(&content, &config.ingest.pii_patterns);
        if let Some((line, label)) = deid.offending.first() {
            return Err(PipelineError::PiiDetected { file, line: *line, label: label.clone() });
        }
        match ingest_file(path, &content, config, &grid) {
            Ok(r) if records.iter().any(|x| x.case_id == r.case_id) => {
                failures.push(FileFailure { file, reason: format!("duplicate case id `{}`", r.case_id) })
            }
            Ok(r) => records.push(r),
            Err(reason) => failures.push(FileFailure { file, reason }),
        }
    }
    if records.is_empty() {
        return Err(PipelineError::NoParseableFiles(dir.display().to_string()));
    }
    Ok(IngestOutcome { library: Library::new(grid, records), failures })
}

/// Layout of generated fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureLayout {
    Eclipse,
    Tomo,
    /// Eclipse for even case indices, Tomotherapy for odd.
    Mixed,
}

/// Generates the configured synthetic cohort and writes one export file per
/// case into `out_dir`.
pub fn cmd_synth(
    config: &PipelineConfig,
    out_dir: &Path,
    layout: FixtureLayout,
) -> Result<(Vec<PatientRecord>, Vec<PathBuf>), PipelineError> {
    let grid = config.dose_grid()?;
    let cohort = synth_cohort(&config.synth, &grid)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::with_capacity(cohort.len());
    for (i, r) in cohort.iter().enumerate() {
        let format = match layout {
            FixtureLayout::Eclipse => ExportFormat::Eclipse,
            FixtureLayout::Tomo => ExportFormat::Tomo,
            FixtureLayout::Mixed if i % 2 == 0 => ExportFormat::Eclipse,
            FixtureLayout::Mixed => ExportFormat::Tomo,
        };
        let path = out_dir.join(format!("{}.{}", r.case_id, format.extension()));
        write_file(&path, export_fixture(r, format))?;
        written.push(path);
    }
    Ok((cohort, written))
}

#[derive(Debug, Clone, Serialize)]
pub struct TuningResult {
    pub organ: Organ,
    pub algorithm: AlgorithmId,
    pub table: Vec<CvScore>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub n_train: usize,
    pub n_test: usize,
    /// Errors on the test portion, base models then ensembles, per organ.
    pub test_reports: Vec<ErrorReport>,
    pub tuning: Vec<TuningResult>,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn ensemble_reports(
    bundle: &ModelBundle,
    organ: Organ,
    dataset: &str,
    cohort: &[PatientRecord],
) -> Result<Vec<ErrorReport>, PipelineError> {
    let mut out = Vec::new();
    for alg in bundle.roster(organ).into_iter().filter(|a| a.is_ensemble()) {
        let mut failure = None;
        let report = cohort_error_report(alg, organ, dataset, cohort, |f| {
            bundle.predict(alg, organ, f).unwrap_or_else(|e| {
                failure = Some(e);
                CumulativeDvh::new(bundle.meta.grid, vec![0.0; bundle.meta.grid.n_bins]).expect("zero curve")
            })
        })?;
        if let Some(e) = failure {
            return Err(e.into());
        }
        out.push(report);
    }
    Ok(out)
}

/// Splits the library, optionally tunes each algorithm on the test part,
/// fits every configured algorithm per organ on the training part, picks
/// the ensemble members by test error and builds the training bands.
pub fn cmd_train(library: &Library, config: &PipelineConfig) -> Result<TrainOutcome, PipelineError> {
    config.validate()?;
    let seed = config.seed;
    let (train, test) = split_cohort(&library.records, config.train.train_ratio, seed);
    if train.len() < MIN_TRAIN_RECORDS || test.is_empty() {
        return Err(PipelineError::TooFewRecords { needed: MIN_TRAIN_RECORDS, got: train.len() });
    }
    if config.train.tune && test.len() < config.train.cv_folds {
        return Err(PipelineError::TooFewRecords { needed: config.train.cv_folds, got: test.len() });
    }

    let mut models = Vec::new();
    let mut test_reports = Vec::new();
    let mut tuning = Vec::new();
    let mut ensembles = BTreeMap::new();
    let mut bands = BTreeMap::new();
    for organ in Organ::ALL {
        let mut organ_reports = Vec::new();
        for &alg in &config.train.algorithms {
            let mut params = config.hyperparams.for_algorithm(alg).ok_or(FitError::NotTrainable(alg))?;
            if config.train.tune {
                let grid = default_grid(alg);
                let (best, table) = grid_search_cv(organ, &test, &grid, config.train.cv_folds, seed)?;
                tuning.push(TuningResult { organ, algorithm: alg, table });
                params = best;
            }
            let model = train_dvh_model(alg, organ, &train, &params, seed)?;
            organ_reports
                .push(cohort_error_report(alg, organ, "test", &test, |f| crate::regress::predict_dvh(&model, f))?);
            models.push(model);
        }
        let n = organ_reports.len();
        let members = EnsembleMembers {
            best3: if n >= 3 { select_best(&organ_reports, 3) } else { Vec::new() },
            best6: if n >= 6 { select_best(&organ_reports, 6) } else { Vec::new() },
        };
        ensembles.insert(organ, members);
        test_reports.extend(organ_reports);
        let curves: Vec<CumulativeDvh> = train.iter().map(|r| r.curve(organ).clone()).collect();
        bands.insert(organ, build_band(&curves, &config.band)?);
    }

    let split = (train.iter().map(|r| r.case_id.clone()).collect(), test.iter().map(|r| r.case_id.clone()).collect());
    let bundle = ModelBundle::new(seed, library.grid, split, models, ensembles, bands, now_unix());
    for organ in Organ::ALL {
        let extra = ensemble_reports(&bundle, organ, "test", &test)?;
        test_reports.extend(extra);
    }
    Ok(TrainOutcome { bundle, n_train: train.len(), n_test: test.len(), test_reports, tuning })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub organ: Organ,
    /// `actual` for the recorded curves, otherwise the algorithm name.
    pub source: String,
    pub coverage: f64,
    pub coverage_fitted: f64,
}

#[derive(Debug, Clone)]
pub struct EvaluateOutcome {
    pub reports: BTreeMap<Organ, Vec<ErrorReport>>,
    pub kruskal: BTreeMap<Organ, Vec<KruskalRow>>,
    pub coverage: Vec<CoverageRow>,
}

/// Scores every servable model and ensemble on the validation cohort.
pub fn cmd_evaluate(
    bundle: &ModelBundle,
    validation: &[PatientRecord],
    dataset: &str,
) -> Result<EvaluateOutcome, PipelineError> {
    if validation.is_empty() {
        return Err(PipelineError::EmptyValidation);
    }
    for r in validation {
        if Organ::ALL.iter().any(|o| *r.curve(*o).grid() != bundle.meta.grid) {
            return Err(PipelineError::Input(format!("record `{}` is not on the bundle grid", r.case_id)));
        }
    }
    let mut reports = BTreeMap::new();
    let mut kruskal = BTreeMap::new();
    let mut coverage = Vec::new();
    for organ in Organ::ALL {
        let roster = bundle.roster(organ);
        if roster.is_empty() {
            continue;
        }
        let band = bundle.bands.get(&organ);
        let actual: Vec<CumulativeDvh> = validation.iter().map(|r| r.curve(organ).clone()).collect();
        if let Some(band) = band {
            coverage.push(CoverageRow {
                organ,
                source: "actual".into(),
                coverage: band_coverage(band, &actual)?,
                coverage_fitted: band_coverage_fitted(band, &actual)?,
            });
        }
        let mut organ_reports = Vec::new();
        let mut organ_kw = Vec::new();
        for alg in roster {
            let preds: Vec<CumulativeDvh> =
                validation.iter().map(|r| bundle.predict(alg, organ, &r.features)).collect::<Result<_, _>>()?;
            let mut it = preds.iter();
            organ_reports.push(cohort_error_report(alg, organ, dataset, validation, |_| {
                it.next().expect("one prediction per record").clone()
            })?);
            let mut it = preds.iter();
            organ_kw.extend(kruskal_summary(alg, organ, validation, |_| it.next().expect("one per record").clone())?);
            if let Some(band) = band {
                coverage.push(CoverageRow {
                    organ,
                    source: alg.to_string(),
                    coverage: band_coverage(band, &preds)?,
                    coverage_fitted: band_coverage_fitted(band, &preds)?,
                });
            }
        }
        reports.insert(organ, organ_reports);
        kruskal.insert(organ, organ_kw);
    }
    Ok(EvaluateOutcome { reports, kruskal, coverage })
}

pub fn coverage_csv(rows: &[CoverageRow]) -> String {
    let mut out = String::from("organ,source,coverage,coverage_fitted\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.4},{:.4}", r.organ, r.source, r.coverage, r.coverage_fitted);
    }
    out
}

/// Writes `report_<organ>.csv/.json`, `kruskal_<organ>.csv` and
/// `band_coverage.csv` into `out_dir`.
pub fn write_evaluation(outcome: &EvaluateOutcome, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<(), PipelineError> {
        let p = out_dir.join(name);
        write_file(&p, body)?;
        written.push(p);
        Ok(())
    };
    for (organ, reports) in &outcome.reports {
        put(format!("report_{organ}.csv"), report_csv(reports))?;
        put(
            format!("report_{organ}.json"),
            serde_json::to_string_pretty(reports).map_err(|e| PipelineError::Input(e.to_string()))?,
        )?;
    }
    for (organ, rows) in &outcome.kruskal {
        put(format!("kruskal_{organ}.csv"), kruskal_csv(rows))?;
    }
    put("band_coverage.csv".into(), coverage_csv(&outcome.coverage))?;
    Ok(written)
}

/// A curve on a regular grid as sent over the API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveJson {
    pub start_cgy: f64,
    pub step_cgy: f64,
    pub values: Vec<f64>,
}

impl From<&CumulativeDvh> for CurveJson {
    fn from(c: &CumulativeDvh) -> Self {
        Self { start_cgy: c.grid().start_cgy, step_cgy: c.grid().step_cgy, values: c.values().to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandJson {
    pub start_cgy: f64,
    pub step_cgy: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub fit_status: Vec<FitStatus>,
}

impl From<&ConfidenceBand> for BandJson {
    fn from(b: &ConfidenceBand) -> Self {
        Self {
            start_cgy: b.grid.start_cgy,
            step_cgy: b.grid.step_cgy,
            lower: b.lower.clone(),
            upper: b.upper.clone(),
            fit_status: b.fit_status.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDose {
    pub dose_cgy: f64,
    pub volume_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub features: FeatureVector,
    pub organ: Organ,
    /// Algorithm names; empty selects every servable model.
    #[serde(default)]
    pub algorithms: Vec<String>,
}

/// Shared by `predict` on the command line and `POST /api/predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub organ: Organ,
    pub curves: BTreeMap<String, CurveJson>,
    pub band: Option<BandJson>,
    pub point_doses: BTreeMap<String, Vec<PointDose>>,
    pub constraint_flags: BTreeMap<String, Vec<ConstraintFlag>>,
}

fn resolve_algorithms(bundle: &ModelBundle, organ: Organ, names: &[String]) -> Result<Vec<AlgorithmId>, PipelineError> {
    let roster = bundle.roster(organ);
    if names.is_empty() {
        return Ok(roster);
    }
    names
        .iter()
        .map(|n| {
            n.parse::<AlgorithmId>()
                .ok()
                .filter(|a| roster.contains(a))
                .ok_or_else(|| PipelineError::UnknownAlgorithm(n.clone()))
        })
        .collect()
}

/// Predicted curves, point-dose readouts and constraint checks for one case.
pub fn predict_case(
    bundle: &ModelBundle,
    constraints: &ConstraintSet,
    request: &PredictRequest,
) -> Result<PredictResponse, PipelineError> {
    request.features.validate().map_err(PipelineError::InvalidFeatures)?;
    let algorithms = resolve_algorithms(bundle, request.organ, &request.algorithms)?;
    let organ = request.organ;
    let mut resp = PredictResponse {
        organ,
        curves: BTreeMap::new(),
        band: bundle.bands.get(&organ).map(BandJson::from),
        point_doses: BTreeMap::new(),
        constraint_flags: BTreeMap::new(),
    };
    for alg in algorithms {
        let curve = bundle.predict(alg, organ, &request.features)?;
        let points = POINT_DOSES
            .iter()
            .map(|&d| {
                Ok(PointDose { dose_cgy: d, volume_pct: curve.value_at(d).map_err(PipelineError::InvalidFeatures)? })
            })
            .collect::<Result<_, PipelineError>>()?;
        let key = alg.to_string();
        resp.point_doses.insert(key.clone(), points);
        resp.constraint_flags.insert(key.clone(), constraints.check(organ, &curve));
        resp.curves.insert(key, CurveJson::from(&curve));
    }
    Ok(resp)
}

/// `dose_cgy` followed by one column per algorithm.
pub fn predict_csv(resp: &PredictResponse) -> String {
    let names: Vec<&String> = resp.curves.keys().collect();
    let mut out = String::from("dose_cgy");
    for n in &names {
        let _ = write!(out, ",{n}");
    }
    out.push('\n');
    let Some(first) = resp.curves.values().next() else {
        return out;
    };
    for b in 0..first.values.len() {
        let _ = write!(out, "{}", first.start_cgy + first.step_cgy * b as f64);
        for n in &names {
            let _ = write!(out, ",{}", resp.curves[*n].values[b]);
        }
        out.push('\n');
    }
    out
}

/// Per-organ Weibull bands of a library's curves.
pub fn cmd_band(library: &Library, config: &PipelineConfig) -> Result<BTreeMap<Organ, ConfidenceBand>, PipelineError> {
    let mut out = BTreeMap::new();
    for organ in Organ::ALL {
        let curves: Vec<CumulativeDvh> = library.records.iter().map(|r| r.curve(organ).clone()).collect();
        out.insert(organ, build_band(&curves, &config.band)?);
    }
    Ok(out)
}

pub fn write_bands(bands: &BTreeMap<Organ, ConfidenceBand>, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    for (organ, band) in bands {
        let p = out_dir.join(format!("band_{organ}.csv"));
        write_file(&p, band_csv(band))?;
        written.push(p);
    }
    Ok(written)
}

/// Replaces bundle bands with the CSV bands written by `band`, keyed by organ.
pub fn apply_band_files(bundle: &mut ModelBundle, files: &[(Organ, PathBuf)]) -> Result<(), PipelineError> {
    for (organ, path) in files {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let band = parse_band_csv(&text).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
        if band.grid != bundle.meta.grid {
            return Err(PipelineError::Input(format!("{}: band grid differs from the bundle grid", path.display())));
        }
        bundle.bands.insert(*organ, band);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::testutil::toy_cohort;

    fn quick_config(algorithms: &[AlgorithmId]) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.train.algorithms = algorithms.to_vec();
        c.hyperparams.mlp.epochs = 20;
        c.hyperparams.rf.n_trees = 5;
        c.hyperparams.gbr.n_stages = 5;
        c
    }

    fn toy_library(n: usize) -> Library {
        let records = toy_cohort(n, 64, 1);
        Library::new(*records[0].curve(Organ::Bladder).grid(), records)
    }

    #[test]
    fn train_respects_algorithm_filter_and_seed() {
        let lib = toy_library(20);
        let cfg = quick_config(&[AlgorithmId::LR]);
        let a = cmd_train(&lib, &cfg).unwrap();
        assert_eq!((a.n_train, a.n_test), (14, 6));
        assert!(a.bundle.models.iter().all(|m| m.algorithm == AlgorithmId::LR));
        assert_eq!(a.bundle.models.len(), 2);
        assert!(a.bundle.roster(Organ::Bladder) == vec![AlgorithmId::LR]);
        let b = cmd_train(&lib, &cfg).unwrap();
        assert_eq!(a.bundle.meta.fingerprint, b.bundle.meta.fingerprint);
    }

    #[test]
    fn ensembles_follow_test_ranking() {
        let lib = toy_library(20);
        let algs = [AlgorithmId::LR, AlgorithmId::EN, AlgorithmId::DT, AlgorithmId::FRBP];
        let out = cmd_train(&lib, &quick_config(&algs)).unwrap();
        let e = &out.bundle.meta.ensembles[&Organ::Rectum];
        assert_eq!(e.best3.len(), 3);
        assert!(e.best6.is_empty());
        let base: Vec<_> = out
            .test_reports
            .iter()
            .filter(|r| r.organ == Organ::Rectum && !r.algorithm.is_ensemble())
            .cloned()
            .collect();
        assert_eq!(select_best(&base, 3), e.best3);
        assert!(out.test_reports.iter().any(|r| r.algorithm == AlgorithmId::Ensemble3));
    }

    #[test]
    fn too_few_records() {
        let lib = toy_library(9);
        let err = cmd_train(&lib, &quick_config(&[AlgorithmId::LR])).unwrap_err();
        assert!(matches!(err, PipelineError::TooFewRecords { needed: 7, got: 6 }));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn evaluate_and_predict() {
        let lib = toy_library(20);
        let out = cmd_train(&lib, &quick_config(&[AlgorithmId::LR, AlgorithmId::DT, AlgorithmId::GBR])).unwrap();
        let val = toy_cohort(5, 64, 2);
        let ev = cmd_evaluate(&out.bundle, &val, "validation").unwrap();
        assert_eq!(ev.reports[&Organ::Bladder].len(), 4);
        assert_eq!(ev.kruskal[&Organ::Bladder].len(), 4 * 8);
        assert!(matches!(cmd_evaluate(&out.bundle, &[], "v"), Err(PipelineError::EmptyValidation)));

        let constraints = ConstraintSet::default();
        let req = PredictRequest { features: val[0].features, organ: Organ::Rectum, algorithms: vec!["dt".into()] };
        let resp = predict_case(&out.bundle, &constraints, &req).unwrap();
        assert_eq!(resp.curves.keys().collect::<Vec<_>>(), vec!["DT"]);
        assert_eq!(resp.curves["DT"].values.len(), 64);
        let mut bad = req.clone();
        bad.features.rectum_overlap_frac = 1.2;
        assert!(matches!(predict_case(&out.bundle, &constraints, &bad), Err(PipelineError::InvalidFeatures(_))));
        let unknown = PredictRequest { algorithms: vec!["RF".into()], ..req };
        assert!(matches!(predict_case(&out.bundle, &constraints, &unknown), Err(PipelineError::UnknownAlgorithm(_))));
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let val = toy_cohort(6, 64, 3);
        let r = cohort_error_report(AlgorithmId::LR, Organ::Bladder, "v", &val, |f| {
            val.iter().find(|x| x.features == *f).unwrap().curve(Organ::Bladder).clone()
        })
        .unwrap();
        let line = report_csv(&[r]).lines().nth(1).unwrap().to_string();
        assert_eq!(line, "LR,v,0.0000,0.0000,0.0000,0.0000,0.0000,0.0000,0.0000");
    }
}
