use std::io::{Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dvhpred::bundle::{sidecar_path, ModelBundle};
use dvhpred::config::{ConstraintSet, PipelineConfig};
use dvhpred::dvh::{FeatureVector, Organ};
use dvhpred::eval::report_csv;
use dvhpred::pipeline::{
    apply_band_files, cmd_band, cmd_evaluate, cmd_ingest, cmd_synth, cmd_train, predict_case, predict_csv, write_bands,
    write_evaluation, FixtureLayout, Library, PipelineError, PredictRequest,
};
use dvhpred::service::{serve, AppState};

#[derive(Parser)]
#[command(name = "dvhpred", version, about = "Bladder and rectum DVH prediction from structure volumes")]
struct Cli {
    /// Overrides `seed` and `synth.seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pipeline TOML; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Eclipse,
    Tomo,
    Mixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a directory of exports into a library (default out: library.json).
    Ingest { dir: PathBuf },
    /// Write a synthetic cohort as export files (default out: synth/).
    Synth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, value_enum, default_value = "mixed")]
        layout: Layout,
        /// Also write the cohort as a library file.
        #[arg(long)]
        library: Option<PathBuf>,
    },
    /// Fit every configured algorithm (default out: model.dvhb).
    Train {
        library: PathBuf,
        /// Restrict to these algorithms, e.g. `--algorithm LR --algorithm RF`.
        #[arg(long = "algorithm")]
        algorithms: Vec<String>,
        #[arg(long)]
        tune: bool,
    },
    /// Score a bundle on a validation library (default out: eval/).
    Evaluate {
        bundle: PathBuf,
        library: PathBuf,
        #[arg(long, default_value = "validation")]
        dataset: String,
    },
    /// Predict one case from a request file or from flags (default out: stdout).
    Predict {
        bundle: PathBuf,
        /// JSON request `{features, organ, algorithms}`; `-` reads stdin.
        #[arg(long, conflicts_with_all = ["features", "organ"])]
        request: Option<PathBuf>,
        /// `name=value` pairs, e.g. `ptv60_cc=95,ptv44_cc=250,...`.
        #[arg(long)]
        features: Option<String>,
        #[arg(long)]
        organ: Option<Organ>,
        #[arg(long = "algorithm")]
        algorithms: Vec<String>,
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Weibull bands of a library (default out: bands/).
    Band { library: PathBuf },
    /// Serve the prediction API.
    Serve {
        bundle: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        constraints: Option<PathBuf>,
        /// Band override as `organ=path`, from `band` output.
        #[arg(long = "band")]
        bands: Vec<String>,
    },
}

fn input(msg: impl Into<String>) -> PipelineError {
    PipelineError::Input(msg.into())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.synth.seed = seed;
    }
    Ok(config)
}

fn load_constraints(path: Option<&Path>, config: &PipelineConfig) -> Result<ConstraintSet, PipelineError> {
    let Some(path) = path else { return Ok(ConstraintSet::default()) };
    let set = ConstraintSet::load(path)?;
    set.validate(&config.dose_grid()?)?;
    Ok(set)
}

fn parse_features(text: &str) -> Result<FeatureVector, PipelineError> {
    let mut map = serde_json::Map::new();
    for pair in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = pair.split_once('=').ok_or_else(|| input(format!("feature `{pair}` is not name=value")))?;
        let v: f64 = v.trim().parse().map_err(|_| input(format!("feature `{k}` is not a number")))?;
        map.insert(k.trim().to_string(), v.into());
    }
    serde_json::from_value(map.into()).map_err(|e| input(format!("features: {e}")))
}

fn read_request(path: &Path) -> Result<PredictRequest, PipelineError> {
    let text = if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(|e| input(e.to_string()))?;
        s
    } else {
        std::fs::read_to_string(path)
            .map_err(|source| PipelineError::Io { path: path.display().to_string(), source })?
    };
    serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, body: &str) -> Result<(), PipelineError> {
    match out {
        Some(p) => {
            std::fs::write(p, body).map_err(|source| PipelineError::Io { path: p.display().to_string(), source })
        }
        None => {
            // A closed pipe (e.g. `| head`) is not an error.
            let newline = if body.ends_with('\n') { "" } else { "\n" };
            let _ = write!(std::io::stdout().lock(), "{body}{newline}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = load_config(&cli)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Ingest { dir } => {
            let outcome = cmd_ingest(dir, &config)?;
            for f in &outcome.failures {
                eprintln!("skipped {}: {}", f.file, f.reason);
            }
            let path = out.unwrap_or(Path::new("library.json"));
            outcome.library.save(path)?;
            println!(
                "{} records ({} files skipped) -> {}",
                outcome.library.records.len(),
                outcome.failures.len(),
                path.display()
            );
        }
        Command::Synth { n, noise, layout, library } => {
            if let Some(n) = n {
                config.synth.n_patients = *n;
            }
            if let Some(noise) = noise {
                config.synth.noise_std = *noise;
            }
            config.validate()?;
            let dir = out.unwrap_or(Path::new("synth"));
            let layout = match layout {
                Layout::Eclipse => FixtureLayout::Eclipse,
                Layout::Tomo => FixtureLayout::Tomo,
                Layout::Mixed => FixtureLayout::Mixed,
            };
            let (cohort, files) = cmd_synth(&config, dir, layout)?;
            if let Some(lib) = library {
                Library::new(config.dose_grid()?, cohort).save(lib)?;
            }
            println!("{} fixtures -> {}", files.len(), dir.display());
        }
        Command::Train { library, algorithms, tune } => {
            if !algorithms.is_empty() {
                config.train.algorithms = algorithms
                    .iter()
                    .map(|a| a.parse().map_err(|_| PipelineError::UnknownAlgorithm(a.clone())))
                    .collect::<Result<_, _>>()?;
            }
            config.train.tune |= *tune;
            let lib = Library::load(library)?;
            let outcome = cmd_train(&lib, &config)?;
            let path = out.unwrap_or(Path::new("model.dvhb"));
            outcome.bundle.save(path)?;
            println!("split {}/{} (train/test), seed {}", outcome.n_train, outcome.n_test, config.seed);
            for organ in Organ::ALL {
                let reports: Vec<_> = outcome.test_reports.iter().filter(|r| r.organ == organ).cloned().collect();
                println!("== {organ}");
                print!("{}", report_csv(&reports));
            }
            println!(
                "bundle {} -> {} (+ {})",
                outcome.bundle.meta.fingerprint,
                path.display(),
                sidecar_path(path).display()
            );
        }
        Command::Evaluate { bundle, library, dataset } => {
            let bundle = ModelBundle::load(bundle)?;
            let lib = Library::load(library)?;
            let outcome = cmd_evaluate(&bundle, &lib.records, dataset)?;
            let dir = out.unwrap_or(Path::new("eval"));
            let files = write_evaluation(&outcome, dir)?;
            for (organ, reports) in &outcome.reports {
                println!("== {organ}");
                print!("{}", report_csv(reports));
            }
            println!("{} report files -> {}", files.len(), dir.display());
        }
        Command::Predict { bundle, request, features, organ, algorithms, constraints, format } => {
            let request = match request {
                Some(p) => read_request(p)?,
                None => PredictRequest {
                    features: parse_features(
                        features.as_deref().ok_or_else(|| input("--features or --request is required"))?,
                    )?,
                    organ: organ.ok_or_else(|| input("--organ is required with --features"))?,
                    algorithms: algorithms.clone(),
                },
            };
            let bundle = ModelBundle::load(bundle)?;
            let constraints = load_constraints(constraints.as_deref(), &config)?;
            let resp = predict_case(&bundle, &constraints, &request)?;
            let body = match format {
                Format::Json => serde_json::to_string(&resp).map_err(|e| input(e.to_string()))?,
                Format::Csv => predict_csv(&resp),
            };
            emit(out, &body)?;
        }
        Command::Band { library } => {
            let lib = Library::load(library)?;
            let bands = cmd_band(&lib, &config)?;
            let dir = out.unwrap_or(Path::new("bands"));
            for p in write_bands(&bands, dir)? {
                println!("{}", p.display());
            }
        }
        Command::Serve { bundle, addr, constraints, bands } => {
            let mut bundle = ModelBundle::load(bundle)?;
            let overrides = bands
                .iter()
                .map(|b| {
                    let (organ, path) =
                        b.split_once('=').ok_or_else(|| input(format!("--band `{b}` is not organ=path")))?;
                    Ok((organ.parse::<Organ>().map_err(input)?, PathBuf::from(path)))
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            apply_band_files(&mut bundle, &overrides)?;
            config.grid = dvhpred::config::GridConfig {
                start_cgy: bundle.meta.grid.start_cgy,
                step_cgy: bundle.meta.grid.step_cgy,
                n_bins: bundle.meta.grid.n_bins,
            };
            let constraints = load_constraints(constraints.as_deref(), &config)?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| input(e.to_string()))?;
            runtime
                .block_on(serve(AppState { bundle, constraints }, *addr))
                .map_err(|source| PipelineError::Io { path: addr.to_string(), source })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
