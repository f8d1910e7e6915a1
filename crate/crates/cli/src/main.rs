//! `mrsquant`: simulate spectra, train and apply forests, run experiments.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 data
//! incompatibility, 4 numerical failure.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrsquant::dataset::Dataset;
use mrsquant::eval::{run_experiment, ExperimentInputs};
use mrsquant::forest::{fit_forest, Targets};
use mrsquant::io::{self, Fingerprint, ModelFile, ReportFile, TrainingRecord};
use mrsquant::model::{feature_matrix, QuantModel};
use mrsquant::preprocess::{FeatureSpec, PpmWindow};
use mrsquant::{Error, Result};

use config::{EvaluateFile, EvaluateRun, SimulateFile, TrainFile};

#[derive(Parser)]
#[command(name = "mrsquant", version, about = "MR spectroscopy quantification with random forests")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "MRSQUANT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labelled dataset.
    Simulate(SimulateArgs),
    /// Train a forest on a dataset.
    Train(TrainArgs),
    /// Predict metabolite ratios for the spectra of a dataset.
    Predict(PredictArgs),
    /// Run one of the train/test experiment designs.
    Evaluate(EvaluateArgs),
    /// Out-of-bag error over a grid of tree counts and features per split.
    OobScan(OobScanArgs),
    /// Regenerate an artifact from the configuration embedded in it.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON simulation config; desk-scale defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    n_spectra: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// JSON forest config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_features: Option<usize>,
    #[arg(long)]
    min_leaf_size: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Comma-separated targets, e.g. `NAA/Cr,Cho/Cr`.
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
    /// OOB error curve CSV; next to the model when omitted.
    #[arg(long)]
    oob_csv: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    spectra: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Resample spectra acquired with a different protocol onto the model grid.
    #[arg(long)]
    preprocess: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the forest seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct OobScanArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    target: String,
    /// Largest forest; the curve covers every count up to it.
    #[arg(long, default_value_t = 200)]
    max_trees: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,4,16,64,128,256")]
    max_features: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    min_leaf_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReproduceArgs {
    artifact: PathBuf,
    /// Training dataset (models only).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output file, or directory for reports.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Incompatible(_) | Error::Range(_) => 3,
        Error::Numerical(_) | Error::Undefined(_) | Error::Precondition(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(4);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::OobScan(a) => oob_scan(a),
        Command::Reproduce(a) => reproduce(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let file: SimulateFile = config::load(a.config.as_deref())?;
    let recipe = file.recipe(a.config.as_deref(), a.seed, a.n_spectra)?;
    let dataset = recipe.build()?;
    io::write_dataset(&a.out, &dataset)?;
    let sim = recipe.simulation();
    println!("wrote {} spectra to {} (seed {})", dataset.len(), a.out.display(), sim.rng_seed);
    println!("labels: {} ({})", dataset.target_names.join(", "), dataset.truth_source.as_str());
    for (name, r) in &sim.concentration_ranges {
        match &r.relative_to {
            Some(to) => println!("  {name}: {} to {} x {to}", r.min, r.max),
            None => println!("  {name}: {} to {}", r.min, r.max),
        }
    }
    println!("  t2 scale: {} to {}", sim.t2_scale_range.min, sim.t2_scale_range.max);
    match &sim.snr_range {
        Some(s) => println!("  snr: {} to {}", s.min, s.max),
        None => println!("  snr: noise off"),
    }
    println!(
        "  baseline: {} to {}, lipids: {} to {}",
        sim.baseline_amplitude_range.min,
        sim.baseline_amplitude_range.max,
        sim.lipid_amplitude_range.min,
        sim.lipid_amplitude_range.max
    );
    Ok(())
}

fn train_record(a: &TrainArgs, dataset: &Dataset) -> Result<TrainingRecord> {
    let file: TrainFile = config::load(a.config.as_deref())?;
    let mut forest = file.forest();
    forest.n_trees = a.n_trees.or(forest.n_trees);
    forest.max_features = a.max_features.or(forest.max_features);
    forest.min_leaf_size = a.min_leaf_size.or(forest.min_leaf_size);
    forest.max_depth = a.max_depth.or(forest.max_depth);
    let targets = a
        .targets
        .clone()
        .or(file.targets)
        .unwrap_or_else(|| dataset.target_names.clone());
    Ok(TrainingRecord {
        dataset_fingerprint: io::dataset_fingerprint(dataset)?,
        n_samples: dataset.len(),
        targets,
        forest: forest.resolve(Some(a.seed))?,
        window: file.window.unwrap_or(PpmWindow::METABOLITES),
    })
}

fn train_from_record(dataset: &Dataset, record: TrainingRecord) -> Result<ModelFile> {
    let model = QuantModel::train(dataset, Some(&record.targets), &record.forest, record.window)?;
    ModelFile::new(model, record)
}

fn train(a: TrainArgs) -> Result<()> {
    let dataset = io::read_dataset(&a.dataset)?;
    let record = train_record(&a, &dataset)?;
    let file = train_from_record(&dataset, record)?;
    io::write_model(&a.out, &file)?;
    let oob = a.oob_csv.clone().unwrap_or_else(|| a.out.with_extension("oob.csv"));
    io::write_oob_csv(&oob, &file.model.forest.targets)?;
    for t in &file.model.forest.targets {
        match t.oob_error() {
            Some(e) => println!("{}: {} trees, OOB error {e:.4}", t.name, t.trees.len()),
            None => println!("{}: {} trees, no out-of-bag samples", t.name, t.trees.len()),
        }
    }
    println!("model written to {}, OOB curve to {}", a.out.display(), oob.display());
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let file = io::read_model(&a.model)?;
    let data = io::read_dataset(&a.spectra)?;
    let spectra: Vec<_> = data.spectra().collect();
    let rows = file.model.predict_all(spectra, a.preprocess)?;
    let ids: Vec<usize> = data.records.iter().map(|r| r.id).collect();
    io::write_predictions_csv(&a.out, &file.model.target_names(), &ids, &rows)?;
    println!("{} predictions written to {}", rows.len(), a.out.display());
    Ok(())
}

fn run_evaluation(run: &EvaluateRun, out_dir: &Path) -> Result<()> {
    let train = io::read_dataset(&run.train)?;
    let test = run.test.as_deref().map(io::read_dataset).transpose()?;
    let model_file = run.model.as_deref().map(io::read_model).transpose()?;
    let inputs = ExperimentInputs {
        train: &train,
        test: test.as_ref(),
        oracle_basis: &run.oracle_basis,
        model: model_file.as_ref().map(|m| &m.model),
    };
    let report = run_experiment(&run.spec, &inputs, &run.forest, &run.oracle)?;
    let mut fingerprints: Vec<(String, Option<Fingerprint>)> = vec![("train".into(), io::dataset_fingerprint(&train)?)];
    if let Some(t) = &test {
        fingerprints.push(("test".into(), io::dataset_fingerprint(t)?));
    }
    if let Some(m) = &model_file {
        fingerprints.push(("model".into(), Some(m.fingerprint.clone())));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let file = ReportFile::new(run.clone(), fingerprints, report)?;
    io::write_json(&out_dir.join("report.json"), &file)?;
    io::write_sample_csv(&out_dir.join("samples.csv"), &file.report)?;
    io::write_summary_csv(&out_dir.join("summary.csv"), &file.report)?;
    println!(
        "{} ({} test samples, truth: {})",
        file.report.experiment,
        file.report.samples.record_id.len(),
        file.report.truth_source.as_str()
    );
    for t in &file.report.targets {
        let r = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        print!(
            "  {}: forest median error {:.4}, pearson_r {}",
            t.name,
            t.forest.median_error,
            r(t.forest.pearson_r)
        );
        match &t.oracle {
            Some(o) => println!("; oracle median error {:.4}, pearson_r {}", o.median_error, r(o.pearson_r)),
            None => println!("; oracle failed on every sample"),
        }
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let file: EvaluateFile = config::load(Some(&a.config))?;
    let run = file.resolve(Some(&a.config), a.seed)?;
    run_evaluation(&run, &a.out_dir)
}

fn oob_scan(a: OobScanArgs) -> Result<()> {
    use std::io::Write;
    let dataset = io::read_dataset(&a.dataset)?;
    let column = dataset.labels(dataset.target_index(&a.target)?);
    let features = FeatureSpec::from_training(dataset.spectra(), PpmWindow::METABOLITES)?;
    let spectra: Vec<_> = dataset.spectra().collect();
    let x = feature_matrix(&features, spectra, false)?;
    let targets = Targets::single(&a.target, column);
    let mut w = csv_writer(&a.out)?;
    write_row(&mut w, &a.out, &["max_features", "n_trees", "target", "oob_error"])?;
    for &mf in &a.max_features {
        if mf > x.n_cols() {
            eprintln!("skipping max_features {mf}: only {} features", x.n_cols());
            continue;
        }
        let cfg = mrsquant::forest::ForestConfig {
            n_trees: a.max_trees,
            max_features: mf,
            min_leaf_size: a.min_leaf_size,
            max_depth: None,
            rng_seed: a.seed,
            bootstrap: mrsquant::forest::Bootstrap::Resample,
        };
        let model = fit_forest(&x, &targets, &cfg)?;
        let curve = &model.targets[0].oob_curve;
        for (m, e) in curve.iter().enumerate() {
            let e = e.map(|e| e.to_string()).unwrap_or_default();
            write_row(&mut w, &a.out, &[&mf.to_string(), &(m + 1).to_string(), &a.target, &e])?;
        }
        let last = curve.last().copied().flatten().unwrap_or(f64::NAN);
        println!("max_features {mf}: OOB error {last:.4} at {} trees", a.max_trees);
    }
    w.flush().map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })
}

fn csv_writer(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
}

fn write_row(w: &mut impl std::io::Write, path: &Path, fields: &[&str]) -> Result<()> {
    writeln!(w, "{}", fields.join(",")).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn reproduce(a: ReproduceArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.artifact).map_err(|e| Error::Io {
        path: a.artifact.clone(),
        source: e,
    })?;
    let first = text.lines().next().unwrap_or_default();
    let head: serde_json::Value = serde_json::from_str(first).map_err(|e| Error::Format {
        what: "artifact",
        location: format!("{}:1", a.artifact.display()),
        message: e.to_string(),
    })?;
    match head.get("format").and_then(|f| f.as_str()) {
        Some(io::DATASET_FORMAT) => {
            let header: io::DatasetHeader = serde_json::from_value(head).map_err(|e| Error::Format {
                what: "dataset",
                location: format!("{}:1", a.artifact.display()),
                message: e.to_string(),
            })?;
            let recipe = header
                .recipe
                .ok_or_else(|| Error::param("recipe", "dataset carries no generating recipe"))?;
            io::write_dataset(&a.out, &recipe.build()?)?;
        }
        Some(io::MODEL_FORMAT) => {
            let file = io::read_model(&a.artifact)?;
            let path = a
                .dataset
                .as_ref()
                .ok_or_else(|| Error::param("dataset", "--dataset is required to retrain a model"))?;
            let dataset = io::read_dataset(path)?;
            if io::dataset_fingerprint(&dataset)? != file.training.dataset_fingerprint {
                return Err(Error::Incompatible(format!(
                    "{} is not the dataset the model was trained on",
                    path.display()
                )));
            }
            io::write_model(&a.out, &train_from_record(&dataset, file.training)?)?;
        }
        Some(io::REPORT_FORMAT) => {
            let file: ReportFile<EvaluateRun> = io::read_report(&a.artifact)?;
            run_evaluation(&file.config, &a.out)?;
            let again: ReportFile<EvaluateRun> = io::read_report(&a.out.join("report.json"))?;
            if again.inputs != file.inputs {
                return Err(Error::Incompatible("input files changed since the report was made".into()));
            }
        }
        other => {
            return Err(Error::Format {
                what: "artifact",
                location: a.artifact.display().to_string(),
                message: format!("unrecognised format {other:?}"),
            })
        }
    }
    println!("regenerated {} into {}", a.artifact.display(), a.out.display());
    Ok(())
}
