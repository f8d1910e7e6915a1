//! File formats: basis sets, datasets, models, reports and plot CSVs.
//!
//! Every artifact written here starts with a `format` tag, a `version`, and
//! a fingerprint of the configuration that produced it. Writers are
//! canonical: reading a file and writing it back gives the same bytes.
//!
//! Datasets are JSON Lines. The first line is the header; each further line
//! is one record whose spectrum is a base64 block of little-endian `f64`
//! values, real and imaginary parts interleaved.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::BasisSet;
use crate::dataset::{Dataset, DatasetKind, DatasetRecipe, Record, TruthSource};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::forest::TargetEnsemble;
use crate::model::QuantModel;
use crate::signal::{AcquisitionParams, ComplexSpectrum};
use crate::simulate::SimulationParameters;

pub const DATASET_FORMAT: &str = "mrsquant-dataset";
pub const MODEL_FORMAT: &str = "mrsquant-model";
pub const REPORT_FORMAT: &str = "mrsquant-report";
pub const DATASET_VERSION: u64 = 1;
pub const MODEL_VERSION: u64 = 1;
pub const REPORT_VERSION: u64 = 1;

/// Seed plus a SHA-256 of the canonical JSON of the producing config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub seed: Option<u64>,
    pub sha256: String,
}

impl Fingerprint {
    pub fn of<T: Serialize>(seed: Option<u64>, value: &T) -> Result<Self> {
        let bytes = serde_json::to_vec(value).map_err(|e| Error::Numerical(format!("cannot encode config: {e}")))?;
        Ok(Fingerprint {
            seed,
            sha256: sha256_hex(&bytes),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use std::fmt::Write as _;
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn json_error(what: &'static str, location: String, e: serde_json::Error) -> Error {
    Error::Format {
        what,
        location,
        message: e.to_string(),
    }
}

/// Checks the `format` and `version` fields before the full parse, so a
/// newer file reports its version rather than a schema mismatch.
fn check_envelope(what: &'static str, expected: &str, supported: u64, value: &serde_json::Value, location: &str) -> Result<()> {
    let format = value.get("format").and_then(|f| f.as_str());
    if format != Some(expected) {
        return Err(Error::Format {
            what,
            location: location.to_string(),
            message: format!("expected format `{expected}`, found {:?}", format.unwrap_or("nothing")),
        });
    }
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == supported => Ok(()),
        Some(v) => Err(Error::UnsupportedVersion {
            what,
            found: v,
            supported,
        }),
        None => Err(Error::Format {
            what,
            location: location.to_string(),
            message: "missing integer `version`".into(),
        }),
    }
}

// ---------------------------------------------------------------- basis

pub fn read_basis(path: &Path) -> Result<BasisSet> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    parse_basis(&text, &path.display().to_string())
}

pub fn parse_basis(text: &str, source: &str) -> Result<BasisSet> {
    serde_json::from_str(text).map_err(|e| json_error("basis set", format!("{source}:{}:{}", e.line(), e.column()), e))
}

pub fn write_basis(path: &Path, basis: &BasisSet) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, basis).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

// -------------------------------------------------------------- dataset

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u64,
    pub fingerprint: Option<Fingerprint>,
    pub kind: DatasetKind,
    pub truth_source: TruthSource,
    pub acquisition: AcquisitionParams,
    pub reference_ppm: f64,
    pub ppm_axis: Vec<f64>,
    pub target_names: Vec<String>,
    pub n_records: usize,
    pub recipe: Option<DatasetRecipe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: usize,
    labels: Vec<f64>,
    truth: Option<SimulationParameters>,
    spectrum: String,
}

pub fn dataset_fingerprint(dataset: &Dataset) -> Result<Option<Fingerprint>> {
    dataset
        .recipe
        .as_ref()
        .map(|r| Fingerprint::of(Some(r.simulation().rng_seed), r))
        .transpose()
}

pub fn encode_spectrum(values: &[Complex64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 16);
    for v in values {
        bytes.extend_from_slice(&v.re.to_le_bytes());
        bytes.extend_from_slice(&v.im.to_le_bytes());
    }
    BASE64.encode(bytes)
}

pub fn decode_spectrum(text: &str, n_points: usize) -> std::result::Result<Vec<Complex64>, String> {
    let bytes = BASE64.decode(text).map_err(|e| format!("bad base64: {e}"))?;
    if bytes.len() != n_points * 16 {
        return Err(format!("spectrum has {} bytes, expected {}", bytes.len(), n_points * 16));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            Complex64::new(re, im)
        })
        .collect())
}

pub fn write_dataset_to<W: Write>(mut w: W, dataset: &Dataset) -> Result<()> {
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        fingerprint: dataset_fingerprint(dataset)?,
        kind: dataset.kind,
        truth_source: dataset.truth_source,
        acquisition: dataset.acquisition,
        reference_ppm: dataset.reference_ppm,
        ppm_axis: dataset.records[0].spectrum.ppm_axis().to_vec(),
        target_names: dataset.target_names.clone(),
        n_records: dataset.len(),
        recipe: dataset.recipe.clone(),
    };
    let io_err = |e: std::io::Error| Error::io("<dataset>", e);
    serde_json::to_writer(&mut w, &header).map_err(|e| io_err(e.into()))?;
    w.write_all(b"\n").map_err(io_err)?;
    for r in &dataset.records {
        let line = RecordLine {
            id: r.id,
            labels: r.labels.clone(),
            truth: r.truth.clone(),
            spectrum: encode_spectrum(r.spectrum.values()),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    write_dataset_to(&mut w, dataset).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    finish(path, w)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_dataset_from(open(path)?, &path.display().to_string())
}

/// Parses a dataset; `source` names the input in error locations.
pub fn read_dataset_from<R: BufRead>(reader: R, source: &str) -> Result<Dataset> {
    const WHAT: &str = "dataset";
    let mut lines = reader.lines().enumerate();
    let loc = |line: usize| format!("{source}:{}", line + 1);
    let (_, first) = lines.next().ok_or_else(|| Error::Format {
        what: WHAT,
        location: loc(0),
        message: "empty file".into(),
    })?;
    let first = first.map_err(|e| Error::io(source, e))?;
    let value: serde_json::Value = serde_json::from_str(&first).map_err(|e| json_error(WHAT, loc(0), e))?;
    check_envelope(WHAT, DATASET_FORMAT, DATASET_VERSION, &value, &loc(0))?;
    let header: DatasetHeader = serde_json::from_value(value).map_err(|e| json_error(WHAT, loc(0), e))?;
    let bad_header = |message: String| Error::Format {
        what: WHAT,
        location: loc(0),
        message,
    };
    header.acquisition.validate().map_err(|e| bad_header(e.to_string()))?;
    if header.ppm_axis.len() != header.acquisition.n_points {
        return Err(bad_header(format!(
            "ppm axis has {} points, acquisition {}",
            header.ppm_axis.len(),
            header.acquisition.n_points
        )));
    }
    if header.n_records == 0 {
        return Err(Error::param("dataset", format!("{source} holds no spectra")));
    }
    let axis: std::sync::Arc<[f64]> = header.ppm_axis.clone().into();

    let mut records = Vec::with_capacity(header.n_records);
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line).map_err(|e| json_error(WHAT, loc(i), e))?;
        let bad = |message: String| Error::Format {
            what: WHAT,
            location: loc(i),
            message,
        };
        if rec.labels.len() != header.target_names.len() {
            return Err(bad(format!(
                "{} labels for {} targets",
                rec.labels.len(),
                header.target_names.len()
            )));
        }
        let values = decode_spectrum(&rec.spectrum, header.acquisition.n_points).map_err(bad)?;
        let spectrum = ComplexSpectrum::new(values, axis.clone(), header.acquisition, header.reference_ppm)
            .map_err(|e| bad(e.to_string()))?;
        records.push(Record {
            id: rec.id,
            spectrum,
            labels: rec.labels,
            truth: rec.truth,
        });
    }
    if records.len() != header.n_records {
        return Err(Error::Format {
            what: WHAT,
            location: format!("{source}:end"),
            message: format!("header promises {} records, found {}", header.n_records, records.len()),
        });
    }
    let dataset = Dataset::new(header.kind, header.truth_source, header.target_names, records, header.recipe)
        .map_err(|e| bad_header(e.to_string()))?;
    if let Some(fp) = &header.fingerprint {
        if dataset_fingerprint(&dataset)?.as_ref() != Some(fp) {
            return Err(bad_header("fingerprint does not match the embedded recipe".into()));
        }
    }
    Ok(dataset)
}

// ---------------------------------------------------------------- model

/// How a model was trained; enough to retrain it from its dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingRecord {
    pub dataset_fingerprint: Option<Fingerprint>,
    pub n_samples: usize,
    pub targets: Vec<String>,
    pub forest: crate::forest::ForestConfig,
    pub window: crate::preprocess::PpmWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u64,
    pub fingerprint: Fingerprint,
    pub training: TrainingRecord,
    pub model: QuantModel,
}

impl ModelFile {
    pub fn new(model: QuantModel, training: TrainingRecord) -> Result<Self> {
        Ok(ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            fingerprint: Fingerprint::of(Some(training.forest.rng_seed), &training)?,
            training,
            model,
        })
    }
}

pub fn write_model(path: &Path, file: &ModelFile) -> Result<()> {
    write_json(path, file)
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let file: ModelFile = read_json(path, "model", MODEL_FORMAT, MODEL_VERSION)?;
    file.model.validate().map_err(|e| Error::Format {
        what: "model",
        location: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(file)
}

/// Canonical compact JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, value).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &'static str, format: &str, version: u64) -> Result<T> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    let location = |e: &serde_json::Error| format!("{}:{}:{}", path.display(), e.line(), e.column());
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| json_error(what, location(&e), e))?;
    check_envelope(what, format, version, &value, &path.display().to_string())?;
    serde_json::from_value(value).map_err(|e| Error::Format {
        what,
        location: path.display().to_string(),
        message: e.to_string(),
    })
}

// --------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile<C> {
    pub format: String,
    pub version: u64,
    pub fingerprint: Fingerprint,
    /// The run configuration that produced the report.
    pub config: C,
    pub inputs: Vec<(String, Option<Fingerprint>)>,
    pub report: EvalReport,
}

impl<C: Serialize> ReportFile<C> {
    pub fn new(config: C, inputs: Vec<(String, Option<Fingerprint>)>, report: EvalReport) -> Result<Self> {
        let fingerprint = Fingerprint::of(Some(report.forest_config.rng_seed), &(&config, &inputs))?;
        Ok(ReportFile {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            fingerprint,
            config,
            inputs,
            report,
        })
    }
}

pub fn read_report<C: DeserializeOwned>(path: &Path) -> Result<ReportFile<C>> {
    read_json(path, "report", REPORT_FORMAT, REPORT_VERSION)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Numerical(format!("csv writer: {other:?}")),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per sample and target: truth, both estimates, both errors.
pub fn write_sample_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record([
        "record_id",
        "fold",
        "target",
        "truth",
        "forest_estimate",
        "forest_error",
        "oracle_estimate",
        "oracle_error",
        "baseline_amplitude",
        "lipid_amplitude",
        "snr",
    ])
    .map_err(|e| csv_error(path, e))?;
    let s = &report.samples;
    for t in &report.per_target {
        for i in 0..t.truth.len() {
            w.write_record([
                s.record_id[i].to_string(),
                s.fold[i].map(|f| f.to_string()).unwrap_or_default(),
                t.name.clone(),
                t.truth[i].to_string(),
                t.forest_estimate[i].to_string(),
                opt(t.forest_error[i]),
                opt(t.oracle_estimate[i]),
                opt(t.oracle_error[i]),
                opt(s.baseline_amplitude[i]),
                opt(s.lipid_amplitude[i]),
                opt(s.snr[i]),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Boxplot-ready summary: one row per target and estimator.
pub fn write_summary_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record([
        "target", "estimator", "n", "min", "q1", "median", "q3", "max", "mean", "pearson_r",
    ])
    .map_err(|e| csv_error(path, e))?;
    for t in &report.targets {
        for (name, s) in [("forest", Some(t.forest)), ("oracle", t.oracle)] {
            let Some(s) = s else { continue };
            w.write_record([
                t.name.clone(),
                name.to_string(),
                s.n.to_string(),
                s.min_error.to_string(),
                s.q1_error.to_string(),
                s.median_error.to_string(),
                s.q3_error.to_string(),
                s.max_error.to_string(),
                s.mean_error.to_string(),
                opt(s.pearson_r),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// OOB error after each tree: `target,n_trees,oob_error`.
pub fn write_oob_csv(path: &Path, targets: &[TargetEnsemble]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["target", "n_trees", "oob_error"]).map_err(|e| csv_error(path, e))?;
    for t in targets {
        for (m, e) in t.oob_curve.iter().enumerate() {
            w.write_record([t.name.clone(), (m + 1).to_string(), opt(*e)])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Predictions: `record_id` then one column per target.
pub fn write_predictions_csv(path: &Path, targets: &[&str], ids: &[usize], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["record_id".to_string()];
    header.extend(targets.iter().map(|t| t.to_string()));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (id, row) in ids.iter().zip(rows) {
        let mut rec = vec![id.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::default_brain_basis;
    use crate::forest::ForestConfig;
    use crate::preprocess::PpmWindow;
    use crate::simulate::SimulationConfig;

    fn dataset(n: usize) -> Dataset {
        Dataset::simulate(&SimulationConfig::desk_scale(
            default_brain_basis(AcquisitionParams::default()).unwrap(),
            n,
            6,
        ))
        .unwrap()
    }

    fn bytes(d: &Dataset) -> Vec<u8> {
        let mut out = Vec::new();
        write_dataset_to(&mut out, d).unwrap();
        out
    }

    #[test]
    fn dataset_round_trip_is_lossless_and_canonical() {
        let d = dataset(5);
        let b = bytes(&d);
        let back = read_dataset_from(&b[..], "mem").unwrap();
        assert_eq!(back, d);
        assert_eq!(bytes(&back), b);
    }

    #[test]
    fn spectrum_codec_round_trips_bits() {
        let v = vec![Complex64::new(1.0 / 3.0, -0.0), Complex64::new(f64::MIN_POSITIVE, 1e300)];
        let back = decode_spectrum(&encode_spectrum(&v), 2).unwrap();
        assert_eq!(back.iter().map(|c| c.im.to_bits()).collect::<Vec<_>>(), [(-0.0f64).to_bits(), 1e300f64.to_bits()]);
        assert_eq!(back[0].re, 1.0 / 3.0);
        assert!(decode_spectrum(&encode_spectrum(&v), 3).is_err());
    }

    #[test]
    fn truncated_dataset_is_a_format_error() {
        let b = bytes(&dataset(4));
        let text = String::from_utf8(b).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let short = lines[..3].join("\n");
        assert!(matches!(read_dataset_from(short.as_bytes(), "x"), Err(Error::Format { .. })));
        let cut = &text[..text.len() - 40];
        match read_dataset_from(cut.as_bytes(), "x") {
            Err(Error::Format { location, .. }) => assert_eq!(location, "x:5"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_dataset_from(&b""[..], "x"), Err(Error::Format { .. })));
    }

    #[test]
    fn newer_dataset_version_is_rejected() {
        let text = String::from_utf8(bytes(&dataset(2))).unwrap();
        let bumped = text.replacen("\"version\":1", "\"version\":7", 1);
        assert!(matches!(
            read_dataset_from(bumped.as_bytes(), "x"),
            Err(Error::UnsupportedVersion { found: 7, supported: 1, .. })
        ));
    }

    #[test]
    fn tampered_recipe_fails_the_fingerprint() {
        let text = String::from_utf8(bytes(&dataset(2))).unwrap();
        let tampered = text.replacen("\"n_spectra\":2", "\"n_spectra\":3", 1);
        assert!(matches!(read_dataset_from(tampered.as_bytes(), "x"), Err(Error::Format { .. })));
    }

    #[test]
    fn model_file_round_trip_predicts_identically() {
        let d = dataset(40);
        let cfg = ForestConfig {
            n_trees: 5,
            max_features: 8,
            min_leaf_size: 2,
            ..ForestConfig::default()
        };
        let model = QuantModel::train(&d, None, &cfg, PpmWindow::METABOLITES).unwrap();
        let training = TrainingRecord {
            dataset_fingerprint: dataset_fingerprint(&d).unwrap(),
            n_samples: d.len(),
            targets: d.target_names.clone(),
            forest: cfg,
            window: PpmWindow::METABOLITES,
        };
        let file = ModelFile::new(model, training).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        write_model(&path, &file).unwrap();
        let back = read_model(&path).unwrap();
        assert_eq!(back, file);
        let probe = dataset(100);
        for s in probe.spectra() {
            let a = file.model.predict(s, false).unwrap();
            let b = back.model.predict(s, false).unwrap();
            assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        let again = dir.path().join("m2.json");
        write_model(&again, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&again, &text[..text.len() / 2]).unwrap();
        assert!(matches!(read_model(&again), Err(Error::Format { .. })));
        std::fs::write(&again, text.replacen("\"version\":1", "\"version\":2", 1)).unwrap();
        assert!(matches!(read_model(&again), Err(Error::UnsupportedVersion { found: 2, .. })));
    }

    #[test]
    fn basis_file_round_trip() {
        let b = default_brain_basis(AcquisitionParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("basis.json");
        write_basis(&path, &b).unwrap();
        assert_eq!(read_basis(&path).unwrap(), b);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"spectral_width_hz\""));
        assert!(text.contains("\"shift_ppm\""));
    }
}
