//! Error metrics, summaries and the four train/test experiment designs.

mod metrics;

pub use metrics::{boxplot_stats, kfold_split, pearson_r, relative_error, BoxplotStats};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::dataset::{Dataset, DatasetKind, TruthSource};
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::model::QuantModel;
use crate::oracle::{fit_ratios, LinearFitter, OracleConfig};
use crate::preprocess::PpmWindow;

/// Which data a model is trained and tested on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Simulated training set, held-out simulated test set.
    SyntheticSynthetic,
    /// K-fold cross-validation within one in-vivo single-voxel cohort.
    RealRealSpectra,
    /// Trained on single-voxel spectra, tested on spectroscopic-imaging voxels.
    RealSpectraRealImages,
    /// Trained on simulated spectra, tested on spectroscopic-imaging voxels.
    SyntheticRealImages,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::SyntheticSynthetic,
        ExperimentKind::RealRealSpectra,
        ExperimentKind::RealSpectraRealImages,
        ExperimentKind::SyntheticRealImages,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SyntheticSynthetic => "synthetic-synthetic",
            ExperimentKind::RealRealSpectra => "real-real-spectra",
            ExperimentKind::RealSpectraRealImages => "real-spectra-real-images",
            ExperimentKind::SyntheticRealImages => "synthetic-real-images",
        }
    }

    fn train_kind(self) -> DatasetKind {
        match self {
            ExperimentKind::SyntheticSynthetic | ExperimentKind::SyntheticRealImages => DatasetKind::Synthetic,
            _ => DatasetKind::StandIn,
        }
    }

    /// `None` when the design tests by cross-validation on the training set.
    fn test_kind(self) -> Option<DatasetKind> {
        match self {
            ExperimentKind::SyntheticSynthetic => Some(DatasetKind::Synthetic),
            ExperimentKind::RealRealSpectra => None,
            _ => Some(DatasetKind::StandIn),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
            Error::param("experiment", format!("unknown experiment `{s}`; valid: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Allows resampling test spectra acquired with another protocol.
    #[serde(default = "yes")]
    pub allow_preprocess: bool,
    #[serde(default = "ten")]
    pub folds: usize,
    #[serde(default)]
    pub fold_seed: u64,
    #[serde(default)]
    pub window: PpmWindow,
    /// Targets to evaluate; all training targets when absent.
    #[serde(default)]
    pub targets: Option<Vec<String>>,
}

fn yes() -> bool {
    true
}

fn ten() -> usize {
    10
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentSpec {
            kind,
            allow_preprocess: true,
            folds: 10,
            fold_seed: 0,
            window: PpmWindow::METABOLITES,
            targets: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Forest,
    Oracle,
}

/// Error summary of one estimator on one target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub median_error: f64,
    pub min_error: f64,
    pub max_error: f64,
    pub mean_error: f64,
    pub q1_error: f64,
    pub q3_error: f64,
    /// Pearson correlation of estimates against truth; absent when
    /// undefined (fewer than two pairs or constant values).
    pub pearson_r: Option<f64>,
}

impl Summary {
    /// Summary over the pairs with a defined estimate and error.
    pub fn from_pairs(truth: &[f64], estimate: &[Option<f64>], error: &[Option<f64>]) -> Result<Self> {
        let mut errs = Vec::new();
        let (mut e, mut t) = (Vec::new(), Vec::new());
        for i in 0..truth.len() {
            if let Some(est) = estimate[i] {
                e.push(est);
                t.push(truth[i]);
            }
            if let Some(err) = error[i] {
                errs.push(err);
            }
        }
        let stats = boxplot_stats(&errs)?;
        Ok(Summary {
            n: errs.len(),
            median_error: stats.median,
            min_error: stats.min,
            max_error: stats.max,
            mean_error: stats.mean,
            q1_error: stats.q1,
            q3_error: stats.q3,
            pearson_r: pearson_r(&e, &t).ok(),
        })
    }
}

/// Per-sample values for one target, aligned with [`SampleInfo`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSamples {
    pub name: String,
    pub truth: Vec<f64>,
    pub forest_estimate: Vec<f64>,
    /// `None` where the truth is zero.
    pub forest_error: Vec<Option<f64>>,
    /// `None` where the oracle fit failed.
    pub oracle_estimate: Vec<Option<f64>>,
    pub oracle_error: Vec<Option<f64>>,
}

impl TargetSamples {
    pub fn summary(&self, estimator: Estimator) -> Result<Summary> {
        self.summary_where(estimator, |_| true)
    }

    pub fn summary_where(&self, estimator: Estimator, keep: impl Fn(usize) -> bool) -> Result<Summary> {
        let n = self.truth.len();
        let idx: Vec<usize> = (0..n).filter(|&i| keep(i)).collect();
        let truth: Vec<f64> = idx.iter().map(|&i| self.truth[i]).collect();
        let (est, err): (Vec<Option<f64>>, Vec<Option<f64>>) = match estimator {
            Estimator::Forest => idx.iter().map(|&i| (Some(self.forest_estimate[i]), self.forest_error[i])).unzip(),
            Estimator::Oracle => idx.iter().map(|&i| (self.oracle_estimate[i], self.oracle_error[i])).unzip(),
        };
        Summary::from_pairs(&truth, &est, &err)
    }
}

/// Per-sample metadata, one entry per test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SampleInfo {
    pub record_id: Vec<usize>,
    /// Fold the sample was held out in (cross-validation only).
    pub fold: Vec<Option<usize>>,
    pub baseline_amplitude: Vec<Option<f64>>,
    pub lipid_amplitude: Vec<Option<f64>>,
    pub snr: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub name: String,
    pub forest: Summary,
    /// Absent when the oracle failed on every test sample.
    pub oracle: Option<Summary>,
    pub oracle_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: ExperimentKind,
    /// Source of the test labels the errors are measured against.
    pub truth_source: TruthSource,
    pub spec: ExperimentSpec,
    pub forest_config: ForestConfig,
    pub oracle_config: OracleConfig,
    pub n_train: usize,
    pub targets: Vec<TargetReport>,
    pub samples: SampleInfo,
    pub per_target: Vec<TargetSamples>,
}

impl EvalReport {
    /// Summaries rebuilt from the stored per-sample values.
    pub fn recompute_summaries(&self) -> Result<Vec<TargetReport>> {
        self.per_target.iter().map(target_report).collect()
    }

    pub fn target(&self, name: &str) -> Result<&TargetSamples> {
        self.per_target
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Argument(format!("report has no target `{name}`")))
    }

    pub fn summary(&self, name: &str) -> Result<&TargetReport> {
        self.targets
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Argument(format!("report has no target `{name}`")))
    }

    /// Mask of samples whose simulated baseline amplitude is in the top
    /// quartile (at or above the 75th percentile). Samples without
    /// simulation metadata are excluded.
    pub fn high_baseline_mask(&self) -> Result<Vec<bool>> {
        let known: Vec<f64> = self.samples.baseline_amplitude.iter().flatten().copied().collect();
        let q3 = boxplot_stats(&known)?.q3;
        Ok(self
            .samples
            .baseline_amplitude
            .iter()
            .map(|b| b.is_some_and(|b| b >= q3))
            .collect())
    }
}

fn target_report(t: &TargetSamples) -> Result<TargetReport> {
    let failures = t.oracle_estimate.iter().filter(|e| e.is_none()).count();
    let oracle = if t.oracle_error.iter().any(Option::is_some) {
        Some(t.summary(Estimator::Oracle)?)
    } else {
        None
    };
    Ok(TargetReport {
        name: t.name.clone(),
        forest: t.summary(Estimator::Forest)?,
        oracle,
        oracle_failures: failures,
    })
}

pub struct ExperimentInputs<'a> {
    pub train: &'a Dataset,
    /// Required by every design except cross-validation.
    pub test: Option<&'a Dataset>,
    /// Basis the oracle fits with; re-rendered at the test protocol.
    pub oracle_basis: &'a BasisSet,
    /// Used instead of training when given (not for cross-validation).
    pub model: Option<&'a QuantModel>,
}

/// Trains (or takes) a model, predicts the test set, runs the oracle on the
/// same spectra, and scores both against the test labels.
pub fn run_experiment(
    spec: &ExperimentSpec,
    inputs: &ExperimentInputs<'_>,
    forest: &ForestConfig,
    oracle: &OracleConfig,
) -> Result<EvalReport> {
    let kind = spec.kind;
    let train = inputs.train;
    if train.kind != kind.train_kind() {
        return Err(Error::param(
            "train",
            format!("{kind} trains on a {:?} dataset, got {:?}", kind.train_kind(), train.kind),
        ));
    }
    let targets = match &spec.targets {
        Some(t) if t.is_empty() => return Err(Error::param("targets", "at least one target is required")),
        Some(t) => t.clone(),
        None => match inputs.model {
            Some(m) => m.target_names().iter().map(|s| s.to_string()).collect(),
            None => train.target_names.clone(),
        },
    };

    let (test, predictions, folds, n_train) = match kind.test_kind() {
        None => {
            if inputs.model.is_some() {
                return Err(Error::param("model", "cross-validation trains its own models"));
            }
            let (preds, folds) = cross_validate(spec, train, &targets, forest)?;
            (train, preds, folds, train.len() - train.len() / spec.folds)
        }
        Some(test_kind) => {
            let test = inputs
                .test
                .ok_or_else(|| Error::param("test", format!("{kind} needs a test dataset")))?;
            if test.kind != test_kind {
                return Err(Error::param(
                    "test",
                    format!("{kind} tests on a {test_kind:?} dataset, got {:?}", test.kind),
                ));
            }
            let trained;
            let model = match inputs.model {
                Some(m) => {
                    for t in &targets {
                        if !m.target_names().contains(&t.as_str()) {
                            return Err(Error::param("targets", format!("model has no target `{t}`")));
                        }
                    }
                    m
                }
                None => {
                    check_protocol(spec, &train.acquisition, train.reference_ppm, test)?;
                    trained = QuantModel::train(train, Some(&targets), forest, spec.window)?;
                    &trained
                }
            };
            check_protocol(spec, &model.features.acquisition, model.features.reference_ppm, test)?;
            let spectra: Vec<_> = test.spectra().collect();
            let rows = model.predict_all(spectra, spec.allow_preprocess)?;
            let names = model.target_names();
            let cols: Vec<usize> = targets
                .iter()
                .map(|t| names.iter().position(|n| n == t).expect("checked above"))
                .collect();
            let preds = rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect();
            (test, preds, vec![None; test.len()], train.len())
        }
    };

    let label_cols = targets
        .iter()
        .map(|t| test.target_index(t))
        .collect::<Result<Vec<_>>>()?;
    let oracle_estimates = oracle_estimates(test, &targets, inputs.oracle_basis, oracle)?;

    let per_target = targets
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let truth: Vec<f64> = test.records.iter().map(|r| r.labels[label_cols[j]]).collect();
            let forest_estimate: Vec<f64> = predictions.iter().map(|p: &Vec<f64>| p[j]).collect();
            let oracle_estimate: Vec<Option<f64>> = oracle_estimates.iter().map(|o| o.as_ref().map(|o| o[j])).collect();
            let forest_error = truth
                .iter()
                .zip(&forest_estimate)
                .map(|(&t, &e)| relative_error(e, t).ok())
                .collect();
            let oracle_error = truth
                .iter()
                .zip(&oracle_estimate)
                .map(|(&t, e)| e.and_then(|e| relative_error(e, t).ok()))
                .collect();
            TargetSamples {
                name: name.clone(),
                truth,
                forest_estimate,
                forest_error,
                oracle_estimate,
                oracle_error,
            }
        })
        .collect::<Vec<_>>();

    let truth_of = |f: fn(&crate::simulate::SimulationParameters) -> Option<f64>| -> Vec<Option<f64>> {
        test.records.iter().map(|r| r.truth.as_ref().and_then(f)).collect()
    };
    let samples = SampleInfo {
        record_id: test.records.iter().map(|r| r.id).collect(),
        fold: folds,
        baseline_amplitude: truth_of(|p| Some(p.baseline_amplitude)),
        lipid_amplitude: truth_of(|p| Some(p.lipid_amplitude)),
        snr: truth_of(|p| p.snr),
    };
    let targets = per_target.iter().map(target_report).collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        experiment: kind,
        truth_source: test.truth_source,
        spec: spec.clone(),
        forest_config: forest.clone(),
        oracle_config: *oracle,
        n_train,
        targets,
        samples,
        per_target,
    })
}

fn check_protocol(
    spec: &ExperimentSpec,
    acquisition: &crate::signal::AcquisitionParams,
    reference_ppm: f64,
    test: &Dataset,
) -> Result<()> {
    let same = *acquisition == test.acquisition && reference_ppm == test.reference_ppm;
    if !same && !spec.allow_preprocess {
        return Err(Error::param(
            "allow_preprocess",
            format!(
                "test spectra ({} Hz / {} points) differ from the training protocol ({} Hz / {} points); \
                 preprocessing must be enabled",
                test.acquisition.spectral_width_hz,
                test.acquisition.n_points,
                acquisition.spectral_width_hz,
                acquisition.n_points
            ),
        ));
    }
    Ok(())
}

/// Per target, one prediction per record.
type Predictions = Vec<Vec<f64>>;

/// K-fold predictions for every record, plus each record's fold.
fn cross_validate(
    spec: &ExperimentSpec,
    data: &Dataset,
    targets: &[String],
    forest: &ForestConfig,
) -> Result<(Predictions, Vec<Option<usize>>)> {
    let folds = kfold_split(data.len(), spec.folds, spec.fold_seed)?;
    let mut preds = vec![Vec::new(); data.len()];
    let mut fold_of = vec![None; data.len()];
    for (f, held_out) in folds.iter().enumerate() {
        let mut keep = vec![true; data.len()];
        for &i in held_out {
            keep[i] = false;
        }
        let train_idx: Vec<usize> = (0..data.len()).filter(|&i| keep[i]).collect();
        let model = QuantModel::train(&data.subset(&train_idx)?, Some(targets), forest, spec.window)?;
        let spectra: Vec<_> = held_out.iter().map(|&i| &data.records[i].spectrum).collect();
        for (&i, p) in held_out.iter().zip(model.predict_all(spectra, false)?) {
            preds[i] = p;
            fold_of[i] = Some(f);
        }
    }
    Ok((preds, fold_of))
}

/// Oracle ratio estimates per test record; `None` where the fit is unusable.
fn oracle_estimates(
    test: &Dataset,
    targets: &[String],
    basis: &BasisSet,
    config: &OracleConfig,
) -> Result<Vec<Option<Vec<f64>>>> {
    if basis.reference_ppm() != test.reference_ppm {
        return Err(Error::Incompatible(format!(
            "oracle basis is referenced to {} ppm, test spectra to {} ppm",
            basis.reference_ppm(),
            test.reference_ppm
        )));
    }
    let rendered;
    let basis = if *basis.params() == test.acquisition {
        basis
    } else {
        rendered = basis.with_params(test.acquisition)?;
        &rendered
    };
    for t in targets {
        let metabolite = t.split('/').next().unwrap_or(t);
        if !basis.contains(metabolite) {
            return Err(Error::param("targets", format!("oracle basis has no `{metabolite}` for `{t}`")));
        }
    }
    let fitter = LinearFitter::new(basis, *config)?;
    test.records
        .par_iter()
        .map(|r| {
            let fit = fitter.fit(&r.spectrum)?;
            Ok(fit_ratios(&fit).ok().map(|ratios: BTreeMap<String, f64>| {
                targets.iter().map(|t| ratios[t]).collect()
            }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::default_brain_basis;
    use crate::forest::Bootstrap;
    use crate::signal::AcquisitionParams;
    use crate::simulate::{SimulationConfig, UniformRange};

    fn basis() -> BasisSet {
        default_brain_basis(AcquisitionParams::default()).unwrap()
    }

    fn small_forest() -> ForestConfig {
        ForestConfig {
            n_trees: 10,
            max_features: 16,
            min_leaf_size: 2,
            max_depth: None,
            rng_seed: 1,
            bootstrap: Bootstrap::Resample,
        }
    }

    #[test]
    fn experiment_names_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        let err = "lcmodel".parse::<ExperimentKind>().unwrap_err().to_string();
        assert!(err.contains("synthetic-real-images"), "{err}");
    }

    #[test]
    fn memorization_gives_zero_error() {
        let mut c = SimulationConfig::desk_scale(basis(), 40, 2).clean();
        c.t2_scale_range = UniformRange::fixed(1.0);
        let d = Dataset::simulate(&c).unwrap();
        let n_features = crate::preprocess::FeatureSpec::from_training(d.spectra(), PpmWindow::METABOLITES)
            .unwrap()
            .len();
        let b = basis();
        let inputs = ExperimentInputs {
            train: &d,
            test: Some(&d),
            oracle_basis: &b,
            model: None,
        };
        let spec = ExperimentSpec::new(ExperimentKind::SyntheticSynthetic);
        let report = run_experiment(&spec, &inputs, &ForestConfig::memorizing(n_features), &OracleConfig::default()).unwrap();
        for t in &report.targets {
            assert!(t.forest.median_error < 1e-6);
            assert!(t.oracle.unwrap().median_error < 1e-6);
            assert!((t.oracle.unwrap().pearson_r.unwrap() - 1.0).abs() < 1e-9);
        }
        assert_eq!(report.recompute_summaries().unwrap(), report.targets);
    }

    #[test]
    fn cross_validation_covers_every_record_once() {
        let c = SimulationConfig::desk_scale(basis(), 30, 4).with_mi_glx();
        let d = Dataset::stand_in(&c, &OracleConfig::default()).unwrap();
        let b = basis();
        let inputs = ExperimentInputs {
            train: &d,
            test: None,
            oracle_basis: &b,
            model: None,
        };
        let spec = ExperimentSpec {
            folds: 5,
            ..ExperimentSpec::new(ExperimentKind::RealRealSpectra)
        };
        let report = run_experiment(&spec, &inputs, &small_forest(), &OracleConfig::default()).unwrap();
        assert_eq!(report.truth_source, TruthSource::Oracle);
        assert_eq!(report.samples.record_id.len(), d.len());
        let mut counts = [0usize; 5];
        for f in report.samples.fold.iter().flatten() {
            counts[*f] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), d.len());
        // The oracle is its own truth here.
        assert_eq!(report.summary("NAA/Cr").unwrap().oracle.unwrap().max_error, 0.0);
    }

    #[test]
    fn cross_protocol_needs_preprocessing() {
        let train = Dataset::simulate(&SimulationConfig::desk_scale(basis(), 20, 1)).unwrap();
        let mrsi = default_brain_basis(AcquisitionParams::mrsi_2d()).unwrap();
        let test = Dataset::stand_in(&SimulationConfig::desk_scale(mrsi, 8, 2), &OracleConfig::default()).unwrap();
        let b = basis();
        let inputs = ExperimentInputs {
            train: &train,
            test: Some(&test),
            oracle_basis: &b,
            model: None,
        };
        let mut spec = ExperimentSpec::new(ExperimentKind::SyntheticRealImages);
        spec.allow_preprocess = false;
        let err = run_experiment(&spec, &inputs, &small_forest(), &OracleConfig::default());
        assert!(matches!(err, Err(Error::InvalidParameter { ref field, .. }) if field == "allow_preprocess"));
        spec.allow_preprocess = true;
        let report = run_experiment(&spec, &inputs, &small_forest(), &OracleConfig::default()).unwrap();
        assert_eq!(report.samples.record_id.len(), test.len());
    }

    #[test]
    fn wrong_dataset_kinds_are_rejected() {
        let d = Dataset::simulate(&SimulationConfig::desk_scale(basis(), 10, 1)).unwrap();
        let b = basis();
        let inputs = ExperimentInputs {
            train: &d,
            test: None,
            oracle_basis: &b,
            model: None,
        };
        for kind in [ExperimentKind::RealRealSpectra, ExperimentKind::SyntheticSynthetic] {
            let err = run_experiment(&ExperimentSpec::new(kind), &inputs, &small_forest(), &OracleConfig::default());
            assert!(matches!(err, Err(Error::InvalidParameter { .. })), "{kind}");
        }
    }
}
