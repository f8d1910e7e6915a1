//! JSON run configurations. Every field is optional; command-line flags
//! override file values, and the resolved configuration is what gets
//! embedded in the output artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mrsquant::basis::{default_brain_basis, BasisSet};
use mrsquant::dataset::DatasetRecipe;
use mrsquant::eval::{ExperimentKind, ExperimentSpec};
use mrsquant::forest::{Bootstrap, ForestConfig};
use mrsquant::io;
use mrsquant::oracle::OracleConfig;
use mrsquant::preprocess::PpmWindow;
use mrsquant::signal::AcquisitionParams;
use mrsquant::simulate::{ConcentrationRange, SimulationConfig, UniformRange};
use mrsquant::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "config",
        location: format!("{}:{}:{}", path.display(), e.line(), e.column()),
        message: e.to_string(),
    })
}

/// Resolves `p` against the directory of the config file it came from.
pub fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base.and_then(Path::parent) {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

pub fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaboliteSet {
    /// NAA, Cho and Cr.
    #[default]
    Default,
    /// Adds mI and Glx.
    WithMiGlx,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Labels {
    #[default]
    Simulation,
    Oracle,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub n_spectra: Option<usize>,
    #[serde(default)]
    pub metabolites: MetaboliteSet,
    pub concentration_ranges: Option<BTreeMap<String, ConcentrationRange>>,
    pub t2_scale_range: Option<UniformRange>,
    /// `false` switches noise off.
    pub noise: Option<bool>,
    pub snr_range: Option<UniformRange>,
    pub baseline_amplitude_range: Option<UniformRange>,
    pub lipid_amplitude_range: Option<UniformRange>,
    pub basis_file: Option<PathBuf>,
    pub acquisition: Option<AcquisitionParams>,
    #[serde(default)]
    pub labels: Labels,
    pub oracle: Option<OracleConfig>,
}

impl SimulateFile {
    pub fn recipe(&self, config_path: Option<&Path>, seed: u64, n_spectra: Option<usize>) -> Result<DatasetRecipe> {
        let n = n_spectra
            .or(self.n_spectra)
            .ok_or_else(|| Error::param("n_spectra", "required (config file or --n-spectra)"))?;
        let basis = match &self.basis_file {
            Some(p) => {
                let b = io::read_basis(&resolve(config_path, p))?;
                match self.acquisition {
                    Some(a) => b.with_params(a)?,
                    None => b,
                }
            }
            None => default_brain_basis(self.acquisition.unwrap_or_default())?,
        };
        let mut sim = SimulationConfig::desk_scale(basis, n, seed);
        if self.metabolites == MetaboliteSet::WithMiGlx {
            sim = sim.with_mi_glx();
        }
        if let Some(c) = &self.concentration_ranges {
            sim.concentration_ranges = c.clone();
        }
        if let Some(r) = self.t2_scale_range {
            sim.t2_scale_range = r;
        }
        if let Some(r) = self.snr_range {
            sim.snr_range = Some(r);
        }
        if self.noise == Some(false) {
            sim.snr_range = None;
        }
        if let Some(r) = self.baseline_amplitude_range {
            sim.baseline_amplitude_range = r;
        }
        if let Some(r) = self.lipid_amplitude_range {
            sim.lipid_amplitude_range = r;
        }
        sim.validate()?;
        Ok(match self.labels {
            Labels::Simulation => {
                if self.oracle.is_some() {
                    return Err(Error::param("oracle", "only used with \"labels\": \"oracle\""));
                }
                DatasetRecipe::Simulation { simulation: sim }
            }
            Labels::Oracle => DatasetRecipe::StandIn {
                simulation: sim,
                oracle: self.oracle.unwrap_or_default(),
            },
        })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestFile {
    pub n_trees: Option<usize>,
    pub max_features: Option<usize>,
    pub min_leaf_size: Option<usize>,
    pub max_depth: Option<usize>,
    pub bootstrap: Option<Bootstrap>,
    pub rng_seed: Option<u64>,
}

impl ForestFile {
    pub fn resolve(&self, seed: Option<u64>) -> Result<ForestConfig> {
        let d = ForestConfig::default();
        let rng_seed = seed
            .or(self.rng_seed)
            .ok_or_else(|| Error::param("seed", "--seed is required"))?;
        Ok(ForestConfig {
            n_trees: self.n_trees.unwrap_or(d.n_trees),
            max_features: self.max_features.unwrap_or(d.max_features),
            min_leaf_size: self.min_leaf_size.unwrap_or(d.min_leaf_size),
            max_depth: self.max_depth.or(d.max_depth),
            rng_seed,
            bootstrap: self.bootstrap.unwrap_or(d.bootstrap),
        })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub n_trees: Option<usize>,
    pub max_features: Option<usize>,
    pub min_leaf_size: Option<usize>,
    pub max_depth: Option<usize>,
    pub bootstrap: Option<Bootstrap>,
    pub targets: Option<Vec<String>>,
    pub window: Option<PpmWindow>,
}

impl TrainFile {
    pub fn forest(&self) -> ForestFile {
        ForestFile {
            n_trees: self.n_trees,
            max_features: self.max_features,
            min_leaf_size: self.min_leaf_size,
            max_depth: self.max_depth,
            bootstrap: self.bootstrap,
            rng_seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateFile {
    pub experiment: Option<String>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Basis for the oracle; the built-in brain basis when absent.
    pub basis_file: Option<PathBuf>,
    #[serde(default)]
    pub forest: ForestFile,
    pub oracle: Option<OracleConfig>,
    pub allow_preprocess: Option<bool>,
    pub folds: Option<usize>,
    pub fold_seed: Option<u64>,
    pub targets: Option<Vec<String>>,
    pub window: Option<PpmWindow>,
}

/// A fully resolved evaluation, as embedded in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRun {
    pub spec: ExperimentSpec,
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub oracle_basis: BasisSet,
    pub forest: ForestConfig,
    pub oracle: OracleConfig,
}

impl EvaluateFile {
    pub fn resolve(&self, config_path: Option<&Path>, seed: Option<u64>) -> Result<EvaluateRun> {
        let name = self
            .experiment
            .as_deref()
            .ok_or_else(|| Error::param("experiment", "required"))?;
        let kind: ExperimentKind = name.parse()?;
        let path = |p: &PathBuf| absolute(&resolve(config_path, p));
        let train = path(
            self.train
                .as_ref()
                .ok_or_else(|| Error::param("train", "a training dataset path is required"))?,
        )?;
        let defaults = ExperimentSpec::new(kind);
        let spec = ExperimentSpec {
            kind,
            allow_preprocess: self.allow_preprocess.unwrap_or(defaults.allow_preprocess),
            folds: self.folds.unwrap_or(defaults.folds),
            fold_seed: self.fold_seed.unwrap_or(defaults.fold_seed),
            window: self.window.unwrap_or(defaults.window),
            targets: self.targets.clone(),
        };
        let oracle_basis = match &self.basis_file {
            Some(p) => io::read_basis(&resolve(config_path, p))?,
            None => default_brain_basis(AcquisitionParams::default())?,
        };
        Ok(EvaluateRun {
            spec,
            train,
            test: self.test.as_ref().map(path).transpose()?,
            model: self.model.as_ref().map(path).transpose()?,
            oracle_basis,
            forest: self.forest.resolve(seed)?,
            oracle: self.oracle.unwrap_or_default(),
        })
    }
}
