//! Labelled spectrum collections.
//!
//! A dataset is a set of spectra on one acquisition grid with one label per
//! target. Synthetic datasets are labelled by the simulator; stand-in
//! datasets (used where the study worked on in-vivo data) are simulated the
//! same way but relabelled by the linear-fit oracle, since in-vivo truth is
//! itself a fit result.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{fit_ratios, LinearFitter, OracleConfig};
use crate::signal::{AcquisitionParams, ComplexSpectrum};
use crate::simulate::{simulate_dataset, SimulationConfig, SimulationParameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Synthetic,
    /// Simulated in place of an in-vivo cohort, labelled by the oracle.
    StandIn,
}

/// Where the labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthSource {
    Simulation,
    Oracle,
}

impl TruthSource {
    pub fn as_str(self) -> &'static str {
        match self {
            TruthSource::Simulation => "simulation",
            TruthSource::Oracle => "oracle",
        }
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetRecipe {
    Simulation { simulation: SimulationConfig },
    StandIn { simulation: SimulationConfig, oracle: OracleConfig },
}

impl DatasetRecipe {
    pub fn simulation(&self) -> &SimulationConfig {
        match self {
            DatasetRecipe::Simulation { simulation } | DatasetRecipe::StandIn { simulation, .. } => simulation,
        }
    }

    pub fn kind(&self) -> DatasetKind {
        match self {
            DatasetRecipe::Simulation { .. } => DatasetKind::Synthetic,
            DatasetRecipe::StandIn { .. } => DatasetKind::StandIn,
        }
    }

    pub fn build(&self) -> Result<Dataset> {
        match self {
            DatasetRecipe::Simulation { simulation } => Dataset::simulate(simulation),
            DatasetRecipe::StandIn { simulation, oracle } => Dataset::stand_in(simulation, oracle),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Position in the generating sequence; stays fixed when records are
    /// dropped or subset.
    pub id: usize,
    pub spectrum: ComplexSpectrum,
    /// One value per dataset target, in target order.
    pub labels: Vec<f64>,
    pub truth: Option<SimulationParameters>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub truth_source: TruthSource,
    pub target_names: Vec<String>,
    pub acquisition: AcquisitionParams,
    pub reference_ppm: f64,
    pub recipe: Option<DatasetRecipe>,
    pub records: Vec<Record>,
}

impl Dataset {
    /// Checks that every record sits on the declared grid and carries one
    /// finite label per target.
    pub fn new(
        kind: DatasetKind,
        truth_source: TruthSource,
        target_names: Vec<String>,
        records: Vec<Record>,
        recipe: Option<DatasetRecipe>,
    ) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Argument("a dataset needs at least one record".into()))?;
        let acquisition = *first.spectrum.params();
        let reference_ppm = first.spectrum.reference_ppm();
        for r in &records {
            r.spectrum.check_same_grid(&first.spectrum)?;
            if r.labels.len() != target_names.len() {
                return Err(Error::Argument(format!(
                    "record {} has {} labels for {} targets",
                    r.id,
                    r.labels.len(),
                    target_names.len()
                )));
            }
            if r.labels.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument(format!("record {} has a non-finite label", r.id)));
            }
        }
        Ok(Dataset {
            kind,
            truth_source,
            target_names,
            acquisition,
            reference_ppm,
            recipe,
            records,
        })
    }

    pub fn simulate(config: &SimulationConfig) -> Result<Self> {
        let targets = config.target_names();
        let spectra = simulate_dataset(config)?;
        let records = spectra
            .into_iter()
            .enumerate()
            .map(|(id, s)| Record {
                id,
                labels: targets.iter().map(|t| s.labels[t]).collect(),
                spectrum: s.spectrum,
                truth: s.truth,
            })
            .collect();
        Dataset::new(
            DatasetKind::Synthetic,
            TruthSource::Simulation,
            targets,
            records,
            Some(DatasetRecipe::Simulation {
                simulation: config.clone(),
            }),
        )
    }

    /// Simulates, then replaces the labels by oracle ratios. Spectra the
    /// oracle cannot quantify (non-positive Cr) are dropped, as an unusable
    /// in-vivo fit would be.
    pub fn stand_in(config: &SimulationConfig, oracle: &OracleConfig) -> Result<Self> {
        let targets = config.target_names();
        let fitter = LinearFitter::new(&config.basis, *oracle)?;
        let spectra = simulate_dataset(config)?;
        let relabelled: Vec<Option<Record>> = spectra
            .into_par_iter()
            .enumerate()
            .map(|(id, s)| -> Result<Option<Record>> {
                let Ok(ratios) = fit_ratios(&fitter.fit(&s.spectrum)?) else {
                    return Ok(None);
                };
                Ok(Some(Record {
                    id,
                    labels: targets.iter().map(|t| ratios[t]).collect(),
                    spectrum: s.spectrum,
                    truth: s.truth,
                }))
            })
            .collect::<Result<_>>()?;
        let records: Vec<Record> = relabelled.into_iter().flatten().collect();
        if records.is_empty() {
            return Err(Error::Numerical("the oracle could not quantify any spectrum".into()));
        }
        Dataset::new(
            DatasetKind::StandIn,
            TruthSource::Oracle,
            targets,
            records,
            Some(DatasetRecipe::StandIn {
                simulation: config.clone(),
                oracle: *oracle,
            }),
        )
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn target_index(&self, name: &str) -> Result<usize> {
        self.target_names.iter().position(|t| t == name).ok_or_else(|| {
            Error::param(
                "targets",
                format!("`{name}` is not in the dataset (has {})", self.target_names.join(", ")),
            )
        })
    }

    /// Label column of one target.
    pub fn labels(&self, target: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.labels[target]).collect()
    }

    pub fn labels_by_name(&self) -> BTreeMap<String, Vec<f64>> {
        self.target_names
            .iter()
            .enumerate()
            .map(|(t, name)| (name.clone(), self.labels(t)))
            .collect()
    }

    pub fn spectra(&self) -> impl Iterator<Item = &ComplexSpectrum> {
        self.records.iter().map(|r| &r.spectrum)
    }

    /// The records at `positions` (indices into `records`), in that order.
    pub fn subset(&self, positions: &[usize]) -> Result<Dataset> {
        let records = positions
            .iter()
            .map(|&p| {
                self.records
                    .get(p)
                    .cloned()
                    .ok_or_else(|| Error::Argument(format!("record position {p} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.kind, self.truth_source, self.target_names.clone(), records, None)
    }
}
