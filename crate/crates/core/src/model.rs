//! A forest bundled with the feature grid it was trained on.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::forest::{fit_forest, FeatureMatrix, ForestConfig, RandomForestModel, Targets};
use crate::preprocess::{FeatureSpec, PpmWindow};
use crate::signal::ComplexSpectrum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantModel {
    pub features: FeatureSpec,
    pub forest: RandomForestModel,
}

/// Feature rows of `spectra`, computed in parallel.
pub fn feature_matrix<'a, I>(features: &FeatureSpec, spectra: I, allow_resample: bool) -> Result<FeatureMatrix>
where
    I: IntoParallelIterator<Item = &'a ComplexSpectrum>,
    I::Iter: IndexedParallelIterator,
{
    let rows: Vec<Vec<f64>> = spectra
        .into_par_iter()
        .map(|s| features.extract(s, allow_resample).map(|f| f.values))
        .collect::<Result<_>>()?;
    let n = rows.len();
    FeatureMatrix::new(n, features.len(), rows.concat())
}

impl QuantModel {
    /// Trains one forest per target on every record of `dataset`.
    ///
    /// `targets` selects and orders the targets; `None` takes all of them.
    pub fn train(
        dataset: &Dataset,
        targets: Option<&[String]>,
        config: &ForestConfig,
        window: PpmWindow,
    ) -> Result<Self> {
        let names: Vec<String> = match targets {
            Some([]) => return Err(Error::param("targets", "at least one target is required")),
            Some(t) => t.to_vec(),
            None => dataset.target_names.clone(),
        };
        let columns = names
            .iter()
            .map(|n| dataset.target_index(n).map(|i| dataset.labels(i)))
            .collect::<Result<Vec<_>>>()?;
        let features = FeatureSpec::from_training(dataset.spectra(), window)?;
        let spectra: Vec<&ComplexSpectrum> = dataset.spectra().collect();
        let x = feature_matrix(&features, spectra, false)?;
        let forest = fit_forest(&x, &Targets::new(names, columns)?, config)?;
        Ok(QuantModel { features, forest })
    }

    pub fn target_names(&self) -> Vec<&str> {
        self.forest.target_names()
    }

    pub fn predict(&self, spec: &ComplexSpectrum, allow_resample: bool) -> Result<Vec<f64>> {
        self.forest.predict(&self.features.extract(spec, allow_resample)?.values)
    }

    /// Predictions for every spectrum, one row per spectrum.
    pub fn predict_all<'a, I>(&self, spectra: I, allow_resample: bool) -> Result<Vec<Vec<f64>>>
    where
        I: IntoParallelIterator<Item = &'a ComplexSpectrum>,
        I::Iter: IndexedParallelIterator,
    {
        spectra
            .into_par_iter()
            .map(|s| self.predict(s, allow_resample))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.forest.validate()?;
        if self.forest.n_features != self.features.len() {
            return Err(Error::Argument(format!(
                "forest expects {} features, grid has {}",
                self.forest.n_features,
                self.features.len()
            )));
        }
        Ok(())
    }
}
