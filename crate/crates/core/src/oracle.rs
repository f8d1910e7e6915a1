//! Linear least-squares basis fitting.
//!
//! The real part of a spectrum, cropped to a ppm window, is modelled as a
//! linear combination of the real parts of the basis spectra plus a
//! polynomial in ppm. The problem is solved through an SVD, giving the
//! minimum-norm solution when the design matrix is rank deficient.
//!
//! This fitter is the reference quantifier the forest is compared against.
//! Its outputs are always labelled "oracle".

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSet, RATIO_REFERENCE};
use crate::error::{Error, Result};
use crate::preprocess::{crop_ppm, PpmWindow};
use crate::signal::ComplexSpectrum;
use crate::simulate::ratio_name;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub window: PpmWindow,
    pub baseline_degree: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            window: PpmWindow::METABOLITES,
            baseline_degree: 4,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if self.baseline_degree > 12 {
            return Err(Error::param(
                "baseline_degree",
                format!("{} is too high for a stable power basis (max 12)", self.baseline_degree),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub concentrations: BTreeMap<String, f64>,
    /// Coefficients of `1, u, u², ...` with `u` the ppm position mapped
    /// linearly onto [-1, 1] across the window.
    pub baseline_coeffs: Vec<f64>,
    pub residual_norm: f64,
    pub rank: usize,
    pub rank_deficient: bool,
}

/// A design matrix and its pseudo-inverse for one basis, acquisition and
/// window. Reusable across any number of spectra on that grid.
#[derive(Debug, Clone)]
pub struct LinearFitter {
    names: Vec<String>,
    n_basis: usize,
    axis: Vec<f64>,
    design: DMatrix<f64>,
    pseudo_inverse: DMatrix<f64>,
    rank: usize,
    config: OracleConfig,
    basis_params: crate::signal::AcquisitionParams,
    reference_ppm: f64,
}

impl LinearFitter {
    pub fn new(basis: &BasisSet, config: OracleConfig) -> Result<Self> {
        config.validate()?;
        let window = config.window;
        let mut columns = Vec::new();
        let mut axis = Vec::new();
        for m in basis.metabolites() {
            let rendered = basis.render_metabolite(&m.name, 1.0, 1.0)?;
            let cropped = crop_ppm(&rendered, window.hi, window.lo)?;
            axis = cropped.ppm_axis().to_vec();
            columns.push(cropped.values().iter().map(|v| v.re).collect::<Vec<f64>>());
        }
        let n_rows = axis.len();
        let n_basis = columns.len();
        let n_cols = n_basis + config.baseline_degree + 1;
        if n_rows < n_cols {
            return Err(Error::Precondition(format!(
                "window holds {n_rows} points, fewer than the {n_cols} fit parameters"
            )));
        }
        let mid = (window.hi + window.lo) / 2.0;
        let half = (window.hi - window.lo) / 2.0;
        let design = DMatrix::from_fn(n_rows, n_cols, |i, j| {
            if j < n_basis {
                columns[j][i]
            } else {
                ((axis[i] - mid) / half).powi((j - n_basis) as i32)
            }
        });
        let svd = design.clone().svd(true, true);
        let s_max = svd.singular_values.max();
        let tol = f64::EPSILON * n_rows.max(n_cols) as f64 * s_max;
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        let pseudo_inverse = svd
            .pseudo_inverse(tol)
            .map_err(|e| Error::Numerical(format!("pseudo-inverse failed: {e}")))?;
        Ok(LinearFitter {
            names: basis.names().map(str::to_string).collect(),
            n_basis,
            axis,
            design,
            pseudo_inverse,
            rank,
            config,
            basis_params: *basis.params(),
            reference_ppm: basis.reference_ppm(),
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn design_matrix(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// Number of points inside the window.
    pub fn n_points(&self) -> usize {
        self.axis.len()
    }

    pub fn fit(&self, spec: &ComplexSpectrum) -> Result<FitResult> {
        if *spec.params() != self.basis_params || spec.reference_ppm() != self.reference_ppm {
            return Err(Error::Incompatible(format!(
                "spectrum acquired at {} Hz / {} points, basis rendered at {} Hz / {} points",
                spec.params().spectral_width_hz,
                spec.params().n_points,
                self.basis_params.spectral_width_hz,
                self.basis_params.n_points
            )));
        }
        let cropped = crop_ppm(spec, self.config.window.hi, self.config.window.lo)?;
        if cropped.ppm_axis() != self.axis.as_slice() {
            return Err(Error::Incompatible("cropped spectrum is not on the fit grid".into()));
        }
        let b = DVector::from_iterator(self.axis.len(), cropped.values().iter().map(|v| v.re));
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("spectrum has non-finite values".into()));
        }
        let theta = &self.pseudo_inverse * &b;
        let residual = &b - &self.design * &theta;
        let concentrations = self
            .names
            .iter()
            .cloned()
            .zip(theta.iter().copied().take(self.n_basis))
            .collect();
        Ok(FitResult {
            concentrations,
            baseline_coeffs: theta.iter().copied().skip(self.n_basis).collect(),
            residual_norm: residual.norm(),
            rank: self.rank,
            rank_deficient: self.rank < self.design.ncols(),
        })
    }

    /// Residual of `spec` against the fitted model, on the window grid.
    pub fn residual(&self, spec: &ComplexSpectrum, result: &FitResult) -> Result<Vec<f64>> {
        let cropped = crop_ppm(spec, self.config.window.hi, self.config.window.lo)?;
        let theta: Vec<f64> = self
            .names
            .iter()
            .map(|n| result.concentrations[n])
            .chain(result.baseline_coeffs.iter().copied())
            .collect();
        let model = &self.design * DVector::from_vec(theta);
        Ok(cropped.values().iter().zip(model.iter()).map(|(v, m)| v.re - m).collect())
    }
}

/// One-off fit. Renders the basis at the spectrum's acquisition if needed.
pub fn lsq_fit(spec: &ComplexSpectrum, basis: &BasisSet, baseline_degree: usize) -> Result<FitResult> {
    let config = OracleConfig {
        baseline_degree,
        ..OracleConfig::default()
    };
    let basis = if basis.params() == spec.params() {
        basis.clone()
    } else {
        basis.with_params(*spec.params())?
    };
    LinearFitter::new(&basis, config)?.fit(spec)
}

/// Every metabolite coefficient divided by the Cr coefficient, keyed `X/Cr`.
pub fn fit_ratios(result: &FitResult) -> Result<BTreeMap<String, f64>> {
    let cr = *result
        .concentrations
        .get(RATIO_REFERENCE)
        .ok_or_else(|| Error::Undefined(format!("fit has no `{RATIO_REFERENCE}` coefficient")))?;
    if cr <= 0.0 || !cr.is_finite() {
        return Err(Error::Undefined(format!(
            "`{RATIO_REFERENCE}` coefficient is {cr}; ratios are undefined"
        )));
    }
    Ok(result
        .concentrations
        .iter()
        .filter(|(name, _)| name.as_str() != RATIO_REFERENCE)
        .map(|(name, c)| (ratio_name(name), c / cr))
        .collect())
}
