//! Mapping spectra onto a model's feature grid.
//!
//! Features are built in three steps: crop to a ppm window, resample onto the
//! training grid (only needed when the acquisition protocol differs), and
//! rescale so the largest magnitude matches a reference training spectrum.
//! The model input is the real (absorption) part of the result.
//!
//! A spectrum sampled more coarsely than the training grid is zero-filled to
//! the training bin width before the linear resampling. Peaks narrower than a
//! bin are otherwise flattened by an amount that depends on where they fall
//! between bins, which biases every ratio.

use std::borrow::Cow;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{fid_to_spectrum, max_magnitude, spectrum_to_fid, AcquisitionParams, ComplexSpectrum, TimeSignal};

/// Inclusive ppm window, `hi > lo`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpmWindow {
    pub hi: f64,
    pub lo: f64,
}

impl PpmWindow {
    /// The 4.3 to 0.2 ppm region holding the NAA, Cr, Cho, mI, Glx and lipid resonances.
    pub const METABOLITES: PpmWindow = PpmWindow { hi: 4.3, lo: 0.2 };

    pub fn new(hi: f64, lo: f64) -> Result<Self> {
        let w = PpmWindow { hi, lo };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hi.is_finite() && self.lo.is_finite() && self.hi > self.lo) {
            return Err(Error::param(
                "window",
                format!("need hi > lo, got hi = {}, lo = {}", self.hi, self.lo),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, ppm: f64) -> bool {
        self.lo <= ppm && ppm <= self.hi
    }
}

impl Default for PpmWindow {
    fn default() -> Self {
        PpmWindow::METABOLITES
    }
}

/// Keeps exactly the bins with `lo <= ppm <= hi`.
pub fn crop_ppm(spec: &ComplexSpectrum, hi: f64, lo: f64) -> Result<ComplexSpectrum> {
    let window = PpmWindow::new(hi, lo)?;
    let axis = spec.ppm_axis();
    let first = axis.iter().position(|&p| p <= window.hi);
    let last = axis.iter().rposition(|&p| p >= window.lo);
    match (first, last) {
        (Some(a), Some(b)) if a <= b => {
            if a == 0 && b + 1 == axis.len() {
                return Ok(spec.clone());
            }
            let sub_axis: Arc<[f64]> = axis[a..=b].into();
            ComplexSpectrum::new(
                spec.values()[a..=b].to_vec(),
                sub_axis,
                *spec.params(),
                spec.reference_ppm(),
            )
        }
        _ => Err(Error::Range(format!(
            "window [{lo}, {hi}] ppm does not overlap the axis [{}, {}] ppm",
            axis[axis.len() - 1],
            axis[0]
        ))),
    }
}

/// Pads the FID of a full-width spectrum with zeros to `n_points` samples.
/// The result covers the same span on a finer grid; for an integer factor
/// `m`, every `m`-th bin equals the original.
pub fn zero_fill(spec: &ComplexSpectrum, n_points: usize) -> Result<ComplexSpectrum> {
    let p = *spec.params();
    if n_points < p.n_points {
        return Err(Error::param(
            "n_points",
            format!("zero-filling cannot shorten {} points to {n_points}", p.n_points),
        ));
    }
    let mut samples = spectrum_to_fid(spec)?.into_samples();
    samples.resize(n_points, Complex64::new(0.0, 0.0));
    let params = AcquisitionParams::new(p.spectral_width_hz, n_points, p.transmitter_freq_mhz)?;
    fid_to_spectrum(&TimeSignal::new(samples, params)?, spec.reference_ppm())
}

/// Linear interpolation of real and imaginary parts onto `target_grid`.
///
/// Grid points must lie within the spectrum's ppm span; a point that
/// coincides with a source bin takes that bin's value exactly.
pub fn resample(spec: &ComplexSpectrum, target_grid: &[f64]) -> Result<Vec<Complex64>> {
    let axis = spec.ppm_axis();
    let values = spec.values();
    let (top, bottom) = (axis[0], axis[axis.len() - 1]);
    target_grid
        .iter()
        .map(|&t| {
            if !(t <= top && t >= bottom) {
                return Err(Error::Range(format!(
                    "grid point {t} ppm lies outside the spectrum span [{bottom}, {top}] ppm"
                )));
            }
            // First index whose ppm is <= t; the axis is strictly decreasing.
            let j = axis.partition_point(|&p| p > t);
            if axis[j] == t || j == 0 {
                return Ok(values[j]);
            }
            let (p0, p1) = (axis[j - 1], axis[j]);
            let w = (p0 - t) / (p0 - p1);
            Ok(values[j - 1] + (values[j] - values[j - 1]) * w)
        })
        .collect()
}

/// Scales `values` so their largest magnitude equals `reference_max`.
pub fn normalize_to_reference(values: &[Complex64], reference_max: f64) -> Result<Vec<Complex64>> {
    if !(reference_max.is_finite() && reference_max > 0.0) {
        return Err(Error::param("reference_max", "must be positive"));
    }
    let peak = max_magnitude(values);
    if peak == 0.0 {
        return Err(Error::Precondition("cannot normalise an all-zero spectrum".into()));
    }
    let scale = reference_max / peak;
    Ok(values.iter().map(|v| v * scale).collect())
}

/// What part of the normalised complex spectrum is fed to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureRepresentation {
    /// Absorption (real) part.
    #[default]
    Real,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub grid: Arc<[f64]>,
}

/// The feature grid and normalisation reference a model was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub window: PpmWindow,
    /// Acquisition the grid was cut from.
    pub acquisition: AcquisitionParams,
    pub reference_ppm: f64,
    pub grid: Arc<[f64]>,
    /// Max magnitude of the reference training spectrum within the window.
    pub reference_max_magnitude: f64,
    pub reference_index: usize,
    pub representation: FeatureRepresentation,
}

impl FeatureSpec {
    /// Derives the grid from the first spectrum and picks as reference the
    /// spectrum with the median (lower median for even counts) windowed max
    /// magnitude.
    pub fn from_training<'a, I>(spectra: I, window: PpmWindow) -> Result<Self>
    where
        I: IntoIterator<Item = &'a ComplexSpectrum>,
    {
        window.validate()?;
        let mut first: Option<ComplexSpectrum> = None;
        let mut maxima = Vec::new();
        for spec in spectra {
            let cropped = crop_ppm(spec, window.hi, window.lo)?;
            match &first {
                None => first = Some(cropped.clone()),
                Some(f) => {
                    if f.params() != spec.params()
                        || f.reference_ppm() != spec.reference_ppm()
                        || f.ppm_axis() != cropped.ppm_axis()
                    {
                        return Err(Error::Incompatible(format!(
                            "training spectrum {} is on a different grid",
                            maxima.len()
                        )));
                    }
                }
            }
            maxima.push(cropped.max_magnitude());
        }
        let first = first.ok_or_else(|| Error::Argument("no training spectra".into()))?;
        let mut order: Vec<usize> = (0..maxima.len()).collect();
        order.sort_by(|&a, &b| maxima[a].total_cmp(&maxima[b]).then(a.cmp(&b)));
        let reference_index = order[(order.len() - 1) / 2];
        let reference_max_magnitude = maxima[reference_index];
        if reference_max_magnitude <= 0.0 {
            return Err(Error::Precondition("reference training spectrum is all zero".into()));
        }
        Ok(FeatureSpec {
            window,
            acquisition: *first.params(),
            reference_ppm: first.reference_ppm(),
            grid: first.shared_axis().clone(),
            reference_max_magnitude,
            reference_index,
            representation: FeatureRepresentation::Real,
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// True when cropping `spec` to the window reproduces the grid exactly.
    pub fn is_native(&self, spec: &ComplexSpectrum) -> bool {
        *spec.params() == self.acquisition && spec.reference_ppm() == self.reference_ppm
    }

    /// Crop, resample (only when `allow_resample` and the protocol differs)
    /// and normalise.
    pub fn extract(&self, spec: &ComplexSpectrum, allow_resample: bool) -> Result<FeatureVector> {
        let complex = self.extract_complex(spec, allow_resample)?;
        let values = match self.representation {
            FeatureRepresentation::Real => complex.iter().map(|v| v.re).collect(),
        };
        Ok(FeatureVector {
            values,
            grid: self.grid.clone(),
        })
    }

    /// Normalised complex values on the grid, before reduction to features.
    pub fn extract_complex(&self, spec: &ComplexSpectrum, allow_resample: bool) -> Result<Vec<Complex64>> {
        let on_grid = if self.is_native(spec) {
            let cropped = crop_ppm(spec, self.window.hi, self.window.lo)?;
            if cropped.ppm_axis() != &self.grid[..] {
                return Err(Error::Incompatible("cropped axis differs from the model grid".into()));
            }
            cropped.into_values()
        } else if allow_resample {
            let source = self.refine(spec)?;
            // Widen by one source bin so the outermost grid points stay
            // inside the cropped span.
            let margin = source.params().bin_width_ppm();
            let cropped = crop_ppm(&source, self.window.hi + margin, self.window.lo - margin)?;
            resample(&cropped, &self.grid)?
        } else {
            return Err(Error::Incompatible(format!(
                "spectrum acquired at {} Hz / {} points does not match the model grid \
                 ({} Hz / {} points); enable preprocessing to resample",
                spec.params().spectral_width_hz,
                spec.params().n_points,
                self.acquisition.spectral_width_hz,
                self.acquisition.n_points
            )));
        };
        normalize_to_reference(&on_grid, self.reference_max_magnitude)
    }

    /// Zero-fills full-width spectra whose bins are wider than the training
    /// grid's, up to the smallest point count reaching its bin width.
    fn refine<'a>(&self, spec: &'a ComplexSpectrum) -> Result<Cow<'a, ComplexSpectrum>> {
        let fine = self.acquisition.bin_width_ppm();
        if !spec.is_full_width() || spec.params().bin_width_ppm() <= fine {
            return Ok(Cow::Borrowed(spec));
        }
        let n = (spec.params().span_ppm() / fine).ceil() as usize;
        zero_fill(spec, n).map(Cow::Owned)
    }
}
