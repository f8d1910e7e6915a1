//! Labelled synthetic spectra.
//!
//! Each spectrum is a metabolite mixture with randomised concentrations and
//! linewidth, plus a smooth macromolecular baseline, lipid resonances and
//! complex Gaussian noise. Every spectrum draws from its own RNG streams
//! keyed by `(rng_seed, index)`, so a dataset is a pure function of its
//! configuration no matter how generation is scheduled.

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, SQRT_2};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSet, RATIO_REFERENCE};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::signal::{
    fid_to_spectrum_on_axis, synthesize_fid, AcquisitionParams, ComplexSpectrum,
    LorentzianComponent,
};

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformRange {
    pub min: f64,
    pub max: f64,
}

impl UniformRange {
    pub const fn new(min: f64, max: f64) -> Self {
        UniformRange { min, max }
    }

    pub const fn fixed(value: f64) -> Self {
        UniformRange { min: value, max: value }
    }

    fn validate(&self, field: &str, lower: Lower) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(Error::param(field, "bounds must be finite"));
        }
        if self.min > self.max {
            return Err(Error::param(
                field,
                format!("min ({}) exceeds max ({})", self.min, self.max),
            ));
        }
        match lower {
            Lower::NonNegative if self.min < 0.0 => {
                Err(Error::param(field, format!("min ({}) must be non-negative", self.min)))
            }
            Lower::Positive if self.min <= 0.0 => {
                Err(Error::param(field, format!("min ({}) must be positive", self.min)))
            }
            _ => Ok(()),
        }
    }

    /// One uniform draw. A degenerate range returns its bound exactly but
    /// still consumes a draw, keeping later draws aligned.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if self.min == self.max {
            self.min
        } else {
            self.min + (self.max - self.min) * u
        }
    }
}

#[derive(Clone, Copy)]
enum Lower {
    NonNegative,
    Positive,
}

/// Concentration range of one metabolite, optionally as a multiple of
/// another metabolite's sampled concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRange {
    pub min: f64,
    pub max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_to: Option<String>,
}

impl ConcentrationRange {
    pub fn absolute(min: f64, max: f64) -> Self {
        ConcentrationRange {
            min,
            max,
            relative_to: None,
        }
    }

    pub fn relative(min: f64, max: f64, to: &str) -> Self {
        ConcentrationRange {
            min,
            max,
            relative_to: Some(to.to_string()),
        }
    }

    fn range(&self) -> UniformRange {
        UniformRange::new(self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_spectra: usize,
    pub rng_seed: u64,
    pub concentration_ranges: BTreeMap<String, ConcentrationRange>,
    pub t2_scale_range: UniformRange,
    /// `None` disables noise entirely.
    pub snr_range: Option<UniformRange>,
    /// Baseline maximum as a fraction of the tallest metabolite magnitude.
    pub baseline_amplitude_range: UniformRange,
    /// Lipid maximum as a fraction of the tallest metabolite magnitude.
    pub lipid_amplitude_range: UniformRange,
    pub basis: BasisSet,
}

impl SimulationConfig {
    /// NAA and Cho as multiples of Cr, Cr in [0.5, 1.5], linewidth scale in
    /// [0.6, 1.4], SNR in [5, 50], baseline up to 0.5 and lipids up to 1.0 of
    /// the tallest metabolite peak.
    pub fn desk_scale(basis: BasisSet, n_spectra: usize, rng_seed: u64) -> Self {
        let concentration_ranges = BTreeMap::from([
            ("NAA".to_string(), ConcentrationRange::relative(0.5, 2.0, RATIO_REFERENCE)),
            ("Cho".to_string(), ConcentrationRange::relative(0.1, 0.6, RATIO_REFERENCE)),
            (RATIO_REFERENCE.to_string(), ConcentrationRange::absolute(0.5, 1.5)),
        ]);
        SimulationConfig {
            n_spectra,
            rng_seed,
            concentration_ranges,
            t2_scale_range: UniformRange::new(0.6, 1.4),
            snr_range: Some(UniformRange::new(5.0, 50.0)),
            baseline_amplitude_range: UniformRange::new(0.0, 0.5),
            lipid_amplitude_range: UniformRange::new(0.0, 1.0),
            basis,
        }
    }

    /// Adds mI and Glx (as multiples of Cr) to the sampled metabolites.
    pub fn with_mi_glx(mut self) -> Self {
        self.concentration_ranges
            .insert("mI".into(), ConcentrationRange::relative(0.4, 1.0, RATIO_REFERENCE));
        self.concentration_ranges
            .insert("Glx".into(), ConcentrationRange::relative(0.6, 1.6, RATIO_REFERENCE));
        self
    }

    /// Switches off noise, baseline and lipids.
    pub fn clean(mut self) -> Self {
        self.snr_range = None;
        self.baseline_amplitude_range = UniformRange::fixed(0.0);
        self.lipid_amplitude_range = UniformRange::fixed(0.0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_spectra == 0 {
            return Err(Error::param("n_spectra", "at least one spectrum is required"));
        }
        match self.concentration_ranges.get(RATIO_REFERENCE) {
            None => {
                return Err(Error::param(
                    "concentration_ranges",
                    format!("`{RATIO_REFERENCE}` is required as the ratio reference"),
                ))
            }
            Some(cr) if cr.relative_to.is_some() => {
                return Err(Error::param(
                    format!("concentration_ranges.{RATIO_REFERENCE}.relative_to"),
                    "the ratio reference must have an absolute range",
                ))
            }
            Some(cr) if cr.min <= 0.0 => {
                return Err(Error::param(
                    format!("concentration_ranges.{RATIO_REFERENCE}"),
                    format!("min ({}) must be positive so ratios are defined", cr.min),
                ))
            }
            _ => {}
        }
        for (name, range) in &self.concentration_ranges {
            let field = format!("concentration_ranges.{name}");
            if !self.basis.contains(name) {
                return Err(Error::param(field, format!("`{name}` is not in the basis set")));
            }
            range.range().validate(&field, Lower::NonNegative)?;
            if let Some(to) = &range.relative_to {
                match self.concentration_ranges.get(to) {
                    Some(target) if target.relative_to.is_none() => {}
                    _ => {
                        return Err(Error::param(
                            format!("{field}.relative_to"),
                            format!("`{to}` must be a metabolite with an absolute range"),
                        ))
                    }
                }
            }
        }
        self.t2_scale_range.validate("t2_scale_range", Lower::Positive)?;
        if let Some(snr) = &self.snr_range {
            snr.validate("snr_range", Lower::Positive)?;
        }
        self.baseline_amplitude_range
            .validate("baseline_amplitude_range", Lower::NonNegative)?;
        self.lipid_amplitude_range
            .validate("lipid_amplitude_range", Lower::NonNegative)?;
        Ok(())
    }

    /// Ratio targets `X/Cr` for every sampled metabolite other than Cr, in
    /// basis order.
    pub fn target_names(&self) -> Vec<String> {
        self.basis
            .names()
            .filter(|n| *n != RATIO_REFERENCE && self.concentration_ranges.contains_key(*n))
            .map(ratio_name)
            .collect()
    }
}

pub fn ratio_name(metabolite: &str) -> String {
    format!("{metabolite}/{RATIO_REFERENCE}")
}

/// Everything drawn for one spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationParameters {
    pub index: usize,
    pub concentrations: BTreeMap<String, f64>,
    /// Multipliers drawn for metabolites ranged relative to Cr. These are
    /// the exact ratio labels; dividing concentrations back would round.
    pub drawn_ratios: BTreeMap<String, f64>,
    pub t2_scale: f64,
    pub snr: Option<f64>,
    /// Relative to the tallest metabolite magnitude.
    pub baseline_amplitude: f64,
    /// Relative to the tallest metabolite magnitude.
    pub lipid_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSpectrum {
    pub spectrum: ComplexSpectrum,
    pub labels: BTreeMap<String, f64>,
    pub truth: Option<SimulationParameters>,
}

/// Draws the parameters of spectrum `index`. Deterministic in
/// `(config.rng_seed, index)`.
pub fn sample_parameters(config: &SimulationConfig, index: usize) -> Result<SimulationParameters> {
    if index >= config.n_spectra {
        return Err(Error::Argument(format!(
            "spectrum index {index} out of range for {} spectra",
            config.n_spectra
        )));
    }
    let mut rng = rng::stream(config.rng_seed, &[index as u64, tag::PARAMETERS]);
    let draws: Vec<(&String, &ConcentrationRange, f64)> = config
        .concentration_ranges
        .iter()
        .map(|(name, range)| (name, range, range.range().sample(&mut rng)))
        .collect();
    let mut concentrations = BTreeMap::new();
    let mut drawn_ratios = BTreeMap::new();
    for &(name, range, value) in &draws {
        if range.relative_to.is_none() {
            concentrations.insert(name.clone(), value);
        }
    }
    for &(name, range, value) in &draws {
        if let Some(to) = &range.relative_to {
            let base = *concentrations
                .get(to)
                .ok_or_else(|| Error::param(format!("concentration_ranges.{name}.relative_to"), "unresolved"))?;
            concentrations.insert(name.clone(), value * base);
            if to == RATIO_REFERENCE {
                drawn_ratios.insert(name.clone(), value);
            }
        }
    }
    let t2_scale = config.t2_scale_range.sample(&mut rng);
    let snr = config.snr_range.map(|r| r.sample(&mut rng));
    let baseline_amplitude = config.baseline_amplitude_range.sample(&mut rng);
    let lipid_amplitude = config.lipid_amplitude_range.sample(&mut rng);
    Ok(SimulationParameters {
        index,
        concentrations,
        drawn_ratios,
        t2_scale,
        snr,
        baseline_amplitude,
        lipid_amplitude,
    })
}

/// A Gaussian bump of the macromolecular baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineBump {
    pub center_ppm: f64,
    pub fwhm_ppm: f64,
    pub height: f64,
}

impl BaselineBump {
    pub fn eval(&self, ppm: f64) -> f64 {
        let d = (ppm - self.center_ppm) / self.fwhm_ppm;
        self.height * (-4.0 * LN_2 * d * d).exp()
    }
}

pub const BASELINE_FWHM_PPM: (f64, f64) = (0.3, 1.0);
pub const BASELINE_CENTER_PPM: (f64, f64) = (0.5, 4.3);

/// Draws 4 to 8 broad bumps. Heights scale with width, so narrower bumps are
/// also lower and the sum stays smooth.
pub fn sample_baseline_bumps<R: Rng + ?Sized>(rng: &mut R) -> Vec<BaselineBump> {
    let count = rng.random_range(4..=8);
    (0..count)
        .map(|_| {
            let center_ppm = rng.random_range(BASELINE_CENTER_PPM.0..=BASELINE_CENTER_PPM.1);
            let fwhm_ppm = rng.random_range(BASELINE_FWHM_PPM.0..=BASELINE_FWHM_PPM.1);
            let height = fwhm_ppm * rng.random_range(0.5..=1.0);
            BaselineBump {
                center_ppm,
                fwhm_ppm,
                height,
            }
        })
        .collect()
}

/// Evaluates `bumps` on the full axis and rescales the (real) sum so its
/// maximum equals `amplitude`.
pub fn render_baseline(
    bumps: &[BaselineBump],
    amplitude: f64,
    params: &AcquisitionParams,
    reference_ppm: f64,
) -> Result<ComplexSpectrum> {
    check_amplitude(amplitude)?;
    let mut out = ComplexSpectrum::zeros(*params, reference_ppm)?;
    if amplitude == 0.0 || bumps.is_empty() {
        return Ok(out);
    }
    let raw: Vec<f64> = out
        .ppm_axis()
        .iter()
        .map(|&p| bumps.iter().map(|b| b.eval(p)).sum())
        .collect();
    let peak = raw.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Ok(out);
    }
    let scale = amplitude / peak;
    let values = raw.iter().map(|v| Complex64::new(v * scale, 0.0)).collect();
    out = out.with_values(values)?;
    Ok(out)
}

/// Smooth real-valued macromolecular baseline with maximum `amplitude`.
pub fn generate_baseline<R: Rng + ?Sized>(
    amplitude: f64,
    params: &AcquisitionParams,
    reference_ppm: f64,
    rng: &mut R,
) -> Result<ComplexSpectrum> {
    let bumps = sample_baseline_bumps(rng);
    render_baseline(&bumps, amplitude, params, reference_ppm)
}

pub const LIPID_SHIFTS_PPM: [f64; 2] = [1.3, 0.9];
pub const LIPID_T2_S: (f64, f64) = (0.02, 0.05);

/// Broad lipid resonances at 1.3 and 0.9 ppm, scaled so the tallest
/// magnitude equals `amplitude`.
pub fn generate_lipids<R: Rng + ?Sized>(
    amplitude: f64,
    params: &AcquisitionParams,
    reference_ppm: f64,
    rng: &mut R,
) -> Result<ComplexSpectrum> {
    check_amplitude(amplitude)?;
    let weights = [1.0, rng.random_range(0.3..=0.8)];
    let components: Vec<LorentzianComponent> = LIPID_SHIFTS_PPM
        .iter()
        .zip(weights)
        .map(|(&shift, w)| {
            LorentzianComponent::new(shift, w, rng.random_range(LIPID_T2_S.0..=LIPID_T2_S.1))
        })
        .collect();
    let zero = ComplexSpectrum::zeros(*params, reference_ppm)?;
    if amplitude == 0.0 {
        return Ok(zero);
    }
    let fid = synthesize_fid(&components, params, reference_ppm)?;
    let spec = fid_to_spectrum_on_axis(&fid, reference_ppm, zero.shared_axis().clone())?;
    Ok(spec.scaled(amplitude / spec.max_magnitude()))
}

fn check_amplitude(amplitude: f64) -> Result<()> {
    if amplitude.is_finite() && amplitude >= 0.0 {
        Ok(())
    } else {
        Err(Error::param("amplitude", format!("must be finite and non-negative, got {amplitude}")))
    }
}

/// Adds circular complex Gaussian noise with `E|n|^2 = sigma^2`, where
/// `sigma = max|values| / snr`.
pub fn add_noise<R: Rng + ?Sized>(spec: &ComplexSpectrum, snr: f64, rng: &mut R) -> Result<ComplexSpectrum> {
    if !(snr.is_finite() && snr > 0.0) {
        return Err(Error::param("snr", format!("must be positive, got {snr}")));
    }
    let peak = spec.max_magnitude();
    if peak == 0.0 {
        return Err(Error::Precondition("SNR is undefined for an all-zero spectrum".into()));
    }
    let per_component = peak / snr / SQRT_2;
    let values = spec
        .values()
        .iter()
        .map(|v| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            v + Complex64::new(re, im) * per_component
        })
        .collect();
    spec.with_values(values)
}

/// Builds spectrum `index` of the dataset described by `config`.
pub fn simulate_one(config: &SimulationConfig, index: usize) -> Result<LabeledSpectrum> {
    let params = sample_parameters(config, index)?;
    let basis = &config.basis;
    let seed = config.rng_seed;
    let acq = *basis.params();
    let reference = basis.reference_ppm();

    let mut spectrum = basis.linear_combination_scaled(&params.concentrations, params.t2_scale)?;
    let tallest = spectrum.max_magnitude();

    let mut rng_baseline = rng::stream(seed, &[index as u64, tag::BASELINE]);
    let baseline = generate_baseline(params.baseline_amplitude * tallest, &acq, reference, &mut rng_baseline)?;
    let mut rng_lipids = rng::stream(seed, &[index as u64, tag::LIPIDS]);
    let lipids = generate_lipids(params.lipid_amplitude * tallest, &acq, reference, &mut rng_lipids)?;
    spectrum.add_assign_unchecked(&baseline);
    spectrum.add_assign_unchecked(&lipids);

    if let Some(snr) = params.snr {
        let mut rng_noise = rng::stream(seed, &[index as u64, tag::NOISE]);
        spectrum = add_noise(&spectrum, snr, &mut rng_noise)?;
    }

    let labels = ratio_labels(&params, &config.target_names())?;
    Ok(LabeledSpectrum {
        spectrum,
        labels,
        truth: Some(params),
    })
}

fn ratio_labels(params: &SimulationParameters, targets: &[String]) -> Result<BTreeMap<String, f64>> {
    let concentrations = &params.concentrations;
    let cr = concentrations[RATIO_REFERENCE];
    targets
        .iter()
        .map(|t| {
            let name = t.split('/').next().unwrap_or(t);
            let ratio = match params.drawn_ratios.get(name) {
                Some(&r) => r,
                None => concentrations[name] / cr,
            };
            if ratio.is_finite() {
                Ok((t.clone(), ratio))
            } else {
                Err(Error::Numerical(format!("label {t} is not finite")))
            }
        })
        .collect()
}

/// Generates every spectrum of the dataset. Runs in parallel on the current
/// rayon pool; output order and content do not depend on scheduling.
pub fn simulate_dataset(config: &SimulationConfig) -> Result<Vec<LabeledSpectrum>> {
    config.validate()?;
    (0..config.n_spectra)
        .into_par_iter()
        .map(|i| simulate_one(config, i))
        .collect()
}
