//! Time- and frequency-domain signal model.
//!
//! An FID is a finite sum of damped complex exponentials, one per Lorentzian
//! resonance. Spectra are obtained with a DFT whose bins are ordered from the
//! most downfield (highest ppm) frequency to the most upfield one, so index 0
//! is the left edge of a conventional spectroscopy plot.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Water, the conventional centre of an in-vivo proton spectrum.
pub const DEFAULT_REFERENCE_PPM: f64 = 4.7;
/// Proton Larmor frequency at 3 T.
pub const DEFAULT_TRANSMITTER_MHZ: f64 = 127.7;

/// Acquisition parameters shared by a FID and its spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    pub spectral_width_hz: f64,
    pub n_points: usize,
    pub transmitter_freq_mhz: f64,
    /// Metadata only.
    #[serde(default = "default_echo_time")]
    pub echo_time_ms: f64,
    /// Metadata only.
    #[serde(default = "default_repetition_time")]
    pub repetition_time_ms: f64,
}

fn default_echo_time() -> f64 {
    35.0
}

fn default_repetition_time() -> f64 {
    2000.0
}

impl Default for AcquisitionParams {
    /// Single-voxel protocol: 2500 Hz, 1024 points, TE/TR 35/2000 ms at 3 T.
    fn default() -> Self {
        AcquisitionParams {
            spectral_width_hz: 2500.0,
            n_points: 1024,
            transmitter_freq_mhz: DEFAULT_TRANSMITTER_MHZ,
            echo_time_ms: default_echo_time(),
            repetition_time_ms: default_repetition_time(),
        }
    }
}

impl AcquisitionParams {
    pub fn new(spectral_width_hz: f64, n_points: usize, transmitter_freq_mhz: f64) -> Result<Self> {
        let params = AcquisitionParams {
            spectral_width_hz,
            n_points,
            transmitter_freq_mhz,
            ..Default::default()
        };
        params.validate()?;
        Ok(params)
    }

    /// Phase-encoded 2D MRSI protocol: 2000 Hz, 400 points, TE/TR 35/1000 ms.
    pub fn mrsi_2d() -> Self {
        AcquisitionParams {
            spectral_width_hz: 2000.0,
            n_points: 400,
            transmitter_freq_mhz: DEFAULT_TRANSMITTER_MHZ,
            echo_time_ms: 35.0,
            repetition_time_ms: 1000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spectral_width_hz.is_finite() && self.spectral_width_hz > 0.0) {
            return Err(Error::param("spectral_width_hz", "must be a positive finite frequency"));
        }
        if self.n_points < 2 {
            return Err(Error::param("n_points", "at least 2 samples are required"));
        }
        if !(self.transmitter_freq_mhz.is_finite() && self.transmitter_freq_mhz > 0.0) {
            return Err(Error::param("transmitter_freq_mhz", "must be a positive finite frequency"));
        }
        Ok(())
    }

    pub fn dwell_time(&self) -> f64 {
        1.0 / self.spectral_width_hz
    }

    pub fn duration(&self) -> f64 {
        self.n_points as f64 / self.spectral_width_hz
    }

    pub fn bin_width_hz(&self) -> f64 {
        self.spectral_width_hz / self.n_points as f64
    }

    pub fn bin_width_ppm(&self) -> f64 {
        self.bin_width_hz() / self.transmitter_freq_mhz
    }

    pub fn span_ppm(&self) -> f64 {
        self.spectral_width_hz / self.transmitter_freq_mhz
    }
}

/// One Lorentzian resonance: a damped complex exponential in the time domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianComponent {
    pub shift_ppm: f64,
    pub amplitude: f64,
    /// Decay constant T2* in seconds. `f64::INFINITY` means no decay.
    pub t2_s: f64,
    #[serde(default)]
    pub phase0_rad: f64,
}

impl LorentzianComponent {
    pub fn new(shift_ppm: f64, amplitude: f64, t2_s: f64) -> Self {
        LorentzianComponent {
            shift_ppm,
            amplitude,
            t2_s,
            phase0_rad: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.shift_ppm.is_finite() {
            return Err(Error::param("shift_ppm", "must be finite"));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::param("amplitude", "must be finite and non-negative"));
        }
        if self.t2_s.is_nan() || self.t2_s <= 0.0 {
            return Err(Error::param("t2_s", "must be positive"));
        }
        if !self.phase0_rad.is_finite() {
            return Err(Error::param("phase0_rad", "must be finite"));
        }
        Ok(())
    }

    pub fn offset_hz(&self, reference_ppm: f64, transmitter_freq_mhz: f64) -> f64 {
        (self.shift_ppm - reference_ppm) * transmitter_freq_mhz
    }

    /// Full width at half maximum of the absorption line, in Hz.
    pub fn fwhm_hz(&self) -> f64 {
        1.0 / (PI * self.t2_s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    samples: Vec<Complex64>,
    params: AcquisitionParams,
}

impl TimeSignal {
    pub fn new(samples: Vec<Complex64>, params: AcquisitionParams) -> Result<Self> {
        params.validate()?;
        if samples.len() != params.n_points {
            return Err(Error::Argument(format!(
                "time signal has {} samples but n_points is {}",
                samples.len(),
                params.n_points
            )));
        }
        Ok(TimeSignal { samples, params })
    }

    pub fn zeros(params: AcquisitionParams) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); params.n_points], params)
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn params(&self) -> &AcquisitionParams {
        &self.params
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    /// Sample times in seconds.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        let dt = self.params.dwell_time();
        (0..self.samples.len()).map(move |k| k as f64 * dt)
    }
}

/// A frequency-domain spectrum on a strictly decreasing ppm axis.
///
/// A spectrum straight out of [`fid_to_spectrum`] covers the full spectral
/// width (`len() == params.n_points`); cropping keeps a contiguous slice of
/// bins together with the matching slice of the axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    values: Vec<Complex64>,
    ppm_axis: Arc<[f64]>,
    params: AcquisitionParams,
    reference_ppm: f64,
}

impl ComplexSpectrum {
    pub fn new(
        values: Vec<Complex64>,
        ppm_axis: Arc<[f64]>,
        params: AcquisitionParams,
        reference_ppm: f64,
    ) -> Result<Self> {
        params.validate()?;
        if values.len() != ppm_axis.len() {
            return Err(Error::Argument(format!(
                "{} spectral values for a {}-point ppm axis",
                values.len(),
                ppm_axis.len()
            )));
        }
        if values.is_empty() {
            return Err(Error::Argument("spectrum has no bins".into()));
        }
        if ppm_axis.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::Argument("ppm axis must be strictly decreasing".into()));
        }
        Ok(ComplexSpectrum {
            values,
            ppm_axis,
            params,
            reference_ppm,
        })
    }

    /// All-zero spectrum over the full axis.
    pub fn zeros(params: AcquisitionParams, reference_ppm: f64) -> Result<Self> {
        params.validate()?;
        let axis: Arc<[f64]> = ppm_axis(&params, reference_ppm).into();
        Self::new(vec![Complex64::new(0.0, 0.0); params.n_points], axis, params, reference_ppm)
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn ppm_axis(&self) -> &[f64] {
        &self.ppm_axis
    }

    pub fn shared_axis(&self) -> &Arc<[f64]> {
        &self.ppm_axis
    }

    pub fn params(&self) -> &AcquisitionParams {
        &self.params
    }

    pub fn reference_ppm(&self) -> f64 {
        self.reference_ppm
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_full_width(&self) -> bool {
        self.values.len() == self.params.n_points
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn max_magnitude(&self) -> f64 {
        max_magnitude(&self.values)
    }

    /// Index of the bin whose ppm value is closest to `ppm`.
    pub fn nearest_bin(&self, ppm: f64) -> usize {
        let mut best = 0;
        for (j, &p) in self.ppm_axis.iter().enumerate() {
            if (p - ppm).abs() < (self.ppm_axis[best] - ppm).abs() {
                best = j;
            }
        }
        best
    }

    /// Same axis and acquisition, new values.
    pub fn with_values(&self, values: Vec<Complex64>) -> Result<Self> {
        Self::new(values, self.ppm_axis.clone(), self.params, self.reference_ppm)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ComplexSpectrum {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Elementwise sum. Both spectra must share the same axis.
    pub fn try_add(&self, other: &ComplexSpectrum) -> Result<Self> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        self.with_values(values)
    }

    pub(crate) fn add_assign_unchecked(&mut self, other: &ComplexSpectrum) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn check_same_grid(&self, other: &ComplexSpectrum) -> Result<()> {
        if self.params != other.params
            || self.reference_ppm != other.reference_ppm
            || self.ppm_axis[..] != other.ppm_axis[..]
        {
            return Err(Error::Incompatible("spectra are on different ppm grids".into()));
        }
        Ok(())
    }
}

pub(crate) fn max_magnitude(values: &[Complex64]) -> f64 {
    values.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Ppm value of every bin, most downfield first.
///
/// `axis[j] = reference + (sw/2 - j*sw/n) / transmitter_freq`, so the axis is
/// centred on the reference and spans `sw / transmitter_freq` ppm.
pub fn ppm_axis(params: &AcquisitionParams, reference_ppm: f64) -> Vec<f64> {
    let sw = params.spectral_width_hz;
    let n = params.n_points as f64;
    (0..params.n_points)
        .map(|j| reference_ppm + (sw / 2.0 - j as f64 * sw / n) / params.transmitter_freq_mhz)
        .collect()
}

// Exact values are recomputed every so often so the multiplicative
// recurrence cannot drift.
const RESYNC_INTERVAL: usize = 64;

/// Sums `amplitude * exp(i(2 pi f t + phase0)) * exp(-t/t2)` over the
/// components at `t_k = k / spectral_width`.
pub fn synthesize_fid(
    components: &[LorentzianComponent],
    params: &AcquisitionParams,
    reference_ppm: f64,
) -> Result<TimeSignal> {
    params.validate()?;
    let mut samples = vec![Complex64::new(0.0, 0.0); params.n_points];
    for component in components {
        component.validate()?;
        accumulate_component(&mut samples, component, 1.0, 1.0, params, reference_ppm);
    }
    TimeSignal::new(samples, *params)
}

/// Adds one component to `samples`, with its amplitude multiplied by
/// `amplitude_scale` and its T2 by `t2_scale`.
pub(crate) fn accumulate_component(
    samples: &mut [Complex64],
    component: &LorentzianComponent,
    amplitude_scale: f64,
    t2_scale: f64,
    params: &AcquisitionParams,
    reference_ppm: f64,
) {
    let amplitude = component.amplitude * amplitude_scale;
    if amplitude == 0.0 {
        return;
    }
    let omega = 2.0 * PI * component.offset_hz(reference_ppm, params.transmitter_freq_mhz);
    let decay_rate = 1.0 / (component.t2_s * t2_scale);
    let dt = params.dwell_time();
    let exact = |k: usize| {
        let t = k as f64 * dt;
        Complex64::from_polar(amplitude * (-t * decay_rate).exp(), omega * t + component.phase0_rad)
    };
    let step = Complex64::from_polar((-dt * decay_rate).exp(), omega * dt);
    let mut z = Complex64::new(0.0, 0.0);
    for (k, sample) in samples.iter_mut().enumerate() {
        if k % RESYNC_INTERVAL == 0 {
            z = exact(k);
        }
        *sample += z;
        z *= step;
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transform(buffer: &mut [Complex64], direction: FftDirection) {
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft(buffer.len(), direction));
    fft.process(buffer);
}

fn alternate_signs(buffer: &mut [Complex64]) {
    for v in buffer.iter_mut().skip(1).step_by(2) {
        *v = -*v;
    }
}

/// DFT of the FID with bins ordered downfield first.
///
/// Bin `j` sits at frequency `sw/2 - j*sw/n`, which makes
/// `values[j] = sum_k (-1)^k x_k exp(+2 pi i j k / n)`: an unnormalised
/// inverse FFT of the sign-alternated samples. This holds for odd `n` too.
pub fn fid_to_spectrum(fid: &TimeSignal, reference_ppm: f64) -> Result<ComplexSpectrum> {
    let axis: Arc<[f64]> = ppm_axis(&fid.params, reference_ppm).into();
    fid_to_spectrum_on_axis(fid, reference_ppm, axis)
}

pub(crate) fn fid_to_spectrum_on_axis(
    fid: &TimeSignal,
    reference_ppm: f64,
    axis: Arc<[f64]>,
) -> Result<ComplexSpectrum> {
    let mut buffer = fid.samples.clone();
    alternate_signs(&mut buffer);
    transform(&mut buffer, FftDirection::Inverse);
    ComplexSpectrum::new(buffer, axis, fid.params, reference_ppm)
}

/// Inverse of [`fid_to_spectrum`]. Requires a full-width spectrum.
pub fn spectrum_to_fid(spec: &ComplexSpectrum) -> Result<TimeSignal> {
    if !spec.is_full_width() {
        return Err(Error::Argument(format!(
            "cannot invert a cropped spectrum ({} of {} bins)",
            spec.len(),
            spec.params.n_points
        )));
    }
    let mut buffer = spec.values.clone();
    transform(&mut buffer, FftDirection::Forward);
    let scale = 1.0 / buffer.len() as f64;
    for v in buffer.iter_mut() {
        *v *= scale;
    }
    alternate_signs(&mut buffer);
    TimeSignal::new(buffer, spec.params)
}

/// Full width at half maximum, in Hz, of the tallest absorption (real-part)
/// peak. Half-maximum crossings are located by linear interpolation between
/// bins. Returns `None` when the peak touches either end of the axis.
pub fn absorption_fwhm_hz(spec: &ComplexSpectrum) -> Option<f64> {
    let re: Vec<f64> = spec.values.iter().map(|v| v.re).collect();
    let peak = (0..re.len()).max_by(|&a, &b| re[a].total_cmp(&re[b]))?;
    let half = re[peak] / 2.0;
    if half <= 0.0 {
        return None;
    }
    let axis = &spec.ppm_axis;
    let crossing = |inner: usize, outer: usize| {
        let frac = (re[inner] - half) / (re[inner] - re[outer]);
        axis[inner] + frac * (axis[outer] - axis[inner])
    };
    let mut left = peak;
    while re[left] > half {
        left = left.checked_sub(1)?;
    }
    let mut right = peak;
    while re[right] > half {
        right += 1;
        if right == re.len() {
            return None;
        }
    }
    let width_ppm = crossing(left + 1, left) - crossing(right - 1, right);
    Some(width_ppm * spec.params.transmitter_freq_mhz)
}
