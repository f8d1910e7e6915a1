//! Metabolite basis sets.
//!
//! A basis set lists, for every metabolite, the Lorentzian resonances that a
//! unit concentration produces. Spectra of arbitrary mixtures are linear
//! combinations of the per-metabolite renderings.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{
    accumulate_component, fid_to_spectrum_on_axis, ppm_axis, AcquisitionParams, ComplexSpectrum,
    LorentzianComponent, TimeSignal, DEFAULT_REFERENCE_PPM,
};

/// Name of the metabolite every ratio target is expressed against.
pub const RATIO_REFERENCE: &str = "Cr";

/// Baseline decay constant of the built-in basis, about 3.2 Hz linewidth.
pub const DEFAULT_T2_S: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaboliteBasis {
    pub name: String,
    pub components: Vec<LorentzianComponent>,
}

impl MetaboliteBasis {
    pub fn new(name: impl Into<String>, components: Vec<LorentzianComponent>) -> Self {
        MetaboliteBasis {
            name: name.into(),
            components,
        }
    }

    /// The component with the largest amplitude.
    pub fn principal_component(&self) -> Option<&LorentzianComponent> {
        self.components
            .iter()
            .max_by(|a, b| a.amplitude.total_cmp(&b.amplitude))
    }
}

/// An ordered collection of metabolite bases on one acquisition grid.
///
/// Serializes as `{name, reference_ppm, acquisition, metabolites}`; the
/// acquisition block uses the field names of [`AcquisitionParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "BasisSetRecord", into = "BasisSetRecord")]
pub struct BasisSet {
    name: String,
    metabolites: Vec<MetaboliteBasis>,
    reference_ppm: f64,
    params: AcquisitionParams,
    axis: Arc<[f64]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisSetRecord {
    name: String,
    reference_ppm: f64,
    acquisition: AcquisitionParams,
    metabolites: Vec<MetaboliteBasis>,
}

impl TryFrom<BasisSetRecord> for BasisSet {
    type Error = Error;

    fn try_from(r: BasisSetRecord) -> Result<Self> {
        BasisSet::new(r.name, r.metabolites, r.reference_ppm, r.acquisition)
    }
}

impl From<BasisSet> for BasisSetRecord {
    fn from(b: BasisSet) -> Self {
        BasisSetRecord {
            name: b.name,
            reference_ppm: b.reference_ppm,
            acquisition: b.params,
            metabolites: b.metabolites,
        }
    }
}

impl PartialEq for BasisSet {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.metabolites == other.metabolites
            && self.reference_ppm == other.reference_ppm
            && self.params == other.params
    }
}

impl BasisSet {
    pub fn new(
        name: impl Into<String>,
        metabolites: Vec<MetaboliteBasis>,
        reference_ppm: f64,
        params: AcquisitionParams,
    ) -> Result<Self> {
        params.validate()?;
        if !reference_ppm.is_finite() {
            return Err(Error::param("reference_ppm", "must be finite"));
        }
        for (i, m) in metabolites.iter().enumerate() {
            if m.name.is_empty() {
                return Err(Error::param(format!("metabolites[{i}].name"), "must not be empty"));
            }
            if metabolites[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::param(
                    format!("metabolites[{i}].name"),
                    format!("duplicate metabolite `{}`", m.name),
                ));
            }
            if m.components.is_empty() {
                return Err(Error::param(
                    format!("metabolites[{i}].components"),
                    format!("`{}` has no resonances", m.name),
                ));
            }
            for (j, c) in m.components.iter().enumerate() {
                c.validate().map_err(|e| match e {
                    Error::InvalidParameter { field, reason } => Error::InvalidParameter {
                        field: format!("metabolites[{i}].components[{j}].{field}"),
                        reason,
                    },
                    other => other,
                })?;
            }
        }
        let axis = ppm_axis(&params, reference_ppm).into();
        Ok(BasisSet {
            name: name.into(),
            metabolites,
            reference_ppm,
            params,
            axis,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn metabolites(&self) -> &[MetaboliteBasis] {
        &self.metabolites
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.metabolites.iter().map(|m| m.name.as_str())
    }

    pub fn reference_ppm(&self) -> f64 {
        self.reference_ppm
    }

    pub fn params(&self) -> &AcquisitionParams {
        &self.params
    }

    pub fn axis(&self) -> &Arc<[f64]> {
        &self.axis
    }

    pub fn get(&self, name: &str) -> Result<&MetaboliteBasis> {
        self.metabolites
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::UnknownMetabolite(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.metabolites.iter().any(|m| m.name == name)
    }

    /// The same resonances rendered under a different acquisition protocol.
    pub fn with_params(&self, params: AcquisitionParams) -> Result<Self> {
        BasisSet::new(self.name.clone(), self.metabolites.clone(), self.reference_ppm, params)
    }

    /// Spectrum of one metabolite with amplitudes scaled by `concentration`
    /// and every T2 scaled by `t2_scale`.
    pub fn render_metabolite(
        &self,
        name: &str,
        concentration: f64,
        t2_scale: f64,
    ) -> Result<ComplexSpectrum> {
        let metabolite = self.get(name)?;
        check_concentration(name, concentration)?;
        check_t2_scale(t2_scale)?;
        let mut samples = vec![Complex64::new(0.0, 0.0); self.params.n_points];
        for c in &metabolite.components {
            accumulate_component(&mut samples, c, concentration, t2_scale, &self.params, self.reference_ppm);
        }
        self.to_spectrum(samples)
    }

    /// Sum of `render_metabolite(name, value, 1)` over the map.
    pub fn linear_combination(&self, concentrations: &BTreeMap<String, f64>) -> Result<ComplexSpectrum> {
        self.linear_combination_scaled(concentrations, 1.0)
    }

    /// Like [`BasisSet::linear_combination`] with every T2 multiplied by
    /// `t2_scale`. The mixture is assembled in the time domain and
    /// transformed once.
    pub fn linear_combination_scaled(
        &self,
        concentrations: &BTreeMap<String, f64>,
        t2_scale: f64,
    ) -> Result<ComplexSpectrum> {
        check_t2_scale(t2_scale)?;
        let mut samples = vec![Complex64::new(0.0, 0.0); self.params.n_points];
        for (name, &value) in concentrations {
            let metabolite = self.get(name)?;
            check_concentration(name, value)?;
            for c in &metabolite.components {
                accumulate_component(&mut samples, c, value, t2_scale, &self.params, self.reference_ppm);
            }
        }
        self.to_spectrum(samples)
    }

    fn to_spectrum(&self, samples: Vec<Complex64>) -> Result<ComplexSpectrum> {
        let fid = TimeSignal::new(samples, self.params)?;
        fid_to_spectrum_on_axis(&fid, self.reference_ppm, self.axis.clone())
    }
}

fn check_concentration(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(
            format!("concentration of {name}"),
            format!("must be finite and non-negative, got {value}"),
        ))
    }
}

fn check_t2_scale(t2_scale: f64) -> Result<()> {
    if t2_scale.is_finite() && t2_scale > 0.0 {
        Ok(())
    } else {
        Err(Error::param("t2_scale", format!("must be positive, got {t2_scale}")))
    }
}

// Literature proton shifts. Amplitudes within each metabolite sum to one so
// that unit concentrations give equal integrated area.
const BRAIN_RESONANCES: &[(&str, &[(f64, f64)])] = &[
    ("NAA", &[(2.01, 0.76), (2.49, 0.08), (2.52, 0.08), (2.67, 0.08)]),
    ("Cr", &[(3.03, 0.6), (3.91, 0.4)]),
    ("Cho", &[(3.19, 1.0)]),
    ("mI", &[(3.52, 0.25), (3.54, 0.25), (3.59, 0.25), (3.61, 0.25)]),
    (
        "Glx",
        &[(2.08, 0.15), (2.12, 0.15), (2.35, 0.2), (2.45, 0.15), (3.75, 0.35)],
    ),
];

/// The built-in five-metabolite stand-in basis (NAA, Cr, Cho, mI, Glx).
///
/// These resonance lists are configuration constants, not a faithful
/// reproduction of any measured basis; a basis file overrides them.
pub fn default_brain_basis(params: AcquisitionParams) -> Result<BasisSet> {
    let metabolites = BRAIN_RESONANCES
        .iter()
        .map(|(name, lines)| {
            let components = lines
                .iter()
                .map(|&(shift, amp)| LorentzianComponent::new(shift, amp, DEFAULT_T2_S))
                .collect();
            MetaboliteBasis::new(*name, components)
        })
        .collect();
    BasisSet::new("brain-default", metabolites, DEFAULT_REFERENCE_PPM, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::absorption_fwhm_hz;

    fn basis() -> BasisSet {
        default_brain_basis(AcquisitionParams::default()).unwrap()
    }

    fn max_diff(a: &ComplexSpectrum, b: &ComplexSpectrum) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn default_basis_has_five_unique_metabolites() {
        let b = basis();
        let names: Vec<_> = b.names().collect();
        assert_eq!(names, ["NAA", "Cr", "Cho", "mI", "Glx"]);
        for m in b.metabolites() {
            let spec = b.render_metabolite(&m.name, 1.0, 1.0).unwrap();
            assert!(spec.max_magnitude() > 0.0, "{} renders to zero", m.name);
            let area: f64 = m.components.iter().map(|c| c.amplitude).sum();
            assert!((area - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn naa_peaks_at_its_singlet() {
        let b = basis();
        let spec = b.render_metabolite("NAA", 1.0, 1.0).unwrap();
        let peak = (0..spec.len())
            .max_by(|&i, &j| spec.values()[i].norm().total_cmp(&spec.values()[j].norm()))
            .unwrap();
        assert_eq!(peak, spec.nearest_bin(2.01));
    }

    #[test]
    fn zero_concentration_renders_zero() {
        let spec = basis().render_metabolite("Cho", 0.0, 1.0).unwrap();
        assert!(spec.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn rendering_is_homogeneous() {
        let b = basis();
        let one = b.render_metabolite("Cr", 1.0, 1.0).unwrap();
        let two = b.render_metabolite("Cr", 2.0, 1.0).unwrap();
        for (x, y) in one.values().iter().zip(two.values()) {
            assert_eq!(*y, x * 2.0);
        }
        let third = b.render_metabolite("Cr", 0.3, 1.0).unwrap();
        assert!(max_diff(&third, &one.scaled(0.3)) <= 1e-12 * one.max_magnitude());
    }

    #[test]
    fn halving_t2_doubles_linewidth() {
        let fine = AcquisitionParams::new(2500.0, 4096, 127.7).unwrap();
        let b = default_brain_basis(fine).unwrap();
        let w1 = absorption_fwhm_hz(&b.render_metabolite("Cho", 1.0, 1.0).unwrap()).unwrap();
        let w2 = absorption_fwhm_hz(&b.render_metabolite("Cho", 1.0, 0.5).unwrap()).unwrap();
        assert!((w2 - 2.0 * w1).abs() <= fine.bin_width_hz(), "{w1} {w2}");
    }

    #[test]
    fn unknown_metabolite_is_a_lookup_error() {
        let b = basis();
        assert!(matches!(b.render_metabolite("GABA", 1.0, 1.0), Err(Error::UnknownMetabolite(_))));
        let map = BTreeMap::from([("GABA".to_string(), 1.0)]);
        assert!(matches!(b.linear_combination(&map), Err(Error::UnknownMetabolite(_))));
    }

    #[test]
    fn linear_combination_matches_sum_of_renders() {
        let b = basis();
        assert!(b
            .linear_combination(&BTreeMap::new())
            .unwrap()
            .values()
            .iter()
            .all(|v| v.norm() == 0.0));

        let naa = b.render_metabolite("NAA", 1.0, 1.0).unwrap();
        let single = b.linear_combination(&BTreeMap::from([("NAA".into(), 1.0)])).unwrap();
        assert_eq!(single, naa);

        let (a, c) = (1.37, 0.81);
        let cr = b.render_metabolite("Cr", 1.0, 1.0).unwrap();
        let mix = b
            .linear_combination(&BTreeMap::from([("NAA".into(), a), ("Cr".into(), c)]))
            .unwrap();
        let expected = naa.scaled(a).try_add(&cr.scaled(c)).unwrap();
        assert!(max_diff(&mix, &expected) <= 1e-12 * expected.max_magnitude());
    }

    #[test]
    fn rejects_duplicate_and_empty_metabolites() {
        let p = AcquisitionParams::default();
        let m = MetaboliteBasis::new("A", vec![LorentzianComponent::new(2.0, 1.0, 0.1)]);
        assert!(BasisSet::new("x", vec![m.clone(), m.clone()], 4.7, p).is_err());
        assert!(BasisSet::new("x", vec![MetaboliteBasis::new("B", vec![])], 4.7, p).is_err());
        let bad = MetaboliteBasis::new("C", vec![LorentzianComponent::new(2.0, 1.0, -0.1)]);
        let err = BasisSet::new("x", vec![bad], 4.7, p).unwrap_err();
        assert!(err.to_string().contains("metabolites[0].components[0].t2_s"), "{err}");
    }
}
