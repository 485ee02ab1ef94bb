//! Normal-incidence transfer-matrix optics for planar thin-film stacks.
//!
//! Convention: time dependence `e^{-iωt}`, complex index `N = n + ik` with
//! `k >= 0` absorbing, forward waves `e^{+i 2π N z / λ}`. Fields are carried
//! as tangential `(E, H)` pairs with `H` in units of the vacuum admittance, so
//! the time-averaged Poynting flux is `Re(E·H*)` up to a common factor.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SiO₂ index used in the DBR/AR recipe.
pub const SIO2_INDEX: f64 = 1.453;
/// Amorphous silicon index used in the DBR/AR recipe.
pub const ASI_INDEX: f64 = 2.735;
/// Design wavelength of the recipe, nanometers.
pub const DESIGN_WAVELENGTH_NM: f64 = 1550.0;
pub const DBR_SIO2_NM: f64 = 266.7;
pub const DBR_ASI_NM: f64 = 141.7;
pub const DBR_LAYERS: usize = 13;
pub const MOSI_THICKNESS_NM: f64 = 4.1;
pub const CAP_ASI_NM: f64 = 2.0;
/// Anti-reflection coating in deposition order (absorber side first).
pub const AR_COATING_NM: [(f64, f64); 3] = [(78.5, ASI_INDEX), (122.4, SIO2_INDEX), (66.7, ASI_INDEX)];
/// Crystalline silicon at 1550 nm. Not part of the recipe itself; used as the
/// default wafer index.
pub const SILICON_SUBSTRATE_INDEX: f64 = 3.476;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(rename = "thickness_nm")]
    pub thickness: f64,
    pub n: f64,
    pub k: f64,
}

impl Layer {
    pub fn new(thickness: f64, n: f64, k: f64) -> Self {
        Layer { thickness, n, k }
    }

    pub fn lossless(thickness: f64, n: f64) -> Self {
        Layer { thickness, n, k: 0.0 }
    }

    pub fn index(&self) -> Complex64 {
        Complex64::new(self.n, self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    #[serde(rename = "wavelength_nm")]
    pub wavelength: f64,
    pub ambient_n: f64,
    pub substrate_n: f64,
    /// Light enters `layers[0]` first.
    pub layers: Vec<Layer>,
}

impl StackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::invalid(format!(
                "wavelength must be positive, got {}",
                self.wavelength
            )));
        }
        if !(self.ambient_n > 0.0 && self.substrate_n > 0.0) {
            return Err(Error::invalid("ambient and substrate indices must be positive"));
        }
        if self.layers.is_empty() {
            return Err(Error::invalid("stack has no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if !(l.thickness > 0.0 && l.thickness.is_finite()) {
                return Err(Error::invalid(format!("layer {i}: thickness must be positive")));
            }
            if !(l.n > 0.0 && l.n.is_finite()) {
                return Err(Error::invalid(format!("layer {i}: n must be positive")));
            }
            if !(l.k >= 0.0 && l.k.is_finite()) {
                return Err(Error::invalid(format!("layer {i}: k must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn total_thickness(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }

    /// The same stack seen from the substrate side.
    pub fn reversed(&self) -> StackSpec {
        StackSpec {
            wavelength: self.wavelength,
            ambient_n: self.substrate_n,
            substrate_n: self.ambient_n,
            layers: self.layers.iter().rev().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackResponse {
    pub reflectance: f64,
    pub transmittance: f64,
    pub absorptance: f64,
    pub per_layer_absorption: Vec<f64>,
}

/// Which DBR material sits directly under the absorber.
///
/// SiO₂ on both faces puts the absorber at a standing-wave antinode; with αSi
/// there the absorber sits near a node and the stack absorbs almost nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DbrOrder {
    /// αSi adjacent to the absorber (7 αSi + 6 SiO₂).
    HighIndexFirst,
    /// SiO₂ adjacent to the absorber and the wafer (7 SiO₂ + 6 αSi).
    #[default]
    LowIndexFirst,
}

/// Ambient, substrate and DBR ordering for [`builtin_paper_stack`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaperStackOptions {
    pub dbr_order: DbrOrder,
    pub ambient_n: f64,
    pub substrate_n: f64,
}

impl Default for PaperStackOptions {
    fn default() -> Self {
        PaperStackOptions {
            dbr_order: DbrOrder::LowIndexFirst,
            ambient_n: 1.0,
            substrate_n: SILICON_SUBSTRATE_INDEX,
        }
    }
}

/// The 13-layer DBR alone, listed from the absorber side toward the wafer.
pub fn dbr_layers(order: DbrOrder) -> Vec<Layer> {
    let hi = Layer::lossless(DBR_ASI_NM, ASI_INDEX);
    let lo = Layer::lossless(DBR_SIO2_NM, SIO2_INDEX);
    let (first, second) = match order {
        DbrOrder::HighIndexFirst => (hi, lo),
        DbrOrder::LowIndexFirst => (lo, hi),
    };
    (0..DBR_LAYERS)
        .map(|i| if i % 2 == 0 { first } else { second })
        .collect()
}

/// The full detector stack: AR coating, αSi cap, MoSi absorber, DBR.
///
/// `mosi_n`/`mosi_k` must come from the caller; the recipe carries no
/// optical constants for the superconductor.
pub fn builtin_paper_stack(mosi_n: f64, mosi_k: f64, opts: PaperStackOptions) -> StackSpec {
    let mut layers: Vec<Layer> = AR_COATING_NM
        .iter()
        .rev()
        .map(|&(t, n)| Layer::lossless(t, n))
        .collect();
    layers.push(Layer::lossless(CAP_ASI_NM, ASI_INDEX));
    layers.push(Layer::new(MOSI_THICKNESS_NM, mosi_n, mosi_k));
    layers.extend(dbr_layers(opts.dbr_order));
    StackSpec {
        wavelength: DESIGN_WAVELENGTH_NM,
        ambient_n: opts.ambient_n,
        substrate_n: opts.substrate_n,
        layers,
    }
}

/// Index of the MoSi layer within [`builtin_paper_stack`].
pub const BUILTIN_ABSORBER_INDEX: usize = 4;

/// Coherent transfer-matrix solution at normal incidence.
pub fn tmm_response(stack: &StackSpec) -> Result<StackResponse> {
    stack.validate()?;
    let k0 = 2.0 * std::f64::consts::PI / stack.wavelength;
    let n0 = stack.ambient_n;
    let ns = stack.substrate_n;

    // Walk from the substrate back to the ambient with unit transmitted field.
    // fields[j] holds (E, H) at the entrance face of layer j; fields[L] is the
    // substrate interface.
    let nl = stack.layers.len();
    let mut fields = vec![(Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)); nl + 1];
    let mut e = Complex64::new(1.0, 0.0);
    let mut h = Complex64::new(ns, 0.0);
    fields[nl] = (e, h);
    for (j, layer) in stack.layers.iter().enumerate().rev() {
        let n = layer.index();
        let delta = k0 * layer.thickness * n;
        let (c, s) = (delta.cos(), delta.sin());
        let i = Complex64::i();
        let e_prev = c * e - i * s / n * h;
        let h_prev = -i * n * s * e + c * h;
        e = e_prev;
        h = h_prev;
        fields[j] = (e, h);
    }

    let incident = 0.5 * (e + h / n0);
    let reflected = 0.5 * (e - h / n0);
    let norm = incident.norm_sqr();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::numerical(
            "transfer matrix is singular (zero incident amplitude)",
        ));
    }
    let r = reflected / incident;
    let reflectance = r.norm_sqr();
    let transmittance = ns / (n0 * norm);

    let flux: Vec<f64> = fields.iter().map(|(e, h)| (e * h.conj()).re / (n0 * norm)).collect();
    // lossless layers absorb nothing; drop the rounding residue of the flux difference
    let per_layer_absorption: Vec<f64> = flux
        .windows(2)
        .zip(&stack.layers)
        .map(|(w, l)| if l.k == 0.0 { 0.0 } else { w[0] - w[1] })
        .collect();
    let absorptance = per_layer_absorption.iter().sum();

    Ok(StackResponse {
        reflectance,
        transmittance,
        absorptance,
        per_layer_absorption,
    })
}

/// Expected optical path accumulated before absorption when each pass is
/// absorbed independently with probability `a`: `single_pass / a`.
pub fn multipass_path_length(per_pass_absorption: f64, single_pass_path: f64) -> Result<f64> {
    if per_pass_absorption == 0.0 {
        return Err(Error::invalid(
            "per-pass absorption of 0 means the photon is never absorbed",
        ));
    }
    if !(per_pass_absorption > 0.0 && per_pass_absorption <= 1.0) {
        return Err(Error::invalid(format!(
            "per-pass absorption must lie in (0, 1], got {per_pass_absorption}"
        )));
    }
    if !(single_pass_path > 0.0) {
        return Err(Error::invalid(format!(
            "single-pass path must be positive, got {single_pass_path}"
        )));
    }
    Ok(single_pass_path / per_pass_absorption)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transparent_layer_in_vacuum() {
        let s = StackSpec {
            wavelength: 1550.0,
            ambient_n: 1.0,
            substrate_n: 1.0,
            layers: vec![Layer::lossless(123.0, 1.0)],
        };
        let r = tmm_response(&s).unwrap();
        assert!(r.reflectance.abs() < 1e-15);
        assert!((r.transmittance - 1.0).abs() < 1e-15);
        assert!(r.absorptance.abs() < 1e-15);
    }

    #[test]
    fn quarter_wave_closed_form() {
        let (n0, n1, ns) = (1.0, 1.453, 2.735);
        let lambda = 1550.0;
        let s = StackSpec {
            wavelength: lambda,
            ambient_n: n0,
            substrate_n: ns,
            layers: vec![Layer::lossless(lambda / (4.0 * n1), n1)],
        };
        let r = tmm_response(&s).unwrap();
        let expect = ((n0 * ns - n1 * n1) / (n0 * ns + n1 * n1)).powi(2);
        assert!((r.reflectance - expect).abs() < 1e-9);
    }

    #[test]
    fn builtin_recipe_shape() {
        let s = builtin_paper_stack(5.0, 4.0, PaperStackOptions::default());
        assert_eq!(s.layers.len(), 18);
        assert_eq!(s.layers[BUILTIN_ABSORBER_INDEX].thickness, MOSI_THICKNESS_NM);
        assert_eq!(s.layers[0].thickness, 66.7);
        assert_eq!(s.layers[2].thickness, 78.5);
        let dbr: f64 = s.layers[5..].iter().map(|l| l.thickness).sum();
        assert!((dbr - (7.0 * 266.7 + 6.0 * 141.7)).abs() < 1e-9);
        let high = builtin_paper_stack(
            5.0,
            4.0,
            PaperStackOptions {
                dbr_order: DbrOrder::HighIndexFirst,
                ..Default::default()
            },
        );
        let dbr: f64 = high.layers[5..].iter().map(|l| l.thickness).sum();
        assert!((dbr - (7.0 * 141.7 + 6.0 * 266.7)).abs() < 1e-9);
        // "~3 μm" thick in either ordering
        for t in [s.total_thickness(), high.total_thickness()] {
            assert!((2800.0..3100.0).contains(&t), "{t}");
        }
    }

    #[test]
    fn absorber_takes_the_loss() {
        let s = builtin_paper_stack(5.0, 4.0, PaperStackOptions::default());
        let r = tmm_response(&s).unwrap();
        assert!((r.reflectance + r.transmittance + r.absorptance - 1.0).abs() < 1e-9);
        for (i, a) in r.per_layer_absorption.iter().enumerate() {
            if i != BUILTIN_ABSORBER_INDEX {
                assert!(a.abs() < 1e-12, "layer {i} absorbs {a}");
            }
        }
        assert!(r.absorptance > 0.0);
    }

    #[test]
    fn default_ordering_puts_absorber_at_antinode() {
        let low = tmm_response(&builtin_paper_stack(5.0, 4.0, PaperStackOptions::default())).unwrap();
        let high = tmm_response(&builtin_paper_stack(
            5.0,
            4.0,
            PaperStackOptions {
                dbr_order: DbrOrder::HighIndexFirst,
                ..Default::default()
            },
        ))
        .unwrap();
        assert!(low.absorptance > 0.5, "{low:?}");
        assert!(high.absorptance < 0.01, "{high:?}");
    }

    #[test]
    fn multipass_examples() {
        assert_eq!(multipass_path_length(1.0, 3.0).unwrap(), 3.0);
        assert!((multipass_path_length(0.5, 3.0).unwrap() - 6.0).abs() < 1e-12);
        assert!((multipass_path_length(0.01, 3.0).unwrap() - 300.0).abs() < 1e-9);
        assert!(multipass_path_length(0.0, 3.0).is_err());
        assert!(multipass_path_length(1.5, 3.0).is_err());
        assert!(multipass_path_length(0.5, 0.0).is_err());
    }

    #[test]
    fn rejects_invalid_stack() {
        let mut s = StackSpec {
            wavelength: 1550.0,
            ambient_n: 1.0,
            substrate_n: 1.5,
            layers: vec![],
        };
        assert!(tmm_response(&s).is_err());
        s.layers.push(Layer::new(10.0, 2.0, -0.1));
        assert!(tmm_response(&s).is_err());
        s.layers[0] = Layer::new(0.0, 2.0, 0.0);
        assert!(tmm_response(&s).is_err());
    }
}
