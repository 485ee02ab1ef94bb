//! Laguerre-Gaussian beam modes at the waist plane and Gaussian-beam
//! propagation.
//!
//! Only cylindrically symmetric modes (`l = 0`) with radial order `p <= 4`
//! are supported. A [`ModeSpec`] mixes its modes incoherently: each mode
//! contributes its normalized intensity scaled by its power weight, with no
//! interference terms.
//!
//! All lengths are micrometers.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, QuadOptions};

/// Highest radial index accepted in a [`ModeSpec`].
pub const MAX_RADIAL_ORDER: i32 = 4;

/// Tolerance on the sum of mode weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Marginals of higher-order modes are integrated out to this many waists;
/// beyond it the integrand is below 1e-50 of its peak.
const Y_CUTOFF_WAISTS: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LgMode {
    pub l: i32,
    pub p: i32,
    pub weight: f64,
}

impl LgMode {
    pub fn radial(p: i32, weight: f64) -> Self {
        LgMode { l: 0, p, weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    #[serde(rename = "mfd_um")]
    pub mfd: f64,
    #[serde(rename = "wavelength_um")]
    pub wavelength: f64,
    #[serde(rename = "center_um", default)]
    pub center: [f64; 2],
    pub modes: Vec<LgMode>,
}

impl ModeSpec {
    /// A pure fundamental Gaussian centered on the origin.
    pub fn gaussian(mfd: f64, wavelength: f64) -> Self {
        ModeSpec {
            mfd,
            wavelength,
            center: [0.0, 0.0],
            modes: vec![LgMode::radial(0, 1.0)],
        }
    }

    /// An incoherent mixture of `(p, weight)` radial modes sharing one waist.
    pub fn mixture(mfd: f64, wavelength: f64, weights: &[(i32, f64)]) -> Self {
        ModeSpec {
            mfd,
            wavelength,
            center: [0.0, 0.0],
            modes: weights.iter().map(|&(p, w)| LgMode::radial(p, w)).collect(),
        }
    }

    pub fn with_center(mut self, x: f64, y: f64) -> Self {
        self.center = [x, y];
        self
    }

    /// 1/e² intensity radius of the fundamental mode.
    pub fn waist(&self) -> f64 {
        0.5 * self.mfd
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mfd > 0.0 && self.mfd.is_finite()) {
            return Err(Error::invalid(format!("mfd must be positive, got {}", self.mfd)));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::invalid(format!(
                "wavelength must be positive, got {}",
                self.wavelength
            )));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("beam center must be finite"));
        }
        if self.modes.is_empty() {
            return Err(Error::invalid("mode list is empty"));
        }
        let mut total = 0.0;
        for m in &self.modes {
            if m.p < 0 {
                return Err(Error::invalid(format!("radial index p must be >= 0, got {}", m.p)));
            }
            if m.l != 0 {
                return Err(Error::invalid(format!(
                    "only l = 0 modes are supported, got l = {}",
                    m.l
                )));
            }
            if m.p > MAX_RADIAL_ORDER {
                return Err(Error::invalid(format!(
                    "radial index p = {} exceeds supported maximum {MAX_RADIAL_ORDER}",
                    m.p
                )));
            }
            if !(0.0..=1.0).contains(&m.weight) {
                return Err(Error::invalid(format!(
                    "mode weight must lie in [0, 1], got {}",
                    m.weight
                )));
            }
            total += m.weight;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("mode weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// Intensity density (1/μm²) at `(x, y)`. Assumes a validated spec.
    pub fn intensity(&self, x: f64, y: f64) -> f64 {
        let w = self.waist();
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let r2 = dx * dx + dy * dy;
        self.modes
            .iter()
            .filter(|m| m.weight > 0.0)
            .map(|m| m.weight * mode_intensity(m.p as u32, w, r2))
            .sum()
    }

    /// Marginal linear density (1/μm) at `x`, integrated over all `y`.
    /// Assumes a validated spec.
    pub fn marginal(&self, x: f64) -> Result<f64> {
        let w = self.waist();
        let u = x - self.center[0];
        let mut total = 0.0;
        for m in self.modes.iter().filter(|m| m.weight > 0.0) {
            total += m.weight * mode_marginal(m.p as u32, w, u)?;
        }
        Ok(total)
    }
}

/// Validating wrapper around [`ModeSpec::intensity`].
pub fn intensity_2d(spec: &ModeSpec, x: f64, y: f64) -> Result<f64> {
    spec.validate()?;
    Ok(spec.intensity(x, y))
}

/// Validating wrapper around [`ModeSpec::marginal`].
pub fn marginal_1d(spec: &ModeSpec, x: f64) -> Result<f64> {
    spec.validate()?;
    spec.marginal(x)
}

/// Laguerre polynomial `L_p(t)` by the three-term recurrence.
pub fn laguerre(p: u32, t: f64) -> f64 {
    let mut l0 = 1.0;
    if p == 0 {
        return l0;
    }
    let mut l1 = 1.0 - t;
    for k in 1..p {
        let kf = k as f64;
        let l2 = ((2.0 * kf + 1.0 - t) * l1 - kf * l0) / (kf + 1.0);
        l0 = l1;
        l1 = l2;
    }
    l1
}

/// Normalized intensity of the `(l = 0, p)` mode with waist `w` at squared
/// radius `r2`: `2/(π w²) · L_p(t)² · exp(-t)`, `t = 2 r²/w²`.
pub fn mode_intensity(p: u32, w: f64, r2: f64) -> f64 {
    let t = 2.0 * r2 / (w * w);
    let l = laguerre(p, t);
    2.0 / (PI * w * w) * l * l * (-t).exp()
}

/// 1D marginal of a single `(0, p)` mode at offset `u` from its center.
pub fn mode_marginal(p: u32, w: f64, u: f64) -> Result<f64> {
    if p == 0 {
        return Ok(gaussian_marginal(w, u));
    }
    let opts = QuadOptions {
        rel_tol: 1e-10,
        abs_tol: 1e-300,
        max_intervals: 500,
    };
    let u2 = u * u;
    let r = quad::integrate(|y| mode_intensity(p, w, u2 + y * y), 0.0, Y_CUTOFF_WAISTS * w, opts)
        .map_err(|e| Error::numerical(format!("marginal of p = {p} mode at x = {u}: {e}")))?;
    if r.error > 1e-8 * r.value.abs() && r.error > 1e-300 {
        return Err(Error::numerical(format!(
            "marginal of p = {p} mode at x = {u} exceeded relative tolerance 1e-8"
        )));
    }
    Ok(2.0 * r.value)
}

/// Closed-form marginal of the fundamental Gaussian: `sqrt(2/π)/w · exp(-2u²/w²)`.
pub fn gaussian_marginal(w: f64, u: f64) -> f64 {
    (2.0 / PI).sqrt() / w * (-2.0 * u * u / (w * w)).exp()
}

/// A Gaussian beam's waist, Rayleigh range, and a propagation distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamPropagation {
    pub waist_radius: f64,
    pub rayleigh_range: f64,
    pub distance: f64,
}

impl BeamPropagation {
    /// Vacuum propagation of a waist `w0` at `wavelength` to distance `z`.
    pub fn new(w0: f64, wavelength: f64, z: f64) -> Result<Self> {
        let rayleigh_range = rayleigh_range(2.0 * w0, wavelength)?;
        Ok(BeamPropagation {
            waist_radius: w0,
            rayleigh_range,
            distance: z,
        })
    }

    pub fn beam_radius(&self) -> f64 {
        let s = self.distance / self.rayleigh_range;
        self.waist_radius * (1.0 + s * s).sqrt()
    }
}

/// `z_R = π (mfd/2)² / λ`.
pub fn rayleigh_range(mfd: f64, wavelength: f64) -> Result<f64> {
    if !(mfd > 0.0 && wavelength > 0.0) {
        return Err(Error::invalid(format!(
            "rayleigh_range needs positive mfd and wavelength, got {mfd}, {wavelength}"
        )));
    }
    let w0 = 0.5 * mfd;
    Ok(PI * w0 * w0 / wavelength)
}

/// `w(z) = w0 · sqrt(1 + (z/z_R)²)`.
pub fn beam_radius_at(w0: f64, z_r: f64, z: f64) -> Result<f64> {
    if !(w0 > 0.0 && z_r > 0.0) {
        return Err(Error::invalid(format!(
            "beam_radius_at needs positive waist and Rayleigh range, got {w0}, {z_r}"
        )));
    }
    let s = z / z_r;
    Ok(w0 * (1.0 + s * s).sqrt())
}

/// Vacuum propagation distance over which a beam expands from
/// `mfd_initial` (its waist) to `mfd_final`.
pub fn infer_path_length(mfd_initial: f64, mfd_final: f64, wavelength: f64) -> Result<f64> {
    if !(mfd_initial > 0.0) {
        return Err(Error::invalid(format!(
            "initial mfd must be positive, got {mfd_initial}"
        )));
    }
    if mfd_final < mfd_initial {
        return Err(Error::invalid(format!(
            "final mfd {mfd_final} is smaller than initial mfd {mfd_initial}; a freely diverging beam cannot shrink"
        )));
    }
    let z_r = rayleigh_range(mfd_initial, wavelength)?;
    let ratio = mfd_final / mfd_initial;
    // (r - 1)(r + 1) keeps precision for tiny expansions.
    Ok(z_r * ((ratio - 1.0) * (ratio + 1.0)).sqrt())
}

/// Inverse-CDF sampler for the radial coordinate of one `(0, p)` mode.
///
/// In `t = 2r²/w²` the radial density is `L_p(t)² e^{-t}`, whose survival
/// function is `e^{-t} · Σ_j P^{(j)}(t)` with `P = L_p²`.
#[derive(Debug, Clone)]
pub(crate) struct RadialSampler {
    p: u32,
    // Coefficients of Σ_j P^{(j)}, ascending powers of t.
    survival_poly: Vec<f64>,
}

impl RadialSampler {
    pub(crate) fn new(p: u32) -> Self {
        // p!·L_p has integer coefficients, so the polynomial part of the
        // survival function is built exactly and scaled once at the end.
        let lag = scaled_laguerre_coefficients(p);
        let mut square = vec![0i128; 2 * lag.len() - 1];
        for (i, a) in lag.iter().enumerate() {
            for (j, b) in lag.iter().enumerate() {
                square[i + j] += a * b;
            }
        }
        let mut exact = vec![0i128; square.len()];
        let mut deriv = square;
        while !deriv.is_empty() {
            for (acc, d) in exact.iter_mut().zip(&deriv) {
                *acc += d;
            }
            deriv = deriv.iter().enumerate().skip(1).map(|(k, c)| k as i128 * c).collect();
        }
        let fact: i128 = (1..=p as i128).product();
        let scale = (fact * fact) as f64;
        let survival_poly = exact.iter().map(|&c| c as f64 / scale).collect();
        RadialSampler { p, survival_poly }
    }

    pub(crate) fn survival(&self, t: f64) -> f64 {
        let poly = self.survival_poly.iter().rev().fold(0.0, |acc, c| acc * t + c);
        (-t).exp() * poly
    }

    /// Returns `t` with survival probability `v ∈ (0, 1]`.
    pub(crate) fn sample_t(&self, v: f64) -> f64 {
        if self.p == 0 {
            return -v.ln();
        }
        let mut hi = 4.0 * self.p as f64 + 8.0;
        while self.survival(hi) > v {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        let mut t = 0.5 * (lo + hi);
        for _ in 0..200 {
            let s = self.survival(t);
            if s > v {
                lo = t;
            } else {
                hi = t;
            }
            // Newton step, kept inside the bracket.
            let l = laguerre(self.p, t);
            let density = l * l * (-t).exp();
            let mut next = if density > 0.0 { t + (s - v) / density } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() <= 1e-14 * t.max(1e-300) || hi - lo <= 1e-15 * hi {
                return next;
            }
            t = next;
        }
        t
    }
}

/// Coefficients of `p! · L_p(t)`: `C(p, k) (-1)^k p!/k!`.
fn scaled_laguerre_coefficients(p: u32) -> Vec<i128> {
    let p = p as i128;
    let mut binom = 1i128;
    (0..=p)
        .map(|k| {
            if k > 0 {
                binom = binom * (p - k + 1) / k;
            }
            let sign = if k % 2 == 0 { 1 } else { -1 };
            let ratio: i128 = (k + 1..=p).product();
            sign * binom * ratio
        })
        .collect()
}
