//! Power that a single-mode component deposits on one wire stripe, with the
//! stripe clipped to the circular active area.
//!
//! This is the forward model shared by the simulator's acceptance estimate
//! and the profile fit. Integrals use fixed Gauss-Legendre rules so the
//! result is a smooth function of beam center and waist.

use statrs::function::erf::erf;

use crate::modes::{gaussian_marginal, mode_intensity};
use crate::quad::GaussLegendre;

const CUTOFF_WAISTS: f64 = 9.0;
/// Width of the fixed Gauss-Legendre panels along a wire, in waists.
const PANEL_WAISTS: f64 = 2.0;

/// Fixed rules reused across evaluations.
#[derive(Debug, Clone)]
pub struct CaptureRules {
    across: GaussLegendre,
    along: GaussLegendre,
}

impl Default for CaptureRules {
    fn default() -> Self {
        CaptureRules {
            across: GaussLegendre::new(8),
            along: GaussLegendre::new(20),
        }
    }
}

/// Half-length of the disk chord at abscissa `x`; infinite for no disk.
fn half_chord(x: f64, disk_radius: Option<f64>) -> f64 {
    match disk_radius {
        None => f64::INFINITY,
        Some(r) => {
            let h2 = r * r - x * x;
            if h2 > 0.0 {
                h2.sqrt()
            } else {
                0.0
            }
        }
    }
}

impl CaptureRules {
    /// Integral of the `(0, p)` mode intensity (waist `w`, centered at
    /// `(cx, cy)`) over `x ∈ [x_lo, x_hi]`, `|y| <= chord(x)`.
    #[allow(clippy::too_many_arguments)]
    pub fn stripe_power(
        &self,
        p: u32,
        w: f64,
        cx: f64,
        cy: f64,
        x_lo: f64,
        x_hi: f64,
        disk_radius: Option<f64>,
    ) -> f64 {
        let reach = CUTOFF_WAISTS * w;
        let a = x_lo.max(cx - reach);
        let b = x_hi.min(cx + reach);
        if a >= b {
            return 0.0;
        }
        let sqrt2_w = std::f64::consts::SQRT_2 / w;
        self.across
            .mapped(a, b)
            .map(|(x, wx)| {
                let h = half_chord(x, disk_radius);
                if h <= 0.0 {
                    return 0.0;
                }
                // y-limits relative to the beam center
                let lo = (-h - cy).max(-reach);
                let hi = (h - cy).min(reach);
                if lo >= hi {
                    return 0.0;
                }
                let u = x - cx;
                let inner = if p == 0 {
                    gaussian_marginal(w, u) * 0.5 * (erf(hi * sqrt2_w) - erf(lo * sqrt2_w))
                } else {
                    let u2 = u * u;
                    let step = PANEL_WAISTS * w;
                    let panels = (2.0 * CUTOFF_WAISTS / PANEL_WAISTS).round() as usize;
                    (0..panels)
                        .map(|j| {
                            let pa = (-reach + j as f64 * step).max(lo);
                            let pb = (-reach + (j + 1) as f64 * step).min(hi);
                            if pa >= pb {
                                0.0
                            } else {
                                self.along.integrate(|v| mode_intensity(p, w, u2 + v * v), pa, pb)
                            }
                        })
                        .sum()
                };
                wx * inner
            })
            .sum()
    }
}
