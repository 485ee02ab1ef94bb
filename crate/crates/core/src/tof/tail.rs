use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::modes::mode_marginal;
use crate::quad::{self, QuadOptions};
use crate::tof::fit::ModeFitResult;
use crate::tof::profile::ColumnProfile;

/// Fraction of the fitted marginal lying beyond `|x - center| > x_abs`.
pub fn tail_power_fit(fit: &ModeFitResult, x_abs: f64) -> Result<f64> {
    if !(x_abs >= 0.0) {
        return Err(Error::invalid(format!("x_abs must be non-negative, got {x_abs}")));
    }
    let w = fit.waist();
    let mut inside = 0.0;
    for m in fit.weights.iter().filter(|m| m.weight > 0.0) {
        let core = if m.p == 0 {
            erf(std::f64::consts::SQRT_2 * x_abs / w)
        } else {
            let reach = x_abs.min(9.0 * w);
            let r = quad::integrate(
                |u| mode_marginal(m.p, w, u).unwrap_or(f64::NAN),
                0.0,
                reach,
                QuadOptions::rel(1e-10),
            )?;
            2.0 * r.value
        };
        inside += m.weight * core;
    }
    Ok((1.0 - inside).clamp(0.0, 1.0))
}

/// Share of profile counts in columns with `|x_k - center| > x_abs`.
pub fn tail_power_profile(profile: &ColumnProfile, center: f64, x_abs: f64) -> Result<f64> {
    if !(x_abs >= 0.0) {
        return Err(Error::invalid(format!("x_abs must be non-negative, got {x_abs}")));
    }
    if profile.total == 0 {
        return Err(Error::invalid("profile has no counts"));
    }
    let outside: u64 = profile
        .x_positions
        .iter()
        .zip(&profile.counts)
        .filter(|(x, _)| (*x - center).abs() > x_abs)
        .map(|(_, &c)| c)
        .sum();
    Ok(outside as f64 / profile.total as f64)
}
