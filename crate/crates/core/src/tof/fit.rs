//! Weighted least-squares decomposition of a column profile into radial
//! Laguerre-Gaussian modes.
//!
//! The expected count in column `k` is
//! `N_k = total · A_k / Σ_j A_j`, `A_k = Σ_p a_p · G_pk(c, w)`,
//! where `G_pk` is the power of mode `p` falling on wire `k` inside the
//! active disk (see [`crate::capture`]). Normalizing over wires matches the
//! detector model, in which only photons that land on a wire are recorded.
//! Residuals are weighted by `1/max(count, 1)`.
//!
//! Free parameters are the center `c`, waist `w = mfd/2`, and the weights
//! `a_1..a_P`; `a_0 = 1 - Σ a_q`. Levenberg-Marquardt steps are projected
//! back onto the probability simplex.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::capture::CaptureRules;
use crate::detector::DetectorGeometry;
use crate::error::{Error, Result};
use crate::modes::{LgMode, ModeSpec, MAX_RADIAL_ORDER};
use crate::tof::profile::ColumnProfile;

const MIN_OCCUPIED_COLUMNS: usize = 5;
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop adding radial orders once χ²/dof improves by less than this.
    pub selection_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 300,
            selection_threshold: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeWeight {
    pub p: u32,
    pub weight: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeFitResult {
    #[serde(rename = "mfd_um")]
    pub mfd: f64,
    #[serde(rename = "mfd_sigma_um")]
    pub mfd_uncertainty: f64,
    #[serde(rename = "center_x_um")]
    pub center_x: f64,
    pub weights: Vec<ModeWeight>,
    #[serde(rename = "chi2_per_dof")]
    pub chi_square_per_dof: f64,
    #[serde(skip)]
    pub center_uncertainty: f64,
    #[serde(skip)]
    pub iterations: usize,
}

impl ModeFitResult {
    pub fn waist(&self) -> f64 {
        0.5 * self.mfd
    }

    pub fn order(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn weight(&self, p: u32) -> f64 {
        self.weights.iter().find(|m| m.p == p).map_or(0.0, |m| m.weight)
    }

    /// The fitted beam as a mode spec (centered at `(center_x, 0)`).
    pub fn to_spec(&self, wavelength: f64) -> ModeSpec {
        ModeSpec {
            mfd: self.mfd,
            wavelength,
            center: [self.center_x, 0.0],
            modes: self
                .weights
                .iter()
                .map(|m| LgMode::radial(m.p as i32, m.weight))
                .collect(),
        }
    }
}

struct ProfileModel<'a> {
    profile: &'a ColumnProfile,
    rules: CaptureRules,
    half_width: f64,
    disk: Option<f64>,
    order: usize,
    sigma: Vec<f64>,
}

impl<'a> ProfileModel<'a> {
    fn new(profile: &'a ColumnProfile, geom: &DetectorGeometry, order: usize) -> Self {
        ProfileModel {
            profile,
            rules: CaptureRules::default(),
            half_width: 0.5 * geom.wire_width,
            disk: Some(geom.disk_radius()),
            order,
            sigma: profile.counts.iter().map(|&c| (c.max(1) as f64).sqrt()).collect(),
        }
    }

    fn n_params(&self) -> usize {
        2 + self.order
    }

    /// `G[p][k]`
    fn capture(&self, c: f64, w: f64) -> Vec<Vec<f64>> {
        (0..=self.order)
            .map(|p| {
                self.profile
                    .x_positions
                    .iter()
                    .map(|&x| {
                        self.rules.stripe_power(
                            p as u32,
                            w,
                            c,
                            0.0,
                            x - self.half_width,
                            x + self.half_width,
                            self.disk,
                        )
                    })
                    .collect()
            })
            .collect()
    }

    fn weights(&self, theta: &[f64]) -> Vec<f64> {
        let tail: f64 = theta[2..].iter().sum();
        std::iter::once(1.0 - tail).chain(theta[2..].iter().copied()).collect()
    }

    fn expected_from(&self, g: &[Vec<f64>], a: &[f64]) -> Result<Vec<f64>> {
        let k = self.profile.counts.len();
        let mut amp = vec![0.0; k];
        for (gp, &ap) in g.iter().zip(a) {
            for (acc, v) in amp.iter_mut().zip(gp) {
                *acc += ap * v;
            }
        }
        let s: f64 = amp.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::numerical("model places no power on the wires"));
        }
        let total = self.profile.total as f64;
        Ok(amp.into_iter().map(|v| total * v / s).collect())
    }

    fn expected(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.expected_from(&self.capture(theta[0], theta[1]), &self.weights(theta))
    }

    fn chi2_of(&self, n: &[f64]) -> f64 {
        self.profile
            .counts
            .iter()
            .zip(n)
            .zip(&self.sigma)
            .map(|((&o, &e), s)| ((o as f64 - e) / s).powi(2))
            .sum()
    }

    fn chi2(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.chi2_of(&self.expected(theta)?))
    }

    /// Expected counts and their Jacobian (rows: columns, cols: parameters).
    fn jacobian(&self, theta: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let k = self.profile.counts.len();
        let (c, w) = (theta[0], theta[1]);
        let a = self.weights(theta);
        let g = self.capture(c, w);
        let n = self.expected_from(&g, &a)?;
        let mut jac = DMatrix::zeros(k, self.n_params());

        let h = FD_STEP * w;
        for (col, (dc, dw)) in [(h, 0.0), (0.0, h)].into_iter().enumerate() {
            let plus = self.expected_from(&self.capture(c + dc, w + dw), &a)?;
            let minus = self.expected_from(&self.capture(c - dc, w - dw), &a)?;
            for i in 0..k {
                jac[(i, col)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }

        let total = self.profile.total as f64;
        let amp: Vec<f64> = (0..k).map(|i| (0..=self.order).map(|p| a[p] * g[p][i]).sum()).collect();
        let s: f64 = amp.iter().sum();
        for q in 1..=self.order {
            let dq: Vec<f64> = (0..k).map(|i| g[q][i] - g[0][i]).collect();
            let ds: f64 = dq.iter().sum();
            for i in 0..k {
                jac[(i, 1 + q)] = total * (dq[i] * s - amp[i] * ds) / (s * s);
            }
        }
        Ok((n, jac))
    }

    fn project(&self, theta: &mut [f64], min_waist: f64) {
        theta[1] = theta[1].max(min_waist);
        if self.order == 0 {
            return;
        }
        let full = self.weights(theta);
        let projected = project_to_simplex(&full);
        theta[2..].copy_from_slice(&projected[1..]);
    }
}

/// Euclidean projection onto `{a : a_i >= 0, Σ a_i = 1}`.
fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (i as f64 + 1.0);
        if u - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

fn check_profile(profile: &ColumnProfile, geom: &DetectorGeometry) -> Result<()> {
    geom.validate()?;
    let occupied = profile.occupied_columns();
    if occupied < MIN_OCCUPIED_COLUMNS {
        return Err(Error::Unresolvable(format!(
            "{occupied} occupied columns; at least {MIN_OCCUPIED_COLUMNS} are needed"
        )));
    }
    let spacing = if profile.x_positions.len() >= 2 {
        profile.x_positions[1] - profile.x_positions[0]
    } else {
        geom.column_pitch
    };
    let (_, sd) = profile.moments();
    // 4σ is the MFD of a Gaussian profile
    if 4.0 * sd < spacing {
        return Err(Error::Unresolvable(format!(
            "profile width {:.3} μm is below the {spacing} μm column spacing",
            4.0 * sd
        )));
    }
    Ok(())
}

/// Fits modes `p = 0..=order` without model selection.
pub fn fit_fixed_order(
    profile: &ColumnProfile,
    geom: &DetectorGeometry,
    order: usize,
    opts: FitOptions,
) -> Result<ModeFitResult> {
    if order > MAX_RADIAL_ORDER as usize {
        return Err(Error::invalid(format!(
            "max_p must lie in [0, {MAX_RADIAL_ORDER}], got {order}"
        )));
    }
    check_profile(profile, geom)?;
    let model = ProfileModel::new(profile, geom, order);
    let dof = profile.counts.len() as i64 - 1 - model.n_params() as i64;
    if dof <= 0 {
        return Err(Error::Unresolvable(format!(
            "{} columns leave no degrees of freedom for {} parameters",
            profile.counts.len(),
            model.n_params()
        )));
    }

    let (mean, sd) = profile.moments();
    let mut theta = vec![0.0; model.n_params()];
    theta[0] = mean;
    theta[1] = 2.0 * sd;
    let min_waist = 1e-3 * geom.column_pitch;

    let mut chi = model.chi2(&theta)?;
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let (n, jac_n) = model.jacobian(&theta)?;
        let k = n.len();
        let mut jac = jac_n;
        let mut resid = DVector::zeros(k);
        for i in 0..k {
            let s = model.sigma[i];
            resid[i] = (profile.counts[i] as f64 - n[i]) / s;
            for j in 0..jac.ncols() {
                jac[(i, j)] /= s;
            }
        }
        let jtj = jac.transpose() * &jac;
        let jte = jac.transpose() * &resid;
        // Weights resting on zero whose gradient points outward stay fixed.
        let free: Vec<usize> = (0..theta.len())
            .filter(|&j| j < 2 || theta[j] > 0.0 || jte[j] > 0.0)
            .collect();
        let nf = free.len();
        let jtj_f = DMatrix::from_fn(nf, nf, |a, b| jtj[(free[a], free[b])]);
        let jte_f = DVector::from_fn(nf, |a, _| jte[free[a]]);

        let mut stepped = false;
        while lambda < 1e16 {
            let mut damped = jtj_f.clone();
            for j in 0..nf {
                damped[(j, j)] += lambda * jtj_f[(j, j)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&jte_f) else {
                lambda *= 10.0;
                continue;
            };
            let mut delta = vec![0.0; theta.len()];
            for (a, &j) in free.iter().enumerate() {
                delta[j] = step[a];
            }
            let mut trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
            model.project(&mut trial, min_waist);
            let trial_chi = match model.chi2(&trial) {
                Ok(v) if v.is_finite() => v,
                _ => {
                    lambda *= 10.0;
                    continue;
                }
            };
            if trial_chi <= chi {
                let gain = chi - trial_chi;
                let moved = trial.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                theta = trial;
                chi = trial_chi;
                lambda = (lambda / 10.0).max(1e-12);
                stepped = true;
                if gain <= 1e-10 * chi.max(1.0) && moved <= 1e-8 * theta[1] {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !stepped {
            // No descent direction left at this precision.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::numerical(format!(
            "mode fit (max_p = {order}) did not converge in {} iterations",
            opts.max_iterations
        )));
    }

    let (_, jac_n) = model.jacobian(&theta)?;
    let mut jac = jac_n;
    for i in 0..jac.nrows() {
        for j in 0..jac.ncols() {
            jac[(i, j)] /= model.sigma[i];
        }
    }
    let cov = (jac.transpose() * &jac)
        .try_inverse()
        .ok_or_else(|| Error::numerical("normal matrix is singular at the optimum"))?;
    let var = |i: usize| cov[(i, i)].max(0.0).sqrt();
    let weights_full = model.weights(&theta);
    let mut weights = Vec::with_capacity(order + 1);
    let mut var0 = 0.0;
    for q in 2..model.n_params() {
        for r in 2..model.n_params() {
            var0 += cov[(q, r)];
        }
    }
    weights.push(ModeWeight {
        p: 0,
        weight: weights_full[0],
        sigma: var0.max(0.0).sqrt(),
    });
    for (q, &weight) in weights_full.iter().enumerate().skip(1) {
        weights.push(ModeWeight {
            p: q as u32,
            weight,
            sigma: var(1 + q),
        });
    }

    Ok(ModeFitResult {
        mfd: 2.0 * theta[1],
        mfd_uncertainty: 2.0 * var(1),
        center_x: theta[0],
        weights,
        chi_square_per_dof: chi / dof as f64,
        center_uncertainty: var(0),
        iterations,
    })
}

/// Expected per-column counts of a fitted model for `profile`.
pub fn expected_counts(fit: &ModeFitResult, profile: &ColumnProfile, geom: &DetectorGeometry) -> Result<Vec<f64>> {
    geom.validate()?;
    if fit.weights.is_empty() {
        return Err(Error::invalid("fit has no mode weights"));
    }
    let model = ProfileModel::new(profile, geom, fit.order());
    let mut theta = vec![fit.center_x, fit.waist()];
    theta.extend(fit.weights.iter().skip(1).map(|m| m.weight));
    model.expected(&theta)
}

/// Fits increasing radial orders up to `max_p` and reports the smallest
/// order beyond which χ²/dof stops improving by at least the selection
/// threshold.
pub fn fit_modes(profile: &ColumnProfile, geom: &DetectorGeometry, max_p: usize) -> Result<ModeFitResult> {
    fit_modes_with(profile, geom, max_p, FitOptions::default())
}

pub fn fit_modes_with(
    profile: &ColumnProfile,
    geom: &DetectorGeometry,
    max_p: usize,
    opts: FitOptions,
) -> Result<ModeFitResult> {
    if max_p > MAX_RADIAL_ORDER as usize {
        return Err(Error::invalid(format!(
            "max_p must lie in [0, {MAX_RADIAL_ORDER}], got {max_p}"
        )));
    }
    let mut best = fit_fixed_order(profile, geom, 0, opts)?;
    for order in 1..=max_p {
        let next = fit_fixed_order(profile, geom, order, opts)?;
        if best.chi_square_per_dof - next.chi_square_per_dof < opts.selection_threshold {
            return Ok(best);
        }
        best = next;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Noise-free expected counts for a spec on the default geometry.
    fn ideal_profile(spec: &ModeSpec, geom: &DetectorGeometry, total: f64) -> ColumnProfile {
        let rules = CaptureRules::default();
        let h = 0.5 * geom.wire_width;
        let xs: Vec<f64> = geom.columns().map(|k| geom.column_x(k)).collect();
        let amp: Vec<f64> = xs
            .iter()
            .map(|&x| {
                spec.modes
                    .iter()
                    .map(|m| {
                        m.weight
                            * rules.stripe_power(
                                m.p as u32,
                                spec.waist(),
                                spec.center[0],
                                0.0,
                                x - h,
                                x + h,
                                Some(geom.disk_radius()),
                            )
                    })
                    .sum()
            })
            .collect();
        let s: f64 = amp.iter().sum();
        let counts = amp.iter().map(|a| (total * a / s).round() as u64).collect();
        ColumnProfile::new(xs, counts).unwrap()
    }

    #[test]
    fn simplex_projection() {
        let p = project_to_simplex(&[0.9, 0.3, -0.1]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.iter().all(|&x| x >= 0.0));
        assert_eq!(project_to_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
    }

    #[test]
    fn recovers_noise_free_gaussian() {
        let geom = DetectorGeometry::default();
        let spec = ModeSpec::gaussian(10.4, 1.55).with_center(0.7, 0.0);
        let prof = ideal_profile(&spec, &geom, 1e7);
        let fit = fit_modes(&prof, &geom, 0).unwrap();
        assert!((fit.mfd - 10.4).abs() < 1e-3, "{fit:?}");
        assert!((fit.center_x - 0.7).abs() < 1e-3);
        assert_eq!(fit.weights.len(), 1);
        assert!(fit.mfd_uncertainty > 0.0);
    }

    #[test]
    fn recovers_noise_free_mixture() {
        let geom = DetectorGeometry::default();
        let spec = ModeSpec::mixture(30.0, 1.55, &[(0, 0.93), (1, 0.07)]);
        let prof = ideal_profile(&spec, &geom, 1e8);
        let fit = fit_fixed_order(&prof, &geom, 1, FitOptions::default()).unwrap();
        assert!((fit.weight(1) - 0.07).abs() < 2e-3, "{fit:?}");
        assert!((fit.mfd - 30.0).abs() < 0.05, "{fit:?}");
        let sum: f64 = fit.weights.iter().map(|m| m.weight).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_sparse_profiles() {
        let geom = DetectorGeometry::default();
        let xs: Vec<f64> = geom.columns().map(|k| geom.column_x(k)).collect();
        let mut counts = vec![0; xs.len()];
        counts[8] = 1000;
        let prof = ColumnProfile::new(xs.clone(), counts).unwrap();
        assert!(matches!(fit_modes(&prof, &geom, 0), Err(Error::Unresolvable(_))));
        let mut counts = vec![0; xs.len()];
        counts[6..11].copy_from_slice(&[1, 1, 1_000_000, 1, 1]);
        let prof = ColumnProfile::new(xs, counts).unwrap();
        assert!(matches!(fit_modes(&prof, &geom, 0), Err(Error::Unresolvable(_))));
        let good = ideal_profile(&ModeSpec::gaussian(10.4, 1.55), &geom, 1e6);
        assert!(matches!(fit_modes(&good, &geom, 5), Err(Error::InvalidInput(_))));
    }
}
