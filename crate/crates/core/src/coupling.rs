//! Power capture of an (offset) beam by a circular active area.
//!
//! For `l = 0` modes the intensity depends only on the distance `r` from the
//! beam axis, so the area integral reduces to
//! `∫ I(r) · 2πr · φ(r)/π dr`, where `φ(r)` is the half-angle of the circle
//! of radius `r` (around the beam axis) that lies inside the disk. The
//! radial integral is split at the kinks `|R - d|` and `R + d` and evaluated
//! by adaptive Gauss-Kronrod; the fully enclosed core uses the exact radial
//! survival function.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::modes::{mode_intensity, ModeSpec, RadialSampler};
use crate::quad::{self, QuadOptions};

const REL_TOL: f64 = 1e-9;
const CUTOFF_WAISTS: f64 = 9.0;
/// Bisection stops once the offset bracket is narrower than this, μm.
const OFFSET_RESOLUTION: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingQuery {
    pub spec: ModeSpec,
    pub active_diameter: f64,
    /// Transverse distance between beam axis and disk center.
    pub offset: f64,
}

impl CouplingQuery {
    pub fn new(spec: ModeSpec, active_diameter: f64, offset: f64) -> Self {
        CouplingQuery {
            spec,
            active_diameter,
            offset,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.active_diameter > 0.0 && self.active_diameter.is_finite()) {
            return Err(Error::invalid(format!(
                "active diameter must be positive, got {}",
                self.active_diameter
            )));
        }
        if !(self.offset >= 0.0 && self.offset.is_finite()) {
            return Err(Error::invalid(format!(
                "offset must be non-negative, got {}",
                self.offset
            )));
        }
        Ok(())
    }
}

/// Angular share of the circle `|p - beam| = r` that lies inside a disk of
/// radius `big_r` whose center sits `d` away from the beam axis.
fn inside_fraction(r: f64, big_r: f64, d: f64) -> f64 {
    if r <= big_r - d {
        return 1.0;
    }
    if r >= big_r + d || r <= d - big_r {
        return 0.0;
    }
    let c = ((r * r + d * d - big_r * big_r) / (2.0 * r * d)).clamp(-1.0, 1.0);
    c.acos() / std::f64::consts::PI
}

fn mode_capture(p: u32, w: f64, big_r: f64, d: f64) -> Result<f64> {
    let cutoff = CUTOFF_WAISTS * w;
    let inner = (big_r - d).max(0.0).min(cutoff);
    // enclosed core: 1 - S(t) at t = 2 r²/w²
    let core = if big_r >= d && inner > 0.0 {
        let t = 2.0 * inner * inner / (w * w);
        1.0 - RadialSampler::new(p).survival(t)
    } else {
        0.0
    };
    let lo = (big_r - d).abs();
    let hi = (big_r + d).min(cutoff);
    if lo >= hi {
        return Ok(core);
    }
    let opts = QuadOptions {
        rel_tol: REL_TOL,
        abs_tol: 1e-15,
        max_intervals: 4000,
    };
    let ring = quad::integrate(
        |r| mode_intensity(p, w, r * r) * 2.0 * std::f64::consts::PI * r * inside_fraction(r, big_r, d),
        lo,
        hi,
        opts,
    )?;
    Ok(core + ring.value)
}

/// Fraction of beam power falling on the disk.
pub fn coupling_efficiency(q: &CouplingQuery) -> Result<f64> {
    q.validate()?;
    let w = q.spec.waist();
    let big_r = 0.5 * q.active_diameter;
    let mut eff = 0.0;
    for m in q.spec.modes.iter().filter(|m| m.weight > 0.0) {
        eff += m.weight * mode_capture(m.p as u32, w, big_r, q.offset)?;
    }
    Ok(eff.clamp(0.0, 1.0))
}

pub fn coupling_loss(spec: &ModeSpec, active_diameter: f64, offset: f64) -> Result<f64> {
    Ok(1.0 - coupling_efficiency(&CouplingQuery::new(spec.clone(), active_diameter, offset))?)
}

/// Largest misalignment whose loss stays within `loss_budget`, by bisection.
pub fn max_tolerable_offset(spec: &ModeSpec, active_diameter: f64, loss_budget: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&loss_budget) {
        return Err(Error::invalid(format!(
            "loss budget must lie in [0, 1], got {loss_budget}"
        )));
    }
    let aligned = coupling_loss(spec, active_diameter, 0.0)?;
    if aligned > loss_budget {
        return Err(Error::NoTolerance {
            aligned_loss: aligned,
            budget: loss_budget,
        });
    }
    if aligned == loss_budget {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 0.5 * active_diameter + CUTOFF_WAISTS * spec.waist();
    if coupling_loss(spec, active_diameter, hi)? <= loss_budget {
        // The budget tolerates losing (almost) the whole beam.
        return Ok(hi);
    }
    while hi - lo > OFFSET_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        if coupling_loss(spec, active_diameter, mid)? <= loss_budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Coupling loss over a diameter × offset grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ToleranceCurve {
    pub diameters: Vec<f64>,
    pub offsets: Vec<f64>,
    /// `loss[i][j]` for `diameters[i]`, `offsets[j]`.
    pub loss: Vec<Vec<f64>>,
}

impl ToleranceCurve {
    /// Checks that loss falls with diameter and rises with offset along
    /// sorted grid axes.
    pub fn check_monotone(&self, tol: f64) -> Result<()> {
        let mut di: Vec<usize> = (0..self.diameters.len()).collect();
        di.sort_by(|&a, &b| self.diameters[a].total_cmp(&self.diameters[b]));
        let mut oi: Vec<usize> = (0..self.offsets.len()).collect();
        oi.sort_by(|&a, &b| self.offsets[a].total_cmp(&self.offsets[b]));
        for &j in &oi {
            for w in di.windows(2) {
                if self.loss[w[1]][j] > self.loss[w[0]][j] + tol {
                    return Err(Error::numerical(format!(
                        "loss rises with diameter at offset {} (D {} → {})",
                        self.offsets[j], self.diameters[w[0]], self.diameters[w[1]]
                    )));
                }
            }
        }
        for &i in &di {
            for w in oi.windows(2) {
                if self.loss[i][w[1]] + tol < self.loss[i][w[0]] {
                    return Err(Error::numerical(format!(
                        "loss falls with offset at D {} (offset {} → {})",
                        self.diameters[i], self.offsets[w[0]], self.offsets[w[1]]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header = vec!["diameter_um".to_string()];
        header.extend(self.offsets.iter().map(|o| format!("offset_{o}_um")));
        w.write_record(&header)?;
        for (d, row) in self.diameters.iter().zip(&self.loss) {
            let mut rec = vec![d.to_string()];
            rec.extend(row.iter().map(|l| l.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn tolerance_curve(spec: &ModeSpec, diameters: &[f64], offsets: &[f64]) -> Result<ToleranceCurve> {
    spec.validate()?;
    if diameters.is_empty() || offsets.is_empty() {
        return Err(Error::invalid("diameter and offset grids must be nonempty"));
    }
    let loss: Vec<Vec<f64>> = diameters
        .par_iter()
        .map(|&d| {
            offsets
                .iter()
                .map(|&o| {
                    coupling_loss(spec, d, o).map_err(|e| match e {
                        Error::Numerical(m) => Error::Numerical(format!("at D = {d} μm, offset = {o} μm: {m}")),
                        Error::InvalidInput(m) => Error::InvalidInput(format!("at D = {d} μm, offset = {o} μm: {m}")),
                        other => other,
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let curve = ToleranceCurve {
        diameters: diameters.to_vec(),
        offsets: offsets.to_vec(),
        loss,
    };
    curve.check_monotone(1e-9)?;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smf(mfd: f64) -> ModeSpec {
        ModeSpec::gaussian(mfd, 1.55)
    }

    #[test]
    fn aligned_closed_form() {
        let w: f64 = 5.25;
        let eff = coupling_efficiency(&CouplingQuery::new(smf(10.5), 20.0, 0.0)).unwrap();
        let expect = 1.0 - (-2.0 * 100.0 / (w * w)).exp();
        assert!((eff - expect).abs() < 1e-12);
        assert!((eff - 0.99930).abs() < 1e-5);
    }

    #[test]
    fn huge_disk_collects_everything() {
        let spec = ModeSpec::mixture(10.0, 1.55, &[(0, 0.5), (3, 0.5)]);
        let eff = coupling_efficiency(&CouplingQuery::new(spec, 500.0, 20.0)).unwrap();
        assert!((eff - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fraction_geometry() {
        assert_eq!(inside_fraction(1.0, 10.0, 2.0), 1.0);
        assert_eq!(inside_fraction(13.0, 10.0, 2.0), 0.0);
        assert_eq!(inside_fraction(1.0, 2.0, 10.0), 0.0);
        // circle through the disk center's far side: r² + d² = R² gives a right angle
        let f = inside_fraction(3.0, 5.0, 4.0);
        assert!((f - 0.5).abs() < 1e-15);
    }

    #[test]
    fn beam_off_the_disk() {
        let eff = coupling_efficiency(&CouplingQuery::new(smf(2.0), 4.0, 50.0)).unwrap();
        assert!(eff < 1e-12);
    }

    #[test]
    fn tolerance_boundaries() {
        let spec = smf(10.5);
        let aligned = coupling_loss(&spec, 20.0, 0.0).unwrap();
        assert_eq!(max_tolerable_offset(&spec, 20.0, aligned).unwrap(), 0.0);
        assert!(matches!(
            max_tolerable_offset(&spec, 10.0, 0.01),
            Err(Error::NoTolerance { .. })
        ));
        assert!(max_tolerable_offset(&spec, 20.0, 1.5).is_err());
    }

    #[test]
    fn single_cell_curve() {
        let spec = smf(10.5);
        let c = tolerance_curve(&spec, &[20.0], &[3.0]).unwrap();
        let direct = coupling_loss(&spec, 20.0, 3.0).unwrap();
        assert_eq!(c.loss, vec![vec![direct]]);
        assert!(tolerance_curve(&spec, &[], &[1.0]).is_err());
    }

    #[test]
    fn rejects_bad_query() {
        assert!(coupling_efficiency(&CouplingQuery::new(smf(10.5), 0.0, 0.0)).is_err());
        assert!(coupling_efficiency(&CouplingQuery::new(smf(10.5), 20.0, -1.0)).is_err());
    }
}
