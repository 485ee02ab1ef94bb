use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::tof::histogram::DtHistogram;

/// Pitch search spans ±10% of the prior.
const PITCH_SPAN: f64 = 0.10;
const PITCH_STEP_PS: f64 = 0.1;
const OFFSET_STEP_PS: f64 = 0.5;
/// A tooth counts as a resolvable peak above this share of all counts.
const PEAK_SHARE: f64 = 1e-3;
const REFINE_PASSES: usize = 5;
/// Tooth profiles are truncated this many widths from their centers.
const TOOTH_REACH: f64 = 8.0;

/// Locked timing comb: tooth `k` sits at `offset + k * pitch`.
///
/// `offset` is reduced to `[-pitch/2, pitch/2)`, so tooth 0 is the central
/// column when both readout arms are balanced to within half a pitch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombLock {
    pub pitch: f64,
    pub offset: f64,
    /// Fewer than two resolvable peaks; `pitch` is the prior.
    pub low_confidence: bool,
    /// Share of counts inside the ±pitch/4 tooth windows.
    pub captured_fraction: f64,
}

impl CombLock {
    pub fn tooth(&self, k: i64) -> f64 {
        self.offset + k as f64 * self.pitch
    }

    /// Nearest tooth index and the distance to it.
    pub fn nearest(&self, dt: f64) -> (i64, f64) {
        let k = ((dt - self.offset) / self.pitch).round();
        (k as i64, dt - self.offset - k * self.pitch)
    }
}

struct Cumulative<'a> {
    hist: &'a DtHistogram,
    prefix: Vec<f64>,
}

impl<'a> Cumulative<'a> {
    fn new(hist: &'a DtHistogram) -> Self {
        let mut prefix = Vec::with_capacity(hist.counts.len() + 1);
        let mut acc = 0.0;
        prefix.push(acc);
        for &c in &hist.counts {
            acc += c as f64;
            prefix.push(acc);
        }
        Cumulative { hist, prefix }
    }

    /// Counts below `x`, spreading each bin uniformly over its width.
    fn below(&self, x: f64) -> f64 {
        let f = (x - self.hist.bin_edges[0]) / self.hist.bin_width;
        let n = self.hist.counts.len();
        if f <= 0.0 {
            return 0.0;
        }
        if f >= n as f64 {
            return self.prefix[n];
        }
        let j = f.floor() as usize;
        self.prefix[j] + (f - j as f64) * self.hist.counts[j] as f64
    }

    fn mass(&self, a: f64, b: f64) -> f64 {
        self.below(b) - self.below(a)
    }

    fn total(&self) -> f64 {
        *self.prefix.last().unwrap()
    }

    fn teeth(&self, pitch: f64, offset: f64) -> std::ops::RangeInclusive<i64> {
        let lo = self.hist.bin_edges[0];
        let hi = *self.hist.bin_edges.last().unwrap();
        let k0 = ((lo - offset - 0.25 * pitch) / pitch).ceil() as i64;
        let k1 = ((hi - offset + 0.25 * pitch) / pitch).floor() as i64;
        k0..=k1
    }

    fn comb_mass(&self, pitch: f64, offset: f64) -> f64 {
        let q = 0.25 * pitch;
        self.teeth(pitch, offset)
            .map(|k| {
                let c = offset + k as f64 * pitch;
                self.mass(c - q, c + q)
            })
            .sum()
    }

    /// Per-tooth `(k, mass, centroid)` for bins whose centers fall inside the window.
    fn tooth_centroids(&self, pitch: f64, offset: f64) -> Vec<(i64, f64, f64)> {
        let q = 0.25 * pitch;
        let mut out = Vec::new();
        for k in self.teeth(pitch, offset) {
            let c = offset + k as f64 * pitch;
            let first = (((c - q) - self.hist.bin_edges[0]) / self.hist.bin_width)
                .floor()
                .max(0.0) as usize;
            let last = ((((c + q) - self.hist.bin_edges[0]) / self.hist.bin_width).ceil() as usize)
                .min(self.hist.counts.len());
            let (mut m, mut s) = (0.0, 0.0);
            for j in first..last {
                let x = self.hist.center(j);
                if (x - c).abs() <= q {
                    let n = self.hist.counts[j] as f64;
                    m += n;
                    s += n * x;
                }
            }
            if m > 0.0 {
                out.push((k, m, s / m));
            }
        }
        out
    }
}

/// Pooled spread of counts about their tooth centroids, inside the windows.
fn tooth_width(hist: &DtHistogram, teeth: &[(i64, f64, f64)], pitch: f64) -> f64 {
    let q = 0.25 * pitch;
    let (mut m, mut ss) = (0.0, 0.0);
    for &(_, _, c) in teeth {
        for j in 0..hist.counts.len() {
            let x = hist.center(j);
            if (x - c).abs() <= q {
                let n = hist.counts[j] as f64;
                m += n;
                ss += n * (x - c) * (x - c);
            }
        }
    }
    if m > 0.0 {
        (ss / m).sqrt()
    } else {
        0.0
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Weighted least-squares misfit of a comb of equal-width Gaussian teeth,
/// with the tooth amplitudes solved linearly for the given geometry.
fn comb_misfit(hist: &DtHistogram, teeth: &[i64], pitch: f64, offset: f64, width: f64) -> f64 {
    let nb = hist.counts.len();
    let e0 = hist.bin_edges[0];
    let bw = hist.bin_width;
    let cols: Vec<(usize, Vec<f64>)> = teeth
        .iter()
        .map(|&k| {
            let c = offset + k as f64 * pitch;
            let lo = ((c - TOOTH_REACH * width - e0) / bw).floor().clamp(0.0, nb as f64) as usize;
            let hi = ((c + TOOTH_REACH * width - e0) / bw).ceil().clamp(0.0, nb as f64) as usize;
            let masses = (lo..hi)
                .map(|j| normal_cdf((hist.bin_edges[j + 1] - c) / width) - normal_cdf((hist.bin_edges[j] - c) / width))
                .collect();
            (lo, masses)
        })
        .collect();
    let weight = |j: usize| 1.0 / hist.counts[j].max(1) as f64;
    let kk = teeth.len();
    let mut ata = DMatrix::<f64>::zeros(kk, kk);
    let mut atb = DVector::<f64>::zeros(kk);
    for a in 0..kk {
        let (la, ma) = (&cols[a].0, &cols[a].1);
        for (i, &m) in ma.iter().enumerate() {
            atb[a] += weight(la + i) * m * hist.counts[la + i] as f64;
        }
        for b in a..kk {
            let (lb, mb) = (&cols[b].0, &cols[b].1);
            let start = (*la).max(*lb);
            let end = (la + ma.len()).min(lb + mb.len());
            let mut v = 0.0;
            for j in start..end {
                v += weight(j) * ma[j - la] * mb[j - lb];
            }
            ata[(a, b)] = v;
            ata[(b, a)] = v;
        }
    }
    let Some(amp) = ata.lu().solve(&atb) else {
        return f64::INFINITY;
    };
    let mut model = vec![0.0; nb];
    for (a, (lo, masses)) in cols.iter().enumerate() {
        for (i, m) in masses.iter().enumerate() {
            model[lo + i] += amp[a] * m;
        }
    }
    (0..nb)
        .map(|j| weight(j) * (hist.counts[j] as f64 - model[j]).powi(2))
        .sum()
}

/// Refines pitch and offset by fitting the whole histogram as a comb of
/// Gaussian teeth. Unlike window centroids, this stays unbiased when
/// neighboring teeth overlap and the column populations are uneven.
fn refine_by_profile(hist: &DtHistogram, teeth: &[i64], pitch: f64, offset: f64, width: f64) -> (f64, f64) {
    let floor = 0.25 * hist.bin_width;
    let width = width.max(floor);
    let misfit = |t: &[f64]| comb_misfit(hist, teeth, t[0], t[1], t[2].exp().max(floor));
    let start = [pitch, offset, width.ln()];
    let before = misfit(&start);
    let (best, after) = nelder_mead(
        misfit,
        &start,
        &[0.5 * hist.bin_width.max(0.2), 0.5 * hist.bin_width.max(0.2), 0.2],
        NelderMeadOptions {
            max_evaluations: 1500,
            x_tol: 1e-4,
            f_tol: 1e-10,
        },
    );
    if after < before && best[0] > 0.0 && best[0].is_finite() && best[1].is_finite() {
        (best[0], best[1])
    } else {
        (pitch, offset)
    }
}

fn wrap_offset(offset: f64, pitch: f64) -> f64 {
    let w = offset - pitch * (offset / pitch).round();
    if w >= 0.5 * pitch {
        w - pitch
    } else {
        w
    }
}

/// Locks a comb onto the Δt histogram.
///
/// A grid search over offset ∈ [0, pitch) and pitch within ±10% of
/// `expected_pitch` maximizes the counts inside ±pitch/4 windows around the
/// teeth. The argmax is refined first by a mass-weighted line fit through
/// the tooth centroids, which resolves the flat plateaus a noiseless comb
/// leaves in the window objective, then by a least-squares fit of Gaussian
/// teeth to the whole histogram, which removes the pull of overlapping
/// neighbors under heavy jitter.
pub fn lock_comb(hist: &DtHistogram, expected_pitch: f64) -> Result<CombLock> {
    if !(expected_pitch > 0.0 && expected_pitch.is_finite()) {
        return Err(Error::invalid(format!(
            "expected pitch must be positive, got {expected_pitch}"
        )));
    }
    if hist.counts.is_empty() || hist.total() == 0 {
        return Err(Error::invalid("histogram is empty"));
    }
    let cum = Cumulative::new(hist);
    let total = cum.total();

    let occupied: Vec<usize> = (0..hist.counts.len()).filter(|&j| hist.counts[j] > 0).collect();
    if occupied.len() == 1 {
        return Ok(CombLock {
            pitch: expected_pitch,
            offset: wrap_offset(hist.center(occupied[0]), expected_pitch),
            low_confidence: true,
            captured_fraction: 1.0,
        });
    }

    let n_pitch = (2.0 * PITCH_SPAN * expected_pitch / PITCH_STEP_PS).ceil() as usize;
    let mut best = (f64::NEG_INFINITY, expected_pitch, 0.0);
    for i in 0..=n_pitch {
        let pitch = expected_pitch * (1.0 - PITCH_SPAN) + i as f64 * PITCH_STEP_PS;
        let n_off = (pitch / OFFSET_STEP_PS).ceil() as usize;
        for j in 0..n_off {
            let offset = j as f64 * OFFSET_STEP_PS;
            let m = cum.comb_mass(pitch, offset);
            if m > best.0 {
                best = (m, pitch, offset);
            }
        }
    }
    let (_, mut pitch, mut offset) = best;

    let peaks = cum
        .tooth_centroids(pitch, offset)
        .into_iter()
        .filter(|&(_, m, _)| m >= PEAK_SHARE * total)
        .count();
    if peaks < 2 {
        // Single resolvable peak: keep the prior pitch, center on the peak.
        let (_, _, centroid) = cum
            .tooth_centroids(pitch, offset)
            .into_iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::numerical("comb lock found no populated tooth"))?;
        let offset = wrap_offset(centroid, expected_pitch);
        return Ok(CombLock {
            pitch: expected_pitch,
            offset,
            low_confidence: true,
            captured_fraction: cum.comb_mass(expected_pitch, offset) / total,
        });
    }

    for _ in 0..REFINE_PASSES {
        let teeth = cum.tooth_centroids(pitch, offset);
        let (mut sw, mut sk, mut sc, mut skk, mut skc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(k, m, c) in &teeth {
            let k = k as f64;
            sw += m;
            sk += m * k;
            sc += m * c;
            skk += m * k * k;
            skc += m * k * c;
        }
        let det = sw * skk - sk * sk;
        if det.abs() <= 1e-12 * sw * skk.max(1.0) {
            break;
        }
        let new_pitch = (sw * skc - sk * sc) / det;
        let new_offset = (sc - new_pitch * sk) / sw;
        if !(new_pitch > 0.0) {
            return Err(Error::numerical("comb refinement produced a non-positive pitch"));
        }
        let moved = (new_pitch - pitch).abs() + (new_offset - offset).abs();
        pitch = new_pitch;
        offset = new_offset;
        if moved < 1e-9 {
            break;
        }
    }
    let teeth = cum.tooth_centroids(pitch, offset);
    let width = tooth_width(hist, &teeth, pitch);
    let ks: Vec<i64> = teeth.iter().map(|t| t.0).collect();
    let (pitch, offset) = refine_by_profile(hist, &ks, pitch, offset, width);
    let offset = wrap_offset(offset, pitch);
    Ok(CombLock {
        pitch,
        offset,
        low_confidence: false,
        captured_fraction: cum.comb_mass(pitch, offset) / total,
    })
}
