use std::io::Write;

use rayon::prelude::*;

use crate::detector::TimeTagPair;
use crate::error::{Error, Result};

const MAX_BINS: usize = 50_000_000;

/// Histogram of `t_pos - t_neg`. Bins are centered on integer multiples of
/// `bin_width`, so bin `j` covers `[edges[j], edges[j + 1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct DtHistogram {
    pub bin_width: f64,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl DtHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn center(&self, bin: usize) -> f64 {
        0.5 * (self.bin_edges[bin] + self.bin_edges[bin + 1])
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

fn bin_index(dt: f64, bin_width: f64) -> i64 {
    (dt / bin_width + 0.5).floor() as i64
}

pub fn build_histogram(pairs: &[TimeTagPair], bin_width: f64) -> Result<DtHistogram> {
    if pairs.is_empty() {
        return Err(Error::invalid("cannot histogram an empty event list"));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::invalid(format!("bin width must be positive, got {bin_width}")));
    }
    let (lo, hi) = pairs.iter().fold((i64::MAX, i64::MIN), |(lo, hi), p| {
        let dt = p.dt();
        if !dt.is_finite() {
            return (lo, hi);
        }
        let b = bin_index(dt, bin_width);
        (lo.min(b), hi.max(b))
    });
    if lo > hi {
        return Err(Error::invalid("no finite time differences"));
    }
    let n = (hi - lo + 1) as usize;
    if n > MAX_BINS {
        return Err(Error::invalid(format!(
            "Δt range needs {n} bins of {bin_width} ps; widen the bins"
        )));
    }
    let counts = pairs
        .par_chunks(1 << 16)
        .fold(
            || vec![0u64; n],
            |mut acc, chunk| {
                for p in chunk {
                    let dt = p.dt();
                    if dt.is_finite() {
                        acc[(bin_index(dt, bin_width) - lo) as usize] += 1;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let bin_edges = (0..=n).map(|j| ((lo + j as i64) as f64 - 0.5) * bin_width).collect();
    Ok(DtHistogram {
        bin_width,
        bin_edges,
        counts,
    })
}

pub fn write_histogram_csv<W: Write>(hist: &DtHistogram, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["bin_lo_ps", "bin_hi_ps", "count"])?;
    for (j, c) in hist.counts.iter().enumerate() {
        w.write_record([
            hist.bin_edges[j].to_string(),
            hist.bin_edges[j + 1].to_string(),
            c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(dt: f64) -> TimeTagPair {
        TimeTagPair {
            t_pos: 1000.0 + dt,
            t_neg: 1000.0,
        }
    }

    #[test]
    fn identical_pairs_fill_one_bin() {
        let h = build_histogram(&[pair(0.0), pair(0.0), pair(0.0)], 10.0).unwrap();
        assert_eq!(h.counts, vec![3]);
        assert_eq!(h.bin_edges, vec![-5.0, 5.0]);
        assert_eq!(h.total(), 3);
    }

    #[test]
    fn bins_cover_range() {
        let pairs: Vec<_> = [-215.15, 0.0, 430.3, 430.31].iter().map(|&d| pair(d)).collect();
        let h = build_histogram(&pairs, 1.0).unwrap();
        assert_eq!(h.total(), 4);
        for p in &pairs {
            let dt = p.dt();
            let j = h.bin_edges.windows(2).position(|e| e[0] <= dt && dt < e[1]).unwrap();
            assert!(h.counts[j] > 0);
        }
    }

    #[test]
    fn errors() {
        assert!(build_histogram(&[], 1.0).is_err());
        assert!(build_histogram(&[pair(0.0)], 0.0).is_err());
    }
}
