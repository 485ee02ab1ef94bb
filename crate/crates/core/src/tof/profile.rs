use std::io::Write;

use rayon::prelude::*;

use crate::detector::{DetectorGeometry, TimeTagPair};
use crate::error::{Error, Result};
use crate::tof::comb::CombLock;

/// Detection counts per column: the measured 1D marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnProfile {
    pub x_positions: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl ColumnProfile {
    pub fn new(x_positions: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if x_positions.len() != counts.len() {
            return Err(Error::invalid("profile positions and counts differ in length"));
        }
        if x_positions.len() >= 2 {
            let step = x_positions[1] - x_positions[0];
            let uniform = x_positions
                .windows(2)
                .all(|w| w[1] > w[0] && ((w[1] - w[0]) - step).abs() <= 1e-9 * step.abs().max(1.0));
            if !uniform {
                return Err(Error::invalid("profile positions must increase with uniform spacing"));
            }
        }
        let total = counts.iter().sum();
        Ok(ColumnProfile {
            x_positions,
            counts,
            total,
        })
    }

    pub fn occupied_columns(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Count-weighted mean and standard deviation of the column positions.
    pub fn moments(&self) -> (f64, f64) {
        let n = self.total as f64;
        if n == 0.0 {
            return (0.0, 0.0);
        }
        let mean = self
            .x_positions
            .iter()
            .zip(&self.counts)
            .map(|(x, &c)| x * c as f64)
            .sum::<f64>()
            / n;
        let var = self
            .x_positions
            .iter()
            .zip(&self.counts)
            .map(|(x, &c)| (x - mean).powi(2) * c as f64)
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }

    /// The same counts attributed to positions moved by `dx`.
    pub fn shifted(&self, dx: f64) -> ColumnProfile {
        ColumnProfile {
            x_positions: self.x_positions.iter().map(|x| x + dx).collect(),
            counts: self.counts.clone(),
            total: self.total,
        }
    }
}

/// Result of assigning each event to a comb tooth.
#[derive(Debug, Clone)]
pub struct ColumnBinning {
    pub profile: ColumnProfile,
    /// Column per input event; `None` when rejected.
    pub assignments: Vec<Option<i32>>,
    pub rejected: u64,
}

/// Assigns every event to its nearest comb tooth. An event is rejected when
/// it lies more than `pitch/2 · (1 - guard)` from every tooth or maps to a
/// column the geometry does not have. Column `k` sits at `x = k · pitch`.
pub fn bin_to_columns(
    pairs: &[TimeTagPair],
    comb: &CombLock,
    geom: &DetectorGeometry,
    guard: f64,
) -> Result<ColumnBinning> {
    if !(0.0..1.0).contains(&guard) {
        return Err(Error::invalid(format!("guard must lie in [0, 1), got {guard}")));
    }
    let h = geom.half_columns();
    let limit = 0.5 * comb.pitch * (1.0 - guard);
    let assignments: Vec<Option<i32>> = pairs
        .par_iter()
        .map(|p| {
            let (k, miss) = comb.nearest(p.dt());
            if miss.abs() > limit || k.abs() > h as i64 {
                None
            } else {
                Some(k as i32)
            }
        })
        .collect();
    let mut counts = vec![0u64; geom.n_columns as usize];
    let mut rejected = 0;
    for a in &assignments {
        match a {
            Some(k) => counts[(k + h) as usize] += 1,
            None => rejected += 1,
        }
    }
    let x_positions = geom.columns().map(|k| geom.column_x(k)).collect();
    Ok(ColumnBinning {
        profile: ColumnProfile::new(x_positions, counts)?,
        assignments,
        rejected,
    })
}

pub fn write_profile_csv<W: Write>(profile: &ColumnProfile, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["x_um", "count"])?;
    for (x, c) in profile.x_positions.iter().zip(&profile.counts) {
        w.write_record([x.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_invariants() {
        assert!(ColumnProfile::new(vec![0.0, 1.0], vec![1]).is_err());
        assert!(ColumnProfile::new(vec![0.0, 1.0, 3.0], vec![1, 2, 3]).is_err());
        assert!(ColumnProfile::new(vec![1.0, 0.0], vec![1, 2]).is_err());
        let p = ColumnProfile::new(vec![-1.0, 0.0, 1.0], vec![1, 2, 1]).unwrap();
        assert_eq!(p.total, 4);
        let (m, s) = p.moments();
        assert!(m.abs() < 1e-15);
        assert!((s - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn guard_rejects_between_teeth() {
        let geom = DetectorGeometry::default();
        let comb = CombLock {
            pitch: 200.0,
            offset: 0.0,
            low_confidence: false,
            captured_fraction: 1.0,
        };
        let pairs = [
            TimeTagPair {
                t_pos: 10.0,
                t_neg: 0.0,
            },
            TimeTagPair {
                t_pos: 90.0,
                t_neg: 0.0,
            },
            TimeTagPair {
                t_pos: -410.0,
                t_neg: 0.0,
            },
            TimeTagPair {
                t_pos: 5000.0,
                t_neg: 0.0,
            },
        ];
        let b = bin_to_columns(&pairs, &comb, &geom, 0.0).unwrap();
        assert_eq!(b.assignments, vec![Some(0), Some(0), Some(-2), None]);
        assert_eq!(b.rejected, 1);
        let b = bin_to_columns(&pairs, &comb, &geom, 0.5).unwrap();
        assert_eq!(b.assignments, vec![Some(0), None, Some(-2), None]);
        assert_eq!(b.profile.total, 2);
        assert!(bin_to_columns(&pairs, &comb, &geom, 1.0).is_err());
    }
}
