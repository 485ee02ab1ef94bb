//! Reconstruction chain from time-tag pairs to a fitted beam profile:
//! Δt histogram → comb lock → column binning → mode fit → tail power.

mod comb;
mod fit;
mod histogram;
mod profile;
mod tail;

pub use comb::{lock_comb, CombLock};
pub use fit::{expected_counts, fit_fixed_order, fit_modes, fit_modes_with, FitOptions, ModeFitResult, ModeWeight};
pub use histogram::{build_histogram, write_histogram_csv, DtHistogram};
pub use profile::{bin_to_columns, write_profile_csv, ColumnBinning, ColumnProfile};
pub use tail::{tail_power_fit, tail_power_profile};
