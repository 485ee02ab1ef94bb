//! Time-of-flight imaging of detection events on a differential-readout
//! superconducting nanowire detector, and the optics around it.
//!
//! - [`modes`]: Laguerre-Gaussian intensities, 1D marginals, Gaussian-beam
//!   propagation.
//! - [`stack`]: transfer-matrix response of the dielectric detector stack.
//! - [`detector`]: Monte Carlo detector producing differential time tags.
//! - [`tof`]: histogram → comb lock → column profile → mode fit → tail power.
//! - [`coupling`]: capture of an offset beam by a circular active area.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capture;
pub mod coupling;
pub mod detector;
pub mod error;
pub mod modes;
pub mod optim;
pub mod quad;
pub mod stack;
pub mod tof;

pub use coupling::{coupling_efficiency, max_tolerable_offset, tolerance_curve, CouplingQuery, ToleranceCurve};
pub use detector::{
    column_to_tags, sample_events, sample_events_with_threads, DetectorGeometry, EventRecord, SimulationRun,
    TimeTagPair,
};
pub use error::{Error, Result};
pub use modes::{
    beam_radius_at, infer_path_length, intensity_2d, marginal_1d, rayleigh_range, BeamPropagation, LgMode, ModeSpec,
};
pub use stack::{builtin_paper_stack, multipass_path_length, tmm_response, Layer, StackResponse, StackSpec};
pub use tof::{
    bin_to_columns, build_histogram, fit_modes, lock_comb, tail_power_fit, tail_power_profile, ColumnProfile, CombLock,
    DtHistogram, ModeFitResult,
};
