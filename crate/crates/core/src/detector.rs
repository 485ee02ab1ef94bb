//! Monte Carlo model of the differential-readout imaging detector.
//!
//! The active area is a set of parallel current-carrying wires ("columns")
//! at a fixed pitch, centered on `x = 0` and clipped to a circular active
//! disk. A photon is detected only where it lands on a wire; photons that
//! land between wires are redrawn, so the column statistics are a pure
//! sample of the beam profile. Each detection launches two counter-propagating
//! pulses whose arrival-time difference is linear in the column index.
//!
//! Every event owns an independent ChaCha stream selected by its index, so a
//! run is bit-identical for any worker count.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::CaptureRules;
use crate::error::{Error, Result};
use crate::modes::{ModeSpec, RadialSampler};

/// Speed of light in μm/ps.
pub const SPEED_OF_LIGHT_UM_PER_PS: f64 = 299.792_458;

/// Acceptance rates below this are treated as a misconfigured beam.
pub const MIN_ACCEPTANCE: f64 = 1e-6;

/// Photon arrival spacing, ps (≈10⁶ counts per second).
pub const EVENT_SPACING_PS: f64 = 1.0e6;

/// Common delay of both readout arms, ps.
pub const READOUT_EPOCH_PS: f64 = 5_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorGeometry {
    #[serde(rename = "column_pitch_um")]
    pub column_pitch: f64,
    #[serde(rename = "wire_width_um")]
    pub wire_width: f64,
    pub n_columns: u32,
    /// One-sided path change per column step.
    #[serde(rename = "path_increment_um")]
    pub path_increment: f64,
    /// Pulse velocity as a fraction of c.
    #[serde(rename = "pulse_velocity_c")]
    pub pulse_velocity: f64,
    /// Per-terminal Gaussian timing jitter.
    #[serde(rename = "jitter_sigma_ps")]
    pub jitter_sigma: f64,
    #[serde(rename = "active_diameter_um")]
    pub active_diameter: f64,
}

impl Default for DetectorGeometry {
    fn default() -> Self {
        DetectorGeometry {
            column_pitch: 2.08,
            wire_width: 0.12,
            n_columns: 17,
            path_increment: 96.75,
            pulse_velocity: 0.003,
            jitter_sigma: 10.0,
            active_diameter: 35.0,
        }
    }
}

impl DetectorGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.wire_width > 0.0 && self.column_pitch > self.wire_width) {
            return Err(Error::invalid(format!(
                "need column_pitch > wire_width > 0, got pitch {} and width {}",
                self.column_pitch, self.wire_width
            )));
        }
        if self.n_columns == 0 || self.n_columns.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "n_columns must be odd so the array is centered, got {}",
                self.n_columns
            )));
        }
        if !(self.pulse_velocity > 0.0 && self.pulse_velocity < 1.0) {
            return Err(Error::invalid(format!(
                "pulse velocity must lie in (0, 1) c, got {}",
                self.pulse_velocity
            )));
        }
        if !(self.path_increment > 0.0) {
            return Err(Error::invalid("path increment must be positive"));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::invalid("jitter sigma must be non-negative"));
        }
        if !(self.active_diameter > 0.0) {
            return Err(Error::invalid("active diameter must be positive"));
        }
        let span = self.n_columns as f64 * self.column_pitch;
        if span < self.active_diameter {
            return Err(Error::invalid(format!(
                "{} columns at {} μm pitch span {span} μm, narrower than the {} μm active area",
                self.n_columns, self.column_pitch, self.active_diameter
            )));
        }
        Ok(())
    }

    /// `(n_columns - 1) / 2`
    pub fn half_columns(&self) -> i32 {
        (self.n_columns as i32 - 1) / 2
    }

    pub fn column_x(&self, column: i32) -> f64 {
        column as f64 * self.column_pitch
    }

    pub fn columns(&self) -> impl Iterator<Item = i32> {
        let h = self.half_columns();
        -h..=h
    }

    pub fn disk_radius(&self) -> f64 {
        0.5 * self.active_diameter
    }

    /// Time between neighbouring comb teeth, `2Δs/v`.
    pub fn pitch_dt(&self) -> f64 {
        2.0 * self.path_increment / (self.pulse_velocity * SPEED_OF_LIGHT_UM_PER_PS)
    }

    /// Column whose wire contains `x`, if any.
    pub fn wire_at(&self, x: f64) -> Option<i32> {
        let k = (x / self.column_pitch).round();
        let h = self.half_columns() as f64;
        if k.abs() > h {
            return None;
        }
        if (x - k * self.column_pitch).abs() <= 0.5 * self.wire_width {
            Some(k as i32)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeTagPair {
    pub t_pos: f64,
    pub t_neg: f64,
}

impl TimeTagPair {
    pub fn dt(&self) -> f64 {
        self.t_pos - self.t_neg
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub true_column: i32,
    pub true_x: f64,
    pub true_y: f64,
    pub tags: TimeTagPair,
}

/// Time tags for a detection on `column`, with independent jitter per terminal.
pub fn column_to_tags<R: Rng + ?Sized>(column: i32, geom: &DetectorGeometry, rng: &mut R) -> Result<TimeTagPair> {
    let h = geom.half_columns();
    if column.abs() > h {
        return Err(Error::invalid(format!("column {column} outside [-{h}, {h}]")));
    }
    let one_way = column as f64 * geom.path_increment / (geom.pulse_velocity * SPEED_OF_LIGHT_UM_PER_PS);
    let (j_pos, j_neg) = if geom.jitter_sigma > 0.0 {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        (geom.jitter_sigma * a, geom.jitter_sigma * b)
    } else {
        (0.0, 0.0)
    };
    Ok(TimeTagPair {
        t_pos: READOUT_EPOCH_PS + one_way + j_pos,
        t_neg: READOUT_EPOCH_PS - one_way + j_neg,
    })
}

/// Expected fraction of beam photons that land on any wire inside the disk.
pub fn expected_acceptance(spec: &ModeSpec, geom: &DetectorGeometry) -> f64 {
    let rules = CaptureRules::default();
    let w = spec.waist();
    let [cx, cy] = spec.center;
    let half = 0.5 * geom.wire_width;
    geom.columns()
        .map(|k| {
            let x = geom.column_x(k);
            spec.modes
                .iter()
                .filter(|m| m.weight > 0.0)
                .map(|m| {
                    m.weight * rules.stripe_power(m.p as u32, w, cx, cy, x - half, x + half, Some(geom.disk_radius()))
                })
                .sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub events: Vec<EventRecord>,
    /// Total beam photons drawn, accepted or not.
    pub proposals: u64,
    pub expected_acceptance: f64,
}

impl SimulationRun {
    pub fn acceptance_rate(&self) -> f64 {
        self.events.len() as f64 / self.proposals as f64
    }
}

struct BeamSampler<'a> {
    spec: &'a ModeSpec,
    samplers: Vec<(f64, RadialSampler)>,
}

impl<'a> BeamSampler<'a> {
    fn new(spec: &'a ModeSpec) -> Self {
        let samplers = spec
            .modes
            .iter()
            .filter(|m| m.weight > 0.0)
            .map(|m| (m.weight, RadialSampler::new(m.p as u32)))
            .collect();
        BeamSampler { spec, samplers }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        let mut u: f64 = rng.random();
        let mut chosen = &self.samplers[self.samplers.len() - 1].1;
        for (weight, s) in &self.samplers {
            if u < *weight {
                chosen = s;
                break;
            }
            u -= weight;
        }
        // survival probability in (0, 1]
        let v = 1.0 - rng.random::<f64>();
        let t = chosen.sample_t(v);
        let r = self.spec.waist() * (0.5 * t).sqrt();
        let phi = std::f64::consts::TAU * rng.random::<f64>();
        (self.spec.center[0] + r * phi.cos(), self.spec.center[1] + r * phi.sin())
    }
}

fn event_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `n` detection events. Deterministic in `seed`; parallel over the
/// current rayon pool with output independent of the pool size.
pub fn sample_events(spec: &ModeSpec, geom: &DetectorGeometry, n: usize, seed: u64) -> Result<SimulationRun> {
    spec.validate()?;
    geom.validate()?;
    if n == 0 {
        return Err(Error::invalid("n_events must be ≥ 1"));
    }
    let expected = expected_acceptance(spec, geom);
    if !(expected >= MIN_ACCEPTANCE) {
        return Err(Error::Configuration(format!(
            "beam lands on the wires with probability {expected:.3e} < {MIN_ACCEPTANCE:e}; check center and mfd"
        )));
    }
    // Generous per-event cap: a run hitting it has an acceptance far below the estimate.
    let cap = ((1000.0 / expected).ceil() as u64).max(10_000);
    let sampler = BeamSampler::new(spec);
    let r2 = geom.disk_radius().powi(2);

    let drawn: Vec<Result<(EventRecord, u64)>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = event_rng(seed, i);
            let mut tries = 0u64;
            loop {
                tries += 1;
                if tries > cap {
                    return Err(Error::Configuration(format!(
                        "event {i}: no wire hit after {cap} photons"
                    )));
                }
                let (x, y) = sampler.draw(&mut rng);
                if x * x + y * y > r2 {
                    continue;
                }
                let Some(column) = geom.wire_at(x) else { continue };
                let mut tags = column_to_tags(column, geom, &mut rng)?;
                let arrival = i as f64 * EVENT_SPACING_PS;
                tags.t_pos += arrival;
                tags.t_neg += arrival;
                return Ok((
                    EventRecord {
                        true_column: column,
                        true_x: x,
                        true_y: y,
                        tags,
                    },
                    tries,
                ));
            }
        })
        .collect();

    let mut events = Vec::with_capacity(n);
    let mut proposals = 0;
    for d in drawn {
        let (e, tries) = d?;
        events.push(e);
        proposals += tries;
    }
    Ok(SimulationRun {
        events,
        proposals,
        expected_acceptance: expected,
    })
}

/// [`sample_events`] on a dedicated pool of `threads` workers.
pub fn sample_events_with_threads(
    spec: &ModeSpec,
    geom: &DetectorGeometry,
    n: usize,
    seed: u64,
    threads: usize,
) -> Result<SimulationRun> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Configuration(format!("thread pool: {e}")))?;
    pool.install(|| sample_events(spec, geom, n, seed))
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    event_id: u64,
    true_column: i32,
    true_x_um: f64,
    true_y_um: f64,
    t_pos_ps: f64,
    t_neg_ps: f64,
}

pub const EVENTS_CSV_HEADER: &str = "event_id,true_column,true_x_um,true_y_um,t_pos_ps,t_neg_ps";

pub fn write_events_csv<W: Write>(events: &[EventRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(out);
    w.write_record(EVENTS_CSV_HEADER.split(','))?;
    for (i, e) in events.iter().enumerate() {
        w.serialize(EventRow {
            event_id: i as u64,
            true_column: e.true_column,
            true_x_um: e.true_x,
            true_y_um: e.true_y,
            t_pos_ps: e.tags.t_pos,
            t_neg_ps: e.tags.t_neg,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events_csv<R: Read>(input: R) -> Result<Vec<EventRecord>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = r.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::invalid("events csv is empty; expected a header row"));
    }
    let expected: Vec<&str> = EVENTS_CSV_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::invalid(format!(
            "events csv header must be `{EVENTS_CSV_HEADER}`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut events = Vec::new();
    for row in r.deserialize::<EventRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::invalid(format!("events csv line {line}: {e}"))
        })?;
        events.push(EventRecord {
            true_column: row.true_column,
            true_x: row.true_x_um,
            true_y: row.true_y_um,
            tags: TimeTagPair {
                t_pos: row.t_pos_ps,
                t_neg: row.t_neg_ps,
            },
        });
    }
    Ok(events)
}
