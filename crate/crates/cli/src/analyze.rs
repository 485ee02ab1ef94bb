use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde_json::{json, Value};
use tofbeam_core::detector::read_events_csv;
use tofbeam_core::tof::{expected_counts, write_histogram_csv, write_profile_csv};
use tofbeam_core::{
    bin_to_columns, build_histogram, fit_modes, lock_comb, tail_power_fit, tail_power_profile, DetectorGeometry, Error,
    TimeTagPair,
};

use crate::config::{create, read_geometry, usage, write_json, write_text};
use crate::svg::{Plot, Series, Style};

/// Tail curve sampled at these multiples of the fitted waist.
const TAIL_STEPS: usize = 16;
const TAIL_STEP_WAISTS: f64 = 0.25;

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Events CSV written by `simulate`.
    #[arg(long)]
    pub events: PathBuf,
    /// Detector geometry JSON (bare, or a run config's `geometry`).
    #[arg(long, conflicts_with = "config")]
    pub geometry: Option<PathBuf>,
    /// Run config JSON; its geometry is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Highest radial order considered by the fit.
    #[arg(long, default_value_t = 4)]
    pub max_p: usize,
    #[arg(long, default_value_t = 1.0)]
    pub bin_width_ps: f64,
    /// Fraction of the half pitch excluded around each inter-tooth midpoint.
    #[arg(long, default_value_t = 0.0)]
    pub guard: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: bool,
}

pub fn run(args: &AnalyzeArgs) -> anyhow::Result<Value> {
    let geom = match args.geometry.as_ref().or(args.config.as_ref()) {
        Some(path) => read_geometry(path)?,
        None => DetectorGeometry::default(),
    };
    geom.validate()?;
    if !(0.0..1.0).contains(&args.guard) {
        return Err(usage(format!("--guard must lie in [0, 1), got {}", args.guard)));
    }

    let file = File::open(&args.events).with_context(|| format!("opening {}", args.events.display()))?;
    let events = read_events_csv(BufReader::new(file))?;
    if events.is_empty() {
        return Err(Error::invalid(format!("{} holds no events", args.events.display())).into());
    }
    let pairs: Vec<TimeTagPair> = events.iter().map(|e| e.tags).collect();

    let hist = build_histogram(&pairs, args.bin_width_ps)?;
    let comb = lock_comb(&hist, geom.pitch_dt())?;
    let binning = bin_to_columns(&pairs, &comb, &geom, args.guard)?;
    let misassigned = binning
        .assignments
        .iter()
        .zip(&events)
        .filter(|(a, e)| matches!(a, Some(k) if *k != e.true_column))
        .count();
    let profile = &binning.profile;
    let fit = fit_modes(profile, &geom, args.max_p)?;
    let model = expected_counts(&fit, profile, &geom)?;

    let w = fit.waist();
    let mut tail_rows = Vec::with_capacity(TAIL_STEPS + 1);
    for j in 0..=TAIL_STEPS {
        let x_abs = j as f64 * TAIL_STEP_WAISTS * w;
        let measured = tail_power_profile(profile, fit.center_x, x_abs)?;
        let fitted = tail_power_fit(&fit, x_abs)?;
        tail_rows.push((x_abs, measured, fitted));
    }
    let excess_2w = tail_power_profile(profile, fit.center_x, 2.0 * w)? - tail_power_fit(&fit, 2.0 * w)?;

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let fit_path = args.out.join("fit.json");
    write_json(&fit_path, &fit)?;
    let hist_path = args.out.join("histogram.csv");
    let mut hw = create(&hist_path)?;
    write_histogram_csv(&hist, &mut hw)?;
    hw.flush()?;
    let profile_path = args.out.join("profile.csv");
    let mut pw = create(&profile_path)?;
    write_profile_csv(profile, &mut pw)?;
    pw.flush()?;
    let tail_path = args.out.join("tail.csv");
    let mut tw = create(&tail_path)?;
    writeln!(tw, "x_abs_um,measured,fit,excess")?;
    for &(x, m, f) in &tail_rows {
        writeln!(tw, "{x},{m},{f},{}", m - f)?;
    }
    tw.flush()?;
    let mut files = vec![fit_path, hist_path, profile_path, tail_path];

    if args.svg {
        let measured: Vec<(f64, f64)> = profile
            .x_positions
            .iter()
            .zip(&profile.counts)
            .map(|(&x, &c)| (x, c as f64))
            .collect();
        let fitted: Vec<(f64, f64)> = profile.x_positions.iter().copied().zip(model.iter().copied()).collect();
        let svg = Plot::new(
            &format!("Column profile, fit MFD {:.2} ± {:.2} μm", fit.mfd, fit.mfd_uncertainty),
            "x (μm)",
            "counts",
        )
        .with(Series::new("measured", measured, Style::Markers))
        .with(Series::new("fit", fitted, Style::Line))
        .render();
        let path = args.out.join("profile.svg");
        write_text(&path, &svg)?;
        files.push(path);

        let svg = Plot::new("Power beyond |x − c|", "|x − c| (μm)", "fraction of power")
            .log_y()
            .with(Series::new(
                "measured",
                tail_rows.iter().map(|&(x, m, _)| (x, m)).collect(),
                Style::Markers,
            ))
            .with(Series::new(
                "fit",
                tail_rows.iter().map(|&(x, _, f)| (x, f)).collect(),
                Style::Line,
            ))
            .render();
        let path = args.out.join("tail.svg");
        write_text(&path, &svg)?;
        files.push(path);

        let comb_points = (0..hist.len())
            .map(|j| (hist.center(j), hist.counts[j] as f64))
            .collect();
        let svg = Plot::new(
            &format!("Δt comb, pitch {:.2} ps", comb.pitch),
            "t+ − t− (ps)",
            "counts per bin",
        )
        .with(Series::new("events", comb_points, Style::Steps))
        .render();
        let path = args.out.join("comb.svg");
        write_text(&path, &svg)?;
        files.push(path);
    }

    Ok(json!({
        "events": events.len(),
        "assigned": profile.total,
        "rejected": binning.rejected,
        "misassigned": misassigned,
        "comb": {
            "pitch_ps": comb.pitch,
            "offset_ps": comb.offset,
            "low_confidence": comb.low_confidence,
            "captured_fraction": comb.captured_fraction,
        },
        "fit": fit,
        "tail_excess_2w": excess_2w,
        "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    }))
}
