use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use serde_json::{json, Value};
use tofbeam_core::detector::write_events_csv;
use tofbeam_core::tof::build_histogram;
use tofbeam_core::{sample_events, TimeTagPair};

use crate::config::{create, read_json, usage, write_text, RunConfig};
use crate::svg::{Plot, Series, Style};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Run config JSON: {"mode", "geometry", "n_events", "seed", "out"}.
    #[arg(long)]
    pub config: PathBuf,
    /// Number of detection events; overrides `n_events`.
    #[arg(long)]
    pub n: Option<u64>,
    /// Overrides `seed` (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Events CSV path; overrides `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the Δt comb as an SVG next to the CSV.
    #[arg(long)]
    pub svg: bool,
}

pub fn run(args: &SimulateArgs) -> anyhow::Result<Value> {
    let cfg: RunConfig = read_json(&args.config)?;
    let n = args
        .n
        .or(cfg.n_events)
        .ok_or_else(|| usage("no event count: pass --n or set n_events"))?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let out = args
        .out
        .clone()
        .or(cfg.out.clone())
        .ok_or_else(|| usage("no output path: pass --out or set out"))?;

    let n = usize::try_from(n).map_err(|_| usage(format!("event count {n} does not fit in memory")))?;
    let run = sample_events(&cfg.mode, &cfg.geometry, n, seed)?;

    let mut w = create(&out)?;
    write_events_csv(&run.events, &mut w)?;
    w.flush()?;

    let mut files = vec![out.display().to_string()];
    if args.svg {
        let pairs: Vec<TimeTagPair> = run.events.iter().map(|e| e.tags).collect();
        let hist = build_histogram(&pairs, 2.0)?;
        let points = (0..hist.len())
            .map(|j| (hist.center(j), hist.counts[j] as f64))
            .collect();
        let svg = Plot::new("Δt comb", "t+ − t− (ps)", "counts per 2 ps")
            .with(Series::new("events", points, Style::Steps))
            .render();
        let path = out.with_extension("svg");
        write_text(&path, &svg)?;
        files.push(path.display().to_string());
    }

    Ok(json!({
        "events": run.events.len(),
        "seed": seed,
        "proposals": run.proposals,
        "acceptance_rate": run.acceptance_rate(),
        "expected_acceptance": run.expected_acceptance,
        "pitch_dt_ps": cfg.geometry.pitch_dt(),
        "files": files,
    }))
}
