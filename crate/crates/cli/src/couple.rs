use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use serde_json::{json, Value};
use tofbeam_core::{coupling_efficiency, max_tolerable_offset, tolerance_curve, CouplingQuery, ModeSpec};

use crate::config::{create, read_mode, usage, write_text};
use crate::svg::{Plot, Series, Style};

const DEFAULT_OFFSETS: [f64; 4] = [0.0, 1.5, 3.0, 4.5];

#[derive(Debug, Args)]
pub struct CoupleArgs {
    /// Mode-field diameter of a Gaussian beam; overrides the config's.
    #[arg(long)]
    pub mfd_um: Option<f64>,
    #[arg(long, default_value_t = 1.55)]
    pub wavelength_um: f64,
    /// Beam description JSON (bare, or a run config's `mode`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "grid")]
    pub diameter_um: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub offset_um: f64,
    /// Largest acceptable loss, as a fraction.
    #[arg(long)]
    pub loss_budget: Option<f64>,
    /// Report the largest offset within the loss budget.
    #[arg(long, requires = "loss_budget")]
    pub solve_offset: bool,
    /// Emit a loss matrix: rows are diameters, columns offsets.
    #[arg(long, conflicts_with = "solve_offset")]
    pub grid: bool,
    /// Grid diameters in μm (default 5 to 40 in steps of 1).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub diameters: Vec<f64>,
    /// Grid offsets in μm (default 0, 1.5, 3, 4.5).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub offsets: Vec<f64>,
    /// Grid CSV path; without it the matrix goes to stdout.
    #[arg(long, requires = "grid")]
    pub out: Option<PathBuf>,
    /// Also plot the grid next to the CSV.
    #[arg(long, requires = "out")]
    pub svg: bool,
}

pub enum Output {
    Json(Value),
    Text(String),
}

fn beam(args: &CoupleArgs) -> anyhow::Result<ModeSpec> {
    match (&args.config, args.mfd_um) {
        (Some(path), mfd) => {
            let mut spec = read_mode(path)?;
            if let Some(m) = mfd {
                spec.mfd = m;
            }
            Ok(spec)
        }
        (None, Some(mfd)) => Ok(ModeSpec::gaussian(mfd, args.wavelength_um)),
        (None, None) => Err(usage("pass --mfd-um or --config")),
    }
}

pub fn run(args: &CoupleArgs) -> anyhow::Result<Output> {
    let spec = beam(args)?;
    if args.grid {
        return grid(args, &spec);
    }
    let diameter = args.diameter_um.ok_or_else(|| usage("--diameter-um is required"))?;
    if args.solve_offset {
        let budget = args
            .loss_budget
            .ok_or_else(|| usage("--solve-offset needs --loss-budget"))?;
        let offset = max_tolerable_offset(&spec, diameter, budget)?;
        return Ok(Output::Json(json!({ "max_offset_um": offset })));
    }
    let eff = coupling_efficiency(&CouplingQuery::new(spec, diameter, args.offset_um))?;
    let mut out = json!({ "efficiency": eff, "loss": 1.0 - eff });
    if let Some(budget) = args.loss_budget {
        if !(0.0..=1.0).contains(&budget) {
            return Err(usage(format!("--loss-budget must lie in [0, 1], got {budget}")));
        }
        out["within_budget"] = json!(1.0 - eff <= budget);
    }
    Ok(Output::Json(out))
}

fn grid(args: &CoupleArgs, spec: &ModeSpec) -> anyhow::Result<Output> {
    let diameters = if args.diameters.is_empty() {
        (5..=40).map(f64::from).collect()
    } else {
        args.diameters.clone()
    };
    let offsets = if args.offsets.is_empty() {
        DEFAULT_OFFSETS.to_vec()
    } else {
        args.offsets.clone()
    };
    let curve = tolerance_curve(spec, &diameters, &offsets)?;
    let Some(path) = &args.out else {
        let mut buf = Vec::new();
        curve.write_csv(&mut buf)?;
        return Ok(Output::Text(String::from_utf8(buf)?));
    };
    let mut w = create(path)?;
    curve.write_csv(&mut w)?;
    w.flush()?;
    let mut files = vec![path.display().to_string()];
    if args.svg {
        let mut plot = Plot::new(
            &format!("Coupling loss, MFD {} μm", spec.mfd),
            "active area diameter (μm)",
            "loss",
        )
        .log_y();
        for (j, o) in curve.offsets.iter().enumerate() {
            let pts = curve
                .diameters
                .iter()
                .zip(&curve.loss)
                .map(|(&d, row)| (d, row[j]))
                .collect();
            plot = plot.with(Series::new(format!("offset {o} μm"), pts, Style::Line));
        }
        let svg_path = path.with_extension("svg");
        write_text(&svg_path, &plot.render())?;
        files.push(svg_path.display().to_string());
    }
    Ok(Output::Json(json!({
        "diameters": curve.diameters.len(),
        "offsets": curve.offsets.len(),
        "files": files,
    })))
}
