use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde_json::Value;
use tofbeam_core::stack::{DbrOrder, PaperStackOptions};
use tofbeam_core::{builtin_paper_stack, tmm_response, StackSpec};

use crate::config::{read_json, usage, write_json};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DbrOrderArg {
    /// αSi directly under the absorber.
    HighFirst,
    /// SiO₂ directly under the absorber.
    LowFirst,
}

#[derive(Debug, Args)]
pub struct StackArgs {
    /// Stack JSON: {"wavelength_nm", "ambient_n", "substrate_n", "layers"}.
    #[arg(long, visible_alias = "config", conflicts_with = "builtin_paper")]
    pub input: Option<PathBuf>,
    /// The built-in detector stack at 1550 nm with the given absorber index.
    #[arg(long)]
    pub builtin_paper: bool,
    #[arg(long, requires = "builtin_paper")]
    pub mosi_n: Option<f64>,
    #[arg(long, requires = "builtin_paper")]
    pub mosi_k: Option<f64>,
    #[arg(long, value_enum, default_value = "low-first", requires = "builtin_paper")]
    pub dbr_order: DbrOrderArg,
    #[arg(long, requires = "builtin_paper")]
    pub ambient_n: Option<f64>,
    #[arg(long, requires = "builtin_paper")]
    pub substrate_n: Option<f64>,
    /// Also write the response JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn spec(args: &StackArgs) -> anyhow::Result<StackSpec> {
    if let Some(path) = &args.input {
        return read_json(path);
    }
    if !args.builtin_paper {
        return Err(usage("pass --input <stack.json> or --builtin-paper"));
    }
    let (Some(n), Some(k)) = (args.mosi_n, args.mosi_k) else {
        return Err(usage("--builtin-paper needs --mosi-n and --mosi-k"));
    };
    let mut opts = PaperStackOptions {
        dbr_order: match args.dbr_order {
            DbrOrderArg::HighFirst => DbrOrder::HighIndexFirst,
            DbrOrderArg::LowFirst => DbrOrder::LowIndexFirst,
        },
        ..Default::default()
    };
    if let Some(a) = args.ambient_n {
        opts.ambient_n = a;
    }
    if let Some(s) = args.substrate_n {
        opts.substrate_n = s;
    }
    Ok(builtin_paper_stack(n, k, opts))
}

pub fn run(args: &StackArgs) -> anyhow::Result<Value> {
    let response = tmm_response(&spec(args)?)?;
    if let Some(path) = &args.out {
        write_json(path, &response)?;
    }
    Ok(serde_json::to_value(response)?)
}
