use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use wavepinn_core::pca_filter::{filter_snapshots, PcaMode, Selection};
use wavepinn_core::wavegen::{read_dataset, write_dataset};

use crate::error::{CliError, CliResult, ResultExt};
use crate::manifest::{ensure_distinct, load_config_source, overlay, sidecar, write_atomic, RunManifest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    /// Cumulative explained-variance target; ignored when `components` is set.
    pub threshold: f64,
    pub components: Option<usize>,
    pub mode: PcaMode,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            threshold: 0.95,
            components: None,
            mode: PcaMode::Rows,
        }
    }
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Input WFD file.
    #[arg(long = "in", visible_alias = "input")]
    pub input: Option<PathBuf>,
    /// Filtered WFD file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    /// Keep exactly this many components.
    #[arg(long)]
    pub components: Option<usize>,
    /// `rows` (each snapshot separately) or `pixels` (time samples × pixels).
    #[arg(long)]
    pub mode: Option<PcaMode>,
}

pub fn run(args: FilterArgs, deterministic: bool) -> CliResult<()> {
    let mut manifest = RunManifest::begin("filter", deterministic);
    let mut value = serde_json::to_value(FilterConfig::default()).expect("config serializes");
    let mut input = args.input.clone();
    if let Some(path) = &args.config {
        let src = load_config_source(path, "filter")?;
        overlay(&mut value, &src.config)?;
        if input.is_none() {
            input = src.manifest.and_then(|m| m.inputs.get("dataset").cloned());
        }
    }
    let mut c: FilterConfig =
        serde_json::from_value(value).map_err(|e| CliError::usage(format!("filter config: {e}")))?;
    if let Some(t) = args.threshold {
        c.threshold = t;
    }
    if args.components.is_some() {
        c.components = args.components;
    }
    if let Some(m) = args.mode {
        c.mode = m;
    }
    let input = input.ok_or_else(|| CliError::usage("--in is required"))?;
    ensure_distinct(&input, &args.out)?;
    let ds = read_dataset(&input).at(format!("reading {}", input.display()))?;
    let selection = match c.components {
        Some(k) => Selection::Fixed(k),
        None => Selection::Threshold(c.threshold),
    };
    let (filtered, report) = filter_snapshots(&ds, selection, c.mode)?;
    if let Some(parent) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).at(format!("creating {}", parent.display()))?;
    }
    write_dataset(&filtered, &args.out).at(format!("writing {}", args.out.display()))?;

    let mut ks = String::from("matrix,k\n");
    for (n, k) in report.components.iter().enumerate() {
        writeln!(ks, "{n},{k}").unwrap();
    }
    let mut curves = String::from("matrix,component,cumulative_variance\n");
    for (n, curve) in report.cumulative.iter().enumerate() {
        for (i, v) in curve.iter().enumerate() {
            writeln!(curves, "{n},{},{v}", i + 1).unwrap();
        }
    }
    let ks_path = sidecar(&args.out, ".components.csv");
    let curves_path = sidecar(&args.out, ".variance.csv");
    write_atomic(&ks_path, ks.as_bytes())?;
    write_atomic(&curves_path, curves.as_bytes())?;

    let (lo, med, hi) = report.min_median_max();
    let summary = serde_json::json!({
        "mode": c.mode,
        "features": report.features,
        "k_min": lo,
        "k_median": med,
        "k_max": hi,
    });
    manifest.input("dataset", &input);
    manifest.output("dataset", &args.out);
    manifest.output("components_csv", &ks_path);
    manifest.output("variance_csv", &curves_path);
    manifest.config = serde_json::to_value(&c).expect("config serializes");
    manifest.finish(&sidecar(&args.out, ".manifest.json"))?;
    println!("{summary}");
    Ok(())
}
