use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use wavepinn_core::wavegen::{
    add_noise, make_crack_field, solve_wave_with, write_dataset, write_snapshot_csvs, write_speed_csv, Boundary, GeneratorPreset, Rect,
    SpeedField,
};

use crate::error::{CliError, CliResult, ResultExt};
use crate::manifest::{load_config_source, overlay, sidecar, RunManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GridPreset {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Wfd,
    Csv,
}

/// Resolved generator settings, echoed into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub preset: GridPreset,
    /// Incidence angle in degrees.
    pub angle: f64,
    pub speed: f64,
    pub crack: Option<Rect>,
    pub crack_speed: f64,
    pub boundary: Boundary,
    /// Overrides the preset's number of snapshots.
    pub nt: Option<usize>,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            preset: GridPreset::Desk,
            angle: 0.0,
            speed: 2.9,
            crack: None,
            crack_speed: 0.5,
            boundary: Boundary::Absorbing,
            nt: None,
            snr_db: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output WFD file.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config or a previous generate manifest.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<GridPreset>,
    /// Incidence angle in degrees (0, 45 or 90 for the built-in geometry).
    #[arg(long, allow_hyphen_values = true)]
    pub angle: Option<f64>,
    /// Background speed in mm/µs.
    #[arg(long)]
    pub speed: Option<f64>,
    /// `default`, `none` or `x_min,x_max,y_min,y_max` in mm.
    #[arg(long)]
    pub crack: Option<String>,
    #[arg(long)]
    pub crack_speed: Option<f64>,
    /// `absorbing` or `free`.
    #[arg(long)]
    pub boundary: Option<Boundary>,
    #[arg(long)]
    pub nt: Option<usize>,
    /// Add white Gaussian noise at this signal-to-noise ratio.
    #[arg(long, allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
    /// Noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `wfd` writes one container file; `csv` treats `--out` as a directory
    /// and writes one `x,y,u` file per snapshot.
    #[arg(long, value_enum, default_value = "wfd")]
    pub format: OutputFormat,
    /// Also write the true speed field as `x,y,v` CSV.
    #[arg(long)]
    pub speed_csv: Option<PathBuf>,
}

fn preset(p: GridPreset) -> GeneratorPreset {
    match p {
        GridPreset::Desk => GeneratorPreset::desk(),
        GridPreset::Paper => GeneratorPreset::paper(),
    }
}

fn parse_crack(s: &str, p: &GeneratorPreset) -> CliResult<Option<Rect>> {
    match s {
        "default" => Ok(Some(p.default_crack())),
        "none" => Ok(None),
        _ => {
            let v: Vec<f64> = s
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::usage(format!("--crack expects default, none or four numbers, got '{s}'")))?;
            if v.len() != 4 {
                return Err(CliError::usage(format!("--crack expects four numbers, got {}", v.len())));
            }
            Ok(Some(Rect::new(v[0], v[1], v[2], v[3])))
        }
    }
}

pub fn resolve(args: &GenerateArgs) -> CliResult<GenerateConfig> {
    let mut value = serde_json::to_value(GenerateConfig::default()).expect("config serializes");
    if let Some(path) = &args.config {
        overlay(&mut value, &load_config_source(path, "generate")?.config)?;
    }
    let mut c: GenerateConfig =
        serde_json::from_value(value).map_err(|e| CliError::usage(format!("generate config: {e}")))?;
    if let Some(p) = args.preset {
        c.preset = p;
    }
    if let Some(a) = args.angle {
        c.angle = a;
    }
    if let Some(v) = args.speed {
        c.speed = v;
    }
    if let Some(s) = &args.crack {
        c.crack = parse_crack(s, &preset(c.preset))?;
    }
    if let Some(v) = args.crack_speed {
        c.crack_speed = v;
    }
    if let Some(b) = args.boundary {
        c.boundary = b;
    }
    if args.nt.is_some() {
        c.nt = args.nt;
    }
    if args.snr_db.is_some() {
        c.snr_db = args.snr_db;
    }
    if let Some(s) = args.seed {
        c.seed = s;
    }
    Ok(c)
}

pub fn run(args: GenerateArgs, deterministic: bool) -> CliResult<()> {
    let mut manifest = RunManifest::begin("generate", deterministic);
    let c = resolve(&args)?;
    let mut p = preset(c.preset);
    if let Some(nt) = c.nt {
        p.grid.nt = nt;
    }
    let field = match c.crack {
        Some(rect) => make_crack_field(&p.grid, c.speed, rect, c.crack_speed)?,
        None => SpeedField::uniform(&p.grid, c.speed)?,
    };
    log::info!(
        "solving {}×{}×{} (crack: {})",
        p.grid.nx,
        p.grid.ny,
        p.grid.nt,
        c.crack.map_or("none".to_string(), |r| format!("{r:?}"))
    );
    let mut ds = solve_wave_with(&field, &p.grid, Some(&p.source(c.angle)), &p.solver_options(c.boundary))?.dataset;
    if let Some(snr) = c.snr_db {
        ds = add_noise(&ds, snr, c.seed)?;
    }
    if let Some(parent) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).at(format!("creating {}", parent.display()))?;
    }
    let manifest_path = match args.format {
        OutputFormat::Wfd => {
            write_dataset(&ds, &args.out).at(format!("writing {}", args.out.display()))?;
            sidecar(&args.out, ".manifest.json")
        }
        OutputFormat::Csv => {
            write_snapshot_csvs(&ds, &args.out, "snapshot").at(format!("writing {}", args.out.display()))?;
            args.out.join("manifest.json")
        }
    };
    manifest.output("dataset", &args.out);
    if let Some(csv) = &args.speed_csv {
        write_speed_csv(&field, &p.grid, csv).at(format!("writing {}", csv.display()))?;
        manifest.output("speed_csv", csv);
    }
    manifest.seed = Some(c.seed);
    manifest.config = serde_json::to_value(&c).expect("config serializes");
    manifest.finish(&manifest_path)?;
    println!("{}", args.out.display());
    Ok(())
}
